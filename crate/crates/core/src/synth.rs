//! Seeded synthetic datasets with ordinal grade geometry and tunable adjacent-grade overlap.
//!
//! Visual tokens: each token has its own baseline vector (orthogonal to the signal plane),
//! plus a grade signal on a circular arc in a shared 2-D plane, plus a per-record latent
//! shared by all tokens, plus per-token noise. Grade `c` sits at arc position `c`. A
//! `borderline_fraction` of every grade is displaced by `overlap` arc steps toward an
//! adjacent grade (upward, or downward for the top grade); at `overlap = 1` those records
//! sit on the neighbour's center.
//!
//! Text: grade directions lie on an arc `separation_deg` apart. Discriminative families put
//! most of their weight on the grade direction, confusable families mostly on a
//! family-specific direction. Gating embeddings are noisy grade directions.
//!
//! All values are rounded to `f32` so in-memory data equals what a save/load round trip
//! yields. Random streams come from ChaCha8 seeded with `seed`.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anchors::{build_initial_prototypes, select_anchors, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::grade::{GradeId, NUM_GRADES};
use crate::metrics::evaluate;
use crate::prompts::{DiffDescription, PromptFamily, PromptKind, PromptLibrary};
use crate::store::{EmbeddingRecord, EmbeddingSet, GeneratorInfo};

pub const GENERATOR_NAME: &str = "chacha8";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_s: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub train_per_grade: usize,
    pub val_per_grade: usize,
    pub test_per_grade: usize,
    /// Std-dev of the per-record latent, per visual dimension.
    pub noise: f64,
    /// Std-dev of independent per-token noise.
    pub token_noise: f64,
    /// Norm of each token's baseline vector.
    pub baseline_scale: f64,
    /// Radius of the visual grade arc.
    pub radius: f64,
    /// Visual arc angle between adjacent grades, degrees.
    pub arc_step_deg: f64,
    /// Text arc angle between adjacent grades, degrees.
    pub separation_deg: f64,
    /// Displacement of borderline records, in arc steps, within [0, 1].
    pub overlap: f64,
    pub borderline_fraction: f64,
    pub families: usize,
    pub discriminative_families: usize,
    /// Std-dev of noise on text and gating embeddings.
    pub text_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_s: 8,
            d_v: 16,
            d_t: 12,
            train_per_grade: 40,
            val_per_grade: 20,
            test_per_grade: 20,
            noise: 0.6,
            token_noise: 0.4,
            baseline_scale: 4.0,
            radius: 32.0,
            arc_step_deg: 40.0,
            separation_deg: 30.0,
            overlap: 0.6,
            borderline_fraction: 0.35,
            families: 20,
            discriminative_families: 8,
            text_noise: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_s == 0 || self.d_v < 3 || self.d_t < 3 {
            return bad("n_s must be positive, d_v and d_t at least 3");
        }
        if self.train_per_grade == 0 || self.val_per_grade == 0 || self.test_per_grade == 0 {
            return bad("split sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.overlap) || !(0.0..=1.0).contains(&self.borderline_fraction) {
            return bad("overlap and borderline_fraction must lie in [0, 1]");
        }
        if !(self.arc_step_deg > 0.0 && self.arc_step_deg * (NUM_GRADES - 1) as f64 <= 180.0) {
            return bad("arc_step_deg must be positive and span at most 180 degrees");
        }
        if !(self.separation_deg > 0.0 && self.separation_deg * (NUM_GRADES - 1) as f64 <= 180.0) {
            return bad("separation_deg must be positive and span at most 180 degrees");
        }
        if [self.noise, self.token_noise, self.text_noise, self.baseline_scale, self.radius]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("scales must be finite and non-negative");
        }
        if self.families == 0 || self.discriminative_families > self.families {
            return bad("need at least one family and discriminative_families <= families");
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: EmbeddingSet,
    pub val: EmbeddingSet,
    pub test: EmbeddingSet,
    pub library: PromptLibrary,
    /// Grade signal centers in visual space (one `d_v` vector per grade).
    pub centers: Vec<Array1<f64>>,
}

impl SynthData {
    /// All splits in one set: train, then val, then test.
    pub fn combined(&self) -> Result<EmbeddingSet> {
        let records = self
            .train
            .iter()
            .chain(self.val.iter())
            .chain(self.test.iter())
            .cloned()
            .collect();
        let set = EmbeddingSet::new(self.train.n_s(), self.train.d_v(), self.train.d_t(), records)?;
        Ok(match self.train.generator() {
            Some(g) => set.with_generator(g.clone()),
            None => set,
        })
    }
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || scale * rng.sample::<f64, _>(StandardNormal))
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Gram-Schmidt against `basis` (assumed orthonormal), then normalize.
fn orthonormal_to(mut v: Array1<f64>, basis: &[Array1<f64>]) -> Array1<f64> {
    for b in basis {
        let p = v.dot(b);
        v.scaled_add(-p, b);
    }
    normalized(v)
}

fn unit(n: usize, i: usize) -> Array1<f64> {
    let mut v = Array1::zeros(n);
    v[i] = 1.0;
    v
}

struct VisualGeometry {
    plane: [Array1<f64>; 2],
    baselines: Vec<Array1<f64>>,
    step: f64,
    radius: f64,
}

impl VisualGeometry {
    fn point(&self, position: f64) -> Array1<f64> {
        let a = self.step * position;
        &self.plane[0] * (self.radius * a.cos()) + &self.plane[1] * (self.radius * a.sin())
    }
}

fn grade_text_direction(d_t: usize, sep: f64, position: f64) -> Array1<f64> {
    let a = sep * position;
    &unit(d_t, 0) * a.cos() + &unit(d_t, 1) * a.sin()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_s, d_v, d_t) = (cfg.n_s, cfg.d_v, cfg.d_t);

    let plane = [unit(d_v, 0), unit(d_v, 1)];
    let baselines = (0..n_s)
        .map(|_| {
            let v = gaussian(&mut rng, d_v, 1.0);
            orthonormal_to(v, &plane) * cfg.baseline_scale
        })
        .collect();
    let geo = VisualGeometry {
        plane,
        baselines,
        step: cfg.arc_step_deg.to_radians(),
        radius: cfg.radius,
    };
    let centers: Vec<Array1<f64>> = (0..NUM_GRADES).map(|c| geo.point(c as f64)).collect();
    let sep = cfg.separation_deg.to_radians();

    let make_split = |name: &str, per_grade: usize, rng: &mut ChaCha8Rng| -> Result<EmbeddingSet> {
        let mut records = Vec::with_capacity(per_grade * NUM_GRADES);
        for c in 0..NUM_GRADES {
            for i in 0..per_grade {
                let borderline = rng.random::<f64>() < cfg.borderline_fraction;
                let direction = if c + 1 < NUM_GRADES { 1.0 } else { -1.0 };
                let position = c as f64 + if borderline { direction * cfg.overlap } else { 0.0 };
                let signal = geo.point(position);
                let latent = gaussian(rng, d_v, cfg.noise);
                let mut tokens = Array2::zeros((n_s, d_v));
                for (t, mut row) in tokens.rows_mut().into_iter().enumerate() {
                    let tok = &geo.baselines[t] + &signal + &latent + &gaussian(rng, d_v, cfg.token_noise);
                    row.assign(&tok.mapv(round32));
                }
                let gating = (grade_text_direction(d_t, sep, c as f64) + gaussian(rng, d_t, cfg.text_noise))
                    .mapv(round32);
                records.push(
                    EmbeddingRecord::new(format!("{name}-{c}-{i:03}"), Some(GradeId::new(c as i64)?), tokens)
                        .with_gating(gating),
                );
            }
        }
        Ok(EmbeddingSet::new(n_s, d_v, d_t, records)?.with_generator(GeneratorInfo {
            name: GENERATOR_NAME.into(),
            seed: cfg.seed,
        }))
    };
    let train = make_split("train", cfg.train_per_grade, &mut rng)?;
    let val = make_split("val", cfg.val_per_grade, &mut rng)?;
    let test = make_split("test", cfg.test_per_grade, &mut rng)?;

    // Text side. Dimensions 0-1 carry the grade arc; family directions live in the rest.
    let text_basis = [unit(d_t, 0), unit(d_t, 1)];
    let families = (0..cfg.families)
        .map(|f| {
            let own = orthonormal_to(gaussian(&mut rng, d_t, 1.0), &text_basis);
            let discriminative = f < cfg.discriminative_families;
            let (grade_weight, family_weight) = if discriminative { (1.0, 0.4) } else { (0.15, 1.0) };
            let variants = (0..NUM_GRADES)
                .map(|c| {
                    let v = grade_text_direction(d_t, sep, c as f64) * grade_weight
                        + &own * family_weight
                        + gaussian(&mut rng, d_t, cfg.text_noise);
                    v.mapv(round32)
                })
                .collect();
            PromptFamily {
                family_id: format!("{}{f:02}", if f == 0 { "cls" } else { "desc" }),
                kind: if f == 0 { PromptKind::Cls } else { PromptKind::Desc },
                variants,
            }
        })
        .collect();
    let mut diffs = Vec::with_capacity(NUM_GRADES * (NUM_GRADES - 1));
    for from in 0..NUM_GRADES {
        for to in (0..NUM_GRADES).filter(|&t| t != from) {
            let own = grade_text_direction(d_t, sep, from as f64);
            let other = grade_text_direction(d_t, sep, to as f64);
            let v = &own * 2.0 - &other + gaussian(&mut rng, d_t, cfg.text_noise);
            diffs.push(DiffDescription {
                from_grade: GradeId::new(from as i64)?,
                to_grade: GradeId::new(to as i64)?,
                embedding: v.mapv(round32),
            });
        }
    }
    let library = PromptLibrary::new(d_t, families, diffs)?;

    Ok(SynthData {
        train,
        val,
        test,
        library,
        centers,
    })
}

/// Test accuracy of the static base prototypes built from `DEFAULT_ALPHA` training anchors.
pub fn baseline_accuracy(data: &SynthData) -> Result<f64> {
    let selection = select_anchors(&data.train, DEFAULT_ALPHA)?;
    let base = build_initial_prototypes(&selection, &data.train)?;
    Ok(evaluate(&data.test, &base)?.accuracy)
}
