use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch_loss_and_grad;
use crate::error::Result;
use crate::grade::{GradeId, NUM_GRADES};
use crate::modulation::{random_params, ModelDims, SemanticFeatures, N_DIFF, PARAM_NAMES};
use crate::prototype::{PrototypeSet, Stage};
use crate::store::EmbeddingRecord;

/// Entries whose analytic and numeric gradients are both below this are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub step: f64,
    /// Worst relative error per matrix, in parameter order.
    pub max_relative_error: Vec<(String, f64)>,
}

impl FdReport {
    pub fn worst(&self) -> f64 {
        self.max_relative_error.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Compares analytic gradients of the mean classification loss with central differences on
/// a random seeded configuration (all seven projections random, two queries per grade).
pub fn finite_difference_check(dims: &ModelDims, seed: u64, step: f64) -> Result<FdReport> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = PrototypeSet::new(
        Stage::Base,
        (0..NUM_GRADES).map(|_| uniform(&mut rng, dims.n_s, dims.d_v)).collect(),
    )?;
    let feats = SemanticFeatures::new(
        (0..NUM_GRADES).map(|_| uniform(&mut rng, dims.n_div, dims.d_t)).collect(),
        (0..NUM_GRADES).map(|_| uniform(&mut rng, N_DIFF, dims.d_t)).collect(),
    )?;
    let queries: Vec<EmbeddingRecord> = (0..2 * NUM_GRADES)
        .map(|i| {
            EmbeddingRecord::new(
                format!("q{i}"),
                Some(GradeId::new((i % NUM_GRADES) as i64).expect("in range")),
                uniform(&mut rng, dims.n_s, dims.d_v),
            )
        })
        .collect();
    let batch: Vec<&EmbeddingRecord> = queries.iter().collect();
    let params = random_params(dims, rng.random())?;
    let tau = 1.0;

    let (_, analytic) = batch_loss_and_grad(&batch, &base, &feats, &params, tau)?;
    let mut report = Vec::with_capacity(PARAM_NAMES.len());
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let grad = analytic.matrices()[k];
        let mut worst = 0.0f64;
        for (idx, &a) in grad.indexed_iter() {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                p.matrices_mut()[k][idx] += delta;
                Ok(batch_loss_and_grad(&batch, &base, &feats, &p, tau)?.0)
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        report.push((name.to_string(), worst));
    }
    Ok(FdReport {
        step,
        max_relative_error: report,
    })
}
