//! Glue from raw inputs to everything the trainer and inference need.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::{build_initial_prototypes, select_anchors, AnchorSelection};
use crate::error::{Error, Result};
use crate::gating::{gate_top_n, GatingResult};
use crate::modulation::{modulate, ModulationParams, SemanticFeatures};
use crate::prompts::PromptLibrary;
use crate::prototype::PrototypeSet;
use crate::store::EmbeddingSet;

/// Anchors, base prototypes, gated families and assembled text features.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub anchors: AnchorSelection,
    pub base: PrototypeSet,
    pub gating: GatingResult,
    pub features: SemanticFeatures,
}

/// Selects anchors from `pool`, gates the library on them and assembles the features.
pub fn prepare(pool: &EmbeddingSet, library: &PromptLibrary, alpha: usize, n_div: usize) -> Result<Prepared> {
    let anchors = select_anchors(pool, alpha)?;
    prepare_with_anchors(pool, library, anchors, n_div)
}

pub fn prepare_with_anchors(
    pool: &EmbeddingSet,
    library: &PromptLibrary,
    anchors: AnchorSelection,
    n_div: usize,
) -> Result<Prepared> {
    let base = build_initial_prototypes(&anchors, pool)?;
    let anchor_set = pool.subset(&anchors.all_ids())?;
    let gating = gate_top_n(library, &anchor_set, n_div)?;
    let features = SemanticFeatures::assemble(&gating, library)?;
    Ok(Prepared {
        anchors,
        base,
        gating,
        features,
    })
}

/// Final prototypes for inference.
pub fn enhanced_prototypes(base: &PrototypeSet, features: &SemanticFeatures, params: &ModulationParams) -> Result<PrototypeSet> {
    Ok(modulate(base, features, params)?.0)
}

/// Deterministically moves `fraction` of the records (rounded up, never an id in `keep`)
/// into a validation set. Returns `(train, val)`, both in the original record order.
pub fn holdout_split<S: AsRef<str>>(
    set: &EmbeddingSet,
    fraction: f64,
    seed: u64,
    keep: &[S],
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} must lie in (0, 1)")));
    }
    let keep: HashSet<&str> = keep.iter().map(|s| s.as_ref()).collect();
    let mut candidates: Vec<&str> = set.iter().map(|r| r.id.as_str()).filter(|id| !keep.contains(id)).collect();
    let n_val = ((set.len() as f64) * fraction).ceil() as usize;
    if n_val == 0 || n_val > candidates.len() || n_val >= set.len() {
        return Err(Error::Config(format!(
            "cannot hold out {n_val} of {} records ({} eligible)",
            set.len(),
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    candidates.shuffle(&mut rng);
    let val_ids: HashSet<&str> = candidates[..n_val].iter().copied().collect();
    let (val, train): (Vec<&str>, Vec<&str>) = set.iter().map(|r| r.id.as_str()).partition(|id| val_ids.contains(id));
    Ok((set.subset(&train)?, set.subset(&val)?))
}
