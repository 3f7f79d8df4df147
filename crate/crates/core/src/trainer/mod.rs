//! Optimization of the modulation projections against the cosine-softmax loss.

mod adam;
mod config;
mod fd;
mod loss;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use config::TrainConfig;
pub use fd::{finite_difference_check, FdReport};
pub use loss::{classification_loss, loss_from_similarities, similarity};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::modulation::{init_params, modulate, modulation_backward, ModelDims, ModulationParams, SemanticFeatures};
use crate::prototype::PrototypeSet;
use crate::store::{EmbeddingRecord, EmbeddingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss of the initial parameters (epoch 0).
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation metrics of the returned parameters.
    pub final_metrics: MetricReport,
}

/// Gradient of the mean batch loss with respect to the parameters.
pub(crate) fn batch_loss_and_grad(
    batch: &[&EmbeddingRecord],
    base: &PrototypeSet,
    feats: &SemanticFeatures,
    params: &ModulationParams,
    tau: f64,
) -> Result<(f64, ModulationParams)> {
    let (protos, tape) = modulate(base, feats, params)?;
    let mut upstream: Vec<Array2<f64>> = protos.matrices().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    // Fixed summation order keeps the reduction deterministic.
    for q in batch {
        let (loss, grads) = loss::loss_and_grad(q, &protos, tau)?;
        total += loss;
        for (u, g) in upstream.iter_mut().zip(grads) {
            u.scaled_add(scale, &g);
        }
    }
    let grads = modulation_backward(&tape, params, &upstream)?;
    Ok((total * scale, grads))
}

/// Mean loss over `set` with the prototypes produced by `params`.
pub fn mean_loss(
    set: &EmbeddingSet,
    base: &PrototypeSet,
    feats: &SemanticFeatures,
    params: &ModulationParams,
    tau: f64,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let (protos, _) = modulate(base, feats, params)?;
    let mut total = 0.0;
    for q in set {
        total += classification_loss(q, &protos, tau)?;
    }
    Ok(total / set.len() as f64)
}

pub fn model_dims(base: &PrototypeSet, feats: &SemanticFeatures, proj_dim: usize) -> ModelDims {
    ModelDims {
        n_s: base.n_s(),
        d_v: base.d_v(),
        d_t: feats.d_t(),
        d_p: proj_dim,
        n_div: feats.n_div(),
    }
}

/// Runs seeded mini-batch Adam and returns the parameters of the epoch with the lowest
/// validation loss (ties to the earlier epoch; the initial parameters count as epoch 0).
pub fn train(
    train_set: &EmbeddingSet,
    val_set: &EmbeddingSet,
    base: &PrototypeSet,
    feats: &SemanticFeatures,
    cfg: &TrainConfig,
) -> Result<(ModulationParams, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    train_set.require_labeled()?;
    val_set.require_labeled()?;
    if train_set.n_s() != base.n_s() || train_set.d_v() != base.d_v() {
        return Err(Error::shape(
            "training records vs prototypes",
            format!("{}x{}", base.n_s(), base.d_v()),
            format!("{}x{}", train_set.n_s(), train_set.d_v()),
        ));
    }

    let dims = model_dims(base, feats, cfg.proj_dim);
    let mut params = init_params(&dims, cfg.seed)?;
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let initial_val_loss = mean_loss(val_set, base, feats, &params, cfg.tau)?;
    if !initial_val_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, step: 0 });
    }
    let mut best = (0usize, initial_val_loss, params.clone());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let records = train_set.records();
    let mut order: Vec<usize> = (0..records.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EmbeddingRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let (loss, grads) = batch_loss_and_grad(&batch, base, feats, &params, cfg.tau)?;
            if !loss.is_finite() || grads.matrices().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch, step });
            }
            adam.step(&mut params, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        let val_loss = mean_loss(val_set, base, feats, &params, cfg.tau)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, step: batches });
        }
        log::debug!("epoch {epoch}: train {:.6} val {val_loss:.6}", epoch_loss / batches as f64);
        epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, params.clone());
        }
    }

    let (best_epoch, best_val_loss, best_params) = best;
    let (protos, _) = modulate(base, feats, &best_params)?;
    let final_metrics = evaluate(val_set, &protos)?;
    Ok((
        best_params,
        TrainReport {
            initial_val_loss,
            epochs,
            best_epoch,
            best_val_loss,
            final_metrics,
        },
    ))
}

#[cfg(test)]
mod tests;
