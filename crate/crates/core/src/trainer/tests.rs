use ndarray::Array2;

use super::*;
use crate::grade::{GradeId, NUM_GRADES};
use crate::modulation::N_DIFF;
use crate::prototype::Stage;

fn fixture(queries_per_grade: usize) -> (EmbeddingSet, PrototypeSet, SemanticFeatures) {
    let (n_s, d_v, d_t) = (3, 4, 3);
    let base = PrototypeSet::new(
        Stage::Base,
        (0..NUM_GRADES)
            .map(|g| Array2::from_shape_fn((n_s, d_v), |(i, j)| 1.0 + ((g * 7 + i * 3 + j) % 5) as f64 * 0.3))
            .collect(),
    )
    .unwrap();
    let feats = SemanticFeatures::new(
        (0..NUM_GRADES)
            .map(|g| Array2::from_shape_fn((2, d_t), |(i, j)| ((g + i + 2 * j) % 4) as f64 * 0.5 - 0.7))
            .collect(),
        (0..NUM_GRADES)
            .map(|g| Array2::from_shape_fn((N_DIFF, d_t), |(i, j)| ((g * 2 + i + j) % 3) as f64 * 0.4 - 0.3))
            .collect(),
    )
    .unwrap();
    let records = (0..NUM_GRADES * queries_per_grade)
        .map(|k| {
            let g = k % NUM_GRADES;
            let tokens = base.matrices()[g].mapv(|v| v + 0.05 * ((k % 7) as f64 - 3.0));
            EmbeddingRecord::new(format!("q{k:03}"), Some(GradeId::new(g as i64).unwrap()), tokens)
        })
        .collect();
    (EmbeddingSet::new(n_s, d_v, d_t, records).unwrap(), base, feats)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        proj_dim: 8,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_initial_params() {
    let (set, base, feats) = fixture(4);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_config()
    };
    let (params, report) = train(&set, &set, &base, &feats, &cfg).unwrap();
    let init = init_params(&model_dims(&base, &feats, cfg.proj_dim), cfg.seed).unwrap();
    assert_eq!(params, init);
    assert!(report.epochs.iter().all(|e| e.val_loss == report.initial_val_loss));
    assert_eq!(report.best_epoch, 0);
}

#[test]
fn training_is_deterministic() {
    let (set, base, feats) = fixture(4);
    let a = train(&set, &set, &base, &feats, &small_config()).unwrap();
    let b = train(&set, &set, &base, &feats, &small_config()).unwrap();
    assert_eq!(a, b);
    let other = TrainConfig {
        seed: 5,
        ..small_config()
    };
    assert_ne!(a.0, train(&set, &set, &base, &feats, &other).unwrap().0);
}

#[test]
fn training_reduces_validation_loss() {
    let (set, base, feats) = fixture(4);
    let cfg = TrainConfig {
        epochs: 20,
        ..small_config()
    };
    let (_, report) = train(&set, &set, &base, &feats, &cfg).unwrap();
    assert!(report.best_val_loss < report.initial_val_loss);
    assert!(report.best_epoch > 0);
    assert_eq!(report.epochs.len(), 20);
}

#[test]
fn base_data_is_not_mutated() {
    let (set, base, feats) = fixture(2);
    let (set0, base0, feats0) = (set.clone(), base.clone(), feats.clone());
    train(&set, &set, &base, &feats, &small_config()).unwrap();
    assert_eq!((set, base, feats), (set0, base0, feats0));
}

#[test]
fn tiny_temperature_reports_divergence() {
    let (set, base, feats) = fixture(2);
    let cfg = TrainConfig {
        tau: 1e-320,
        ..small_config()
    };
    assert!(matches!(
        train(&set, &set, &base, &feats, &cfg),
        Err(Error::Divergence { .. })
    ));
}

#[test]
fn empty_and_unlabeled_inputs_rejected() {
    let (set, base, feats) = fixture(2);
    let empty = EmbeddingSet::new(3, 4, 3, vec![]).unwrap();
    assert!(matches!(
        train(&empty, &set, &base, &feats, &small_config()),
        Err(Error::Empty(_))
    ));
    assert!(matches!(
        train(&set, &empty, &base, &feats, &small_config()),
        Err(Error::Empty(_))
    ));
    let mut records = set.records().to_vec();
    records[0].grade = None;
    let unlabeled = EmbeddingSet::new(3, 4, 3, records).unwrap();
    assert!(matches!(
        train(&unlabeled, &set, &base, &feats, &small_config()),
        Err(Error::Unlabeled(_))
    ));
}

#[test]
fn identical_prototypes_give_finite_gradients() {
    let (set, _, feats) = fixture(2);
    let same = PrototypeSet::new(Stage::Base, vec![Array2::from_elem((3, 4), 1.0); NUM_GRADES]).unwrap();
    let dims = model_dims(&same, &feats, 8);
    let params = init_params(&dims, 0).unwrap();
    let batch: Vec<&EmbeddingRecord> = set.iter().collect();
    let (loss, grads) = batch_loss_and_grad(&batch, &same, &feats, &params, 1.0).unwrap();
    assert!((loss - (NUM_GRADES as f64).ln()).abs() < 1e-12);
    assert!(grads.matrices().iter().all(|g| g.iter().all(|v| v.is_finite())));
}

#[test]
fn loss_stays_within_bounds() {
    let (set, base, feats) = fixture(3);
    let dims = model_dims(&base, &feats, 8);
    let params = init_params(&dims, 1).unwrap();
    for tau in [0.05, 1.0] {
        let l = mean_loss(&set, &base, &feats, &params, tau).unwrap();
        assert!(l >= 0.0 && l <= 2.0 / tau + (NUM_GRADES as f64).ln() + 1e-12);
    }
}

fn fd_dims() -> ModelDims {
    ModelDims {
        n_s: 3,
        d_v: 4,
        d_t: 3,
        d_p: 5,
        n_div: 2,
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..3 {
        let report = finite_difference_check(&fd_dims(), seed, 1e-5).unwrap();
        assert_eq!(report.max_relative_error.len(), 7);
        assert!(report.worst() <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn coarse_step_gives_larger_error() {
    let fine = finite_difference_check(&fd_dims(), 0, 1e-5).unwrap();
    let coarse = finite_difference_check(&fd_dims(), 0, 1e-2).unwrap();
    assert!(coarse.worst() > fine.worst());
}
