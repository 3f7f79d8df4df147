//! Nearest-prototype inference, accuracy / macro-F1, and analysis matrices.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::cosine_similarity;
use crate::grade::{GradeId, NUM_GRADES};
use crate::prototype::PrototypeSet;
use crate::store::{EmbeddingRecord, EmbeddingSet};
use crate::trainer::similarity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: GradeId,
    /// Indexed by grade.
    pub similarities: Vec<f64>,
}

/// Argmax of the similarities; the lowest grade wins ties.
pub fn classify(query: &EmbeddingRecord, protos: &PrototypeSet) -> Result<Prediction> {
    let similarities = protos
        .matrices()
        .iter()
        .map(|p| similarity(query.tokens.view(), p.view()))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (c, &s) in similarities.iter().enumerate().skip(1) {
        if s > similarities[best] {
            best = c;
        }
    }
    Ok(Prediction {
        id: query.id.clone(),
        predicted: GradeId::new(best as i64)?,
        similarities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricReport {
    /// Every grade counts towards the macro average, including grades absent from both
    /// truth and prediction (F1 = 0).
    pub fn from_pairs(truth: &[GradeId], predicted: &[GradeId]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("metric inputs", truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(Error::Empty("evaluation set".into()));
        }
        let mut confusion = vec![vec![0usize; NUM_GRADES]; NUM_GRADES];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        let correct: usize = (0..NUM_GRADES).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..NUM_GRADES)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let actual: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: actual,
                }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_GRADES as f64;
        Ok(MetricReport {
            accuracy: correct as f64 / truth.len() as f64,
            macro_f1,
            per_class,
            confusion,
        })
    }
}

pub fn predict_all(set: &EmbeddingSet, protos: &PrototypeSet) -> Result<Vec<Prediction>> {
    set.iter().map(|r| classify(r, protos)).collect()
}

pub fn evaluate(set: &EmbeddingSet, protos: &PrototypeSet) -> Result<MetricReport> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut truth = Vec::with_capacity(set.len());
    let mut predicted = Vec::with_capacity(set.len());
    for r in set {
        truth.push(r.labeled_grade()?);
        predicted.push(classify(r, protos)?.predicted);
    }
    MetricReport::from_pairs(&truth, &predicted)
}

/// Per grade, the `n_s × n_s` cosine similarity between token rows.
pub fn token_correlation(protos: &PrototypeSet) -> Result<Vec<Array2<f64>>> {
    protos
        .matrices()
        .iter()
        .map(|p| {
            let n = p.nrows();
            let mut m = Array2::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let c = cosine_similarity(p.row(i), p.row(j))
                        .map_err(|_| Error::ZeroNorm(format!("prototype token {}", if p.row(i).iter().all(|&v| v == 0.0) { i } else { j })))?;
                    m[[i, j]] = c;
                    m[[j, i]] = c;
                }
            }
            Ok(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorAlignment {
    pub id: String,
    pub predicted: GradeId,
    /// Cosine between the predicted grade's projected global token and each descriptor.
    pub similarities: Vec<f64>,
}

/// Classifies `query`, projects the predicted prototype's global token into text space
/// with `projection` (`d_v × d_t`), and compares it with each descriptor.
pub fn descriptor_alignment(
    query: &EmbeddingRecord,
    descriptors: &[ArrayView1<f64>],
    protos: &PrototypeSet,
    projection: &Array2<f64>,
) -> Result<DescriptorAlignment> {
    let pred = classify(query, protos)?;
    let global = protos.get(pred.predicted).row(0);
    if global.len() != projection.nrows() {
        return Err(Error::shape("projection rows", global.len(), projection.nrows()));
    }
    let projected: Array1<f64> = global.dot(projection);
    let similarities = descriptors
        .iter()
        .map(|d| cosine_similarity(projected.view(), *d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptorAlignment {
        id: pred.id,
        predicted: pred.predicted,
        similarities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototype::Stage;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;

    fn g(v: i64) -> GradeId {
        GradeId::new(v).unwrap()
    }

    fn basis_protos() -> PrototypeSet {
        PrototypeSet::new(
            Stage::Dpe,
            (0..5)
                .map(|c| Array2::from_shape_fn((2, 5), |(_, j)| if j == c { 1.0 } else { 0.0 }))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn forced_winner_and_scale_invariance() {
        let protos = basis_protos();
        let q = EmbeddingRecord::new("q", None, protos.get(g(2)).clone());
        assert_eq!(classify(&q, &protos).unwrap().predicted, g(2));
        let scaled = EmbeddingRecord::new("q", None, protos.get(g(2)) * 3.0);
        assert_eq!(classify(&scaled, &protos).unwrap(), classify(&q, &protos).unwrap());
    }

    #[test]
    fn ties_go_to_lowest_grade() {
        let protos = basis_protos();
        let tokens = Array2::from_shape_fn((2, 5), |(_, j)| if j == 1 || j == 3 { 1.0 } else { 0.0 });
        let q = EmbeddingRecord::new("q", None, tokens);
        assert_eq!(classify(&q, &protos).unwrap().predicted, g(1));
    }

    #[test]
    fn perfect_predictions() {
        let t: Vec<_> = (0..5).map(g).collect();
        let r = MetricReport::from_pairs(&t, &t).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn two_class_toy() {
        let pred = [g(0), g(0), g(1), g(1)];
        let truth = [g(0), g(1), g(1), g(1)];
        let r = MetricReport::from_pairs(&truth, &pred).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_abs_diff_eq!(r.per_class[0].f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_class[1].f1, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(r.macro_f1, (2.0 / 3.0 + 0.8) / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.macro_f1, 0.293_33, epsilon = 1e-5);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 4);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(MetricReport::from_pairs(&[], &[]).is_err());
        let empty = EmbeddingSet::new(2, 5, 1, vec![]).unwrap();
        assert!(evaluate(&empty, &basis_protos()).is_err());
    }

    #[test]
    fn correlation_examples() {
        let same = PrototypeSet::new(Stage::Base, vec![arr2(&[[1.0, 2.0], [1.0, 2.0], [2.0, 4.0]]); 5]).unwrap();
        for m in token_correlation(&same).unwrap() {
            assert!(m.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
        let ortho = PrototypeSet::new(Stage::Base, vec![arr2(&[[1.0, 0.0], [0.0, 3.0]]); 5]).unwrap();
        for m in token_correlation(&ortho).unwrap() {
            assert_eq!(m, Array2::<f64>::eye(2));
        }
        let zero = PrototypeSet::new(Stage::Base, vec![arr2(&[[1.0, 0.0], [0.0, 0.0]]); 5]).unwrap();
        assert!(matches!(token_correlation(&zero), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn descriptor_examples() {
        let protos = basis_protos();
        let projection = Array2::from_shape_fn((5, 3), |(i, j)| if i == 2 && j == 1 { 2.0 } else { 0.0 });
        let q = EmbeddingRecord::new("q", None, protos.get(g(2)).clone());
        let aligned = arr1(&[0.0, 5.0, 0.0]);
        let ortho = arr1(&[1.0, 0.0, 0.0]);
        let r = descriptor_alignment(&q, &[aligned.view(), ortho.view()], &protos, &projection).unwrap();
        assert_eq!(r.predicted, g(2));
        assert_abs_diff_eq!(r.similarities[0], 1.0, epsilon = 1e-15);
        assert_eq!(r.similarities[1], 0.0);
        let zero = arr1(&[0.0, 0.0, 0.0]);
        assert!(descriptor_alignment(&q, &[zero.view()], &protos, &projection).is_err());
    }

    proptest! {
        #[test]
        fn correlation_is_symmetric_with_unit_diagonal(vals in proptest::collection::vec(0.1f64..5.0, 12)) {
            let p = Array2::from_shape_vec((4, 3), vals).unwrap();
            let protos = PrototypeSet::new(Stage::Base, vec![p; 5]).unwrap();
            for m in token_correlation(&protos).unwrap() {
                for i in 0..4 {
                    prop_assert!((m[[i, i]] - 1.0).abs() < 1e-12);
                    for j in 0..4 {
                        prop_assert_eq!(m[[i, j]], m[[j, i]]);
                    }
                }
            }
        }

        #[test]
        fn accuracy_and_macro_f1_match_recount(pairs in proptest::collection::vec((0i64..5, 0i64..5), 1..50)) {
            let truth: Vec<_> = pairs.iter().map(|p| g(p.0)).collect();
            let pred: Vec<_> = pairs.iter().map(|p| g(p.1)).collect();
            let r = MetricReport::from_pairs(&truth, &pred).unwrap();
            let correct = pairs.iter().filter(|p| p.0 == p.1).count();
            prop_assert_eq!(r.accuracy, correct as f64 / pairs.len() as f64);
            let mut f1s = 0.0;
            for c in 0..5 {
                let tp = pairs.iter().filter(|p| p.0 == c && p.1 == c).count() as f64;
                let fp = pairs.iter().filter(|p| p.0 != c && p.1 == c).count() as f64;
                let fneg = pairs.iter().filter(|p| p.0 == c && p.1 != c).count() as f64;
                // F1 = 2TP / (2TP + FP + FN), zero when undefined.
                f1s += if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fneg) } else { 0.0 };
            }
            prop_assert!((r.macro_f1 - f1s / 5.0).abs() < 1e-12);
        }
    }
}
