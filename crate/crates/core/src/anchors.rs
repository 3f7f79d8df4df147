//! Variance-driven anchor selection and the base prototypes built from it.
//!
//! A record's score is the mean squared deviation of its tokens from the mean of all labeled
//! records of its grade. The subset objective is a sum of per-record scores, so the optimal
//! `alpha`-subset is simply the `alpha` lowest scores.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::GradeId;
use crate::prototype::{PrototypeSet, Stage};
use crate::store::{EmbeddingRecord, EmbeddingSet};

pub const DEFAULT_ALPHA: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnchor {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeAnchors {
    pub grade: GradeId,
    /// Ascending by score, ties by id.
    pub anchors: Vec<ScoredAnchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSelection {
    pub alpha: usize,
    pub grades: Vec<GradeAnchors>,
}

impl AnchorSelection {
    pub fn ids(&self, grade: GradeId) -> impl Iterator<Item = &str> {
        self.grades
            .iter()
            .filter(move |g| g.grade == grade)
            .flat_map(|g| g.anchors.iter().map(|a| a.id.as_str()))
    }

    pub fn all_ids(&self) -> Vec<&str> {
        self.grades
            .iter()
            .flat_map(|g| g.anchors.iter().map(|a| a.id.as_str()))
            .collect()
    }
}

/// Mean over all entries of the squared deviation from `class_mean`.
pub fn per_sample_variance_score(tokens: ArrayView2<f64>, class_mean: ArrayView2<f64>) -> Result<f64> {
    if tokens.dim() != class_mean.dim() {
        return Err(Error::shape(
            "variance score",
            format!("{}x{}", class_mean.nrows(), class_mean.ncols()),
            format!("{}x{}", tokens.nrows(), tokens.ncols()),
        ));
    }
    let n = tokens.len() as f64;
    let sum: f64 = tokens
        .iter()
        .zip(class_mean.iter())
        .map(|(x, m)| (x - m) * (x - m))
        .sum();
    Ok(sum / n)
}

/// Element-wise mean of token matrices, summed in the given order.
fn mean_tokens<'a>(records: impl IntoIterator<Item = &'a EmbeddingRecord>, shape: (usize, usize)) -> Array2<f64> {
    let mut acc = Array2::<f64>::zeros(shape);
    let mut n = 0usize;
    for r in records {
        acc += &r.tokens;
        n += 1;
    }
    acc / n as f64
}

fn by_score_then_id(a: &ScoredAnchor, b: &ScoredAnchor) -> Ordering {
    a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id))
}

pub fn select_anchors(set: &EmbeddingSet, alpha: usize) -> Result<AnchorSelection> {
    if alpha == 0 {
        return Err(Error::Config("alpha must be at least 1".into()));
    }
    let shape = (set.n_s(), set.d_v());
    let mut grades = Vec::new();
    for grade in GradeId::all() {
        let mut members: Vec<&EmbeddingRecord> = set.of_grade(grade).collect();
        if members.is_empty() {
            return Err(Error::EmptyGrade(grade.value()));
        }
        // Summation order fixed by id so the result does not depend on input order.
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mean = mean_tokens(members.iter().copied(), shape);
        let mut scored = members
            .iter()
            .map(|r| {
                Ok(ScoredAnchor {
                    id: r.id.clone(),
                    score: per_sample_variance_score(r.tokens.view(), mean.view())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(by_score_then_id);
        if scored.len() < alpha {
            log::warn!(
                "grade {grade} has {} records, fewer than alpha={alpha}; selecting all",
                scored.len()
            );
        }
        scored.truncate(alpha);
        grades.push(GradeAnchors {
            grade,
            anchors: scored,
        });
    }
    Ok(AnchorSelection { alpha, grades })
}

/// Per grade, the element-wise mean of the selected anchors' token matrices.
pub fn build_initial_prototypes(selection: &AnchorSelection, set: &EmbeddingSet) -> Result<PrototypeSet> {
    let shape = (set.n_s(), set.d_v());
    let mut matrices = Vec::new();
    for grade in GradeId::all() {
        let records = selection
            .ids(grade)
            .map(|id| set.get(id).ok_or_else(|| Error::UnknownId(id.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if records.is_empty() {
            return Err(Error::EmptyGrade(grade.value()));
        }
        matrices.push(mean_tokens(records, shape));
    }
    PrototypeSet::new(Stage::Base, matrices)
}
