use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::{GradeId, NUM_GRADES};

/// Which point of the evolution a prototype set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Mean of the anchor token matrices.
    Base,
    /// After semantic injection.
    Psi,
    /// After discriminative enhancement.
    Dpe,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Base => "base",
            Stage::Psi => "psi",
            Stage::Dpe => "dpe",
        })
    }
}

/// One `n_s × d_v` token matrix per grade.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    stage: Stage,
    grades: Vec<Array2<f64>>,
}

impl PrototypeSet {
    pub fn new(stage: Stage, grades: Vec<Array2<f64>>) -> Result<Self> {
        if grades.len() != NUM_GRADES {
            return Err(Error::shape("prototype set", NUM_GRADES, grades.len()));
        }
        let dim = grades[0].dim();
        for (g, m) in grades.iter().enumerate() {
            if m.dim() != dim {
                return Err(Error::shape(
                    format!("prototype of grade {g}"),
                    format!("{}x{}", dim.0, dim.1),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "prototype of grade {g} has non-finite entries"
                )));
            }
        }
        Ok(PrototypeSet { stage, grades })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn get(&self, grade: GradeId) -> &Array2<f64> {
        &self.grades[grade.index()]
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.grades
    }

    pub fn n_s(&self) -> usize {
        self.grades[0].nrows()
    }

    pub fn d_v(&self) -> usize {
        self.grades[0].ncols()
    }

    pub fn iter(&self) -> impl Iterator<Item = (GradeId, &Array2<f64>)> {
        GradeId::all().zip(self.grades.iter())
    }
}
