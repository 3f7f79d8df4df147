use ndarray::Array2;

use super::params::N_DIFF;
use crate::error::{Error, Result};
use crate::gating::GatingResult;
use crate::grade::{GradeId, NUM_GRADES};
use crate::prompts::PromptLibrary;

/// Text features that drive both modulation stages.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeatures {
    /// Per grade, `n_div × d_t` rows of the gated prompt families.
    pub diverse: Vec<Array2<f64>>,
    /// Per grade, `N_DIFF × d_t`; row `j` contrasts the grade with the `j`-th other grade
    /// in ascending order.
    pub differentiated: Vec<Array2<f64>>,
}

impl SemanticFeatures {
    pub fn new(diverse: Vec<Array2<f64>>, differentiated: Vec<Array2<f64>>) -> Result<Self> {
        if diverse.len() != NUM_GRADES || differentiated.len() != NUM_GRADES {
            return Err(Error::shape(
                "semantic features (grades)",
                NUM_GRADES,
                format!("{}/{}", diverse.len(), differentiated.len()),
            ));
        }
        let (n_div, d_t) = diverse[0].dim();
        if n_div == 0 || d_t == 0 {
            return Err(Error::Config("empty diverse feature matrix".into()));
        }
        for (g, (e1, e2)) in diverse.iter().zip(&differentiated).enumerate() {
            if e1.dim() != (n_div, d_t) {
                return Err(Error::shape(
                    format!("diverse features of grade {g}"),
                    format!("{n_div}x{d_t}"),
                    format!("{}x{}", e1.nrows(), e1.ncols()),
                ));
            }
            if e2.dim() != (N_DIFF, d_t) {
                return Err(Error::shape(
                    format!("differentiated features of grade {g}"),
                    format!("{N_DIFF}x{d_t}"),
                    format!("{}x{}", e2.nrows(), e2.ncols()),
                ));
            }
            if e1.iter().chain(e2.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite semantic features for grade {g}")));
            }
        }
        Ok(SemanticFeatures {
            diverse,
            differentiated,
        })
    }

    /// Combines gated families with the library's differentiated descriptions.
    pub fn assemble(gating: &GatingResult, library: &PromptLibrary) -> Result<Self> {
        let differentiated = GradeId::all()
            .map(|c| {
                let rows: Vec<_> = GradeId::all().filter(|&o| o != c).map(|o| library.diff(c, o)).collect();
                Array2::from_shape_fn((N_DIFF, library.d_t()), |(r, k)| rows[r][k])
            })
            .collect();
        SemanticFeatures::new(gating.diverse.clone(), differentiated)
    }

    pub fn n_div(&self) -> usize {
        self.diverse[0].nrows()
    }

    pub fn d_t(&self) -> usize {
        self.diverse[0].ncols()
    }

    /// The other grade that row `row` of grade `grade`'s differentiated features contrasts with.
    pub fn contrast_grade(grade: GradeId, row: usize) -> GradeId {
        let v = if row < grade.index() { row } else { row + 1 };
        GradeId::new(v as i64).expect("row below N_DIFF")
    }
}
