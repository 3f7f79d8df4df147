use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Differentiated descriptions per grade: one per other grade.
pub const N_DIFF: usize = crate::grade::NUM_GRADES - 1;

/// Default projection width of the attention queries and keys.
pub const DEFAULT_D_P: usize = 384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_s: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub d_p: usize,
    pub n_div: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if [self.n_s, self.d_v, self.d_t, self.d_p, self.n_div].contains(&0) {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// The seven learnable projections. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    /// `d_v × d_p`
    pub wq1: Array2<f64>,
    /// `d_t × d_p`
    pub wk1: Array2<f64>,
    /// `d_t × d_v`
    pub wv1: Array2<f64>,
    /// `d_v × d_p`
    pub wq2: Array2<f64>,
    /// `d_t × d_p`
    pub wk2: Array2<f64>,
    /// `d_t × d_v`
    pub wv2: Array2<f64>,
    /// `d_v × d_t`
    pub wp: Array2<f64>,
}

pub const PARAM_NAMES: [&str; 7] = ["wq1", "wk1", "wv1", "wq2", "wk2", "wv2", "wp"];

impl ModulationParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        let ModelDims { d_v, d_t, d_p, .. } = *dims;
        ModulationParams {
            wq1: Array2::zeros((d_v, d_p)),
            wk1: Array2::zeros((d_t, d_p)),
            wv1: Array2::zeros((d_t, d_v)),
            wq2: Array2::zeros((d_v, d_p)),
            wk2: Array2::zeros((d_t, d_p)),
            wv2: Array2::zeros((d_t, d_v)),
            wp: Array2::zeros((d_v, d_t)),
        }
    }

    pub fn d_v(&self) -> usize {
        self.wq1.nrows()
    }

    pub fn d_t(&self) -> usize {
        self.wk1.nrows()
    }

    pub fn d_p(&self) -> usize {
        self.wq1.ncols()
    }

    /// Matrices in [`PARAM_NAMES`] order.
    pub fn matrices(&self) -> [&Array2<f64>; 7] {
        [&self.wq1, &self.wk1, &self.wv1, &self.wq2, &self.wk2, &self.wv2, &self.wp]
    }

    pub fn matrices_mut(&mut self) -> [&mut Array2<f64>; 7] {
        [
            &mut self.wq1,
            &mut self.wk1,
            &mut self.wv1,
            &mut self.wq2,
            &mut self.wk2,
            &mut self.wv2,
            &mut self.wp,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Array2<f64>)> {
        PARAM_NAMES.into_iter().zip(self.matrices())
    }

    /// Builds a parameter set from matrices in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_matrices(m: [Array2<f64>; 7]) -> Result<Self> {
        let [wq1, wk1, wv1, wq2, wk2, wv2, wp] = m;
        let params = ModulationParams { wq1, wk1, wv1, wq2, wk2, wv2, wp };
        params.check_shapes()?;
        Ok(params)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let (d_v, d_t, d_p) = (self.d_v(), self.d_t(), self.d_p());
        let expected = [(d_v, d_p), (d_t, d_p), (d_t, d_v), (d_v, d_p), (d_t, d_p), (d_t, d_v), (d_v, d_t)];
        for ((name, m), want) in self.named().zip(expected) {
            if m.dim() != want {
                return Err(Error::shape(
                    name,
                    format!("{}x{}", want.0, want.1),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Glorot-uniform queries, keys and `wp`; zero value projections so both residual
/// paths start closed.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ModulationParams> {
    dims.validate()?;
    let ModelDims { d_v, d_t, d_p, .. } = *dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModulationParams::zeros(dims);
    p.wq1 = glorot_uniform(&mut rng, d_v, d_p);
    p.wk1 = glorot_uniform(&mut rng, d_t, d_p);
    p.wq2 = glorot_uniform(&mut rng, d_v, d_p);
    p.wk2 = glorot_uniform(&mut rng, d_t, d_p);
    p.wp = glorot_uniform(&mut rng, d_v, d_t);
    Ok(p)
}

/// Like [`init_params`] but with every matrix, including the value projections, random.
/// Used for gradient checks where zero value paths would hide most of the graph.
pub fn random_params(dims: &ModelDims, seed: u64) -> Result<ModulationParams> {
    dims.validate()?;
    let ModelDims { d_v, d_t, d_p, .. } = *dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModulationParams::from_matrices([
        glorot_uniform(&mut rng, d_v, d_p),
        glorot_uniform(&mut rng, d_t, d_p),
        glorot_uniform(&mut rng, d_t, d_v),
        glorot_uniform(&mut rng, d_v, d_p),
        glorot_uniform(&mut rng, d_t, d_p),
        glorot_uniform(&mut rng, d_t, d_v),
        glorot_uniform(&mut rng, d_v, d_t),
    ])
}
