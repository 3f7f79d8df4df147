//! Two-stage attention modulation of prototypes and its exact reverse pass.
//!
//! Stage one injects the gated prompt features into every prototype token through a
//! residual cross-attention. Stage two attends over one differentiated description per
//! other grade, each scaled by a sigmoid weight computed from the projected global token,
//! and adds the layer-normalized result residually.

mod backward;
mod features;
mod forward;
mod ops;
mod params;

pub use backward::modulation_backward;
pub use features::SemanticFeatures;
pub use forward::{adaptive_weights, dpe_forward, modulate, psi_forward, DpeTape, ModulationTape, PsiTape};
pub use ops::{layer_norm_row, sigmoid, softmax_rows, LAYER_NORM_EPS};
pub use params::{init_params, random_params, ModelDims, ModulationParams, DEFAULT_D_P, N_DIFF, PARAM_NAMES};
