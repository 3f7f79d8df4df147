//! Prototype evolution for ordinal severity grading over precomputed embeddings.
//!
//! The pipeline: pick low-variance anchors per grade and average them into base prototypes
//! ([`anchors`]); keep the most discriminative prompt families ([`gating`]); modulate the
//! prototypes with two attention stages driven by text features ([`modulation`]); learn the
//! seven projections with a cosine-softmax loss ([`trainer`]); classify and score
//! ([`metrics`]). [`synth`] generates seeded datasets with adjacent-grade overlap.

pub mod anchors;
pub mod error;
pub mod gating;
pub mod grade;
pub mod metrics;
pub mod modulation;
pub mod pipeline;
pub mod prompts;
pub mod prototype;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use grade::{GradeId, NUM_GRADES};
pub use prototype::{PrototypeSet, Stage};
