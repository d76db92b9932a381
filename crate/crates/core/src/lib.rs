//! Auto-context facade segmentation.
//!
//! A cascade of boosted-tree pixel (or point) classifiers where every stage
//! after the first also sees statistics of the previous stage's predictions,
//! trained with stacked generalization, optionally smoothed by a Potts CRF.

pub mod autoctx;
pub mod crf;
pub mod data;
pub mod error;
pub mod eval;
pub mod features2d;
pub mod features3d;
pub mod gbdt;
pub mod stacking;
pub mod synth;

pub use error::{Error, Result};
