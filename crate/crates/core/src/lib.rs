//! Depth-based ranking of sparsely observed functional data.
//!
//! Sparse curves are reconstructed on a common grid by a P-spline and
//! functional principal component pipeline, bootstrapped to account for
//! estimation uncertainty, and ranked by modified band depth computed either
//! on the point estimates or on the estimates together with their pointwise
//! interval bounds.

// `!(x > y)` is used on purpose to reject NaN along with out-of-range values.
// Grid loops index several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod depth;
pub mod error;
pub mod experiments;
pub mod fpca;
pub mod iev;
pub mod seeding;
pub mod sim;
pub mod smoothing;

pub use dataset::{DenseCurveMatrix, EvaluationGrid, SparseFunctionalDataset, Subject};
pub use depth::{mbd_fast, mbd_u, select_alpha_star, spearman, DepthMethod, DepthVector};
pub use error::{Error, Result};
pub use fpca::{CurveReconstruction, FpcModel};
pub use iev::{iev_fit, IevConfig, IevFit, PipelineConfig};
