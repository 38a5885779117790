// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity, clippy::needless_range_loop)]

pub mod asymvar;
pub mod ballint;
pub mod cli;
pub mod divergence;
pub mod empproc;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod geometry;
pub mod models;
pub mod optim;
pub mod qmc;
pub mod quad;
pub mod rng;
pub mod stats;

pub use divergence::DivergenceSpec;
pub use error::{GmspError, Result};
pub use geometry::{NNTable, PointCloud};
pub use models::{ModelFamily, ParamVector};
