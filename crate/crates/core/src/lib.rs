//! Day-ahead energy management and local energy market for unbalanced
//! three-phase microgrids, formulated as second-order cone programs.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conic;
pub mod der;
pub mod error;
pub mod linpf;
pub mod market;
pub mod model;
pub mod netmodel;
pub mod phasor;
pub mod pipeline;
pub mod pq;
pub mod scenario;

pub use error::{Error, Result};
