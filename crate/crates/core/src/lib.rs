//! Evaluation and targeting toolkit for threshold-coupon stimulus programs.
//!
//! The crate covers the full chain from panel construction and propensity
//! matching, through difference-in-differences and causal-forest estimation
//! of heterogeneous effects, to incidence mapping, welfare accounting and
//! counterfactual targeting. A seeded simulator with planted effects serves
//! as ground truth for every estimator.

pub mod ale;
pub mod did;
pub mod error;
pub mod forest;
pub mod incidence;
pub mod kv;
pub mod linalg;
pub mod panel;
pub mod policy;
pub mod psm;
pub mod simulate;
pub mod stats;
pub mod welfare;

pub use error::{Error, ErrorKind, Result};
