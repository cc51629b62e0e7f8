//! Numerical tools for self-stabilizing (McKean–Vlasov) diffusions: model
//! checks, deterministic flows, the self-consistent interaction drift,
//! Euler–Maruyama simulation, action minimization and exit-time Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod drift;
pub mod error;
pub mod exitlab;
pub mod expr;
pub mod flow;
pub mod ldp;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod scenarios;
pub mod sde;

pub use error::{Error, Result};
