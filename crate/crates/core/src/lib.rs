//! Frequency regulation for networked AC microgrids: droop network model,
//! z-space optimal control, subspace identification, watermark-based attack
//! detection and a scenario simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod linalg;
pub mod lqr;
pub mod netmodel;
pub mod presets;
pub mod simcore;
pub mod sysid;
pub mod transform;
pub mod watermark;

pub use error::{Error, Result};
