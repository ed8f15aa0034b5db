//! Finite-mode, discrete-time laboratory for closed-time-loop perturbation
//! theory of a quantised field coupled to matter: Green-function kernels,
//! causal-variable substitutions, the causal Wick theorem, dressing of response
//! cumulants, the diagram expansion, and the resonance (rotating-wave) bridge,
//! all checked against an exact truncated Fock-space oracle.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod cli;
pub mod dressing;
pub mod error;
pub mod fft;
pub mod fock;
pub mod freq;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod normal;
pub mod report;
pub mod response;
pub mod rwa;
pub mod scenario;
pub mod suites;
pub mod wick;

pub use error::{LabError, Result};
