//! Numerical laboratory for the fourth-order parabolic equation
//!
//! ```text
//!   dy/dt + Lap^2 y + sum_{|beta|<=2} p_beta(x) d^beta y = F(x,t)
//! ```
//!
//! on a box domain with simply-supported (Navier) boundary conditions
//! `y = Lap y = 0`. The crate provides:
//!
//! * tensor-product grids with subdomain masks and domain enlargement
//!   across a data subboundary ([`grid`]),
//! * second-order finite-difference operators, the Navier biharmonic,
//!   and discrete Sobolev / trace norms ([`ops`]),
//! * the singular-in-time Carleman weight system `alpha`, `phi`, the
//!   bump function `d(x)`, level thresholds and the smooth cutoff
//!   ([`weights`]),
//! * an implicit time-stepping forward solver ([`forward`]),
//! * numerical evaluation of the Carleman-estimate inequality and the
//!   auxiliary energy/collapse estimates ([`carleman`]),
//! * inverse source recovery from interior data with an empirical
//!   Lipschitz-stability ensemble ([`inverse_source`]),
//! * continuation from lateral Cauchy data by Carleman-weighted
//!   quasi-reversibility with Hoelder-stability diagnostics
//!   ([`continuation`]),
//! * a config-driven experiment harness ([`config`], [`report`]).

pub mod band;
pub mod carleman;
pub mod config;
pub mod continuation;
pub mod error;
pub mod forward;
pub mod grid;
pub mod inverse_source;
pub mod ops;
pub mod report;
pub mod stencil;
pub mod weights;

pub use error::{Error, Result};
