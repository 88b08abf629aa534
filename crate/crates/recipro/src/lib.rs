//! Exact p-adic computations around the psi = 1 congruence system: windowed
//! Laurent series over unramified rings, Kummer and cyclotomic towers, Gauss
//! sums, tame resolvents and group-ring volume checks.

pub mod error;
pub mod field_towers;
pub mod gauss_eps;
pub mod harness;
pub mod laurent_ring;
pub mod linalg;
pub mod padic_core;
pub mod psi_solver;
pub mod reciprocity_eval;
pub mod resolvent_lattice;
pub mod unram_coleman;

pub use error::{Error, Result};
