//! Brute-force many-body reference for small chains.

mod fock;
mod liouvillian;
mod verify;

pub use fock::{trace_product, FockSpace, OracleLimit, MAX_ORACLE_SITES, MAX_ORACLE_SITES_EXTENDED};
pub use liouvillian::{unvec, vec_of, FockOracle, MIN_JUMP_WEIGHT};
pub use verify::*;
