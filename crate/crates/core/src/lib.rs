// NaN-rejecting guards are written as `!(x <= limit)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod matrix;
pub mod chain;
pub mod tracedet;
pub mod oracle;
pub mod wtd;
pub mod stats;
