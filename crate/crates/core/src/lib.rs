//! Two-regime optimal switching with Poisson intervention times.

// NaN-rejecting guards are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod analytic;
pub mod cli;
pub mod config;
pub mod model;
pub mod odesolver;
pub mod oracle;
pub mod presets;
pub mod regions;
pub mod simulate;
