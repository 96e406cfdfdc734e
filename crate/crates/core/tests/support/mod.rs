//! Oracles shared by the integration tests of both crates.
#![allow(dead_code, clippy::type_complexity, clippy::neg_cmp_op_on_partial_ord)]

pub mod fd;
pub mod invariants;
pub mod oracle;
pub mod scenarios;
pub mod weibull;
