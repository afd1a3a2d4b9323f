#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod cli;
pub mod error;
pub mod evalharness;
pub mod matcore;
pub mod mechanism;
pub mod sampler;
