#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod embedding;
pub mod error;
pub mod filter;
pub mod herding;
pub mod kbr;
pub mod kernels;
pub mod ssm;

pub use error::{Error, Result};
