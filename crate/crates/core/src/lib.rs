#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hjb;
pub mod lab;
pub mod linalg;
pub mod model;
pub mod mollify;
pub mod policy;
pub mod relaxed;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
