#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod airtime;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod model;
pub mod quadrature;
pub mod scenario;
pub mod sim;
pub mod sweep;

pub use error::{Error, Result};
