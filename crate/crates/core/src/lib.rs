#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod animal_prior;
pub mod commensurability;
pub mod config;
pub mod dose_model;
pub mod engine;
pub mod error;
pub mod inference;
pub mod io;
pub mod math;
pub mod optimize;
pub mod sim;

pub use error::{Error, Result};
