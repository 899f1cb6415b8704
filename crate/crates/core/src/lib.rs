//! Estimation of average, local average, quantile and local quantile
//! treatment effects with very many controls.

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod dictionary;
pub mod effects;
pub mod error;
pub mod lasso;
pub mod pipeline;
pub mod reduced_form;
pub mod report;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
