//! Benchmark harness for multivariate time series forecasting.
//!
//! The pipeline is: [`dataset`] loading and chronological splitting,
//! [`preprocess`] normalization and windowing, [`models`] fitting,
//! [`metrics`] evaluation on re-normalized values, orchestrated by
//! [`runner`]. [`heterogeneity`] profiles datasets and [`report`] renders
//! result tables.

pub mod dataset;
pub mod error;
pub mod heterogeneity;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod report;
pub mod runner;

pub use error::{Error, ErrorClass, Result};
