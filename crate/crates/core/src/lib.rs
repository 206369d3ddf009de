//! Place-fitted pedestrian detection.
//!
//! Aggregate channel features feed linear SVMs trained with hard negative
//! mining. Instead of one global detector, a bank holds one small model per
//! map frame, fitted to the frames around it in time or appearance, and a
//! query pose retrieves the model of the nearest map frame.

pub mod channels;
pub mod cli;
pub mod dataio;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mining;
pub mod placebank;
pub mod raster;
pub mod similarity;
pub mod svm;

pub use error::{Error, Result};
