//! Twin-network treatment-effect estimation with MC Dropout uncertainty
//! factorized into representation (encoder) and prediction (head) parts.

pub mod cohort;
pub mod datagen;
mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod twin;
pub mod uncertainty;

pub use error::{Error, Result};
