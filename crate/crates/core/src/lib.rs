//! Remaining-useful-life estimation for software systems.
//!
//! Backlog items (faults and enhancements) are weighted by story points and
//! impact factors; the cumulative weight across releases predicts response
//! time through a linear regression, and the number of future releases
//! before the predicted response time crosses a threshold is the remaining
//! useful life. Predictions can be adjusted for OS word-size and clock-speed
//! changes, and release plans can be searched for the longest life.

pub mod classify;
pub mod cluster;
pub mod error;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod plan;
pub mod prognosis;
pub mod regress;
pub mod sim;
pub mod stats;
pub mod weighting;

pub use error::{Error, Result};
