//! Bistatic LEO integrated sensing and communication: rate-splitting precoder
//! design under Cramér-Rao constraints, echo simulation and target estimation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod conic;
pub mod crb;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod precoder;
pub mod rates;
pub mod scenario;
pub mod sensing;
pub mod waveform;

pub use error::{Error, Result};
