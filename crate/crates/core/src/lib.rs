//! Fixed points and basins of attraction of random-weight feedforward networks.

pub mod contraction;
pub mod error;
pub mod fixpoint;
pub mod init;
pub mod net;
pub mod par;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
