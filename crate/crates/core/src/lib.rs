//! Certified neural Hamilton-Jacobi reachability.
//!
//! A sine-activated value network is trained on the HJ residual, the
//! residual is bounded over the whole space-time domain by an interval
//! branch-and-prune checker, and the certified bound is turned into inner
//! and outer approximations of the reachable set.

pub mod certify;
pub mod cli;
pub mod cegis;
pub mod error;
pub mod expr;
pub mod oracle;
pub mod reach;
pub mod system;
pub mod train;
pub mod valuenet;

pub use error::{Error, Result};
