//! Local-rotation random walks on SU(d).
//!
//! The walk picks a cyclically adjacent coordinate pair `(i, i+1)` uniformly
//! and rotates that plane by an SU(2) element drawn from a local measure.
//! The crate simulates the walk, measures its convergence to Haar measure and
//! compiles arbitrary elements of SU(d) into words over the walk's generators.

pub mod error;
pub mod genwords;
pub mod matcore;
pub mod spectra;
pub mod walk;

pub use error::{Error, Result};
