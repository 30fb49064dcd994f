//! Reference computations for tests.
//!
//! Nothing here shares code with `nphfit`: quadrature, series and empirical
//! distribution checks are written from first principles so they can serve as
//! oracles for the library's closed forms and matrix-exponential paths.

pub mod quad;
pub mod series;
pub mod stats;
