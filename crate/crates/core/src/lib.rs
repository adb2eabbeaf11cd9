//! Free-induction decay of an NV-center electron spin coupled to a random
//! ¹³C nuclear-spin bath.
//!
//! The pipeline is: diamond lattice → random ¹³C configuration
//! ([`geometry`]) → dipolar couplings ([`hyperfine`]) → exact product-of-traces
//! envelope ([`dynamics`], cross-checked by the full Hilbert-space
//! [`oracle`]) → stretched-exponential fit ([`fitting`]) → field sweeps and
//! bath-size scans ([`experiments`]).
//!
//! Internal units are SI throughout: meters, seconds, tesla, rad/s.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fitting;
pub mod geometry;
pub mod hyperfine;
pub mod oracle;
pub mod par;
pub mod seeds;

pub use error::{Error, Result};
