//! Photophysics toolkit for single color centers in silicon.
//!
//! Simulates photon emission from parameterized G and G* centers, analyzes
//! time-tag streams and optical scans (g2, lifetime, saturation,
//! polarization, spectra) and classifies emitters from four fingerprints.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod correlator;
pub mod error;
pub mod fitkit;
pub mod io;
pub mod photonsim;
pub mod pipeline;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
