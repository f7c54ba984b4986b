//! Specific emitter identification from transmitter IQ imbalance.
//!
//! The crate covers the whole experiment: synthesizing impaired QAM/PSK
//! captures ([`signal`]), building and serializing labelled datasets
//! ([`dataset`]), a small convolutional regression engine ([`nn`]),
//! estimator quality metrics ([`eval`]), the Gaussian/Bayes decision layer
//! ([`decision`]) and the end-to-end identification pipeline ([`sei`]).

pub mod dataset;
pub mod decision;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod nn;
pub mod sei;
pub mod seed;
pub mod signal;

pub use error::{Error, ErrorClass, Result};
