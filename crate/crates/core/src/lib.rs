//! Greedy construction of neural-network ensembles under a parameter budget.
//!
//! Each iteration proposes a handful of candidate architectures, trains
//! them (optionally distilling from the ensemble built so far), fits
//! per-member mixture weights, and keeps the candidate that lowers the
//! ensemble's training loss the most. Everything runs on a small f64
//! reverse-mode autodiff engine in [`autograd`].
//!
//! ```no_run
//! use ensemble_search::data::{SyntheticKind, SyntheticSpec};
//! use ensemble_search::search::{self, RunConfig};
//!
//! let data = SyntheticSpec::new(SyntheticKind::Spirals, 300, 100, 3, 0.1, 7).generate().unwrap();
//! let config = RunConfig::default();
//! let outcome = search::run(&config, &data, None, &mut search::NullSink).unwrap();
//! println!("{} members", outcome.ensemble.len());
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod generator;
pub mod harness;
pub mod losses;
pub mod model;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
