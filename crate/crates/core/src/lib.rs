//! Building facial-expression datasets from noisy web queries, and training
//! classifiers on the resulting mix of expert-labeled and query-labeled
//! images.
//!
//! The pipeline, in order:
//!
//! 1. [`taxonomy`]: label spaces and search queries.
//! 2. [`harvest`]: query search engines, store result URLs, download images.
//! 3. [`catalog`]: the on-disk store of every image and its downstream state.
//! 4. [`facegate`]: keep images with a landmarked face; crop faces.
//! 5. [`annotate`]: blind double annotation, adjudication, agreement statistics,
//!    and the HTTP service annotators use.
//! 6. [`noisemodel`]: the label-confusion matrix, posteriors, and forward correction.
//! 7. [`trainer`] and [`eval`]: the three training regimes and their reports.
//! 8. [`simulate`]: a synthetic end-to-end benchmark of the training regimes.
//!
//! [`dataset`] turns catalog records into train/test samples, [`config`]
//! reads `wildlabel.conf`, and [`cli`] backs the `wildlabel` binary.

pub mod annotate;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod eval;
pub mod facegate;
pub mod harvest;
pub mod noisemodel;
pub mod taxonomy;
pub mod trainer;

pub mod simulate;

pub use error::{Error, Result};
