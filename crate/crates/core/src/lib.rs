//! Simultaneous variable selection and clustering for multivariate
//! multinomial mixtures, haploid or diploid (Hardy-Weinberg) data.
//!
//! The pipeline: fit each candidate model `(K, S)` by EM ([`em`]), gather a
//! sub-collection of competitive models ([`explorer`]), calibrate the
//! penalty `lambda * D / n` by the dimension jump ([`calibration`]) and pick
//! the model minimizing the penalized contrast ([`criteria`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod criteria;
pub mod data;
pub mod em;
pub mod error;
pub mod experiment;
pub mod explorer;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod simulate;

pub use data::{CaseKind, Dataset, LoadOptions, SampleSpace};
pub use em::{EmConfig, FittedModel};
pub use error::{Error, ErrorFamily, Result};
pub use model::{MixtureParams, ModelIndex};
