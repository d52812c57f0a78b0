//! Histogram-transform density estimation and closed-set speaker
//! identification.
//!
//! The crate covers the whole pipeline: MFCC super-frames
//! ([`features`]), the histogram-transform density model ([`ht`]), a
//! diagonal GMM baseline ([`gmm`]), maximum-likelihood identification
//! ([`speaker`]) and an evaluation harness with accuracy sweeps and
//! significance tests ([`eval`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod ht;
pub mod rng;
pub mod speaker;

pub use error::{Error, Result};
pub use features::{FeatureMatrix, FeatureMode};
pub use gmm::{GmmConfig, GmmModel};
pub use ht::{HtConfig, HtModel};

pub use speaker::{Backend, BackendKind, Registry, Segment, SpeakerModel};
