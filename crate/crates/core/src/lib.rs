//! Deep triphone embedding speech recognition toolkit: corpus handling,
//! MFCC front-end, HMM-GMM training, DNN acoustic models, embedding
//! projections and phone decoding.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub(crate) mod binio;
pub mod corpus;
pub mod decoder;
pub mod dnn;
pub mod embedding;
pub mod error;
pub mod features;
pub mod hmm;
pub mod kv;

pub use error::{Error, Result};
