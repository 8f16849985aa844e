//! Bi-modal cross-attention fusion for multi-label movie-genre
//! classification from precomputed poster embeddings.
//!
//! The crate is self-contained: a small f64 tensor type with a reverse-mode
//! tape ([`tensor`], [`tape`]), the fusion model ([`model`]), an asymmetric
//! multi-label loss ([`loss`]), the multi-label metric suite ([`metrics`]),
//! dataset ingestion and a planted-signal generator ([`dataset`]), Adam
//! training with early stopping ([`train`]) and the command layer ([`cli`]).
//!
//! ```
//! use posterfuse::dataset::{generate_synthetic, GeneratorSettings, GenreVocabulary};
//! use posterfuse::model::{predict, ModelConfig, ModelParams};
//! use posterfuse::tensor::Tensor;
//!
//! let settings = GeneratorSettings::default();
//! let records = generate_synthetic(4, &settings, &GenreVocabulary::default(), 1).unwrap();
//! let params = ModelParams::init(&ModelConfig::default(), 1).unwrap();
//! let visual = Tensor::stack(&records.iter().map(|r| &r.visual).collect::<Vec<_>>()).unwrap();
//! let textual = Tensor::stack(&records.iter().map(|r| &r.textual).collect::<Vec<_>>()).unwrap();
//! let scores = predict(&params, &visual, &textual).unwrap();
//! assert_eq!(scores.shape(), &[4, 13]);
//! ```

pub mod cli;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
