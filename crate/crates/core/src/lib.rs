//! Discrete speech unit toolkit.
//!
//! Covers codebook learning and frame assignment, duration-penalized
//! segmentation and run-length deduplication, unit-quality metrics, pitch
//! targets, training-target preparation for unit-based TTS, corpus
//! augmentation, and oversampled mixing of natural and synthetic corpora.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod augment;
pub mod cli;
pub mod error;
pub mod kmeans;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod pitch;
pub mod sampler;
pub mod segment;
pub mod targets;
pub mod toy;

pub use audio_io::{FeatureMatrix, PhoneAlignment, SessionEmbedding, Waveform};
pub use error::{Error, Result};
pub use kmeans::{kmeans_assign, kmeans_fit, Codebook, KMeansParams};
pub use manifest::{Manifest, UtteranceRecord};
pub use segment::{dedup_runs, dpdp_segment, DpdpParams, UnitSequence};
