use std::path::PathBuf;

use thiserror::Error;

use crate::audio_io::FormatError;
use crate::augment::AugmentError;
use crate::kmeans::KMeansError;
use crate::manifest::ManifestError;
use crate::metrics::MetricsError;
use crate::pitch::PitchError;
use crate::sampler::SamplerError;
use crate::segment::SegmentError;
use crate::targets::TargetError;
use crate::toy::ToyError;

/// Any error raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pitch(#[from] PitchError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("utterance {id:?}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_utterance(id: &str, e: impl Into<Error>) -> Self {
        Error::Utterance {
            id: id.to_string(),
            source: Box::new(e.into()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
