//! Readers and writers for waveforms, frame-feature matrices, phone
//! alignments and session embeddings.
//!
//! The feature container ("FMAT") is a small little-endian format:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMAT"
//! 4       4     version (u32, = 1)
//! 8       4     rows (u32)
//! 12      4     cols (u32)
//! 16      4     frame rate in Hz (f32)
//! 20      4     source layer (u32)
//! 24      ...   rows * cols f32 values, row-major
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const FMAT_MAGIC: [u8; 4] = *b"FMAT";
pub const FMAT_VERSION: u32 = 1;
pub const FMAT_HEADER_LEN: usize = 24;

/// Canonical sample rate of the toolkit.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported wav format: {0}")]
    UnsupportedWav(String),
    #[error("wav error: {0}")]
    Wav(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing data: expected {expected} bytes, got {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid shape {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("alignment line {line}: {msg}")]
    AlignmentSyntax { line: usize, msg: String },
    #[error("alignment gap at frame {frame}")]
    AlignmentGap { frame: usize },
    #[error("alignment overlap at frame {frame}")]
    AlignmentOverlap { frame: usize },
    #[error("alignment does not cover frames from {frame} (expected {expected} frames)")]
    AlignmentShort { frame: usize, expected: usize },
    #[error("alignment extends past frame count {expected} at frame {frame}")]
    AlignmentLong { frame: usize, expected: usize },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Mono waveform with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        Waveform {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean-square power, accumulated in double precision.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    /// Hard-clips every sample to [-1, 1] and returns how many were clipped.
    pub fn clip(&mut self) -> usize {
        let mut clipped = 0;
        for s in &mut self.samples {
            if *s > 1.0 {
                *s = 1.0;
                clipped += 1;
            } else if *s < -1.0 {
                *s = -1.0;
                clipped += 1;
            }
        }
        clipped
    }
}

pub(crate) fn mean_square(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|&s| (s as f64) * (s as f64))
        .sum::<f64>()
        / samples.len() as f64
}

/// Reads a 16-bit PCM mono WAV file. Samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, FormatError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    read_wav_from(io::BufReader::new(file))
}

pub fn read_wav_from<R: io::Read>(reader: R) -> Result<Waveform, FormatError> {
    let reader = hound::WavReader::new(reader).map_err(wav_error)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(FormatError::UnsupportedWav(format!(
            "{} channels (mono required)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(FormatError::UnsupportedWav(format!(
            "{:?} {}-bit samples (16-bit PCM required)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_error)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

fn wav_error(e: hound::Error) -> FormatError {
    match e {
        hound::Error::Unsupported => FormatError::UnsupportedWav("unsupported encoding".into()),
        hound::Error::IoError(err) => FormatError::Wav(err.to_string()),
        other => FormatError::Wav(other.to_string()),
    }
}

/// Quantizes one sample to 16-bit PCM. Inputs are expected to be clipped.
pub fn quantize_sample(s: f32) -> i16 {
    let v = (s as f64 * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Writes a waveform as 16-bit PCM mono, hard-clipping to [-1, 1] first.
/// Returns the number of clipped samples.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<usize, FormatError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    write_wav_to(w, io::BufWriter::new(file))
}

pub fn write_wav_to<W: io::Write + io::Seek>(
    w: &Waveform,
    writer: W,
) -> Result<usize, FormatError> {
    if let Some(i) = w.samples.iter().position(|s| !s.is_finite()) {
        return Err(FormatError::NonFinite { row: 0, col: i });
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::new(writer, spec).map_err(wav_error)?;
    let mut clipped = 0;
    for &s in &w.samples {
        if s.abs() > 1.0 {
            clipped += 1;
        }
        out.write_sample(quantize_sample(s.clamp(-1.0, 1.0)))
            .map_err(wav_error)?;
    }
    out.finalize().map_err(wav_error)?;
    Ok(clipped)
}

/// Frame-level feature matrix, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    pub frame_rate_hz: f32,
    pub source_layer: u32,
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f32>,
        rows: usize,
        cols: usize,
        frame_rate_hz: f32,
        source_layer: u32,
    ) -> Result<Self, FormatError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(FormatError::BadShape { rows, cols });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(FeatureMatrix {
            data,
            rows,
            cols,
            frame_rate_hz,
            source_layer,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], frame_rate_hz: f32) -> Result<Self, FormatError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(FormatError::BadShape {
                rows: rows.len(),
                cols,
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(data, rows.len(), cols, frame_rate_hz, 0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FMAT_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&FMAT_MAGIC);
        out.extend_from_slice(&FMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate_hz.to_le_bytes());
        out.extend_from_slice(&self.source_layer.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 || bytes[..4] != FMAT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: FMAT_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < FMAT_HEADER_LEN {
            return Err(FormatError::Truncated {
                expected: FMAT_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let rows = u32_at(8) as usize;
        let cols = u32_at(12) as usize;
        let frame_rate_hz = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let source_layer = u32_at(20);
        let expected = FMAT_HEADER_LEN + rows * cols * 4;
        if bytes.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(FormatError::TrailingBytes {
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes[FMAT_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(data, rows, cols, frame_rate_hz, source_layer)
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| FormatError::io(path, e))
}

/// One phone interval, inclusive on both ends, in feature frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneInterval {
    pub start_frame: usize,
    pub end_frame: usize,
    pub phone: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhoneAlignment {
    pub intervals: Vec<PhoneInterval>,
}

impl PhoneAlignment {
    pub fn num_frames(&self) -> usize {
        self.intervals.last().map_or(0, |i| i.end_frame + 1)
    }

    /// Expands intervals into one phone label per frame.
    pub fn framewise(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.num_frames());
        for iv in &self.intervals {
            for _ in iv.start_frame..=iv.end_frame {
                out.push(iv.phone.as_str());
            }
        }
        out
    }

    /// Checks that intervals tile `[0, num_frames)` exactly.
    pub fn validate(&self, num_frames: usize) -> Result<(), FormatError> {
        let mut next = 0usize;
        for iv in &self.intervals {
            if iv.start_frame > next {
                return Err(FormatError::AlignmentGap { frame: next });
            }
            if iv.start_frame < next {
                return Err(FormatError::AlignmentOverlap {
                    frame: iv.start_frame,
                });
            }
            if iv.end_frame >= num_frames {
                return Err(FormatError::AlignmentLong {
                    frame: iv.end_frame,
                    expected: num_frames,
                });
            }
            next = iv.end_frame + 1;
        }
        if next != num_frames {
            return Err(FormatError::AlignmentShort {
                frame: next,
                expected: num_frames,
            });
        }
        Ok(())
    }

    pub fn parse(text: &str, num_frames: usize) -> Result<Self, FormatError> {
        let mut intervals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| FormatError::AlignmentSyntax {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split_whitespace();
            let (Some(s), Some(e), Some(p), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(syntax("expected \"start end phone\""));
            };
            let start_frame: usize = s.parse().map_err(|_| syntax("bad start frame"))?;
            let end_frame: usize = e.parse().map_err(|_| syntax("bad end frame"))?;
            if end_frame < start_frame {
                return Err(syntax("end before start"));
            }
            intervals.push(PhoneInterval {
                start_frame,
                end_frame,
                phone: p.to_string(),
            });
        }
        let a = PhoneAlignment { intervals };
        a.validate(num_frames)?;
        Ok(a)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for iv in &self.intervals {
            out.push_str(&format!(
                "{} {} {}\n",
                iv.start_frame, iv.end_frame, iv.phone
            ));
        }
        out
    }
}

/// Reads an alignment and validates that it covers exactly `num_frames` frames.
pub fn read_alignment(
    path: impl AsRef<Path>,
    num_frames: usize,
) -> Result<PhoneAlignment, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    PhoneAlignment::parse(&text, num_frames)
}

/// Reads an alignment without a known frame count; coverage from frame 0 is
/// still checked.
pub fn read_alignment_any(path: impl AsRef<Path>) -> Result<PhoneAlignment, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let end = text
        .lines()
        .filter_map(|l| l.split_whitespace().nth(1))
        .filter_map(|e| e.parse::<usize>().ok())
        .max()
        .map_or(0, |e| e + 1);
    PhoneAlignment::parse(&text, end)
}

/// Utterance-level style vector, consumed as opaque data.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEmbedding {
    pub vector: Vec<f32>,
    pub utterance_id: String,
}

/// Embeddings are FMAT files with a single row.
pub fn read_embedding(
    path: impl AsRef<Path>,
    utterance_id: &str,
) -> Result<SessionEmbedding, FormatError> {
    let m = read_features(path)?;
    if m.rows() != 1 {
        return Err(FormatError::BadShape {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(SessionEmbedding {
        vector: m.into_vec(),
        utterance_id: utterance_id.to_string(),
    })
}

pub fn write_embedding(e: &SessionEmbedding, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let m = FeatureMatrix::new(e.vector.clone(), 1, e.vector.len(), 0.0, 0)?;
    write_features(&m, path)
}
