//! Frame-level F0 extraction and log-F0 targets.
//!
//! Each frame is analysed with a 40 ms window centred on the frame's hop
//! interval. The normalized autocorrelation is searched over lags covering
//! `[f_min, f_max]`; the first local maximum within 10% of the global
//! maximum is refined by parabolic interpolation.

use std::path::Path;

use thiserror::Error;

use crate::audio_io::{read_features, write_features, FeatureMatrix, FormatError, Waveform};
use crate::segment::UnitSequence;

pub const ANALYSIS_WINDOW_SEC: f64 = 0.040;

/// log-F0 value stored for unvoiced frames.
pub const UNVOICED_LOG_F0: f32 = 0.0;

#[derive(Debug, Error)]
pub enum PitchError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("empty waveform")]
    Empty,
    #[error("waveform of {samples} samples is shorter than one {window}-sample analysis window")]
    TooShort { samples: usize, window: usize },
    #[error("sample rate {sample_rate} Hz is below twice f_max ({f_max} Hz)")]
    SampleRateTooLow { sample_rate: u32, f_max: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("pitch file must have 2 rows, found {0}")]
    BadPitchFile(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchParams {
    pub frame_rate_hz: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub voicing_threshold: f64,
}

impl Default for PitchParams {
    fn default() -> Self {
        PitchParams {
            frame_rate_hz: 50.0,
            f_min: 60.0,
            f_max: 400.0,
            voicing_threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    /// Natural log of F0 in Hz; [`UNVOICED_LOG_F0`] on unvoiced frames.
    pub log_f0: Vec<f32>,
    pub voiced: Vec<bool>,
    pub frame_rate_hz: f64,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.log_f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_f0.is_empty()
    }

    /// F0 in Hz per frame, `None` when unvoiced.
    pub fn f0_hz(&self) -> Vec<Option<f64>> {
        self.log_f0
            .iter()
            .zip(&self.voiced)
            .map(|(&l, &v)| v.then(|| (l as f64).exp()))
            .collect()
    }

    pub fn to_matrix(&self) -> FeatureMatrix {
        let mut data = self.log_f0.clone();
        data.extend(self.voiced.iter().map(|&v| if v { 1.0 } else { 0.0 }));
        FeatureMatrix::new(
            data,
            2,
            self.log_f0.len().max(1),
            self.frame_rate_hz as f32,
            0,
        )
        .expect("pitch track is finite")
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Result<Self, PitchError> {
        if m.rows() != 2 {
            return Err(PitchError::BadPitchFile(m.rows()));
        }
        Ok(PitchTrack {
            log_f0: m.row(0).to_vec(),
            voiced: m.row(1).iter().map(|&v| v != 0.0).collect(),
            frame_rate_hz: m.frame_rate_hz as f64,
        })
    }
}

pub fn write_pitch(track: &PitchTrack, path: impl AsRef<Path>) -> Result<(), PitchError> {
    if track.is_empty() {
        return Err(PitchError::Empty);
    }
    Ok(write_features(&track.to_matrix(), path)?)
}

pub fn read_pitch(path: impl AsRef<Path>) -> Result<PitchTrack, PitchError> {
    PitchTrack::from_matrix(&read_features(path)?)
}

/// Estimates one F0 value per frame at `params.frame_rate_hz`.
pub fn extract_f0(w: &Waveform, params: &PitchParams) -> Result<PitchTrack, PitchError> {
    if w.is_empty() {
        return Err(PitchError::Empty);
    }
    let PitchParams {
        frame_rate_hz,
        f_min,
        f_max,
        voicing_threshold,
    } = *params;
    if !(f_min > 0.0 && f_max > f_min) {
        return Err(PitchError::InvalidParam(format!(
            "bad band [{f_min}, {f_max}]"
        )));
    }
    if !(frame_rate_hz > 0.0) {
        return Err(PitchError::InvalidParam(format!(
            "bad frame rate {frame_rate_hz}"
        )));
    }
    let sr = w.sample_rate_hz as f64;
    if sr < 2.0 * f_max {
        return Err(PitchError::SampleRateTooLow {
            sample_rate: w.sample_rate_hz,
            f_max,
        });
    }
    let window = (ANALYSIS_WINDOW_SEC * sr).round() as usize;
    if w.len() < window {
        return Err(PitchError::TooShort {
            samples: w.len(),
            window,
        });
    }
    let hop = sr / frame_rate_hz;
    let n_frames = ((w.len() as f64 / hop).floor() as usize).max(1);
    let lag_min = ((sr / f_max).floor() as usize).max(1);
    let lag_max = ((sr / f_min).ceil() as usize).min(window - 2);

    let mut log_f0 = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    let mut buf = vec![0.0f64; window];
    let mut corr = vec![0.0f64; lag_max + 2];
    for i in 0..n_frames {
        let start = ((i as f64 + 0.5) * hop - window as f64 / 2.0).round() as isize;
        fill_window(&w.samples, start, &mut buf);
        let est = estimate_frame(&buf, lag_min, lag_max, &mut corr)
            .filter(|&(_, peak)| peak >= voicing_threshold)
            .map(|(lag, _)| sr / lag)
            .filter(|f| (f_min..=f_max).contains(f));
        match est {
            Some(f0) => {
                log_f0.push(f0.ln() as f32);
                voiced.push(true);
            }
            None => {
                log_f0.push(UNVOICED_LOG_F0);
                voiced.push(false);
            }
        }
    }
    Ok(PitchTrack {
        log_f0,
        voiced,
        frame_rate_hz,
    })
}

/// Copies samples `[start, start + buf.len())`, zero outside the signal,
/// and removes the mean of the in-range part.
fn fill_window(samples: &[f32], start: isize, buf: &mut [f64]) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (j, b) in buf.iter_mut().enumerate() {
        let idx = start + j as isize;
        *b = if idx >= 0 && (idx as usize) < samples.len() {
            n += 1;
            let v = samples[idx as usize] as f64;
            sum += v;
            v
        } else {
            0.0
        };
    }
    if n > 0 {
        let mean = sum / n as f64;
        for (j, b) in buf.iter_mut().enumerate() {
            let idx = start + j as isize;
            if idx >= 0 && (idx as usize) < samples.len() {
                *b -= mean;
            }
        }
    }
}

/// Returns the refined period in samples and its correlation peak.
fn estimate_frame(
    x: &[f64],
    lag_min: usize,
    lag_max: usize,
    corr: &mut [f64],
) -> Option<(f64, f64)> {
    let n = x.len();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy <= 1e-10 * n as f64 {
        return None;
    }
    let lo = lag_min.saturating_sub(1).max(1);
    let hi = (lag_max + 1).min(n - 1);
    // prefix energies for the normalization terms
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v * v;
    }
    for lag in lo..=hi {
        let m = n - lag;
        let num: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let e0 = prefix[m];
        let e1 = prefix[n] - prefix[lag];
        let den = (e0 * e1).sqrt();
        corr[lag] = if den > 0.0 { num / den } else { 0.0 };
    }
    let global = (lag_min..=lag_max)
        .map(|l| corr[l])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(global > 0.0) {
        return None;
    }
    let is_peak = |l: usize| corr[l] >= corr[l - 1] && corr[l] >= corr[l + 1];
    let lag = (lag_min..=lag_max).find(|&l| corr[l] >= 0.9 * global && is_peak(l))?;
    let (a, b, c) = (corr[lag - 1], corr[lag], corr[lag + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let peak = b - 0.25 * (a - c) * shift;
    Some((lag as f64 + shift, peak.min(1.0)))
}

/// Repeats each unit of a deduplicated sequence by its duration.
pub fn expand_units_to_frames(seq: &UnitSequence) -> Vec<u32> {
    debug_assert!(seq.dedup, "expected a deduplicated sequence");
    seq.expand()
}
