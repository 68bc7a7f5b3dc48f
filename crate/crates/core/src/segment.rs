//! Duration-penalized segmentation of unit sequences, run-length
//! deduplication, and unit/phoneme length ratios.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::audio_io::{FeatureMatrix, FormatError};
use crate::kmeans::Codebook;

pub const DEFAULT_MAX_SEGMENT_FRAMES: usize = 50;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("dimension mismatch: features have {features} dims, codebook has {codebook}")]
    DimensionMismatch { features: usize, codebook: usize },
    #[error("empty feature sequence")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("utterance {id:?} has zero phoneme length")]
    ZeroPhonemeLength { id: String },
    #[error("unit sequence: {0}")]
    Malformed(String),
    #[error("units file line {line}: {msg}")]
    UnitsSyntax { line: usize, msg: String },
}

/// Units with per-unit durations in frames.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSequence {
    pub units: Vec<u32>,
    pub durations: Vec<u32>,
    pub frame_rate_hz: f64,
    pub dedup: bool,
}

impl UnitSequence {
    /// One unit per frame, every duration 1.
    pub fn framewise(units: Vec<u32>, frame_rate_hz: f64) -> Self {
        let durations = vec![1; units.len()];
        UnitSequence {
            units,
            durations,
            frame_rate_hz,
            dedup: false,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn num_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.units.len() != self.durations.len() {
            return Err(SegmentError::Malformed(format!(
                "{} units but {} durations",
                self.units.len(),
                self.durations.len()
            )));
        }
        if let Some(i) = self.durations.iter().position(|&d| d == 0) {
            return Err(SegmentError::Malformed(format!(
                "zero duration at position {i}"
            )));
        }
        if self.dedup {
            if let Some(i) = self.units.windows(2).position(|w| w[0] == w[1]) {
                return Err(SegmentError::Malformed(format!(
                    "repeated unit {} at position {} in a deduplicated sequence",
                    self.units[i],
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Repeats each unit by its duration.
    pub fn expand(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.num_frames());
        for (&u, &d) in self.units.iter().zip(&self.durations) {
            out.extend(std::iter::repeat_n(u, d as usize));
        }
        out
    }
}

/// Merges consecutive equal units, summing their durations.
pub fn dedup_runs(seq: &UnitSequence) -> UnitSequence {
    let mut units: Vec<u32> = Vec::with_capacity(seq.units.len());
    let mut durations: Vec<u32> = Vec::with_capacity(seq.units.len());
    for (&u, &d) in seq.units.iter().zip(&seq.durations) {
        match units.last() {
            Some(&last) if last == u => *durations.last_mut().unwrap() += d,
            _ => {
                units.push(u);
                durations.push(d);
            }
        }
    }
    UnitSequence {
        units,
        durations,
        frame_rate_hz: seq.frame_rate_hz,
        dedup: true,
    }
}

/// Cost added once per segment, as a function of its length in frames.
pub trait SegmentPenalty {
    fn penalty(&self, len: usize) -> f64;
}

/// Constant per-segment penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPenalty(pub f64);

impl SegmentPenalty for ConstantPenalty {
    fn penalty(&self, _len: usize) -> f64 {
        self.0
    }
}

impl<F: Fn(usize) -> f64> SegmentPenalty for F {
    fn penalty(&self, len: usize) -> f64 {
        self(len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpdpParams {
    pub lambda: f64,
    pub max_segment_frames: usize,
}

impl Default for DpdpParams {
    fn default() -> Self {
        DpdpParams {
            lambda: 1.0,
            max_segment_frames: DEFAULT_MAX_SEGMENT_FRAMES,
        }
    }
}

/// Half-open frame range `[start, end)` labelled with one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub unit: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Distortion plus penalties of the optimal segmentation.
    pub cost: f64,
    pub frame_rate_hz: f64,
}

impl Segmentation {
    /// Framewise units (dedup = false), each segment's unit repeated per frame.
    pub fn to_unit_sequence(&self) -> UnitSequence {
        let mut units = Vec::new();
        for s in &self.segments {
            units.extend(std::iter::repeat_n(s.unit, s.end - s.start));
        }
        UnitSequence::framewise(units, self.frame_rate_hz)
    }

    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }
}

/// Optimal duration-penalized segmentation against a fixed codebook.
///
/// Minimizes the sum over segments of the squared distance of every frame to
/// the segment's unit centroid plus `lambda`, over segments no longer than
/// `max_segment_frames`. Ties prefer later segment boundaries, then lower
/// unit ids.
pub fn dpdp_segment(
    features: &FeatureMatrix,
    cb: &Codebook,
    params: &DpdpParams,
) -> Result<Segmentation, SegmentError> {
    if !(params.lambda >= 0.0) || !params.lambda.is_finite() {
        return Err(SegmentError::InvalidParam(format!(
            "lambda must be finite and >= 0, got {}",
            params.lambda
        )));
    }
    dpdp_segment_with(
        features,
        cb,
        params.max_segment_frames,
        &ConstantPenalty(params.lambda),
    )
}

pub fn dpdp_segment_with<P: SegmentPenalty + ?Sized>(
    features: &FeatureMatrix,
    cb: &Codebook,
    max_segment_frames: usize,
    penalty: &P,
) -> Result<Segmentation, SegmentError> {
    if features.cols() != cb.dim() {
        return Err(SegmentError::DimensionMismatch {
            features: features.cols(),
            codebook: cb.dim(),
        });
    }
    if max_segment_frames == 0 {
        return Err(SegmentError::InvalidParam(
            "max_segment_frames must be >= 1".into(),
        ));
    }
    let t_len = features.rows();
    if t_len == 0 {
        return Err(SegmentError::Empty);
    }
    let k = cb.k();
    let mut dist = vec![0.0f64; t_len * k];
    for t in 0..t_len {
        cb.distances_into(features.row(t), &mut dist[t * k..(t + 1) * k]);
    }
    let (segments, cost) = dpdp_core(&dist, t_len, k, max_segment_frames, penalty);
    Ok(Segmentation {
        segments,
        cost,
        frame_rate_hz: features.frame_rate_hz as f64,
    })
}

/// DP over a precomputed `T x k` distance table.
///
/// `best[e]` is the optimal cost of frames `[0, e)`. For each end `e` the
/// candidate starts are scanned from latest to earliest while per-unit
/// segment costs grow incrementally, so a strict improvement is required to
/// move a boundary earlier.
pub fn dpdp_core<P: SegmentPenalty + ?Sized>(
    dist: &[f64],
    t_len: usize,
    k: usize,
    max_len: usize,
    penalty: &P,
) -> (Vec<Segment>, f64) {
    let mut best = vec![f64::INFINITY; t_len + 1];
    let mut back: Vec<(usize, u32)> = vec![(0, 0); t_len + 1];
    best[0] = 0.0;
    let mut acc = vec![0.0f64; k];
    for end in 1..=t_len {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let earliest = end.saturating_sub(max_len);
        for start in (earliest..end).rev() {
            let row = &dist[start * k..(start + 1) * k];
            let mut unit = 0usize;
            for u in 0..k {
                acc[u] += row[u];
                if acc[u] < acc[unit] {
                    unit = u;
                }
            }
            let cand = best[start] + acc[unit] + penalty.penalty(end - start);
            if cand < best[end] {
                best[end] = cand;
                back[end] = (start, unit as u32);
            }
        }
    }
    let mut segments = Vec::new();
    let mut end = t_len;
    while end > 0 {
        let (start, unit) = back[end];
        segments.push(Segment { start, end, unit });
        end = start;
    }
    segments.reverse();
    (segments, best[t_len])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioEntry {
    pub id: String,
    pub unit_len: usize,
    pub phoneme_len: usize,
}

/// Mean over utterances of unit length / phoneme length.
pub fn length_ratio(entries: &[RatioEntry]) -> Result<f64, SegmentError> {
    if entries.is_empty() {
        return Err(SegmentError::InvalidParam("no utterances".into()));
    }
    let mut sum = 0.0;
    for e in entries {
        if e.phoneme_len == 0 {
            return Err(SegmentError::ZeroPhonemeLength { id: e.id.clone() });
        }
        sum += e.unit_len as f64 / e.phoneme_len as f64;
    }
    Ok(sum / entries.len() as f64)
}

/// Formats one line of a units file: `id<TAB>u1 u2 ...<TAB>d1 d2 ...`.
pub fn format_units_line(id: &str, seq: &UnitSequence) -> String {
    let join = |v: &[u32]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!("{id}\t{}\t{}", join(&seq.units), join(&seq.durations))
}

/// Parses a units file. A sequence is flagged deduplicated when it has no
/// consecutive repeats.
pub fn parse_units(
    text: &str,
    frame_rate_hz: f64,
) -> Result<Vec<(String, UnitSequence)>, SegmentError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SegmentError::UnitsSyntax { line: i + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<Vec<u32>, SegmentError> {
            s.split_whitespace()
                .map(|x| {
                    x.parse::<u32>()
                        .map_err(|_| err(format!("bad integer {x:?}")))
                })
                .collect()
        };
        let units = parse(fields[1])?;
        let durations = parse(fields[2])?;
        let dedup = units.windows(2).all(|w| w[0] != w[1]);
        let seq = UnitSequence {
            units,
            durations,
            frame_rate_hz,
            dedup,
        };
        seq.validate().map_err(|e| err(e.to_string()))?;
        out.push((fields[0].to_string(), seq));
    }
    Ok(out)
}

pub fn read_units(
    path: impl AsRef<Path>,
    frame_rate_hz: f64,
) -> Result<Vec<(String, UnitSequence)>, SegmentError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_units(&text, frame_rate_hz)
}

pub fn write_units<'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = (&'a str, &'a UnitSequence)>,
) -> Result<(), SegmentError> {
    let path = path.as_ref();
    let mut text = String::new();
    for (id, seq) in items {
        text.push_str(&format_units_line(id, seq));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| FormatError::io(path, e).into())
}

/// Reads every `*.units` file in `dir` into one id-keyed map.
pub fn read_units_dir(
    dir: impl AsRef<Path>,
    frame_rate_hz: f64,
) -> Result<BTreeMap<String, UnitSequence>, SegmentError> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| FormatError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "units"))
        .collect();
    files.sort();
    let mut out = BTreeMap::new();
    for f in files {
        for (id, seq) in read_units(&f, frame_rate_hz)? {
            if out.insert(id.clone(), seq).is_some() {
                return Err(SegmentError::Malformed(format!(
                    "duplicate utterance {id:?} in {}",
                    dir.display()
                )));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_example() {
        let s = UnitSequence::framewise(vec![5, 5, 7, 7, 7, 5], 50.0);
        let d = dedup_runs(&s);
        assert_eq!(d.units, vec![5, 7, 5]);
        assert_eq!(d.durations, vec![2, 3, 1]);
        assert!(d.dedup);
        assert_eq!(dedup_runs(&d), d);
    }

    #[test]
    fn single_frame_segment() {
        let cb = Codebook::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![2.0, 4.0]], 50.0).unwrap();
        let s = dpdp_segment(
            &f,
            &cb,
            &DpdpParams {
                lambda: 1.0,
                max_segment_frames: 50,
            },
        )
        .unwrap();
        assert_eq!(
            s.segments,
            vec![Segment {
                start: 0,
                end: 1,
                unit: 1
            }]
        );
        assert_eq!(s.cost, 1.0 + 1.0);
    }

    #[test]
    fn later_boundary_wins_ties() {
        // Frames equidistant from two centroids, zero penalty: every split
        // costs the same, so each segment should be a single frame.
        let cb = Codebook::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![0.0], vec![0.0], vec![0.0]], 50.0).unwrap();
        let s = dpdp_segment(
            &f,
            &cb,
            &DpdpParams {
                lambda: 0.0,
                max_segment_frames: 3,
            },
        )
        .unwrap();
        assert_eq!(s.boundaries(), vec![0, 1, 2]);
        assert!(s.segments.iter().all(|seg| seg.unit == 0));
    }

    #[test]
    fn errors() {
        let cb = Codebook::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![1.0]], 50.0).unwrap();
        assert!(matches!(
            dpdp_segment(&f, &cb, &DpdpParams::default()),
            Err(SegmentError::DimensionMismatch {
                features: 1,
                codebook: 2
            })
        ));
    }

    #[test]
    fn ratio_examples() {
        let e = |id: &str, u, p| RatioEntry {
            id: id.into(),
            unit_len: u,
            phoneme_len: p,
        };
        assert!((length_ratio(&[e("a", 42, 10)]).unwrap() - 4.2).abs() < 1e-12);
        assert_eq!(length_ratio(&[e("a", 7, 7), e("b", 3, 3)]).unwrap(), 1.0);
        assert_eq!(length_ratio(&[e("a", 4, 2), e("b", 8, 2)]).unwrap(), 3.0);
        match length_ratio(&[e("a", 1, 1), e("utt9", 3, 0)]) {
            Err(SegmentError::ZeroPhonemeLength { id }) => assert_eq!(id, "utt9"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn units_file_round_trip() {
        let s = dedup_runs(&UnitSequence::framewise(vec![1, 1, 2, 3, 3, 3], 50.0));
        let line = format_units_line("utt", &s);
        assert_eq!(line, "utt\t1 2 3\t2 1 3");
        let parsed = parse_units(&line, 50.0).unwrap();
        assert_eq!(parsed, vec![("utt".to_string(), s)]);
        assert!(matches!(
            parse_units("x\t1 2\t1", 50.0),
            Err(SegmentError::UnitsSyntax { line: 1, .. })
        ));
    }
}
