//! Codebook learning and frame-to-unit assignment.
//!
//! Fitting runs Lloyd iterations from a k-means++ initialization. The
//! ++ sampler draws its random numbers from a hash of `(seed, round, point
//! values)` rather than from a stream indexed by frame position, so the
//! result does not depend on the order in which frames are supplied.
//!
//! Partial sums are accumulated per fixed-size chunk and reduced in chunk
//! order, which keeps results identical across thread counts.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio_io::{FeatureMatrix, FormatError};

pub const KMCB_MAGIC: [u8; 4] = *b"KMCB";
pub const KMCB_VERSION: u32 = 1;
pub const DEFAULT_N_INIT: usize = 10;
const KMCB_HEADER_LEN: usize = 24;

/// Points per reduction chunk.
const CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum KMeansError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("need at least k={k} frames, got {frames}")]
    TooFewFrames { frames: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mismatch: data has {data} dims, codebook has {codebook}")]
    DimensionMismatch { data: usize, codebook: usize },
    #[error("non-finite value in input frame {frame}")]
    NonFinite { frame: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    k: usize,
    dim: usize,
    pub meta: TrainingMeta,
}

impl Codebook {
    pub fn new(centroids: Vec<f32>, k: usize, dim: usize, seed: u64) -> Result<Self, KMeansError> {
        if k == 0 {
            return Err(KMeansError::ZeroK);
        }
        if dim == 0 || centroids.len() != k * dim {
            return Err(KMeansError::InvalidParam(format!(
                "centroid payload of {} values does not match {k}x{dim}",
                centroids.len()
            )));
        }
        if let Some(i) = centroids.iter().position(|v| !v.is_finite()) {
            return Err(KMeansError::NonFinite { frame: i / dim });
        }
        Ok(Codebook {
            centroids,
            k,
            dim,
            meta: TrainingMeta {
                iterations: 0,
                inertia: f64::NAN,
                seed,
                inertia_history: Vec::new(),
            },
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, KMeansError> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(KMeansError::InvalidParam("ragged centroid rows".into()));
        }
        Self::new(rows.concat(), rows.len(), dim, 0)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, u: usize) -> &[f32] {
        &self.centroids[u * self.dim..(u + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Squared Euclidean distance from `x` to every centroid, in double precision.
    pub fn distances_into(&self, x: &[f32], out: &mut [f64]) {
        for (u, o) in out.iter_mut().enumerate().take(self.k) {
            *o = sq_dist_f32(x, self.centroid(u));
        }
    }

    /// Nearest centroid; ties go to the lowest id.
    pub fn nearest(&self, x: &[f32]) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for u in 0..self.k {
            let d = sq_dist_f32(x, self.centroid(u));
            if d < best.1 {
                best = (u as u32, d);
            }
        }
        best
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(KMCB_HEADER_LEN + self.centroids.len() * 4);
        out.extend_from_slice(&KMCB_MAGIC);
        out.extend_from_slice(&KMCB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KMeansError> {
        if bytes.len() < 4 || bytes[..4] != KMCB_MAGIC {
            return Err(FormatError::BadMagic {
                expected: KMCB_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            }
            .into());
        }
        if bytes.len() < KMCB_HEADER_LEN {
            return Err(FormatError::Truncated {
                expected: KMCB_HEADER_LEN,
                actual: bytes.len(),
            }
            .into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != KMCB_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let k = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expected = KMCB_HEADER_LEN + k * dim * 4;
        if bytes.len() != expected {
            let err = if bytes.len() < expected {
                FormatError::Truncated {
                    expected,
                    actual: bytes.len(),
                }
            } else {
                FormatError::TrailingBytes {
                    expected,
                    actual: bytes.len(),
                }
            };
            return Err(err.into());
        }
        let centroids = bytes[KMCB_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(centroids, k, dim, seed)
    }
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook, KMeansError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Codebook::from_bytes(&bytes)
}

pub fn write_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<(), KMeansError> {
    let path = path.as_ref();
    fs::write(path, cb.to_bytes()).map_err(|e| FormatError::io(path, e).into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative inertia improvement drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Fraction of frames used for fitting, selected by value hash.
    pub subsample: f64,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub n_init: usize,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            max_iters: 100,
            tol: 1e-4,
            seed,
            subsample: 1.0,
            n_init: DEFAULT_N_INIT,
        }
    }
}

#[inline]
fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
fn sq_dist_mixed(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a point's values, mixed with a seed and a round number.
pub(crate) fn point_hash(seed: u64, round: u64, x: &[f32]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(round.wrapping_add(0x5851_f42d_4c95_7f2d)));
    for v in x {
        // +0.0 and -0.0 hash alike
        let bits = if *v == 0.0 { 0 } else { v.to_bits() };
        h = splitmix64(h ^ bits as u64);
    }
    h
}

/// Maps a hash to a uniform draw in (0, 1).
fn unit_interval(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn lex_cmp(a: &[f32], b: &[f32]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Contiguous point storage assembled from a stream of feature matrices.
struct Points {
    data: Vec<f32>,
    dim: usize,
}

impl Points {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn gather(data: &[FeatureMatrix], params: &KMeansParams) -> Result<Points, KMeansError> {
    let dim = data.first().map_or(0, |m| m.cols());
    if dim == 0 {
        return Err(KMeansError::TooFewFrames {
            frames: 0,
            k: params.k,
        });
    }
    let mut out = Vec::new();
    let mut frame = 0;
    for m in data {
        if m.cols() != dim {
            return Err(KMeansError::DimensionMismatch {
                data: m.cols(),
                codebook: dim,
            });
        }
        for row in m.iter_rows() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(KMeansError::NonFinite { frame });
            }
            frame += 1;
            if params.subsample < 1.0 {
                let u = unit_interval(point_hash(params.seed, u64::MAX, row));
                if u >= params.subsample {
                    continue;
                }
            }
            out.extend_from_slice(row);
        }
    }
    Ok(Points { data: out, dim })
}

/// k-means++ seeding. Round `j` picks the point minimizing `-ln(u) / w`
/// where `w` is the squared distance to the closest chosen centroid and
/// `u` a value-hash uniform draw; this samples proportionally to `w`.
fn init_plus_plus(points: &Points, k: usize, seed: u64) -> Vec<f64> {
    let n = points.len();
    let dim = points.dim;
    let pick = |keys: &[f64]| -> usize {
        (0..n)
            .into_par_iter()
            .min_by(|&a, &b| {
                keys[a]
                    .total_cmp(&keys[b])
                    .then_with(|| lex_cmp(points.row(a), points.row(b)))
                    .then(a.cmp(&b))
            })
            .expect("non-empty")
    };

    let mut centroids = Vec::with_capacity(k * dim);
    let keys: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| unit_interval(point_hash(seed, 0, points.row(i))))
        .collect();
    let first = pick(&keys);
    centroids.extend(points.row(first).iter().map(|&v| v as f64));
    let mut closest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist_mixed(points.row(i), &centroids[..dim]))
        .collect();

    for round in 1..k {
        let any_positive = closest.iter().any(|&w| w > 0.0);
        let keys: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let u = unit_interval(point_hash(seed, round as u64, points.row(i)));
                let w = closest[i];
                if any_positive {
                    if w > 0.0 {
                        -u.ln() / w
                    } else {
                        f64::INFINITY
                    }
                } else {
                    u
                }
            })
            .collect();
        let chosen = pick(&keys);
        let c: Vec<f64> = points.row(chosen).iter().map(|&v| v as f64).collect();
        closest
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, w)| *w = w.min(sq_dist_mixed(points.row(i), &c)));
        centroids.extend(c);
    }
    centroids
}

fn nearest_f64(x: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (u, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist_mixed(x, c);
        if d < best.1 {
            best = (u, d);
        }
    }
    best
}

/// Assigns every point; returns assignment, per-point distance and inertia.
fn assign_all(points: &Points, centroids: &[f64]) -> (Vec<usize>, Vec<f64>, f64) {
    let dim = points.dim;
    let n = points.len();
    let pairs: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|i| nearest_f64(points.row(i), centroids, dim))
        .collect();
    let partials: Vec<f64> = pairs
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|p| p.1).sum::<f64>())
        .collect();
    let inertia = partials.iter().sum();
    let (assign, dist) = pairs.into_iter().unzip();
    (assign, dist, inertia)
}

/// Recomputes centroids as cluster means. Empty clusters take the point
/// farthest from its centroid, drawn from clusters with more than one member.
fn update_centroids(
    points: &Points,
    assign: &mut [usize],
    dist: &mut [f64],
    centroids: &mut [f64],
    k: usize,
) {
    let dim = points.dim;
    let partials: Vec<(Vec<f64>, Vec<usize>)> = assign
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (j, &a) in chunk.iter().enumerate() {
                let row = points.row(ci * CHUNK + j);
                counts[a] += 1;
                for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (s, c) in partials {
        for (a, b) in sums.iter_mut().zip(&s) {
            *a += b;
        }
        for (a, b) in counts.iter_mut().zip(&c) {
            *a += b;
        }
    }

    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..assign.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                dist[a]
                    .total_cmp(&dist[b])
                    .then_with(|| lex_cmp(points.row(b), points.row(a)))
                    .then(b.cmp(&a))
            });
        let Some(i) = donor else { break };
        let old = assign[i];
        let row = points.row(i);
        for (s, &v) in sums[old * dim..(old + 1) * dim].iter_mut().zip(row) {
            *s -= v as f64;
        }
        counts[old] -= 1;
        for (s, &v) in sums[empty * dim..(empty + 1) * dim].iter_mut().zip(row) {
            *s = v as f64;
        }
        counts[empty] = 1;
        assign[i] = empty;
        dist[i] = 0.0;
    }

    for u in 0..k {
        if counts[u] == 0 {
            continue;
        }
        let n = counts[u] as f64;
        for (c, s) in centroids[u * dim..(u + 1) * dim]
            .iter_mut()
            .zip(&sums[u * dim..(u + 1) * dim])
        {
            *c = s / n;
        }
    }
}

/// Fits a `k`-unit codebook to all frames of `data`.
pub fn kmeans_fit(data: &[FeatureMatrix], params: &KMeansParams) -> Result<Codebook, KMeansError> {
    if params.k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if params.n_init == 0 {
        return Err(KMeansError::InvalidParam("n_init must be >= 1".into()));
    }
    if !(params.tol >= 0.0) {
        return Err(KMeansError::InvalidParam(format!(
            "tol must be >= 0, got {}",
            params.tol
        )));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(KMeansError::InvalidParam(format!(
            "subsample rate must be in (0, 1], got {}",
            params.subsample
        )));
    }
    let points = gather(data, params)?;
    if points.len() < params.k {
        return Err(KMeansError::TooFewFrames {
            frames: points.len(),
            k: params.k,
        });
    }
    let order = value_order(&points);
    let mut best = fit_points(&points, params, params.seed, &order);
    for run in 1..params.n_init {
        let cb = fit_points(
            &points,
            params,
            splitmix64(params.seed ^ run as u64),
            &order,
        );
        if cb.meta.inertia < best.meta.inertia {
            best = cb;
        }
    }
    best.meta.seed = params.seed;
    Ok(best)
}

fn fit_points(points: &Points, params: &KMeansParams, init_seed: u64, order: &[usize]) -> Codebook {
    let k = params.k;
    let mut centroids = init_plus_plus(points, k, init_seed);
    let (mut assign, mut dist, mut inertia) = assign_all(points, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    loop {
        while iterations < params.max_iters && inertia > 0.0 {
            update_centroids(points, &mut assign, &mut dist, &mut centroids, k);
            let prev = inertia;
            (assign, dist, inertia) = assign_all(points, &centroids);
            history.push(inertia);
            iterations += 1;
            if (prev - inertia) / prev < params.tol {
                break;
            }
        }
        if iterations >= params.max_iters || inertia == 0.0 {
            break;
        }
        if !transfer_pass(points, order, &mut assign, &mut centroids, k) {
            break;
        }
        (assign, dist, inertia) = assign_all(points, &centroids);
        history.push(inertia);
        iterations += 1;
    }
    Codebook {
        centroids: centroids.iter().map(|&v| v as f32).collect(),
        k,
        dim: points.dim,
        meta: TrainingMeta {
            iterations,
            inertia,
            seed: params.seed,
            inertia_history: history,
        },
    }
}

/// Point indices sorted by value, the visiting order of [`transfer_pass`].
fn value_order(points: &Points) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.par_sort_by(|&a, &b| lex_cmp(points.row(a), points.row(b)).then(a.cmp(&b)));
    order
}

/// One sweep of single-point transfers: a point moves to another cluster
/// when that lowers the total inertia, accounting for both centroid shifts.
/// Centroids are set to exact means of the assignment first and kept exact.
/// Returns whether any point moved.
fn transfer_pass(
    points: &Points,
    order: &[usize],
    assign: &mut [usize],
    centroids: &mut [f64],
    k: usize,
) -> bool {
    let dim = points.dim;
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0f64; k * dim];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += v as f64;
        }
    }
    let refresh = |u: usize, sums: &[f64], counts: &[usize], centroids: &mut [f64]| {
        if counts[u] > 0 {
            let n = counts[u] as f64;
            for (c, s) in centroids[u * dim..(u + 1) * dim]
                .iter_mut()
                .zip(&sums[u * dim..(u + 1) * dim])
            {
                *c = s / n;
            }
        }
    };
    for u in 0..k {
        refresh(u, &sums, &counts, centroids);
    }
    let mut moved = false;
    for &i in order {
        let x = points.row(i);
        let a = assign[i];
        if counts[a] <= 1 {
            continue;
        }
        let na = counts[a] as f64;
        let removal = na / (na - 1.0) * sq_dist_mixed(x, &centroids[a * dim..(a + 1) * dim]);
        let mut best = (a, removal);
        for b in (0..k).filter(|&b| b != a) {
            let nb = counts[b] as f64;
            let add = nb / (nb + 1.0) * sq_dist_mixed(x, &centroids[b * dim..(b + 1) * dim]);
            if add < best.1 {
                best = (b, add);
            }
        }
        let (b, add) = best;
        if b == a || add >= removal * (1.0 - 1e-12) {
            continue;
        }
        for (j, &v) in x.iter().enumerate() {
            sums[a * dim + j] -= v as f64;
            sums[b * dim + j] += v as f64;
        }
        counts[a] -= 1;
        counts[b] += 1;
        assign[i] = b;
        refresh(a, &sums, &counts, centroids);
        refresh(b, &sums, &counts, centroids);
        moved = true;
    }
    moved
}

/// Maps each frame to its nearest centroid (squared Euclidean, ties to the
/// lowest id).
pub fn kmeans_assign(data: &FeatureMatrix, cb: &Codebook) -> Result<Vec<u32>, KMeansError> {
    if data.cols() != cb.dim() {
        return Err(KMeansError::DimensionMismatch {
            data: data.cols(),
            codebook: cb.dim(),
        });
    }
    Ok((0..data.rows())
        .into_par_iter()
        .map(|t| cb.nearest(data.row(t)).0)
        .collect())
}

/// Sum of squared distances from each frame to its nearest centroid.
pub fn inertia(data: &[FeatureMatrix], cb: &Codebook) -> Result<f64, KMeansError> {
    let mut total = 0.0;
    for m in data {
        if m.cols() != cb.dim() {
            return Err(KMeansError::DimensionMismatch {
                data: m.cols(),
                codebook: cb.dim(),
            });
        }
        let partials: Vec<f64> = (0..m.rows())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|&t| cb.nearest(m.row(t)).1).sum::<f64>())
            .collect();
        total += partials.iter().sum::<f64>();
    }
    Ok(total)
}
