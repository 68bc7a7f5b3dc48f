//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use speechunits::{Codebook, FeatureMatrix};

/// Squared distance in f64, straight from the definition.
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

/// Brute-force nearest centroid with lowest-id ties.
pub fn nearest(x: &[f32], cb: &Codebook) -> u32 {
    let mut best = (0u32, f64::INFINITY);
    for u in 0..cb.k() {
        let d = sq_dist(x, cb.centroid(u));
        if d < best.1 {
            best = (u as u32, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSegmentation {
    pub cost: f64,
    /// Segment start frames.
    pub starts: Vec<usize>,
    pub units: Vec<u32>,
}

/// Exhaustive search over every segmentation and every labeling.
///
/// Among optimal solutions the winner has the largest start list compared
/// from the last segment backwards, then the lowest unit ids.
pub fn dpdp_exhaustive(
    m: &FeatureMatrix,
    cb: &Codebook,
    lambda: f64,
    max_len: usize,
) -> OracleSegmentation {
    let t = m.rows();
    let k = cb.k();
    let cost_of = |s: usize, e: usize, u: usize| -> f64 {
        (s..e).map(|i| sq_dist(m.row(i), cb.centroid(u))).sum()
    };
    let mut best: Option<(f64, Vec<usize>, Vec<u32>)> = None;
    for mask in 0u64..(1u64 << (t - 1)) {
        let mut starts = vec![0usize];
        for b in 1..t {
            if mask >> (b - 1) & 1 == 1 {
                starts.push(b);
            }
        }
        let mut ends: Vec<usize> = starts[1..].to_vec();
        ends.push(t);
        if starts.iter().zip(&ends).any(|(s, e)| e - s > max_len) {
            continue;
        }
        let n = starts.len();
        let total_labelings = (k as u64).pow(n as u32);
        for code in 0..total_labelings {
            let mut c = code;
            let mut units = vec![0u32; n];
            for slot in units.iter_mut().rev() {
                *slot = (c % k as u64) as u32;
                c /= k as u64;
            }
            let cost: f64 = starts
                .iter()
                .zip(&ends)
                .zip(&units)
                .map(|((&s, &e), &u)| cost_of(s, e, u as usize) + lambda)
                .sum();
            let better = match &best {
                None => true,
                Some((bc, bs, bu)) => {
                    if cost < *bc {
                        true
                    } else if cost > *bc {
                        false
                    } else {
                        let rev_new: Vec<usize> = starts.iter().rev().copied().collect();
                        let rev_old: Vec<usize> = bs.iter().rev().copied().collect();
                        rev_new > rev_old || (rev_new == rev_old && units < *bu)
                    }
                }
            };
            if better {
                best = Some((cost, starts.clone(), units));
            }
        }
    }
    let (cost, starts, units) = best.expect("at least one segmentation");
    OracleSegmentation {
        cost,
        starts,
        units,
    }
}

/// Dense contingency purities, rows = units, columns = phones.
pub fn dense_purities(counts: &[Vec<u64>]) -> (f64, f64) {
    let total: u64 = counts.iter().flatten().sum();
    let pp: u64 = counts
        .iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    let cols = counts.iter().map(Vec::len).max().unwrap_or(0);
    let cp: u64 = (0..cols)
        .map(|j| {
            counts
                .iter()
                .map(|r| r.get(j).copied().unwrap_or(0))
                .max()
                .unwrap_or(0)
        })
        .sum();
    (pp as f64 / total as f64, cp as f64 / total as f64)
}

pub fn mean_square(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64
}

pub fn run_lengths(units: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut u = Vec::new();
    let mut d: Vec<u32> = Vec::new();
    for &x in units {
        if u.last() == Some(&x) {
            *d.last_mut().unwrap() += 1;
        } else {
            u.push(x);
            d.push(1);
        }
    }
    (u, d)
}

pub fn tone(freq: f64, seconds: f64, amp: f32, sr: u32) -> Vec<f32> {
    let n = (seconds * sr as f64) as usize;
    (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32)
        .collect()
}
