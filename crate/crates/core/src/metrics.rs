//! Unit-quality metrics: phone purity, cluster purity, mean absolute error.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::audio_io::PhoneAlignment;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {units} units vs {phones} aligned frames")]
    LengthMismatch { units: usize, phones: usize },
    #[error("metric undefined on an empty table")]
    EmptyTable,
    #[error("length mismatch: {pred} predictions vs {target} targets")]
    SeriesMismatch { pred: usize, target: usize },
    #[error("mask has {mask} entries for {len} positions")]
    MaskMismatch { mask: usize, len: usize },
    #[error("no unmasked positions")]
    NothingToEvaluate,
}

/// Joint frame counts of unit ids and phone labels.
///
/// Rows are keyed by unit id, columns by phone label (interned in first-seen
/// order). Tables form a commutative monoid under [`ContingencyTable::merge`].
#[derive(Debug, Clone, Default)]
pub struct ContingencyTable {
    phones: Vec<String>,
    phone_index: HashMap<String, usize>,
    rows: BTreeMap<u32, Vec<u64>>,
    total: u64,
}

impl PartialEq for ContingencyTable {
    fn eq(&self, other: &Self) -> bool {
        self.total == other.total && self.entries() == other.entries()
    }
}

impl ContingencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from a dense `units x phones` matrix; phone `j` is
    /// labelled `p{j}`.
    pub fn from_dense(counts: &[Vec<u64>]) -> Self {
        let mut t = Self::new();
        for (u, row) in counts.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                t.add(u as u32, &format!("p{p}"), c);
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn phones(&self) -> &[String] {
        &self.phones
    }

    fn phone_slot(&mut self, phone: &str) -> usize {
        if let Some(&i) = self.phone_index.get(phone) {
            return i;
        }
        let i = self.phones.len();
        self.phones.push(phone.to_string());
        self.phone_index.insert(phone.to_string(), i);
        for row in self.rows.values_mut() {
            row.push(0);
        }
        i
    }

    pub fn add(&mut self, unit: u32, phone: &str, count: u64) {
        if count == 0 {
            return;
        }
        let p = self.phone_slot(phone);
        let width = self.phones.len();
        let row = self.rows.entry(unit).or_insert_with(|| vec![0; width]);
        row[p] += count;
        self.total += count;
    }

    pub fn get(&self, unit: u32, phone: &str) -> u64 {
        match (self.rows.get(&unit), self.phone_index.get(phone)) {
            (Some(row), Some(&p)) => row[p],
            _ => 0,
        }
    }

    /// Non-zero entries as `(unit, phone, count)`, sorted.
    pub fn entries(&self) -> Vec<(u32, &str, u64)> {
        let mut out: Vec<(u32, &str, u64)> = self
            .rows
            .iter()
            .flat_map(|(&u, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(move |(p, &c)| (u, self.phones[p].as_str(), c))
            })
            .collect();
        out.sort();
        out
    }

    pub fn merge(&mut self, other: &ContingencyTable) {
        for (u, p, c) in other.entries() {
            self.add(u, p, c);
        }
    }

    /// Units with at least one frame.
    pub fn k_effective(&self) -> usize {
        self.rows
            .values()
            .filter(|r| r.iter().any(|&c| c > 0))
            .count()
    }

    /// Swaps the roles of units and phones. Phone labels become ids in
    /// first-seen order; unit ids become labels `u{id}`.
    pub fn transpose(&self) -> ContingencyTable {
        let mut t = ContingencyTable::new();
        for (u, row) in &self.rows {
            for (p, &c) in row.iter().enumerate() {
                t.add(p as u32, &format!("u{u}"), c);
            }
        }
        t
    }
}

/// Counts unit/phone co-occurrences frame by frame.
pub fn accumulate_counts(
    units: &[u32],
    align: &PhoneAlignment,
) -> Result<ContingencyTable, MetricsError> {
    let phones = align.framewise();
    if phones.len() != units.len() {
        return Err(MetricsError::LengthMismatch {
            units: units.len(),
            phones: phones.len(),
        });
    }
    let mut t = ContingencyTable::new();
    for (&u, p) in units.iter().zip(phones) {
        t.add(u, p, 1);
    }
    Ok(t)
}

/// Like [`accumulate_counts`] with integer phone ids per frame, labelled `p{id}`.
pub fn accumulate_id_counts(
    units: &[u32],
    phones: &[u32],
) -> Result<ContingencyTable, MetricsError> {
    if phones.len() != units.len() {
        return Err(MetricsError::LengthMismatch {
            units: units.len(),
            phones: phones.len(),
        });
    }
    let mut t = ContingencyTable::new();
    for (&u, p) in units.iter().zip(phones) {
        t.add(u, &format!("p{p}"), 1);
    }
    Ok(t)
}

/// Fraction of frames whose phone is the majority phone of their unit.
pub fn phone_purity(t: &ContingencyTable) -> Result<f64, MetricsError> {
    if t.total == 0 {
        return Err(MetricsError::EmptyTable);
    }
    let hits: u64 = t
        .rows
        .values()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / t.total as f64)
}

/// Fraction of frames whose unit is the majority unit of their phone.
pub fn cluster_purity(t: &ContingencyTable) -> Result<f64, MetricsError> {
    if t.total == 0 {
        return Err(MetricsError::EmptyTable);
    }
    let mut col_max = vec![0u64; t.phones.len()];
    for row in t.rows.values() {
        for (m, &c) in col_max.iter_mut().zip(row) {
            *m = (*m).max(c);
        }
    }
    Ok(col_max.iter().sum::<u64>() as f64 / t.total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityReport {
    pub phone_purity: f64,
    pub cluster_purity: f64,
    pub k_effective: usize,
    pub total_frames: u64,
}

pub fn purity_report(t: &ContingencyTable) -> Result<PurityReport, MetricsError> {
    Ok(PurityReport {
        phone_purity: phone_purity(t)?,
        cluster_purity: cluster_purity(t)?,
        k_effective: t.k_effective(),
        total_frames: t.total,
    })
}

/// Mean of `|pred - target|` over positions where `mask` is true (all
/// positions when no mask is given).
pub fn mean_absolute_error(
    pred: &[f64],
    target: &[f64],
    mask: Option<&[bool]>,
) -> Result<f64, MetricsError> {
    if pred.len() != target.len() {
        return Err(MetricsError::SeriesMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(MetricsError::MaskMismatch {
                mask: m.len(),
                len: pred.len(),
            });
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if mask.is_none_or(|m| m[i]) {
            sum += (pred[i] - target[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NothingToEvaluate);
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::PhoneInterval;

    fn align(spec: &[(usize, usize, &str)]) -> PhoneAlignment {
        PhoneAlignment {
            intervals: spec
                .iter()
                .map(|&(s, e, p)| PhoneInterval {
                    start_frame: s,
                    end_frame: e,
                    phone: p.into(),
                })
                .collect(),
        }
    }

    #[test]
    fn accumulate_example() {
        let t = accumulate_counts(&[0, 0, 1], &align(&[(0, 1, "A"), (2, 2, "B")])).unwrap();
        assert_eq!(t.entries(), vec![(0, "A", 2), (1, "B", 1)]);
        assert_eq!(t.total(), 3);

        let t = accumulate_counts(&[], &PhoneAlignment::default()).unwrap();
        assert_eq!(t.total(), 0);
        assert!(t.entries().is_empty());

        let err = accumulate_counts(&[0, 1], &align(&[(0, 2, "A")])).unwrap_err();
        assert_eq!(
            err,
            MetricsError::LengthMismatch {
                units: 2,
                phones: 3
            }
        );
    }

    #[test]
    fn purity_fixtures() {
        let t = ContingencyTable::from_dense(&[vec![3, 1], vec![2, 0]]);
        assert_eq!(phone_purity(&t).unwrap(), 5.0 / 6.0);
        assert_eq!(cluster_purity(&t).unwrap(), 4.0 / 6.0);

        let t = ContingencyTable::from_dense(&[vec![1, 1, 1, 1]]);
        assert_eq!(phone_purity(&t).unwrap(), 0.25);

        let t = ContingencyTable::from_dense(&[vec![5, 0], vec![0, 2], vec![3, 0]]);
        assert_eq!(phone_purity(&t).unwrap(), 1.0);
        let t = ContingencyTable::from_dense(&[vec![5, 0, 4], vec![0, 2, 0]]);
        assert_eq!(cluster_purity(&t).unwrap(), 1.0);

        assert_eq!(
            phone_purity(&ContingencyTable::new()),
            Err(MetricsError::EmptyTable)
        );
        assert_eq!(
            cluster_purity(&ContingencyTable::new()),
            Err(MetricsError::EmptyTable)
        );
    }

    #[test]
    fn mae_examples() {
        assert_eq!(
            mean_absolute_error(&[1.0, 2.0], &[1.0, 2.0], None).unwrap(),
            0.0
        );
        assert_eq!(
            mean_absolute_error(&[1.0, 3.0], &[2.0, 1.0], None).unwrap(),
            1.5
        );
        assert_eq!(
            mean_absolute_error(&[1.0, 3.0], &[2.0, 1.0], Some(&[false, true])).unwrap(),
            2.0
        );
        assert_eq!(
            mean_absolute_error(&[1.0], &[2.0], Some(&[false])),
            Err(MetricsError::NothingToEvaluate)
        );
        assert_eq!(
            mean_absolute_error(&[], &[], None),
            Err(MetricsError::NothingToEvaluate)
        );
    }

    #[test]
    fn k_effective_and_merge() {
        let mut a = ContingencyTable::from_dense(&[vec![1, 0], vec![0, 0], vec![0, 2]]);
        assert_eq!(a.k_effective(), 2);
        let b = ContingencyTable::from_dense(&[vec![0, 0, 4]]);
        a.merge(&b);
        assert_eq!(a.get(0, "p2"), 4);
        assert_eq!(a.total(), 7);
    }
}
