//! Extraction precision and AUROC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::GroundTruthLabel;

/// Precision of one extraction run against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub n_extracted: usize,
    pub n_true: usize,
}

impl PrecisionReport {
    /// `n_true / n_extracted`; `None` when nothing was extracted.
    pub fn precision(&self) -> Option<f64> {
        (self.n_extracted > 0).then(|| self.n_true as f64 / self.n_extracted as f64)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            n_extracted: self.n_extracted + other.n_extracted,
            n_true: self.n_true + other.n_true,
        }
    }
}

impl std::iter::Sum for PrecisionReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(
            PrecisionReport {
                n_extracted: 0,
                n_true: 0,
            },
            Self::merge,
        )
    }
}

/// A peak is a true detection when it falls inside any labelled interval.
/// One interval may validate several peaks.
pub fn match_events(peak_times: &[f64], truth: &GroundTruthLabel) -> PrecisionReport {
    PrecisionReport {
        n_extracted: peak_times.len(),
        n_true: peak_times.iter().filter(|&&t| truth.contains(t)).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub auroc: f64,
    pub n_normal: usize,
    pub n_abnormal: usize,
}

/// Fraction of (abnormal, normal) pairs where the abnormal score is higher,
/// ties counting one half. Computed from ranks in `O((n + m) log(n + m))`.
pub fn auroc(normal: &[f64], abnormal: &[f64]) -> Result<RocReport> {
    if normal.is_empty() || abnormal.is_empty() {
        return Err(Error::param(
            "scores",
            format!(
                "AUROC needs both classes ({} normal, {} abnormal)",
                normal.len(),
                abnormal.len()
            ),
        ));
    }
    if normal.iter().chain(abnormal).any(|s| s.is_nan()) {
        return Err(Error::param("scores", "contain NaN"));
    }
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(abnormal.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of midranks (1-based) over the abnormal class.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let hits = all[i..j].iter().filter(|e| e.1).count();
        rank_sum += midrank * hits as f64;
        i = j;
    }
    let (n, m) = (normal.len() as f64, abnormal.len() as f64);
    let u = rank_sum - m * (m + 1.0) / 2.0;
    Ok(RocReport {
        auroc: u / (n * m),
        n_normal: normal.len(),
        n_abnormal: abnormal.len(),
    })
}

/// Relative AUROC change in percent.
pub fn improvement(base: f64, new: f64) -> Result<f64> {
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::param("base", format!("AUROC {base} must be > 0")));
    }
    Ok((new - base) / base * 100.0)
}

/// Rounds to three decimals, the precision used in the summary tables.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
