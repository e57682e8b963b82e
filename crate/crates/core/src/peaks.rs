//! Local-maximum peak picking with height and distance constraints.
//!
//! Semantics follow the usual `find_peaks` contract: a peak is a sample (or
//! the midpoint of a flat run, rounded down) strictly higher than both
//! neighbours; the first and last samples never qualify. Distance pruning
//! visits peaks from highest to lowest (lower index first on ties) and
//! discards any lower-priority peak closer than `distance` samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Envelope;

/// Scale factor that makes the MAD a consistent estimator of a normal sigma.
pub const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightRule {
    /// `median + k * sigma`, sigma estimated as `1.4826 * MAD`.
    Adaptive { mad_multiplier: f64 },
    Absolute(f64),
}

impl Default for HeightRule {
    fn default() -> Self {
        HeightRule::Adaptive {
            mad_multiplier: 4.0,
        }
    }
}

impl HeightRule {
    pub fn threshold(&self, values: &[f64]) -> f64 {
        match *self {
            HeightRule::Absolute(h) => h,
            HeightRule::Adaptive { mad_multiplier } => {
                if values.is_empty() {
                    return f64::INFINITY;
                }
                let med = median(values);
                let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
                med + mad_multiplier * MAD_TO_SIGMA * median(&dev)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub height: HeightRule,
    pub min_distance_s: f64,
    pub smooth_len_s: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            height: HeightRule::default(),
            min_distance_s: 10.0,
            smooth_len_s: 2.0,
        }
    }
}

impl PeakParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_distance_s.is_finite() && self.min_distance_s >= 0.0) {
            return Err(Error::param("min_dist_s", "must be finite and >= 0"));
        }
        if !(self.smooth_len_s.is_finite() && self.smooth_len_s > 0.0) {
            return Err(Error::param("smooth_s", "must be finite and > 0"));
        }
        match self.height {
            HeightRule::Absolute(h) if !h.is_finite() => {
                Err(Error::param("height", "must be finite"))
            }
            HeightRule::Adaptive { mad_multiplier } if !mad_multiplier.is_finite() => {
                Err(Error::param("mad_multiplier", "must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Minimum separation in frames for an envelope with frame step `step_s`.
    pub fn distance_frames(&self, step_s: f64) -> usize {
        ((self.min_distance_s / step_s).ceil() as usize).max(1)
    }
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Strict local maxima; flat tops resolve to their (rounded-down) midpoint.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    if x.len() < 3 {
        return peaks;
    }
    let last = x.len() - 1;
    let mut i = 1;
    while i < last {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < last && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    peaks
}

/// Drops peaks closer than `distance` to a higher-priority peak.
pub fn prune_by_distance(x: &[f64], peaks: &[usize], distance: usize) -> Vec<usize> {
    if distance <= 1 {
        return peaks.to_vec();
    }
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
    let mut keep = vec![true; peaks.len()];
    for &j in &order {
        if !keep[j] {
            continue;
        }
        for k in (0..j).rev() {
            if peaks[j] - peaks[k] >= distance {
                break;
            }
            keep[k] = false;
        }
        for k in j + 1..peaks.len() {
            if peaks[k] - peaks[j] >= distance {
                break;
            }
            keep[k] = false;
        }
    }
    peaks
        .iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

/// Peaks at or above `height`, at least `distance` samples apart, ascending.
pub fn find_peaks(x: &[f64], height: f64, distance: usize) -> Vec<usize> {
    let candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&i| x[i] >= height)
        .collect();
    prune_by_distance(x, &candidates, distance)
}

/// Peak frame indices in `env` under `params`. Smoothing is not applied here.
pub fn detect_peaks(env: &Envelope, params: &PeakParams) -> Result<Vec<usize>> {
    params.validate()?;
    if env.is_empty() {
        return Err(Error::param("envelope", "must not be empty"));
    }
    let height = params.height.threshold(&env.values);
    Ok(find_peaks(
        &env.values,
        height,
        params.distance_frames(env.step_s),
    ))
}
