//! Ground-truth sidecars: surface condition plus driving-event intervals.
//!
//! On disk a label is JSON of the form
//! `{"condition": "dry", "intervals": [[s0, e0], ...]}` with times in seconds.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceCondition {
    Dry,
    Wet,
    Slush,
    Snow,
}

impl SurfaceCondition {
    pub const ALL: [SurfaceCondition; 4] = [Self::Dry, Self::Wet, Self::Slush, Self::Snow];

    /// Dry road is the normal class; everything else is anomalous.
    pub fn is_normal(self) -> bool {
        matches!(self, Self::Dry)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dry => "dry",
            Self::Wet => "wet",
            Self::Slush => "slush",
            Self::Snow => "snow",
        }
    }
}

impl fmt::Display for SurfaceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SurfaceCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dry" => Ok(Self::Dry),
            "wet" => Ok(Self::Wet),
            "slush" => Ok(Self::Slush),
            "snow" => Ok(Self::Snow),
            other => Err(Error::Labels(format!("unknown surface condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthLabel {
    pub condition: SurfaceCondition,
    pub intervals: Vec<(f64, f64)>,
}

impl GroundTruthLabel {
    pub fn new(condition: SurfaceCondition, intervals: Vec<(f64, f64)>) -> Self {
        Self {
            condition,
            intervals,
        }
    }

    /// Checks that intervals are sorted, disjoint and inside `[0, duration_s]`.
    pub fn validate(&self, duration_s: f64) -> Result<()> {
        let mut prev_end = 0.0;
        for (i, &(start, end)) in self.intervals.iter().enumerate() {
            if !(start.is_finite() && end.is_finite()) || start < 0.0 || start >= end {
                return Err(Error::Labels(format!(
                    "interval {i} [{start}, {end}) is malformed"
                )));
            }
            if end > duration_s {
                return Err(Error::Labels(format!(
                    "interval {i} ends at {end} s past file end {duration_s} s"
                )));
            }
            if i > 0 && start < prev_end {
                return Err(Error::Labels(format!(
                    "interval {i} overlaps or precedes its predecessor"
                )));
            }
            prev_end = end;
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(s, e)| s <= t && t <= e)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Labels(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Labels(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_format() {
        let l = GroundTruthLabel::new(SurfaceCondition::Dry, vec![(1.0, 3.5)]);
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, r#"{"condition":"dry","intervals":[[1.0,3.5]]}"#);
        let back: GroundTruthLabel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn normal_labeling() {
        assert!(SurfaceCondition::Dry.is_normal());
        for c in [SurfaceCondition::Wet, SurfaceCondition::Slush, SurfaceCondition::Snow] {
            assert!(!c.is_normal());
        }
    }

    #[test]
    fn validate_rejects_overlap_and_overrun() {
        let ok = GroundTruthLabel::new(SurfaceCondition::Wet, vec![(0.0, 2.0), (3.0, 5.0)]);
        ok.validate(5.0).unwrap();
        let overlap = GroundTruthLabel::new(SurfaceCondition::Wet, vec![(0.0, 2.0), (1.0, 3.0)]);
        assert!(overlap.validate(10.0).is_err());
        assert!(ok.validate(4.0).is_err());
        let reversed = GroundTruthLabel::new(SurfaceCondition::Wet, vec![(2.0, 2.0)]);
        assert!(reversed.validate(10.0).is_err());
    }
}
