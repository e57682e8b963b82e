//! Pipeline configuration.
//!
//! Loaded from TOML; every key is optional and unknown keys are rejected.
//!
//! ```toml
//! margin_s = 5.0
//! reduce_before = true
//! reduce_events = false
//! seed = 42
//!
//! [notch]
//! base_hz = 21.5
//! harmonics = 60
//! q = 30.0
//! depth_db = 60.0
//!
//! [stft]
//! window = 4096
//! hop = 1024
//!
//! [peaks]
//! smooth_s = 2.0
//! min_dist_s = 10.0
//! mad_multiplier = 4.0
//! # height = 0.5   # absolute threshold, overrides the adaptive rule
//!
//! [features]
//! window = 512
//! hop = 256
//!
//! [model]
//! hidden_layers = 3
//! epochs = 200
//! batch_size = 32
//! learning_rate = 0.001
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ncae::TrainConfig;
use crate::peaks::{HeightRule, PeakParams};
use crate::reduction::NotchSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotchConfig {
    pub base_hz: f64,
    pub harmonics: usize,
    pub q: f64,
    pub depth_db: f64,
}

impl Default for NotchConfig {
    fn default() -> Self {
        Self {
            base_hz: NotchSpec::DEFAULT_BASE_HZ,
            harmonics: NotchSpec::DEFAULT_HARMONICS,
            q: NotchSpec::DEFAULT_Q,
            depth_db: NotchSpec::DEFAULT_DEPTH_DB,
        }
    }
}

impl NotchConfig {
    pub fn spec(&self, sample_rate: u32) -> NotchSpec {
        NotchSpec {
            base_hz: self.base_hz,
            n_harmonics: self.harmonics,
            q_factor: self.q,
            depth_db: self.depth_db,
            sample_rate,
        }
    }
}

/// Geometry for the detection STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: 4096,
            hop: 1024,
        }
    }
}

/// Geometry for the per-event feature STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: 512,
            hop: 256,
        }
    }
}

fn validate_geometry(section: &'static str, window: usize, hop: usize) -> Result<()> {
    if window < 2 {
        return Err(Error::param(section, format!("window {window} must be >= 2")));
    }
    if hop == 0 || hop > window {
        return Err(Error::param(section, format!("hop {hop} must be in 1..={window}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakConfig {
    pub smooth_s: f64,
    pub min_dist_s: f64,
    pub mad_multiplier: f64,
    pub height: Option<f64>,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            smooth_s: 2.0,
            min_dist_s: 10.0,
            mad_multiplier: 4.0,
            height: None,
        }
    }
}

impl PeakConfig {
    pub fn params(&self) -> PeakParams {
        PeakParams {
            height: match self.height {
                Some(h) => HeightRule::Absolute(h),
                None => HeightRule::Adaptive {
                    mad_multiplier: self.mad_multiplier,
                },
            },
            min_distance_s: self.min_dist_s,
            smooth_len_s: self.smooth_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Half the crop length, seconds.
    pub margin_s: f64,
    /// Run the notch bank before peak detection.
    pub reduce_before: bool,
    /// Run the notch bank again on each cropped event.
    pub reduce_events: bool,
    pub seed: u64,
    pub notch: NotchConfig,
    pub stft: StftConfig,
    pub peaks: PeakConfig,
    /// STFT geometry used to featurize events for the autoencoder.
    pub features: FeatureConfig,
    pub model: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            margin_s: 5.0,
            reduce_before: true,
            reduce_events: false,
            seed: 42,
            notch: NotchConfig::default(),
            stft: StftConfig::default(),
            peaks: PeakConfig::default(),
            features: FeatureConfig::default(),
            model: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// No reduction anywhere.
    pub fn without_reduction() -> Self {
        Self {
            reduce_before: false,
            reduce_events: false,
            ..Self::default()
        }
    }

    /// Reduction before detection and again on every crop.
    pub fn with_full_reduction() -> Self {
        Self {
            reduce_before: true,
            reduce_events: true,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the input sample rate.
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_s.is_finite() && self.margin_s > 0.0) {
            return Err(Error::param("margin_s", format!("{} must be > 0", self.margin_s)));
        }
        // Notch ceiling is checked against the actual rate at design time.
        let n = &self.notch;
        if !(n.base_hz.is_finite() && n.base_hz > 0.0) {
            return Err(Error::param("notch.base_hz", format!("{} must be > 0", n.base_hz)));
        }
        if n.harmonics == 0 {
            return Err(Error::param("notch.harmonics", "must be >= 1"));
        }
        if !(n.q.is_finite() && n.q > 0.0) {
            return Err(Error::param("notch.q", format!("{} must be > 0", n.q)));
        }
        if !(n.depth_db.is_finite() && n.depth_db > 0.0) {
            return Err(Error::param("notch.depth_db", format!("{} must be > 0", n.depth_db)));
        }
        validate_geometry("stft", self.stft.window, self.stft.hop)?;
        validate_geometry("features", self.features.window, self.features.hop)?;
        self.peaks.params().validate()?;
        self.model.validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.notch.base_hz, 21.5);
        assert_eq!(c.notch.harmonics, 60);
        assert_eq!(c.margin_s, 5.0);
    }

    #[test]
    fn negative_margin_names_field() {
        let err = PipelineConfig::from_toml_str("margin_s = -1").unwrap_err();
        assert!(err.to_string().contains("margin_s"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::from_toml_str("margnin_s = 5.0").unwrap_err();
        assert!(err.to_string().contains("margnin_s"), "{err}");
        let err = PipelineConfig::from_toml_str("[notch]\nbase = 3.0").unwrap_err();
        assert!(err.to_string().contains("base"), "{err}");
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let c = PipelineConfig::from_toml_str("[notch]\nq = 10.0\n[peaks]\nheight = 0.2").unwrap();
        assert_eq!(c.notch.q, 10.0);
        assert_eq!(c.notch.base_hz, 21.5);
        assert_eq!(c.peaks.params().height, HeightRule::Absolute(0.2));
    }

    #[test]
    fn round_trip_and_hash() {
        let c = PipelineConfig::with_full_reduction();
        let back = PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(c.hash(), PipelineConfig::without_reduction().hash());
    }

    #[test]
    fn bad_hop_rejected() {
        assert!(PipelineConfig::from_toml_str("[stft]\nwindow = 1024\nhop = 2048").is_err());
        let c = PipelineConfig::from_toml_str("[stft]\nwindow = 8192").unwrap();
        assert_eq!((c.stft.window, c.stft.hop), (8192, 1024));
    }
}
