//! Frequency-of-interest noise reduction, driving-event extraction and
//! autoencoder anomaly scoring for road-surface audio.
//!
//! The usual flow is [`load_wav`] → [`extract`] (notch bank, envelope,
//! peaks, crops) → [`featurize`] → [`train`] / [`NcaeModel::score`], with
//! [`run_experiment`] tying it together over a labelled corpus.

pub mod audio;
pub mod benchmark;
pub mod config;
pub mod error;
pub mod eval;
pub mod events;
pub mod experiment;
pub mod labels;
pub mod ncae;
pub mod peaks;
pub mod reduction;
pub mod spectral;
pub mod synth;

pub use audio::{load_wav, save_wav, AudioBuffer};
pub use config::{FeatureConfig, NotchConfig, PeakConfig, PipelineConfig, StftConfig};
pub use error::{Error, Result};
pub use eval::{auroc, improvement, match_events, PrecisionReport, RocReport};
pub use events::{crop_events, extract, DrivingEvent, EventMeta, Extraction};
pub use experiment::{run_experiment, CorpusManifest, ExperimentReport, ManifestEntry};
pub use labels::{GroundTruthLabel, SurfaceCondition};
pub use ncae::{featurize, train, AnomalyScore, FeatureVector, NcaeModel, TrainConfig};
pub use peaks::{detect_peaks, find_peaks, HeightRule, PeakParams};
pub use reduction::{apply_reduction, NotchBank, NotchSpec};
pub use spectral::{mean_magnitude, smooth_hann, stft, Envelope, Spectrogram, StftGeometry};
pub use synth::{synth_corpus, SynthSpec};
