//! Driving-event extraction.
//!
//! ```text
//! audio ─(notch bank)→ STFT → mean |X| per frame → Hann smoothing → peaks
//!   │                                                                  │
//!   └────────── crop 2·margin seconds around each peak ←───────────────┘
//!                         └─(notch bank again, optional)→ events
//! ```
//!
//! Crops are always cut from the input audio; `reduce_before` only affects
//! where peaks are found. `reduce_events` filters each crop on its own,
//! which is equivalent to cutting the event out of reduced audio apart from
//! the filter's start-up transient.

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::peaks::detect_peaks;
use crate::reduction::{apply_reduction, NotchBank};
use crate::spectral::{mean_magnitude, smooth_hann, stft, Envelope, StftGeometry};

/// A fixed-length crop centred on a detected vehicle pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingEvent {
    pub audio: AudioBuffer,
    pub source_id: String,
    /// Detected peak time in the source (s).
    pub peak_time_s: f64,
    /// Where the crop starts in the source (s); differs from
    /// `peak_time_s - margin_s` only for crops shifted to fit the file.
    pub start_s: f64,
    pub margin_s: f64,
}

impl DrivingEvent {
    /// `<source>_<peak time in ms>`.
    pub fn id(&self) -> String {
        format!("{}_{}", self.source_id, (self.peak_time_s * 1000.0).round() as u64)
    }

    pub fn meta(&self) -> EventMeta {
        EventMeta {
            id: self.id(),
            source: self.source_id.clone(),
            peak_time_s: self.peak_time_s,
            start_s: self.start_s,
            margin_s: self.margin_s,
        }
    }
}

/// Serializable description of an event, without the audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMeta {
    pub id: String,
    pub source: String,
    pub peak_time_s: f64,
    pub start_s: f64,
    pub margin_s: f64,
}

/// Cuts `2 * margin_s` seconds around each peak frame. Windows that would run
/// past either end of the buffer are shifted inside it.
pub fn crop_events(
    buffer: &AudioBuffer,
    peaks: &[usize],
    geometry: &StftGeometry,
    margin_s: f64,
    source_id: &str,
) -> Result<Vec<DrivingEvent>> {
    if !(margin_s.is_finite() && margin_s > 0.0) {
        return Err(Error::param("margin_s", format!("{margin_s} must be > 0")));
    }
    let fs = buffer.sample_rate() as f64;
    let len = (2.0 * margin_s * fs).round() as usize;
    let half = (margin_s * fs).round() as i64;
    if buffer.len() < len {
        return Err(Error::InvalidAudio(format!(
            "{:.3} s of audio cannot hold a {:.3} s event",
            buffer.duration_s(),
            2.0 * margin_s
        )));
    }
    let max_start = (buffer.len() - len) as i64;
    peaks
        .iter()
        .map(|&frame| {
            let peak_time_s = geometry.frame_time(frame);
            if peak_time_s > buffer.duration_s() {
                return Err(Error::param(
                    "peaks",
                    format!("frame {frame} lies beyond the end of the audio"),
                ));
            }
            let center = (peak_time_s * fs).round() as i64;
            let start = (center - half).clamp(0, max_start) as usize;
            Ok(DrivingEvent {
                audio: buffer.slice(start, len),
                source_id: source_id.to_owned(),
                peak_time_s,
                start_s: start as f64 / fs,
                margin_s,
            })
        })
        .collect()
}

/// Everything the extraction pass produced.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub events: Vec<DrivingEvent>,
    /// Mean-magnitude envelope before smoothing.
    pub envelope: Envelope,
    pub smoothed: Envelope,
    pub threshold: f64,
    pub peaks: Vec<usize>,
}

/// Runs detection and cropping on one recording.
pub fn extract(
    buffer: &AudioBuffer,
    config: &PipelineConfig,
    source_id: &str,
) -> Result<Extraction> {
    config.validate()?;
    let bank = if config.reduce_before || config.reduce_events {
        Some(NotchBank::design(config.notch.spec(buffer.sample_rate()))?)
    } else {
        None
    };

    let reduced;
    let detect_on = match (&bank, config.reduce_before) {
        (Some(bank), true) => {
            reduced = apply_reduction(buffer, bank)?;
            &reduced
        }
        _ => buffer,
    };

    let spec = stft(detect_on, config.stft.window, config.stft.hop)?;
    let envelope = mean_magnitude(&spec);
    let params = config.peaks.params();
    let smoothed = smooth_hann(&envelope, params.smooth_len_s)?;
    let threshold = params.height.threshold(&smoothed.values);
    let peaks = detect_peaks(&smoothed, &params)?;

    let mut events = crop_events(buffer, &peaks, &spec.geometry(), config.margin_s, source_id)?;
    if let (Some(bank), true) = (&bank, config.reduce_events) {
        for ev in &mut events {
            ev.audio = apply_reduction(&ev.audio, bank)?;
        }
    }

    Ok(Extraction {
        events,
        envelope,
        smoothed,
        threshold,
        peaks,
    })
}
