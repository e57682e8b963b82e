//! Synthetic labelled road recordings.
//!
//! A recording is wind plus a handful of vehicle passes:
//!
//! * turbulence: pink noise low-passed at `wind_cutoff_hz`, slowly modulated;
//! * mount resonance: narrow-band wind-driven ringing at harmonics of
//!   `resonance_hz`, with a log-normal level that wanders second by second,
//!   optionally with an extra independent wander per harmonic;
//! * gusts: infrasonic pressure swells (Hann² bumps of 2–5 s) at a Poisson
//!   rate, strong enough to look like a vehicle in a broadband envelope;
//! * an optional white noise floor.
//!
//! Vehicle passes are band-limited white noise under a Hann envelope, with
//! a spectral tilt that depends on the surface condition. None of this is a
//! physical model of tyres or wind; it is a controllable stand-in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::labels::{GroundTruthLabel, SurfaceCondition};

/// Longest synthetic event, seconds.
const MAX_EVENT_S: f64 = 4.0;
const MIN_EVENT_S: f64 = 2.0;
/// Keeps event edges this far from the file ends.
const EDGE_PAD_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub n_events: usize,
    pub event_band: (f64, f64),
    /// RMS of the event before its envelope is applied.
    pub event_level: f64,
    /// Per-event level spread, ± dB, uniform.
    pub event_level_spread_db: f64,
    /// Minimum distance between event centres.
    pub min_gap_s: f64,
    pub surface_condition: SurfaceCondition,
    /// Tilt magnitude, dB/octave around 1 kHz; Wet gets `+t`, Slush
    /// `+0.7 t`, Snow `-t`, Dry none.
    pub condition_tilt_db: f64,
    /// Standard deviation of a per-event tilt perturbation, dB/octave.
    pub tilt_jitter_db: f64,
    /// RMS of the turbulence component.
    pub wind_level: f64,
    pub wind_cutoff_hz: f64,
    /// Depth of the slow turbulence modulation.
    pub turbulence_modulation: f64,
    /// Gusts per minute.
    pub gust_rate_per_min: f64,
    /// Gust peak amplitude relative to `wind_level`.
    pub gust_ratio: f64,
    pub resonance_hz: f64,
    /// Resonance RMS relative to `wind_level`.
    pub resonance_ratio: f64,
    /// Harmonic `k` is weighted `k^slope`.
    pub resonance_slope: f64,
    /// Line width of harmonic `k` is `k * resonance_hz / resonance_q`.
    pub resonance_q: f64,
    /// Standard deviation of the log resonance level.
    pub resonance_wander: f64,
    /// Standard deviation of an independent log-level wander per harmonic.
    pub harmonic_wander: f64,
    /// RMS of a white background, independent of the wind.
    pub noise_floor: f64,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration_s: 180.0,
            sample_rate: 44_100,
            n_events: 7,
            event_band: (300.0, 8000.0),
            event_level: 0.03,
            event_level_spread_db: 3.0,
            min_gap_s: 15.0,
            surface_condition: SurfaceCondition::Dry,
            condition_tilt_db: 3.0,
            tilt_jitter_db: 0.5,
            wind_level: 0.01,
            wind_cutoff_hz: 1300.0,
            turbulence_modulation: 0.1,
            gust_rate_per_min: 3.0,
            gust_ratio: 33.0,
            resonance_hz: 21.5,
            resonance_ratio: 1.0,
            resonance_slope: 0.0,
            resonance_q: 500.0,
            resonance_wander: 0.15,
            harmonic_wander: 0.0,
            noise_floor: 0.0,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate as f64 / 2.0;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if self.sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be > 0"));
        }
        if !positive(self.duration_s) {
            return Err(Error::param("duration_s", "must be > 0"));
        }
        let (lo, hi) = self.event_band;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi && hi < nyq) {
            return Err(Error::param(
                "event_band",
                format!("({lo}, {hi}) must satisfy 0 < low < high < {nyq}"),
            ));
        }
        if !positive(self.wind_cutoff_hz) || self.wind_cutoff_hz >= nyq {
            return Err(Error::param("wind_cutoff_hz", format!("must be in (0, {nyq})")));
        }
        if !positive(self.resonance_hz) {
            return Err(Error::param("resonance_hz", "must be > 0"));
        }
        if !positive(self.resonance_q) {
            return Err(Error::param("resonance_q", "must be > 0"));
        }
        if !self.resonance_slope.is_finite() {
            return Err(Error::param("resonance_slope", "must be finite"));
        }
        for (name, v) in [
            ("event_level", self.event_level),
            ("event_level_spread_db", self.event_level_spread_db),
            ("min_gap_s", self.min_gap_s),
            ("condition_tilt_db", self.condition_tilt_db),
            ("tilt_jitter_db", self.tilt_jitter_db),
            ("wind_level", self.wind_level),
            ("turbulence_modulation", self.turbulence_modulation),
            ("gust_rate_per_min", self.gust_rate_per_min),
            ("gust_ratio", self.gust_ratio),
            ("resonance_ratio", self.resonance_ratio),
            ("resonance_wander", self.resonance_wander),
            ("harmonic_wander", self.harmonic_wander),
            ("noise_floor", self.noise_floor),
        ] {
            if !non_negative(v) {
                return Err(Error::param(name, format!("{v} must be finite and >= 0")));
            }
        }
        if self.n_events > 0 && self.placement_slack() < 0.0 {
            return Err(Error::param(
                "n_events",
                format!(
                    "{} events {} s apart do not fit in {} s",
                    self.n_events, self.min_gap_s, self.duration_s
                ),
            ));
        }
        Ok(())
    }

    fn placement_slack(&self) -> f64 {
        let gap = self.min_gap_s.max(MAX_EVENT_S);
        self.duration_s - 2.0 * (MAX_EVENT_S / 2.0 + EDGE_PAD_S) - (self.n_events as f64 - 1.0) * gap
    }

    fn tilt(&self) -> f64 {
        let t = self.condition_tilt_db;
        match self.surface_condition {
            SurfaceCondition::Dry => 0.0,
            SurfaceCondition::Wet => t,
            SurfaceCondition::Slush => 0.7 * t,
            SurfaceCondition::Snow => -t,
        }
    }
}

/// Independent stream per signal component, so e.g. changing the event
/// count leaves the wind untouched.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// White noise coloured by a magnitude response `mag(f)`, scaled to unit RMS
/// (left at zero if the response is zero everywhere).
fn shaped_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, mag: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = gaussian(rng, n).into_iter().map(Complex64::from).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *c *= mag(bin as f64 * fs / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Unit-variance AR(1) knots, one per second.
fn ar1_knots(rng: &mut ChaCha8Rng, count: usize, pole: f64) -> Vec<f64> {
    let innov = (1.0 - pole * pole).sqrt();
    let mut state = 0.0;
    (0..count)
        .map(|_| {
            state = pole * state + innov * rng.sample::<f64, _>(StandardNormal);
            state
        })
        .collect()
}

fn interp_knots(k: &[f64], t: f64) -> f64 {
    let t = t.clamp(0.0, (k.len() - 1) as f64);
    let j = (t.floor() as usize).min(k.len() - 2);
    let a = t - j as f64;
    k[j] * (1.0 - a) + k[j + 1] * a
}

/// Unit-variance AR(1) sequence at 1 Hz, linearly interpolated to audio rate.
fn slow_wander(rng: &mut ChaCha8Rng, n: usize, fs: f64, pole: f64) -> Vec<f64> {
    let k = ar1_knots(rng, (n as f64 / fs).ceil() as usize + 2, pole);
    (0..n).map(|i| interp_knots(&k, i as f64 / fs)).collect()
}

/// Scales each harmonic band of `x` by its own slowly wandering log-normal
/// gain, via short-time Fourier overlap-add (sine windows, 50% overlap, which
/// reconstructs exactly at unit gain).
fn wander_harmonics(x: &mut [f64], rng: &mut ChaCha8Rng, fs: f64, f0: f64, top: usize, sigma: f64) {
    const LEN: usize = 4096;
    const HOP: usize = LEN / 2;
    let n = x.len();
    let secs = (n as f64 / fs).ceil() as usize + 2;
    let knots: Vec<Vec<f64>> = (0..=top).map(|_| ar1_knots(rng, secs, 0.8)).collect();
    let window: Vec<f64> = (0..LEN)
        .map(|i| (std::f64::consts::PI * i as f64 / LEN as f64).sin())
        .collect();
    let harmonic: Vec<usize> = (0..LEN)
        .map(|b| {
            let f = b.min(LEN - b) as f64 * fs / LEN as f64;
            ((f / f0).round() as usize).clamp(1, top)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(LEN);
    let inv = planner.plan_fft_inverse(LEN);
    let mut out = vec![0.0; n];
    let mut buf = vec![Complex64::default(); LEN];
    let mut gains = vec![0.0; top + 1];
    // Frame m covers samples [m * HOP - HOP, m * HOP + HOP).
    for m in 0..=n / HOP + 1 {
        let start = (m * HOP) as isize - HOP as isize;
        for (i, c) in buf.iter_mut().enumerate() {
            let j = start + i as isize;
            let v = if j >= 0 && (j as usize) < n { x[j as usize] } else { 0.0 };
            *c = Complex64::from(v * window[i]);
        }
        fwd.process(&mut buf);
        let t = (start as f64 + HOP as f64) / fs;
        for (g, k) in gains.iter_mut().zip(&knots) {
            *g = (sigma * interp_knots(k, t)).exp();
        }
        for (c, &h) in buf.iter_mut().zip(&harmonic) {
            *c *= gains[h] / LEN as f64;
        }
        inv.process(&mut buf);
        for (i, c) in buf.iter().enumerate() {
            let j = start + i as isize;
            if j >= 0 && (j as usize) < n {
                out[j as usize] += c.re * window[i];
            }
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for (dst, v) in x.iter_mut().zip(out) {
            *dst = v / rms;
        }
    }
}

fn add_turbulence(x: &mut [f64], spec: &SynthSpec, fs: f64) {
    let mut rng = stream(spec.rng_seed, 1);
    let cut = spec.wind_cutoff_hz;
    let turb = shaped_noise(&mut rng, x.len(), fs, |f| {
        f.max(1.0).powf(-0.5) / (1.0 + (f / cut).powi(8)).sqrt()
    });
    let m = slow_wander(&mut rng, x.len(), fs, 0.7);
    for ((v, t), m) in x.iter_mut().zip(turb).zip(m) {
        *v += spec.wind_level * t * (1.0 + spec.turbulence_modulation * m).max(0.2);
    }
}

fn add_resonance(x: &mut [f64], spec: &SynthSpec, fs: f64) {
    let mut rng = stream(spec.rng_seed, 2);
    let f0 = spec.resonance_hz;
    let top = (spec.wind_cutoff_hz / f0).floor().max(1.0);
    let mut ring = shaped_noise(&mut rng, x.len(), fs, |f| {
        let k = (f / f0).round().clamp(1.0, top);
        let fk = k * f0;
        let bw = fk / spec.resonance_q;
        (-0.5 * ((f - fk) / bw).powi(2)).exp() * k.powf(spec.resonance_slope)
    });
    if spec.harmonic_wander > 0.0 {
        let mut hrng = stream(spec.rng_seed, 6);
        wander_harmonics(&mut ring, &mut hrng, fs, f0, top as usize, spec.harmonic_wander);
    }
    let w = slow_wander(&mut rng, x.len(), fs, 0.8);
    let level = spec.wind_level * spec.resonance_ratio;
    for ((v, r), w) in x.iter_mut().zip(ring).zip(w) {
        *v += level * r * (spec.resonance_wander * w).exp();
    }
}

fn add_gusts(x: &mut [f64], spec: &SynthSpec, fs: f64) {
    let mut rng = stream(spec.rng_seed, 3);
    let mean = spec.gust_rate_per_min * spec.duration_s / 60.0;
    if mean <= 0.0 {
        return;
    }
    let count = Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize;
    for _ in 0..count {
        let c = rng.random_range(0.0..spec.duration_s);
        let len = rng.random_range(2.0..5.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let amp = sign * spec.gust_ratio * spec.wind_level * rng.random_range(0.5..1.5);
        let lo = (((c - len / 2.0) * fs).ceil().max(0.0)) as usize;
        let hi = (((c + len / 2.0) * fs).floor() as usize).min(x.len().saturating_sub(1));
        for (i, v) in x.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let phase = std::f64::consts::PI * (i as f64 / fs - c + len / 2.0) / len;
            *v += amp * phase.sin().powi(2);
        }
    }
}

fn add_noise_floor(x: &mut [f64], spec: &SynthSpec) {
    if spec.noise_floor == 0.0 {
        return;
    }
    let mut rng = stream(spec.rng_seed, 4);
    for v in x.iter_mut() {
        *v += spec.noise_floor * rng.sample::<f64, _>(StandardNormal);
    }
}

fn add_events(x: &mut [f64], spec: &SynthSpec, fs: f64) -> Vec<(f64, f64)> {
    if spec.n_events == 0 {
        return Vec::new();
    }
    let mut rng = stream(spec.rng_seed, 5);
    let gap = spec.min_gap_s.max(MAX_EVENT_S);
    let slack = spec.placement_slack();
    let mut offsets: Vec<f64> = (0..spec.n_events)
        .map(|_| rng.random::<f64>() * slack)
        .collect();
    offsets.sort_by(f64::total_cmp);
    let (lo, hi) = spec.event_band;
    let base_tilt = spec.tilt();

    let mut intervals = Vec::with_capacity(spec.n_events);
    for (i, off) in offsets.into_iter().enumerate() {
        let centre = off + i as f64 * gap + MAX_EVENT_S / 2.0 + EDGE_PAD_S;
        let len_s = rng.random_range(MIN_EVENT_S..MAX_EVENT_S);
        let n = (len_s * fs).round() as usize;
        let tilt = base_tilt + spec.tilt_jitter_db * rng.sample::<f64, _>(StandardNormal);
        let exponent = tilt / (20.0 * 2f64.log10());
        let noise = shaped_noise(&mut rng, n, fs, |f| {
            if (lo..=hi).contains(&f) {
                (f / 1000.0).powf(exponent)
            } else {
                0.0
            }
        });
        let spread = spec.event_level_spread_db;
        let db = if spread > 0.0 {
            rng.random_range(-spread..spread)
        } else {
            0.0
        };
        let level = spec.event_level * 10f64.powf(db / 20.0);
        let start = ((centre - len_s / 2.0) * fs).round() as usize;
        for (j, v) in noise.into_iter().enumerate() {
            if let Some(dst) = x.get_mut(start + j) {
                let w = (std::f64::consts::PI * j as f64 / n as f64).sin().powi(2);
                *dst += level * w * v;
            }
        }
        let t0 = start as f64 / fs;
        intervals.push((t0, (t0 + n as f64 / fs).min(spec.duration_s)));
    }
    intervals
}

/// Generates one labelled recording. Bit-identical for identical specs.
pub fn synth_corpus(spec: &SynthSpec) -> Result<(AudioBuffer, GroundTruthLabel)> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let n = (spec.duration_s * fs).round() as usize;
    if n == 0 {
        return Err(Error::param("duration_s", "shorter than one sample"));
    }
    let mut x = vec![0.0; n];
    if spec.wind_level > 0.0 {
        add_turbulence(&mut x, spec, fs);
        if spec.resonance_ratio > 0.0 {
            add_resonance(&mut x, spec, fs);
        }
        add_gusts(&mut x, spec, fs);
    }
    add_noise_floor(&mut x, spec);
    let intervals = add_events(&mut x, spec, fs);
    let label = GroundTruthLabel {
        condition: spec.surface_condition,
        intervals,
    };
    Ok((AudioBuffer::new(x, spec.sample_rate)?, label))
}
