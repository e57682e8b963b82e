//! Harmonic notch bank for attenuating wind-dominated low-frequency noise.
//!
//! The bank is a one-pole DC blocker followed by one second-order notch at
//! every harmonic `k * base_hz`, `k = 1..=n_harmonics`. Each notch places its
//! zeros at radius `rz` and its poles at radius `rp` on the same angle, so
//! the notch depth is finite (`depth_db`) and its -3 dB width is
//! `center / q_factor`. Sections are gain-normalised to unity at Nyquist.
//!
//! Filtering runs causally in `f64` from zero initial state.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex64 as Complex;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Pole radius of the DC blocker.
pub const DC_BLOCKER_POLE: f64 = 0.995;

/// Magnitudes below this are reported as this floor, in dB.
const RESPONSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchSpec {
    pub base_hz: f64,
    pub n_harmonics: usize,
    pub q_factor: f64,
    /// Attenuation at each notch center, before interaction with neighbours.
    pub depth_db: f64,
    pub sample_rate: u32,
}

impl NotchSpec {
    pub const DEFAULT_BASE_HZ: f64 = 21.5;
    pub const DEFAULT_HARMONICS: usize = 60;
    pub const DEFAULT_Q: f64 = 30.0;
    pub const DEFAULT_DEPTH_DB: f64 = 60.0;

    pub fn new(sample_rate: u32) -> Self {
        Self {
            base_hz: Self::DEFAULT_BASE_HZ,
            n_harmonics: Self::DEFAULT_HARMONICS,
            q_factor: Self::DEFAULT_Q,
            depth_db: Self::DEFAULT_DEPTH_DB,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        if !(self.base_hz.is_finite() && self.base_hz > 0.0) {
            return Err(Error::param("base_hz", format!("{} must be > 0", self.base_hz)));
        }
        if self.n_harmonics == 0 {
            return Err(Error::param("harmonics", "need at least one harmonic"));
        }
        if !(self.q_factor.is_finite() && self.q_factor > 0.0) {
            return Err(Error::param("q", format!("{} must be > 0", self.q_factor)));
        }
        if !(self.depth_db.is_finite() && self.depth_db > 0.0) {
            return Err(Error::param(
                "depth_db",
                format!("{} must be > 0", self.depth_db),
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let top = self.base_hz * self.n_harmonics as f64;
        if top >= nyquist {
            return Err(Error::param(
                "harmonics",
                format!("highest notch {top} Hz is not below Nyquist {nyquist} Hz"),
            ));
        }
        Ok(())
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n_harmonics).map(move |k| k as f64 * self.base_hz)
    }
}

/// Normalised second-order section, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Notch at `center_hz` with -3 dB width `center_hz / q` and the given depth.
    pub fn notch(center_hz: f64, q: f64, depth_db: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let bandwidth = center_hz / q;
        let rp = (-PI * bandwidth / sample_rate).exp();
        let rz = 1.0 - (1.0 - rp) * 10f64.powf(-depth_db / 20.0);
        let cos = w0.cos();
        let (b1, b2) = (-2.0 * rz * cos, rz * rz);
        let (a1, a2) = (-2.0 * rp * cos, rp * rp);
        // |A(-1)| / |B(-1)|
        let g = (1.0 - a1 + a2) / (1.0 - b1 + b2);
        Self {
            b0: g,
            b1: g * b1,
            b2: g * b2,
            a1,
            a2,
        }
    }

    pub fn response(&self, w: f64) -> Complex {
        let z1 = Complex::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = Complex::from(self.b0) + z1 * self.b1 + z2 * self.b2;
        let den = Complex::from(1.0) + z1 * self.a1 + z2 * self.a2;
        num / den
    }

    /// Largest pole magnitude.
    pub fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-self.a1 + s) / 2.0).abs().max(((-self.a1 - s) / 2.0).abs())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotchBank {
    spec: NotchSpec,
    sections: Vec<Biquad>,
    dc_pole: f64,
}

impl NotchBank {
    pub fn design(spec: NotchSpec) -> Result<Self> {
        spec.validate()?;
        let fs = spec.sample_rate as f64;
        let sections = spec
            .centers()
            .map(|f| Biquad::notch(f, spec.q_factor, spec.depth_db, fs))
            .collect();
        Ok(Self {
            spec,
            sections,
            dc_pole: DC_BLOCKER_POLE,
        })
    }

    pub fn spec(&self) -> &NotchSpec {
        &self.spec
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn dc_pole(&self) -> f64 {
        self.dc_pole
    }

    pub fn sample_rate(&self) -> u32 {
        self.spec.sample_rate
    }

    pub fn is_stable(&self) -> bool {
        self.dc_pole.abs() < 1.0 && self.sections.iter().all(|s| s.pole_radius() < 1.0)
    }

    fn dc_response(&self, w: f64) -> Complex {
        let r = self.dc_pole;
        let z1 = Complex::from_polar(1.0, -w);
        (Complex::from(1.0) - z1) * (0.5 * (1.0 + r)) / (Complex::from(1.0) - z1 * r)
    }

    /// Magnitude response in dB at each frequency in `freqs` (Hz).
    pub fn frequency_response(&self, freqs: &[f64]) -> Result<Vec<f64>> {
        let fs = self.spec.sample_rate as f64;
        freqs
            .iter()
            .map(|&f| {
                if !(f >= 0.0 && f < fs / 2.0) {
                    return Err(Error::param(
                        "frequency",
                        format!("{f} Hz outside [0, {})", fs / 2.0),
                    ));
                }
                let w = 2.0 * PI * f / fs;
                let h = self
                    .sections
                    .iter()
                    .fold(self.dc_response(w), |acc, s| acc * s.response(w));
                Ok((20.0 * h.norm().log10()).max(RESPONSE_FLOOR_DB))
            })
            .collect()
    }

    /// Coefficients as CSV, one row per section; the DC blocker is row 0.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("section,kind,center_hz,b0,b1,b2,a1,a2\n");
        let r = self.dc_pole;
        let g = 0.5 * (1.0 + r);
        let _ = writeln!(out, "0,dc_blocker,0,{g},{},0,{},0", -g, -r);
        for (i, (s, f)) in self.sections.iter().zip(self.spec.centers()).enumerate() {
            let _ = writeln!(
                out,
                "{},notch,{f},{},{},{},{},{}",
                i + 1,
                s.b0,
                s.b1,
                s.b2,
                s.a1,
                s.a2
            );
        }
        out
    }
}

/// Running state for one pass of the bank over a signal.
#[derive(Debug, Clone)]
pub struct NotchFilter<'a> {
    bank: &'a NotchBank,
    dc_x1: f64,
    dc_y1: f64,
    // Transposed direct form II delay pairs.
    state: Vec<[f64; 2]>,
}

impl<'a> NotchFilter<'a> {
    pub fn new(bank: &'a NotchBank) -> Self {
        Self {
            bank,
            dc_x1: 0.0,
            dc_y1: 0.0,
            state: vec![[0.0; 2]; bank.sections.len()],
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let r = self.bank.dc_pole;
        let y = 0.5 * (1.0 + r) * (x - self.dc_x1) + r * self.dc_y1;
        self.dc_x1 = x;
        self.dc_y1 = y;
        let mut v = y;
        for (s, z) in self.bank.sections.iter().zip(self.state.iter_mut()) {
            let out = s.b0 * v + z[0];
            z[0] = s.b1 * v - s.a1 * out + z[1];
            z[1] = s.b2 * v - s.a2 * out;
            v = out;
        }
        v
    }
}

/// Runs the bank over `buffer` from zero state.
pub fn apply_reduction(buffer: &AudioBuffer, bank: &NotchBank) -> Result<AudioBuffer> {
    if buffer.sample_rate() != bank.sample_rate() {
        return Err(Error::RateMismatch {
            buffer: buffer.sample_rate(),
            design: bank.sample_rate(),
        });
    }
    let mut filter = NotchFilter::new(bank);
    let out: Vec<f64> = buffer.samples().iter().map(|&x| filter.process(x)).collect();
    AudioBuffer::new(out, buffer.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_bank() -> NotchBank {
        NotchBank::design(NotchSpec::new(44_100)).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn sine(f: f64, secs: f64) -> AudioBuffer {
        let n = (secs * 44_100.0) as usize;
        let w = 2.0 * PI * f / 44_100.0;
        AudioBuffer::new((0..n).map(|i| (w * i as f64).sin()).collect(), 44_100).unwrap()
    }

    #[test]
    fn centers_and_top_notch() {
        let spec = NotchSpec::new(44_100);
        let c: Vec<f64> = spec.centers().collect();
        assert_eq!(&c[..3], &[21.5, 43.0, 64.5]);
        assert_eq!(*c.last().unwrap(), 1290.0);
        let bank = default_bank();
        assert_eq!(bank.sections().len(), 60);
        assert!(bank.is_stable());
    }

    #[test]
    fn invalid_specs() {
        let above = NotchSpec {
            base_hz: 23_000.0,
            n_harmonics: 1,
            ..NotchSpec::new(44_100)
        };
        assert!(NotchBank::design(above).is_err());
        let q = NotchSpec {
            q_factor: 0.0,
            ..NotchSpec::new(44_100)
        };
        assert!(NotchBank::design(q).is_err());
        let bank = default_bank();
        assert!(bank.frequency_response(&[22_050.0]).is_err());
        assert!(bank.frequency_response(&[-1.0]).is_err());
    }

    #[test]
    fn analytic_response() {
        let bank = default_bank();
        let r = bank.frequency_response(&[0.0, 21.5, 5000.0]).unwrap();
        assert!(r[0] <= -60.0, "{}", r[0]);
        assert!(r[1] <= -40.0, "{}", r[1]);
        assert!(r[2].abs() <= 1.0, "{}", r[2]);
    }

    #[test]
    fn sine_probes() {
        let bank = default_bank();
        let skip = 44_100;
        let low = apply_reduction(&sine(21.5, 10.0), &bank).unwrap();
        let atten = 20.0 * (rms(&low.samples()[skip..]) / (0.5f64).sqrt()).log10();
        assert!(atten <= -40.0, "{atten}");
        // The 21.5 Hz notch has a 0.44 s time constant; matching the analytic
        // depth of about -66 dB to 1 dB needs a longer settle than 1 s.
        let settled = 20.0 * (rms(&low.samples()[6 * skip..]) / (0.5f64).sqrt()).log10();
        let predicted = bank.frequency_response(&[21.5]).unwrap()[0];
        assert!((settled - predicted).abs() < 1.0, "{settled} vs {predicted}");

        let high = apply_reduction(&sine(5000.0, 2.0), &bank).unwrap();
        let gain = 20.0 * (rms(&high.samples()[skip..]) / (0.5f64).sqrt()).log10();
        assert!(gain.abs() <= 1.0, "{gain}");
    }

    #[test]
    fn zeros_stay_zero_and_length_is_kept() {
        let bank = default_bank();
        let out = apply_reduction(&AudioBuffer::silence(1234, 44_100).unwrap(), &bank).unwrap();
        assert_eq!(out.len(), 1234);
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rate_mismatch() {
        let bank = default_bank();
        let buf = AudioBuffer::silence(10, 48_000).unwrap();
        assert!(matches!(
            apply_reduction(&buf, &bank),
            Err(Error::RateMismatch { .. })
        ));
    }

    #[test]
    fn linear() {
        let bank = default_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.9);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let run = |v: Vec<f64>| {
            apply_reduction(&AudioBuffer::new(v, 44_100).unwrap(), &bank)
                .unwrap()
                .into_samples()
        };
        let (fx, fy, fm) = (run(x), run(y), run(mix));
        let scale = rms(&fm);
        for i in 0..n {
            assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn impulse_response_decays() {
        let bank = default_bank();
        let mut impulse = vec![0.0; 10 * 44_100];
        impulse[0] = 1.0;
        let out = apply_reduction(&AudioBuffer::new(impulse, 44_100).unwrap(), &bank).unwrap();
        let tail = &out.samples()[9 * 44_100..];
        assert!(tail.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn white_noise_mostly_preserved() {
        let bank = default_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..5 * 44_100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = apply_reduction(&AudioBuffer::new(x.clone(), 44_100).unwrap(), &bank).unwrap();
        let energy = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>();
        let ratio = energy(out.samples()) / energy(&x);
        assert!(ratio >= 0.9, "{ratio}");
    }
}
