//! STFT magnitudes, the per-frame mean-magnitude envelope, and Hann smoothing.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Frame layout of an STFT, enough to map frames back to sample positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftGeometry {
    pub window_len: usize,
    pub hop_len: usize,
    pub sample_rate: u32,
}

impl StftGeometry {
    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frame_step_s(&self) -> f64 {
        self.hop_len as f64 / self.sample_rate as f64
    }

    /// Time of the center of frame `i`.
    pub fn frame_time(&self, i: usize) -> f64 {
        (i * self.hop_len) as f64 / self.sample_rate as f64
            + self.window_len as f64 / (2.0 * self.sample_rate as f64)
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            (n_samples - self.window_len) / self.hop_len + 1
        }
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window_len as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    geometry: StftGeometry,
    n_frames: usize,
    /// Row-major `[n_frames][n_bins]`.
    magnitudes: Vec<f64>,
}

impl Spectrogram {
    pub fn geometry(&self) -> StftGeometry {
        self.geometry
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.geometry.n_bins()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let nb = self.n_bins();
        &self.magnitudes[i * nb..(i + 1) * nb]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.magnitudes.chunks_exact(self.n_bins())
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.n_frames).map(|i| self.geometry.frame_time(i)).collect()
    }

    pub fn bin_freqs(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|k| self.geometry.bin_freq(k)).collect()
    }

    /// Mean magnitude over time for each bin.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_bins()];
        for frame in self.frames() {
            for (a, &m) in acc.iter_mut().zip(frame) {
                *a += m;
            }
        }
        let n = self.n_frames as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Builds a spectrogram from precomputed magnitudes (row-major).
    pub fn from_magnitudes(geometry: StftGeometry, magnitudes: Vec<f64>) -> Result<Self> {
        let nb = geometry.n_bins();
        if magnitudes.is_empty() || magnitudes.len() % nb != 0 {
            return Err(Error::DimensionMismatch {
                expected: nb,
                got: magnitudes.len(),
            });
        }
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::param("magnitudes", "must be finite and non-negative"));
        }
        Ok(Self {
            geometry,
            n_frames: magnitudes.len() / nb,
            magnitudes,
        })
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitudes (one-sided, unnormalised DFT).
pub fn stft(buffer: &AudioBuffer, window_len: usize, hop_len: usize) -> Result<Spectrogram> {
    if window_len < 2 {
        return Err(Error::param("window", "must be at least 2 samples"));
    }
    if hop_len == 0 || hop_len > window_len {
        return Err(Error::param(
            "hop",
            format!("{hop_len} must be in 1..={window_len}"),
        ));
    }
    if buffer.len() < window_len {
        return Err(Error::InvalidAudio(format!(
            "{} samples is shorter than one {window_len}-sample window",
            buffer.len()
        )));
    }
    let geometry = StftGeometry {
        window_len,
        hop_len,
        sample_rate: buffer.sample_rate(),
    };
    let n_frames = geometry.frame_count(buffer.len());
    let n_bins = geometry.n_bins();
    let window = hann_window(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut frame = vec![Complex64::default(); window_len];
    let mut magnitudes = Vec::with_capacity(n_frames * n_bins);
    let samples = buffer.samples();

    for i in 0..n_frames {
        let start = i * hop_len;
        for ((dst, &x), &w) in frame
            .iter_mut()
            .zip(&samples[start..start + window_len])
            .zip(&window)
        {
            *dst = Complex64::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut frame, &mut scratch);
        magnitudes.extend(frame[..n_bins].iter().map(|c| c.norm()));
    }

    Ok(Spectrogram {
        geometry,
        n_frames,
        magnitudes,
    })
}

/// Per-frame series with a uniform time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub values: Vec<f64>,
    /// Time of frame 0 (s).
    pub start_s: f64,
    /// Frame spacing (s).
    pub step_s: f64,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_s + i as f64 * self.step_s
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.time(i)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.time(i), v));
        }
        out
    }
}

/// Mean magnitude across frequency bins for every frame.
pub fn mean_magnitude(spec: &Spectrogram) -> Envelope {
    let nb = spec.n_bins() as f64;
    let g = spec.geometry();
    Envelope {
        values: spec.frames().map(|f| f.iter().sum::<f64>() / nb).collect(),
        start_s: g.frame_time(0),
        step_s: g.frame_step_s(),
    }
}

/// Odd kernel length in frames for a smoothing span of `smooth_len_s`.
pub fn smoothing_kernel_len(smooth_len_s: f64, step_s: f64) -> usize {
    let n = (smooth_len_s / step_s).round().max(1.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Unit-sum Hann kernel with `len` non-zero taps.
pub fn hann_kernel(len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=len)
        .map(|i| (PI * i as f64 / (len + 1) as f64).sin().powi(2))
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Mirror index `j` into `0..n` without repeating the edge sample.
fn reflect(j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = j.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Convolves the envelope with a normalised Hann kernel spanning
/// `smooth_len_s`, padding the edges by reflection. Length is preserved.
pub fn smooth_hann(env: &Envelope, smooth_len_s: f64) -> Result<Envelope> {
    if !(smooth_len_s.is_finite() && smooth_len_s > 0.0) {
        return Err(Error::param("smooth_s", format!("{smooth_len_s} must be > 0")));
    }
    let n = env.values.len();
    if n == 0 {
        return Ok(env.clone());
    }
    let kernel = hann_kernel(smoothing_kernel_len(smooth_len_s, env.step_s));
    let half = (kernel.len() / 2) as isize;
    let values = (0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * env.values[reflect(i + k as isize - half, n)])
                .sum()
        })
        .collect();
    Ok(Envelope {
        values,
        start_s: env.start_s,
        step_s: env.step_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(values: Vec<f64>) -> Envelope {
        Envelope {
            values,
            start_s: 0.0,
            step_s: 0.1,
        }
    }

    #[test]
    fn zero_signal_zero_magnitudes() {
        let b = AudioBuffer::silence(10_000, 44_100).unwrap();
        let s = stft(&b, 1024, 256).unwrap();
        assert!(s.frames().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        let b = AudioBuffer::silence(4096, 44_100).unwrap();
        assert_eq!(stft(&b, 4096, 1024).unwrap().n_frames(), 1);
        let b = AudioBuffer::silence(10_000, 44_100).unwrap();
        assert_eq!(stft(&b, 4096, 1024).unwrap().n_frames(), (10_000 - 4096) / 1024 + 1);
        assert!(stft(&AudioBuffer::silence(100, 44_100).unwrap(), 4096, 1024).is_err());
    }

    #[test]
    fn sine_peaks_in_expected_bin() {
        let fs = 44_100.0;
        let x: Vec<f64> = (0..44_100)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / fs).sin())
            .collect();
        let s = stft(&AudioBuffer::new(x, 44_100).unwrap(), 2048, 512).unwrap();
        for f in s.frames() {
            let argmax = f
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(argmax == 46 || argmax == 47, "{argmax}");
        }
    }

    #[test]
    fn frame_times_step_by_hop() {
        let b = AudioBuffer::silence(20_000, 1000).unwrap();
        let s = stft(&b, 100, 50).unwrap();
        let t = s.frame_times();
        assert_eq!(t[0], 0.05);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_over_bins() {
        let g = StftGeometry {
            window_len: 4,
            hop_len: 4,
            sample_rate: 8,
        };
        let s = Spectrogram::from_magnitudes(g, vec![0.0, 2.0, 4.0]).unwrap();
        assert_eq!(mean_magnitude(&s).values, vec![2.0]);
        let z = Spectrogram::from_magnitudes(g, vec![0.0; 9]).unwrap();
        assert_eq!(mean_magnitude(&z).values, vec![0.0; 3]);
    }

    #[test]
    fn kernel_length_is_odd() {
        assert_eq!(smoothing_kernel_len(2.0, 0.5), 5);
        assert_eq!(smoothing_kernel_len(2.0, 0.25), 9);
        assert_eq!(smoothing_kernel_len(0.01, 1.0), 1);
    }

    #[test]
    fn constant_stays_constant() {
        let e = smooth_hann(&env(vec![3.5; 40]), 1.0).unwrap();
        assert!(e.values.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn impulse_gives_unit_sum_hann_bump() {
        let mut v = vec![0.0; 41];
        v[20] = 1.0;
        let e = smooth_hann(&env(v), 0.9).unwrap();
        let sum: f64 = e.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let k = hann_kernel(9);
        for (j, w) in k.iter().enumerate() {
            assert!((e.values[16 + j] - w).abs() < 1e-15);
        }
        assert!(e.values[20] > e.values[19] && e.values[19] > e.values[18]);
    }

    /// Direct convolution with zero padding, only valid away from the edges.
    fn convolve_direct(x: &[f64], k: &[f64]) -> Vec<f64> {
        let h = k.len() / 2;
        (0..x.len())
            .map(|i| {
                (0..k.len())
                    .filter_map(|j| {
                        let idx = i as isize + j as isize - h as isize;
                        (idx >= 0 && (idx as usize) < x.len()).then(|| k[j] * x[idx as usize])
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn close_impulses_merge_into_one_maximum() {
        let mut v = vec![0.0; 60];
        v[28] = 1.0;
        v[32] = 1.0;
        let e = smooth_hann(&env(v.clone()), 1.5).unwrap();
        let oracle = convolve_direct(&v, &hann_kernel(15));
        for (a, b) in e.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        let maxima: Vec<usize> = (1..59)
            .filter(|&i| e.values[i] > e.values[i - 1] && e.values[i] >= e.values[i + 1])
            .collect();
        assert_eq!(maxima, vec![30]);
    }

    #[test]
    fn reflect_matches_numpy_reflect() {
        // numpy.pad([0,1,2,3], 3, mode="reflect") -> [3,2,1,0,1,2,3,2,1,0]
        let idx: Vec<usize> = (-3..7).map(|j| reflect(j, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    proptest! {
        #[test]
        fn smoothing_preserves_interior_mass(
            body in proptest::collection::vec(0.0f64..10.0, 1..80),
            span in 0.1f64..2.0,
        ) {
            let klen = smoothing_kernel_len(span, 0.1);
            let mut v = vec![0.0; klen];
            v.extend(&body);
            v.extend(vec![0.0; klen]);
            let before: f64 = v.iter().sum();
            let after: f64 = smooth_hann(&env(v.clone()), span).unwrap().values.iter().sum();
            prop_assert!((after - before).abs() <= 1e-9 * before.max(1e-300));
            prop_assert_eq!(smooth_hann(&env(v.clone()), span).unwrap().len(), v.len());
        }
    }
}
