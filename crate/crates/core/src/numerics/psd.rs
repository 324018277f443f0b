use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub segments: usize,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Index of the bin whose centre is closest to `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        let df = self.resolution();
        if df == 0.0 {
            return 0;
        }
        ((f / df).round() as usize).min(self.freqs.len() - 1)
    }

    pub fn value_at(&self, f: f64) -> f64 {
        self.power[self.bin_of(f)]
    }

    /// Rectangle-rule integral over all bins, comparable to the variance.
    pub fn integral(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution()
    }

    /// Power integrated over `[f - half_width, f + half_width]`.
    pub fn band_power(&self, f: f64, half_width: f64) -> f64 {
        let df = self.resolution();
        self.freqs
            .iter()
            .zip(&self.power)
            .filter(|(fr, _)| (**fr - f).abs() <= half_width + 1e-12)
            .map(|(_, p)| p * df)
            .sum()
    }

    /// Frequency of the largest bin, excluding DC.
    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .power
            .iter()
            .enumerate()
            .skip(1)
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        self.freqs[i]
    }
}

/// Averaged periodogram: Hann-tapered segments of `segment_len` samples with
/// 50 % overlap, per-segment mean removal, one-sided density scaling so that
/// the integral over frequency equals the signal variance.
pub fn psd_estimate(signal: &[f64], fs: f64, segment_len: usize) -> Result<Psd, NumericsError> {
    if !(fs > 0.0) {
        return Err(NumericsError::InvalidParameter(format!("sampling frequency must be positive, got {fs}")));
    }
    if segment_len < 4 {
        return Err(NumericsError::InvalidParameter("segment length must be at least 4".into()));
    }
    let hop = segment_len / 2;
    let needed = segment_len + hop;
    if signal.len() < needed {
        return Err(NumericsError::SignalTooShort { len: signal.len(), needed });
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment_len as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(segment_len);
    let nbins = segment_len / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let mut segments = 0;
    let mut start = 0;
    while start + segment_len <= signal.len() {
        let seg = &signal[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf[..nbins]) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * wpow * segments as f64);
    let power: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let one_sided = if i == 0 || (segment_len % 2 == 0 && i == nbins - 1) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..nbins).map(|i| i as f64 * fs / segment_len as f64).collect();
    Ok(Psd { freqs, power, segments })
}
