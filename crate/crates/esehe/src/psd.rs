//! Welch power spectral density and band energy fractions.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided PSD estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// Units of the input squared per Hz.
    pub density: Vec<f64>,
    pub resolution: f64,
}

/// Welch estimate with a Hann window, 50% overlap and the segment mean
/// removed. `segment` is clamped to the series length.
pub fn welch(x: &[f64], fs: f64, segment: usize) -> Result<Psd> {
    if x.len() < 8 {
        return Err(Error::Precondition(format!("PSD needs at least 8 samples, got {}", x.len())));
    }
    if !(fs > 0.0) {
        return Err(Error::Precondition(format!("sample rate must be positive, got {fs}")));
    }
    let n = segment.clamp(8, x.len());
    let hop = (n / 2).max(1);
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0;
    while start + n <= x.len() {
        let seg = &x[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for (b, (v, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * u * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            // fold the negative frequencies, except DC and Nyquist
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let resolution = fs / n as f64;
    Ok(Psd {
        freqs: (0..bins).map(|k| k as f64 * resolution).collect(),
        density,
        resolution,
    })
}

impl Psd {
    /// Integrated power over `[lo, hi)` Hz.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, d)| d * self.resolution)
            .sum()
    }

    /// Total power excluding the DC bin.
    pub fn total_power(&self) -> f64 {
        self.band_power(0.5 * self.resolution, f64::INFINITY)
    }

    /// Fraction of the non-DC power inside `[lo, hi)`; zero for a flat
    /// signal.
    pub fn band_fraction(&self, lo: f64, hi: f64) -> f64 {
        let total = self.total_power();
        if total <= 0.0 {
            return 0.0;
        }
        self.band_power(lo.max(0.5 * self.resolution), hi) / total
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["freq_hz", "density"])?;
        for (f, d) in self.freqs.iter().zip(&self.density) {
            wr.write_record([f.to_string(), d.to_string()])?;
        }
        wr.flush().map_err(|e| Error::io("<psd>", e))?;
        Ok(())
    }
}

/// Band edges used for the three-way split check, Hz.
pub const LOW_EDGE_HZ: f64 = 1.0;
pub const HIGH_EDGE_HZ: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    /// EDL power above 10 Hz.
    pub edl_high: f64,
    /// ES power in [1, 10] Hz.
    pub es_mid: f64,
    /// Electrolytic load power below 1 Hz.
    pub load_low: f64,
}

pub fn split_fractions(edl: &[f64], es: &[f64], load: &[f64], fs: f64, segment: usize) -> Result<SplitFractions> {
    let edl = welch(edl, fs, segment)?;
    let es = welch(es, fs, segment)?;
    let load = welch(load, fs, segment)?;
    Ok(SplitFractions {
        edl_high: edl.band_fraction(HIGH_EDGE_HZ, f64::INFINITY),
        es_mid: es.band_fraction(LOW_EDGE_HZ, HIGH_EDGE_HZ + 1e-9),
        load_low: load.band_fraction(0.0, LOW_EDGE_HZ),
    })
}
