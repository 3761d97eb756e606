//! Short-time magnitude spectrogram with a Hamming window.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    pub sample_rate: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
    /// One-sided spectral coefficients per frame; the FFT length is `2·(points−1)`.
    pub spectral_points: usize,
    /// Apply `log(1 + |X|)`; otherwise raw magnitudes.
    pub log_compress: bool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            sample_rate: 16_000.0,
            window_ms: 20.0,
            hop_ms: 10.0,
            spectral_points: 251,
            log_compress: true,
        }
    }
}

impl SpectrogramConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate * self.hop_ms / 1000.0).round() as usize
    }

    pub fn fft_len(&self) -> usize {
        2 * (self.spectral_points - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !(self.window_ms > 0.0) || !(self.hop_ms > 0.0) {
            return Err(Error::Config("sample rate, window and hop must be positive".into()));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::Config("hop must not exceed the window".into()));
        }
        if self.spectral_points < 2 {
            return Err(Error::Config("spectral_points must be at least 2".into()));
        }
        if self.window_samples() == 0 || self.hop_samples() == 0 {
            return Err(Error::Config("window or hop rounds to zero samples".into()));
        }
        if self.window_samples() > self.fft_len() {
            return Err(Error::Config(format!(
                "window of {} samples exceeds FFT length {}",
                self.window_samples(),
                self.fft_len()
            )));
        }
        Ok(())
    }

    /// `floor((n − win)/hop) + 1`, or `None` when the signal is shorter than a window.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        let (win, hop) = (self.window_samples(), self.hop_samples());
        (n >= win).then(|| (n - win) / hop + 1)
    }
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided magnitude spectrum of `frame` zero-padded to `fft_len`
/// (`fft_len/2 + 1` values). No window is applied.
pub fn magnitude_spectrum(frame: &[f64], fft_len: usize) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    fft.process(&mut buf);
    buf[..fft_len / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// `[frames×spectral_points]` spectrogram of a mono signal.
pub fn spectrogram(samples: &[f64], cfg: &SpectrogramConfig) -> Result<Tensor> {
    cfg.validate()?;
    let frames = cfg.frame_count(samples.len()).ok_or_else(|| {
        Error::Config(format!(
            "signal of {} samples is shorter than one {}-sample window",
            samples.len(),
            cfg.window_samples()
        ))
    })?;
    let (win, hop, nfft) = (cfg.window_samples(), cfg.hop_samples(), cfg.fft_len());
    let window = hamming(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut out = Tensor::zeros(&[frames, cfg.spectral_points]);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for f in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (k, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            b.re = samples[f * hop + k] * w;
        }
        fft.process(&mut buf);
        for (o, c) in out.row_mut(f).iter_mut().zip(&buf) {
            let m = c.norm();
            *o = if cfg.log_compress { m.ln_1p() } else { m };
        }
    }
    out.ensure_finite("spectrogram")?;
    Ok(out)
}
