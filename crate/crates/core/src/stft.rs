//! Multi-channel short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frame `t` covers samples `[t·hop, t·hop + win_length)`. The final partial
//! frame is zero padded; there is no centring or reflection padding, so frame
//! and sample indices line up exactly. Spectra are one-sided with the Nyquist
//! bin at `F − 1`.

use ndarray::Array3;
use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    SqrtHann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        let len = T::from_usize_lossy(n);
        (0..n)
            .map(|i| {
                let x = T::TAU() * T::from_usize_lossy(i) / len;
                let hann = T::lit(0.5) - T::lit(0.5) * x.cos();
                match self {
                    Window::Hann => hann,
                    Window::SqrtHann => hann.max(T::zero()).sqrt(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate_hz: f64,
    pub win_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl Default for StftConfig {
    /// 25 ms window, 10 ms hop at 16 kHz, 512-point FFT.
    fn default() -> Self {
        StftConfig {
            sample_rate_hz: 16_000.0,
            win_length: 400,
            hop: 160,
            fft_size: 512,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn new(sample_rate_hz: f64, win_length: usize, hop: usize, fft_size: usize, window: Window) -> Result<Self> {
        let cfg = StftConfig {
            sample_rate_hz,
            win_length,
            hop,
            fft_size,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.fft_size {
            return Err(Error::InvalidInput(format!(
                "require 0 < hop <= win_length <= fft_size, got {}/{}/{}",
                self.hop, self.win_length, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::InvalidInput(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Bin centre frequency, `k · f_s / (2(F − 1))`.
    pub fn bin_hz<T: Real>(&self, k: usize) -> T {
        let f = self.num_bins();
        T::from_usize_lossy(k) * T::lit(self.sample_rate_hz) / T::from_usize_lossy(2 * (f - 1))
    }

    /// Frame count for a signal of `len` samples, partial last frame included.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.win_length {
            1
        } else {
            1 + (len - self.win_length).div_ceil(self.hop)
        }
    }
}

/// One-sided complex spectra indexed `[channel, bin, frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    data: Array3<Complex<T>>,
    config: StftConfig,
    signal_len: usize,
}

impl<T: Real> ComplexSpectrogram<T> {
    /// Wraps existing spectra. `signal_len` is the time-domain length that
    /// synthesis reproduces.
    pub fn from_parts(data: Array3<Complex<T>>, config: StftConfig, signal_len: usize) -> Result<Self> {
        config.validate()?;
        let (_, f, t) = data.dim();
        if f != config.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "{f} bins but fft_size {} implies {}",
                config.fft_size,
                config.num_bins()
            )));
        }
        if t != config.num_frames(signal_len) {
            return Err(Error::DimensionMismatch(format!(
                "{t} frames inconsistent with a {signal_len}-sample signal"
            )));
        }
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidInput("non-finite spectrogram value".into()));
        }
        Ok(ComplexSpectrogram {
            data,
            config,
            signal_len,
        })
    }

    pub fn data(&self) -> &Array3<Complex<T>> {
        &self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().2
    }

    /// `|Y_m(f, t)|²` for one channel, indexed `[bin, frame]`.
    pub fn power(&self, channel: usize) -> ndarray::Array2<T> {
        self.data.index_axis(ndarray::Axis(0), channel).mapv(|c| c.norm_sqr())
    }
}

fn check_wave<T>(wave: &[Vec<T>]) -> Result<usize> {
    let first = wave.first().ok_or_else(|| Error::InvalidInput("no channels".into()))?;
    let len = first.len();
    if len == 0 {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if let Some((i, c)) = wave.iter().enumerate().find(|(_, c)| c.len() != len) {
        return Err(Error::DimensionMismatch(format!(
            "channel {i} has {} samples, channel 0 has {len}",
            c.len()
        )));
    }
    Ok(len)
}

/// Analysis of every channel with the configured window.
pub fn forward_stft<T: Real>(wave: &[Vec<T>], cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    cfg.validate()?;
    let len = check_wave(wave)?;
    if len < cfg.win_length {
        return Err(Error::InvalidInput(format!(
            "signal of {len} samples is shorter than the {}-sample window",
            cfg.win_length
        )));
    }
    if wave.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let n_frames = cfg.num_frames(len);
    let n_bins = cfg.num_bins();
    let window = cfg.window.coefficients::<T>(cfg.win_length);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.fft_size);
    let mut data = Array3::from_elem((wave.len(), n_bins, n_frames), Complex::new(T::zero(), T::zero()));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];

    for (m, channel) in wave.iter().enumerate() {
        for t in 0..n_frames {
            let start = t * cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
            for (i, &w) in window.iter().enumerate() {
                if let Some(&x) = channel.get(start + i) {
                    buf[i] = Complex::new(x * w, T::zero());
                }
            }
            fft.process(&mut buf);
            for k in 0..n_bins {
                data[[m, k, t]] = buf[k];
            }
        }
    }
    Ok(ComplexSpectrogram {
        data,
        config: *cfg,
        signal_len: len,
    })
}

/// Weighted overlap-add synthesis, normalised by the summed squared window.
///
/// Samples whose summed squared window falls below `1e-10` (the outer edge
/// of the first and last frames) are set to zero.
pub fn inverse_stft<T: Real>(spec: &ComplexSpectrogram<T>) -> Result<Vec<Vec<T>>> {
    let cfg = spec.config;
    cfg.validate()?;
    let (n_ch, n_bins, n_frames) = spec.data.dim();
    if n_bins != cfg.num_bins() || n_frames != cfg.num_frames(spec.signal_len) {
        return Err(Error::DimensionMismatch(
            "spectrogram shape inconsistent with its configuration".into(),
        ));
    }
    let n = cfg.fft_size;
    let window = cfg.window.coefficients::<T>(cfg.win_length);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let padded_len = (n_frames - 1) * cfg.hop + cfg.win_length;
    let scale = T::from_usize_lossy(n).recip();

    let mut norm = vec![T::zero(); padded_len];
    for t in 0..n_frames {
        for (i, &w) in window.iter().enumerate() {
            norm[t * cfg.hop + i] += w * w;
        }
    }

    let mut out = Vec::with_capacity(n_ch);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for m in 0..n_ch {
        let mut acc = vec![T::zero(); padded_len];
        for t in 0..n_frames {
            for (k, b) in buf.iter_mut().enumerate().take(n_bins) {
                *b = spec.data[[m, k, t]];
            }
            // Hermitian extension of the one-sided spectrum
            buf[0].im = T::zero();
            buf[n / 2].im = T::zero();
            for k in 1..n / 2 {
                buf[n - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            for (i, &w) in window.iter().enumerate() {
                acc[t * cfg.hop + i] += buf[i].re * scale * w;
            }
        }
        let floor = T::lit(1e-10);
        let channel: Vec<T> = acc
            .iter()
            .zip(&norm)
            .take(spec.signal_len)
            .map(|(&a, &d)| if d > floor { a / d } else { T::zero() })
            .collect();
        out.push(channel);
    }
    Ok(out)
}
