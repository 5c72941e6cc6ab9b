//! Seeded synthetic source signals for simulations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::Real;

/// Output RMS of every generator.
pub const TARGET_RMS: f64 = 0.1;

/// Generator description, as it appears in scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Voiced, syllable-gated harmonic source with slow pitch drift.
    Voice {
        f0_hz: f64,
        seed: u64,
    },
    WhiteNoise {
        seed: u64,
    },
    Silence,
}

impl SignalSpec {
    pub fn generate<T: Real>(&self, sample_rate_hz: f64, len: usize) -> Vec<T> {
        match *self {
            SignalSpec::Voice { f0_hz, seed } => harmonic_voice(sample_rate_hz, len, f0_hz, seed),
            SignalSpec::WhiteNoise { seed } => white_noise(len, seed),
            SignalSpec::Silence => vec![T::zero(); len],
        }
    }
}

fn normalise<T: Real>(x: Vec<f64>) -> Vec<T> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    let g = if rms > 0.0 { TARGET_RMS / rms } else { 0.0 };
    x.into_iter().map(|v| T::lit(v * g)).collect()
}

pub fn white_noise<T: Real>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normalise((0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// Speech-like harmonic signal: 1/h spectral tilt, vibrato, and on/off
/// syllables of 120 to 300 ms (about 75 % voiced).
pub fn harmonic_voice<T: Real>(sample_rate_hz: f64, len: usize, f0_hz: f64, seed: u64) -> Vec<T> {
    use std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_harm = ((0.45 * sample_rate_hz / f0_hz).floor() as usize).max(1);
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..TAU)).collect();
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_phase = rng.random_range(0.0..TAU);
    let drift = rng.random_range(-0.08..0.08);

    let mut envelope = Vec::with_capacity(len);
    while envelope.len() < len {
        let dur = (rng.random_range(0.12..0.30) * sample_rate_hz) as usize;
        let on = rng.random_bool(0.75);
        let level = if on { rng.random_range(0.5..1.0) } else { 0.0 };
        let ramp = (0.01 * sample_rate_hz) as usize;
        for i in 0..dur {
            let edge = (i.min(dur - i) as f64 / ramp as f64).min(1.0);
            envelope.push(level * edge);
        }
    }
    envelope.truncate(len);

    let mut phase = 0.0;
    let out = (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate_hz;
            let f0 = f0_hz * (1.0 + drift * (t * 0.5).sin() + 0.03 * (TAU * vib_rate * t + vib_phase).sin());
            phase += TAU * f0 / sample_rate_hz;
            let mut s = 0.0;
            for (h, p) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                if k * f0 >= 0.48 * sample_rate_hz {
                    break;
                }
                s += (k * phase + p).sin() / k;
            }
            s * envelope[n]
        })
        .collect();
    normalise(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalised() {
        let a: Vec<f64> = harmonic_voice(16_000.0, 16_000, 150.0, 3);
        let b: Vec<f64> = harmonic_voice(16_000.0, 16_000, 150.0, 3);
        assert_eq!(a, b);
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - TARGET_RMS).abs() < 1e-12);
        let c: Vec<f64> = harmonic_voice(16_000.0, 16_000, 150.0, 4);
        assert_ne!(a, c);
        let s: Vec<f32> = SignalSpec::Silence.generate(16_000.0, 10);
        assert!(s.iter().all(|&v| v == 0.0));
        let n: Vec<f64> = SignalSpec::WhiteNoise { seed: 1 }.generate(16_000.0, 1000);
        assert_eq!(n.len(), 1000);
    }
}
