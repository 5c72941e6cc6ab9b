//! Shoebox image-source room simulation.
//!
//! Walls share one reflection coefficient `β = sqrt(1 − α)` with `α` from
//! Sabine's formula. Every image up to `max_image_order` reflections
//! contributes `β^order / (4π·d)` at delay `d / c`, placed with an 81-tap
//! Hann-windowed sinc. No air absorption, no directivity.

use ndarray::Array2;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::geometry::{MicArrayGeometry, SpeakerLocation3D, Vec3};
use crate::stft::ComplexSpectrogram;
use crate::{Error, Real, Result};

/// Half-width of the fractional-delay kernel; the kernel has `2·H + 1 = 81` taps.
pub const SINC_HALF_WIDTH: usize = 40;

/// Smallest room in the recorded living-room range, in meters.
pub const SMALL_ROOM: [f64; 3] = [3.2, 2.56, 2.54];
/// Largest room in the recorded living-room range, in meters.
pub const LARGE_ROOM: [f64; 3] = [5.2, 4.2, 2.8];

const SABINE_CONSTANT: f64 = 0.161;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec<T> {
    pub position: Vec3<T>,
    pub signal: Vec<T>,
}

/// A complete scene. Array mic positions are offsets (in room axes) from
/// `array_center`, where the camera sits.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig<T> {
    pub room_dims: Vec3<T>,
    pub rt60_s: T,
    pub max_image_order: usize,
    pub sources: Vec<SourceSpec<T>>,
    pub array: MicArrayGeometry<T>,
    pub array_center: Vec3<T>,
    pub noise_snr_db: Option<T>,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub speed_of_sound: T,
}

impl<T: Real> SceneConfig<T> {
    fn inside(&self, p: Vec3<T>) -> bool {
        let d = self.room_dims;
        p.x > T::zero() && p.y > T::zero() && p.z > T::zero() && p.x < d.x && p.y < d.y && p.z < d.z
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.room_dims;
        if !(d.is_finite() && d.x > T::zero() && d.y > T::zero() && d.z > T::zero()) {
            return Err(Error::InvalidInput("room dimensions must be positive".into()));
        }
        if !(self.rt60_s.is_finite() && self.rt60_s >= T::zero()) {
            return Err(Error::InvalidInput(format!("RT60 {} must be >= 0", self.rt60_s)));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > T::zero()) {
            return Err(Error::InvalidInput("speed of sound must be positive".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::InvalidInput("scene has no sources".into()));
        }
        let len = self.sources[0].signal.len();
        for (i, s) in self.sources.iter().enumerate() {
            if !self.inside(s.position) {
                return Err(Error::InvalidInput(format!("source {i} is outside the room")));
            }
            if s.signal.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "source {i} has {} samples, source 0 has {len}",
                    s.signal.len()
                )));
            }
            if s.signal.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("source {i} has non-finite samples")));
            }
        }
        if len == 0 {
            return Err(Error::InvalidInput("source signals are empty".into()));
        }
        for (m, p) in self.mic_room_positions().into_iter().enumerate() {
            if !self.inside(p) {
                return Err(Error::InvalidInput(format!("microphone {m} is outside the room")));
            }
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidInput("noise SNR must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.array.num_mics()
    }

    pub fn signal_len(&self) -> usize {
        self.sources.first().map_or(0, |s| s.signal.len())
    }

    pub fn mic_room_positions(&self) -> Vec<Vec3<T>> {
        self.array
            .mic_positions()
            .iter()
            .map(|&p| self.array_center + p)
            .collect()
    }

    /// Location of source `i` relative to the camera, in the array frame.
    pub fn source_location(&self, i: usize) -> Result<SpeakerLocation3D<T>> {
        self.array
            .point_to_location(self.sources[i].position - self.array_center)
    }

    /// Wall reflection coefficient, 0 for an anechoic scene.
    pub fn reflection_coefficient(&self) -> Result<T> {
        if self.rt60_s == T::zero() {
            return Ok(T::zero());
        }
        let alpha = sabine_absorption(self.room_dims, self.rt60_s);
        if alpha >= T::one() {
            return Err(Error::InfeasibleAbsorption {
                alpha: alpha.to_f64_lossy(),
                rt60_s: self.rt60_s.to_f64_lossy(),
            });
        }
        Ok((T::one() - alpha).sqrt())
    }

    fn effective_order(&self) -> usize {
        if self.rt60_s == T::zero() {
            0
        } else {
            self.max_image_order
        }
    }
}

/// `α = 0.161·V / (S·RT60)`.
pub fn sabine_absorption<T: Real>(room: Vec3<T>, rt60_s: T) -> T {
    let volume = room.x * room.y * room.z;
    let surface = T::lit(2.0) * (room.x * room.y + room.x * room.z + room.y * room.z);
    T::lit(SABINE_CONSTANT) * volume / (surface * rt60_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource<T> {
    pub position: Vec3<T>,
    pub order: usize,
    /// Signed reflection index per axis; `|r|` reflections on that axis.
    pub reflections: [i64; 3],
}

/// Every image of `source` with at most `max_order` wall reflections.
pub fn image_sources<T: Real>(room: Vec3<T>, source: Vec3<T>, max_order: usize) -> Vec<ImageSource<T>> {
    // Reflection index r: r = 0 is the source itself; |r| reflections;
    // image coordinate is s + 2nL for even r = 2n, −s + 2nL for odd r = 2n − 1.
    fn coord<T: Real>(r: i64, s: T, l: T) -> T {
        if r % 2 == 0 {
            s + T::lit(r as f64) * l
        } else {
            -s + T::lit((r + 1) as f64) * l
        }
    }
    let n = max_order as i64;
    let mut out = Vec::new();
    for rx in -n..=n {
        let ox = rx.unsigned_abs() as i64;
        for ry in -(n - ox)..=(n - ox) {
            let oy = ry.unsigned_abs() as i64;
            for rz in -(n - ox - oy)..=(n - ox - oy) {
                let oz = rz.unsigned_abs() as i64;
                out.push(ImageSource {
                    position: Vec3::new(
                        coord(rx, source.x, room.x),
                        coord(ry, source.y, room.y),
                        coord(rz, source.z, room.z),
                    ),
                    order: (ox + oy + oz) as usize,
                    reflections: [rx, ry, rz],
                });
            }
        }
    }
    out
}

/// Impulse response for one source/mic pair. `taps[i]` is the response at
/// time `i − delay_offset_samples` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir<T> {
    pub taps: Vec<T>,
    pub delay_offset_samples: usize,
    pub source_index: usize,
    pub mic_index: usize,
    /// Direct-path delay in (fractional) samples.
    pub direct_delay_samples: T,
}

impl<T: Real> Rir<T> {
    /// Identity response: output equals input.
    pub fn unit_impulse() -> Self {
        Rir {
            taps: vec![T::one()],
            delay_offset_samples: 0,
            source_index: 0,
            mic_index: 0,
            direct_delay_samples: T::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> T {
        self.taps.iter().map(|&x| x * x).sum()
    }

    /// Tap index of the direct-path arrival.
    pub fn direct_index(&self) -> usize {
        self.direct_delay_samples.round().to_usize().unwrap_or(0) + self.delay_offset_samples
    }
}

/// Hann-windowed sinc evaluated at offset `x` samples from the kernel centre.
fn windowed_sinc<T: Real>(x: T) -> T {
    let half = T::lit(SINC_HALF_WIDTH as f64 + 0.5);
    if x.abs() >= half {
        return T::zero();
    }
    let sinc = if x.abs() < T::lit(1e-12) {
        T::one()
    } else {
        let px = T::PI() * x;
        px.sin() / px
    };
    let w = T::lit(0.5) * (T::one() + (T::PI() * x / half).cos());
    sinc * w
}

/// Adds `amplitude` at fractional position `at` (already including the offset).
fn add_fractional_impulse<T: Real>(taps: &mut [T], at: T, amplitude: T) {
    let centre = at.round().to_i64().unwrap_or(0);
    let h = SINC_HALF_WIDTH as i64;
    for n in (centre - h)..=(centre + h) {
        if n < 0 || n as usize >= taps.len() {
            continue;
        }
        taps[n as usize] += amplitude * windowed_sinc(T::lit(n as f64) - at);
    }
}

/// Image-source impulse response from source `source_idx` to mic `mic_idx`.
pub fn simulate_rir<T: Real>(scene: &SceneConfig<T>, source_idx: usize, mic_idx: usize) -> Result<Rir<T>> {
    scene.validate()?;
    if source_idx >= scene.sources.len() || mic_idx >= scene.num_mics() {
        return Err(Error::InvalidInput(format!(
            "source {source_idx} / mic {mic_idx} out of range"
        )));
    }
    let beta = scene.reflection_coefficient()?;
    let mic = scene.mic_room_positions()[mic_idx];
    let src = scene.sources[source_idx].position;
    let fs = T::lit(scene.sample_rate_hz);
    let c = scene.speed_of_sound;
    let four_pi = T::lit(4.0) * T::PI();

    let images = image_sources(scene.room_dims, src, scene.effective_order());
    let arrivals: Vec<(T, T)> = images
        .iter()
        .filter_map(|im| {
            let gain = beta.powi(im.order as i32);
            if im.order > 0 && gain == T::zero() {
                return None;
            }
            let d = im.position.distance(mic);
            Some((d / c * fs, gain / (four_pi * d)))
        })
        .collect();

    let max_delay = arrivals.iter().fold(T::zero(), |a, &(d, _)| a.max(d));
    let offset = SINC_HALF_WIDTH;
    let len = max_delay.ceil().to_usize().unwrap_or(0) + 2 * SINC_HALF_WIDTH + 2;
    let mut taps = vec![T::zero(); len];
    for &(delay, amp) in &arrivals {
        add_fractional_impulse(&mut taps, delay + T::from_usize_lossy(offset), amp);
    }
    let direct = src.distance(mic) / c * fs;
    Ok(Rir {
        taps,
        delay_offset_samples: offset,
        source_index: source_idx,
        mic_index: mic_idx,
        direct_delay_samples: direct,
    })
}

/// All RIRs, indexed `[source][mic]`.
pub fn simulate_all_rirs<T: Real>(scene: &SceneConfig<T>) -> Result<Vec<Vec<Rir<T>>>> {
    (0..scene.sources.len())
        .map(|s| (0..scene.num_mics()).map(|m| simulate_rir(scene, s, m)).collect())
        .collect()
}

/// Linear convolution, FFT-based when both inputs are long.
pub fn convolve<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 64 {
        let mut out = vec![T::zero(); out_len];
        for (i, &x) in a.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let to_buf = |x: &[T]| {
        let mut v = vec![Complex::new(T::zero(), T::zero()); n];
        for (d, &s) in v.iter_mut().zip(x) {
            d.re = s;
        }
        v
    };
    let mut fa = to_buf(a);
    let mut fb = to_buf(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    inv.process(&mut fa);
    let scale = T::from_usize_lossy(n).recip();
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Filters `signal` through `rir`, aligned to physical time and truncated to
/// the input length.
pub fn apply_rir<T: Real>(signal: &[T], rir: &Rir<T>) -> Vec<T> {
    let full = convolve(signal, &rir.taps);
    (0..signal.len())
        .map(|n| full.get(n + rir.delay_offset_samples).copied().unwrap_or(T::zero()))
        .collect()
}

/// Everything a render produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender<T> {
    /// `[mic][sample]`, sources summed plus noise.
    pub mixture: Vec<Vec<T>>,
    /// `[source][mic][sample]`, each source's reverberant image.
    pub images: Vec<Vec<Vec<T>>>,
    pub rirs: Vec<Vec<Rir<T>>>,
}

fn render_internal<T: Real>(scene: &SceneConfig<T>) -> Result<SceneRender<T>> {
    scene.validate()?;
    let rirs = simulate_all_rirs(scene)?;
    let len = scene.signal_len();
    let longest = rirs.iter().flatten().map(Rir::len).max().unwrap_or(0);
    if len < longest {
        return Err(Error::SignalTooShort {
            signal_len: len,
            rir_len: longest,
        });
    }
    let images: Vec<Vec<Vec<T>>> = scene
        .sources
        .iter()
        .zip(&rirs)
        .map(|(src, per_mic)| per_mic.iter().map(|r| apply_rir(&src.signal, r)).collect())
        .collect();
    let mut mixture = vec![vec![T::zero(); len]; scene.num_mics()];
    for image in &images {
        for (acc, ch) in mixture.iter_mut().zip(image) {
            for (a, &x) in acc.iter_mut().zip(ch) {
                *a += x;
            }
        }
    }
    if let Some(snr) = scene.noise_snr_db {
        add_noise(&mut mixture, snr, scene.seed);
    }
    Ok(SceneRender { mixture, images, rirs })
}

/// Direct-path render of an anechoic scene (`rt60 = 0`).
pub fn render_anechoic<T: Real>(scene: &SceneConfig<T>) -> Result<Vec<Vec<T>>> {
    if scene.rt60_s != T::zero() {
        return Err(Error::InvalidInput(format!(
            "anechoic render needs rt60 = 0, got {}",
            scene.rt60_s
        )));
    }
    Ok(render_internal(scene)?.mixture)
}

/// Reverberant render: per-source per-mic RIR convolution, summed, plus noise.
pub fn render_scene<T: Real>(scene: &SceneConfig<T>) -> Result<Vec<Vec<T>>> {
    Ok(render_internal(scene)?.mixture)
}

/// Like [`render_scene`], also returning source images and RIRs.
pub fn render_scene_detailed<T: Real>(scene: &SceneConfig<T>) -> Result<SceneRender<T>> {
    render_internal(scene)
}

fn mean_power<T: Real>(x: &[T]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    x.iter().map(|&v| v * v).sum::<T>() / T::from_usize_lossy(x.len())
}

/// Adds independent white Gaussian noise to every channel, scaled so the SNR
/// measured at channel 0 equals `snr_db` exactly.
pub fn add_noise<T: Real>(mixture: &mut [Vec<T>], snr_db: T, seed: u64) {
    let Some(reference) = mixture.first() else {
        return;
    };
    let signal_power = mean_power(reference);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Vec<T>> = mixture
        .iter()
        .map(|ch| (0..ch.len()).map(|_| T::lit(StandardNormal.sample(&mut rng))).collect())
        .collect();
    let noise_power = mean_power(&noise[0]);
    if noise_power == T::zero() {
        return;
    }
    let target = signal_power / T::lit(10.0).powf(snr_db / T::lit(10.0));
    let gain = (target / noise_power).sqrt();
    for (ch, n) in mixture.iter_mut().zip(&noise) {
        for (x, &v) in ch.iter_mut().zip(n) {
            *x += v * gain;
        }
    }
}

/// SNR in dB of `noisy` against the clean reference.
pub fn measured_snr_db<T: Real>(clean: &[T], noisy: &[T]) -> T {
    let residual: Vec<T> = noisy.iter().zip(clean).map(|(&a, &b)| a - b).collect();
    T::lit(10.0) * (mean_power(clean) / mean_power(&residual)).log10()
}

/// Schroeder backward-integrated energy decay in dB relative to total energy.
pub fn schroeder_decay_db<T: Real>(taps: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    let mut tail: Vec<T> = taps
        .iter()
        .rev()
        .map(|&x| {
            acc += x * x;
            acc
        })
        .collect();
    tail.reverse();
    let total = tail.first().copied().unwrap_or(T::zero());
    tail.into_iter()
        .map(|e| {
            if total > T::zero() && e > T::zero() {
                T::lit(10.0) * (e / total).log10()
            } else {
                T::neg_infinity()
            }
        })
        .collect()
}

/// RT60 from a least-squares line through the Schroeder curve between −5 and
/// −25 dB, extrapolated to −60 dB. `None` if the curve never reaches −25 dB.
pub fn estimate_rt60<T: Real>(rir: &Rir<T>, sample_rate_hz: f64) -> Option<T> {
    let curve = schroeder_decay_db(&rir.taps);
    let (hi, lo) = (T::lit(-5.0), T::lit(-25.0));
    let pts: Vec<(T, T)> = curve
        .iter()
        .enumerate()
        .filter(|(_, &db)| db <= hi && db >= lo)
        .map(|(i, &db)| (T::from_usize_lossy(i) / T::lit(sample_rate_hz), db))
        .collect();
    if pts.len() < 2 || !curve.iter().any(|&d| d < lo) {
        return None;
    }
    let n = T::from_usize_lossy(pts.len());
    let mt = pts.iter().map(|p| p.0).sum::<T>() / n;
    let md = pts.iter().map(|p| p.1).sum::<T>() / n;
    let cov: T = pts.iter().map(|&(t, d)| (t - mt) * (d - md)).sum();
    let var: T = pts.iter().map(|&(t, _)| (t - mt) * (t - mt)).sum();
    let slope = cov / var;
    (slope < T::zero()).then(|| T::lit(-60.0) / slope)
}

/// Direct-to-reverberant energy ratio in dB; the direct part is the sinc
/// kernel span around the direct arrival.
pub fn direct_to_reverberant_db<T: Real>(rir: &Rir<T>) -> T {
    let centre = rir.direct_index();
    let lo = centre.saturating_sub(SINC_HALF_WIDTH);
    let hi = (centre + SINC_HALF_WIDTH + 1).min(rir.taps.len());
    let direct: T = rir.taps[lo..hi].iter().map(|&x| x * x).sum();
    let reverb = rir.energy() - direct;
    T::lit(10.0) * (direct / reverb.max(T::min_positive_value())).log10()
}

/// Oracle T-F labelling: each bin belongs to its most powerful source, or to
/// none when the total power is below the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceMask {
    labels: Array2<Option<usize>>,
    energy_floor_db: f64,
}

impl DominanceMask {
    pub fn from_labels(labels: Array2<Option<usize>>, energy_floor_db: f64) -> Self {
        DominanceMask {
            labels,
            energy_floor_db,
        }
    }

    /// Labels indexed `[bin, frame]`.
    pub fn labels(&self) -> &Array2<Option<usize>> {
        &self.labels
    }

    pub fn energy_floor_db(&self) -> f64 {
        self.energy_floor_db
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn count_labelled(&self, source: usize) -> usize {
        self.labels.iter().filter(|&&l| l == Some(source)).count()
    }

    pub fn count_unassigned(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Builds a [`DominanceMask`] from per-source spectrograms (channel 0 is the
/// reference mic). `floor_db ≤ 0` is relative to the peak total power.
pub fn dominance_mask<T: Real>(per_source_specs: &[ComplexSpectrogram<T>], floor_db: f64) -> Result<DominanceMask> {
    let first = per_source_specs
        .first()
        .ok_or_else(|| Error::InvalidInput("no source spectrograms".into()))?;
    if !(floor_db.is_finite() && floor_db <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "floor must be a non-positive level in dB, got {floor_db}"
        )));
    }
    let shape = (first.num_bins(), first.num_frames());
    for (i, s) in per_source_specs.iter().enumerate() {
        if (s.num_bins(), s.num_frames()) != shape {
            return Err(Error::DimensionMismatch(format!(
                "source {i} spectrogram is {:?}, source 0 is {shape:?}",
                (s.num_bins(), s.num_frames())
            )));
        }
    }
    let powers: Vec<Array2<T>> = per_source_specs.iter().map(|s| s.power(0)).collect();
    let mut total = Array2::<T>::zeros(shape);
    for p in &powers {
        total += p;
    }
    let peak = total.iter().fold(T::zero(), |a, &b| a.max(b));
    let threshold = peak * T::lit(10f64.powf(floor_db / 10.0));
    let labels = Array2::from_shape_fn(shape, |(f, t)| {
        let tot = total[[f, t]];
        if tot <= T::zero() || tot < threshold {
            return None;
        }
        powers
            .iter()
            .enumerate()
            .fold((0usize, T::neg_infinity()), |best, (i, p)| {
                if p[[f, t]] > best.1 {
                    (i, p[[f, t]])
                } else {
                    best
                }
            })
            .0
            .into()
    });
    Ok(DominanceMask {
        labels,
        energy_floor_db: floor_db,
    })
}

/// Sums channel `channel` power over sources into a single `[bin, frame]` map.
pub fn total_power<T: Real>(specs: &[ComplexSpectrogram<T>], channel: usize) -> Option<Array2<T>> {
    let mut it = specs.iter();
    let mut acc = it.next()?.power(channel);
    for s in it {
        acc += &s.power(channel);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{forward_stft, StftConfig, Window};
    use rand::Rng;

    fn scene(rt60: f64, order: usize, signals: Vec<Vec<f64>>, positions: Vec<[f64; 3]>) -> SceneConfig<f64> {
        SceneConfig {
            room_dims: Vec3::from_array(LARGE_ROOM),
            rt60_s: rt60,
            max_image_order: order,
            sources: signals
                .into_iter()
                .zip(positions)
                .map(|(signal, p)| SourceSpec {
                    position: Vec3::from_array(p),
                    signal,
                })
                .collect(),
            array: MicArrayGeometry::linear(4, 0.05).unwrap(),
            array_center: Vec3::new(2.6, 0.5, 1.2),
            noise_snr_db: None,
            sample_rate_hz: 16_000.0,
            seed: 7,
            speed_of_sound: 343.0,
        }
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn validation_errors() {
        let mut s = scene(0.0, 0, vec![vec![0.0; 100]], vec![[1.0, 2.0, 1.5]]);
        assert!(s.validate().is_ok());
        s.sources[0].position = Vec3::new(6.0, 1.0, 1.0);
        assert!(s.validate().is_err());
        let mut s = scene(0.0, 0, vec![vec![0.0; 100]], vec![[1.0, 2.0, 1.5]]);
        s.rt60_s = -0.1;
        assert!(s.validate().is_err());
        let mut s = scene(0.0, 0, vec![vec![0.0; 100]], vec![[1.0, 2.0, 1.5]]);
        s.array_center = Vec3::new(0.01, 0.5, 1.0);
        assert!(s.validate().is_err());
        let s = scene(
            0.0,
            0,
            vec![vec![0.0; 100], vec![0.0; 90]],
            vec![[1.0, 2.0, 1.5], [2.0, 2.0, 1.5]],
        );
        assert!(matches!(s.validate(), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn infeasible_absorption() {
        let s = scene(0.02, 3, vec![vec![0.0; 100]], vec![[1.0, 2.0, 1.5]]);
        assert!(matches!(
            simulate_rir(&s, 0, 0),
            Err(Error::InfeasibleAbsorption { .. })
        ));
    }

    #[test]
    fn order_zero_single_tap() {
        let s = scene(0.0, 0, vec![vec![0.0; 10]], vec![[1.3, 2.7, 1.6]]);
        let r = simulate_rir(&s, 0, 1).unwrap();
        let mic = s.mic_room_positions()[1];
        let d = s.sources[0].position.distance(mic);
        let delay = d / 343.0 * 16_000.0;
        assert!((r.direct_delay_samples - delay).abs() < 1e-12);
        let (peak_i, peak) = r
            .taps
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, &v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
        assert!((peak_i as f64 - r.delay_offset_samples as f64 - delay).abs() <= 0.5 + 1e-9);
        let expected = 1.0 / (4.0 * std::f64::consts::PI * d);
        // sinc sampled off-centre loses at most ~36% at half a sample
        assert!(peak <= expected * (1.0 + 1e-9) && peak >= 0.6 * expected);
        // band-limited interpolation preserves the DC gain
        let sum: f64 = r.taps.iter().sum();
        assert!((sum - expected).abs() < 0.01 * expected);
        assert!(r.direct_index().abs_diff(peak_i) <= 1);
    }

    #[test]
    fn first_order_images_match_mirror_oracle() {
        let s = scene(0.5, 1, vec![vec![0.0; 10]], vec![[1.3, 2.7, 1.6]]);
        let src = s.sources[0].position;
        let images = image_sources(s.room_dims, src, 1);
        assert_eq!(images.len(), 7);
        let l = s.room_dims;
        let mut oracle = vec![
            src,
            Vec3::new(-src.x, src.y, src.z),
            Vec3::new(2.0 * l.x - src.x, src.y, src.z),
            Vec3::new(src.x, -src.y, src.z),
            Vec3::new(src.x, 2.0 * l.y - src.y, src.z),
            Vec3::new(src.x, src.y, -src.z),
            Vec3::new(src.x, src.y, 2.0 * l.z - src.z),
        ];
        let mic = s.mic_room_positions()[0];
        let delay = |p: Vec3<f64>| p.distance(mic) / 343.0 * 16_000.0;
        let mut got: Vec<f64> = images.iter().map(|im| delay(im.position)).collect();
        let mut want: Vec<f64> = oracle.drain(..).map(delay).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1.0);
        }
        assert_eq!(images.iter().filter(|i| i.order == 1).count(), 6);
    }

    #[test]
    fn image_counts_follow_l1_ball() {
        for n in 0..6usize {
            let count = image_sources(Vec3::new(3.0, 4.0, 5.0), Vec3::new(1.0, 1.0, 1.0), n).len();
            let n = n as i64;
            assert_eq!(count as i64, (2 * n + 1) * (2 * n * n + 2 * n + 3) / 3);
        }
    }

    #[test]
    fn reverberant_rt60_matches_target() {
        let s = scene(0.4, 20, vec![vec![0.0; 10]], vec![[1.3, 2.7, 1.6]]);
        let r = simulate_rir(&s, 0, 0).unwrap();
        let est = estimate_rt60(&r, 16_000.0).unwrap();
        assert!((est - 0.4).abs() <= 0.25 * 0.4, "estimated {est}");
        let curve = schroeder_decay_db(&r.taps);
        assert!(curve
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 || w[1] == f64::NEG_INFINITY));
    }

    #[test]
    fn direct_to_reverberant_drops_with_rt60() {
        let pos = vec![[1.3, 2.7, 1.6]];
        let a = simulate_rir(&scene(0.2, 12, vec![vec![0.0; 10]], pos.clone()), 0, 0).unwrap();
        let b = simulate_rir(&scene(0.6, 12, vec![vec![0.0; 10]], pos), 0, 0).unwrap();
        assert!(direct_to_reverberant_db(&a) > direct_to_reverberant_db(&b));
    }

    #[test]
    fn reciprocity_of_direct_path() {
        let s = scene(0.0, 0, vec![vec![0.0; 10]], vec![[1.3, 2.7, 1.6]]);
        let mic = s.mic_room_positions()[2];
        let fwd = simulate_rir(&s, 0, 2).unwrap().direct_delay_samples / 16_000.0;
        // swap: the source sits where mic 2 was, and mic 2 where the source was
        let mut t = s.clone();
        t.sources[0].position = mic;
        t.array_center = s.array_center + (s.sources[0].position - mic);
        let bwd = simulate_rir(&t, 0, 2).unwrap().direct_delay_samples / 16_000.0;
        assert!((fwd - bwd).abs() < 1e-12);
    }

    #[test]
    fn convolve_matches_direct_sum() {
        let a = noise(1, 300);
        let b = noise(2, 200);
        let fast = convolve(&a, &b);
        let mut slow = vec![0.0; 499];
        for i in 0..300 {
            for j in 0..200 {
                slow[i + j] += a[i] * b[j];
            }
        }
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(convolve::<f64>(&[], &b).is_empty());
    }

    #[test]
    fn unit_impulse_rir_is_identity() {
        let x = noise(3, 500);
        assert_eq!(apply_rir(&x, &Rir::unit_impulse()), x);
    }

    #[test]
    fn anechoic_render_properties() {
        let zero = scene(0.0, 0, vec![vec![0.0; 4000]], vec![[1.3, 2.7, 1.6]]);
        assert!(render_anechoic(&zero).unwrap().iter().flatten().all(|&v| v == 0.0));

        let pos = vec![[1.3, 2.7, 1.6], [3.9, 2.2, 1.1]];
        let both = scene(0.0, 0, vec![noise(1, 4000), noise(2, 4000)], pos.clone());
        let one = scene(0.0, 0, vec![noise(1, 4000)], vec![pos[0]]);
        let two = scene(0.0, 0, vec![noise(2, 4000)], vec![pos[1]]);
        let (y, y1, y2) = (
            render_anechoic(&both).unwrap(),
            render_anechoic(&one).unwrap(),
            render_anechoic(&two).unwrap(),
        );
        for m in 0..4 {
            for n in 0..4000 {
                assert!((y[m][n] - y1[m][n] - y2[m][n]).abs() < 1e-12);
            }
        }
        let mut reverberant = one.clone();
        reverberant.rt60_s = 0.3;
        assert!(render_anechoic(&reverberant).is_err());
    }

    #[test]
    fn anechoic_tdoa_matches_geometry() {
        let s = scene(0.0, 0, vec![noise(4, 8000)], vec![[0.9, 2.9, 1.9]]);
        let y = render_anechoic(&s).unwrap();
        let mics = s.mic_room_positions();
        let src = s.sources[0].position;
        let (a, b) = (0, 3);
        let expected = (src.distance(mics[b]) - src.distance(mics[a])) / 343.0 * 16_000.0;
        // integer-lag cross-correlation peak, refined by a parabola
        let xc = |lag: i64| -> f64 { (200..7800).map(|n| y[a][n] * y[b][(n as i64 + lag) as usize]).sum() };
        let lags: Vec<(i64, f64)> = (-20..=20).map(|l| (l, xc(l))).collect();
        let (best, _) = lags
            .iter()
            .fold((0, f64::MIN), |acc, &(l, v)| if v > acc.1 { (l, v) } else { acc });
        assert!((best as f64 - expected).abs() <= 0.5 + 1e-9, "lag {best} vs {expected}");
    }

    #[test]
    fn signal_too_short() {
        let s = scene(0.6, 10, vec![noise(1, 500)], vec![[1.3, 2.7, 1.6]]);
        assert!(matches!(render_scene(&s), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn noise_meets_requested_snr() {
        let mut s = scene(0.3, 6, vec![noise(5, 16_000)], vec![[1.3, 2.7, 1.6]]);
        let clean = render_scene(&s).unwrap();
        s.noise_snr_db = Some(10.0);
        let noisy = render_scene(&s).unwrap();
        assert!((measured_snr_db(&clean[0], &noisy[0]) - 10.0).abs() < 0.5);
        assert!((measured_snr_db(&clean[2], &noisy[2]) - 10.0).abs() < 0.5);
        assert_eq!(render_scene(&s).unwrap(), noisy);
    }

    fn spec_of(x: Vec<f64>) -> ComplexSpectrogram<f64> {
        let cfg = StftConfig::new(16_000.0, 64, 32, 64, Window::Hann).unwrap();
        forward_stft(&[x], &cfg).unwrap()
    }

    #[test]
    fn dominance_mask_cases() {
        let a = spec_of(noise(1, 640));
        let silent = spec_of(vec![0.0; 640]);
        let mask = dominance_mask(&[a.clone(), silent.clone()], -200.0).unwrap();
        assert_eq!(mask.count_labelled(1), 0);
        assert_eq!(mask.count_labelled(0) + mask.count_unassigned(), 33 * mask.dim().1);

        let mut quiet_tail = noise(2, 640);
        quiet_tail[320..].iter_mut().for_each(|v| *v *= 1e-4);
        let b = spec_of(quiet_tail);
        let mask = dominance_mask(&[b.clone(), silent], -30.0).unwrap();
        assert!(mask.count_unassigned() > 0);
        let last = mask.dim().1 - 1;
        assert!(mask.labels().column(last).iter().all(|l| l.is_none()));

        let mask = dominance_mask(&[a.clone(), b.clone()], -40.0).unwrap();
        let total = mask.count_labelled(0) + mask.count_labelled(1) + mask.count_unassigned();
        assert_eq!(total, mask.dim().0 * mask.dim().1);

        let short = spec_of(noise(3, 320));
        assert!(dominance_mask(&[a.clone(), short], -30.0).is_err());
        assert!(dominance_mask(&[a], 3.0).is_err());
        assert!(dominance_mask::<f64>(&[], -30.0).is_err());
    }
}
