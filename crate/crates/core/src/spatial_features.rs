//! Phase-difference features and the complex covariance + steering input.
//!
//! Orientation conventions, shared by every function here:
//!
//! * `IPD_p = arg(Y_m1 · conj(Y_m2))`.
//! * `TPD_p = 2π · f_hz(k) · (d_m2 − d_m1) / c`, so a source at the
//!   hypothesised location produces `IPD ≈ TPD` and `SF ≈ +1`.
//! * `f_hz(k) = k · f_s / (2(F − 1))`, the physical centre of one-sided bin `k`.
//! * Steering vectors model propagation delays, `v_m = exp(−j·2π·f·(d_m − d_0)/c)`.

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex;

use crate::geometry::{MicArrayGeometry, SpeakerLocation3D};
use crate::room_sim::DominanceMask;
use crate::stft::{ComplexSpectrogram, StftConfig};
use crate::{Error, Real, Result};

/// Magnitude below which a T-F bin is treated as silent when computing IPD.
pub const SILENT_MAGNITUDE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Ipd,
    Tpd1d,
    Tpd3d,
}

/// Wrapped phases indexed `[pair, bin, frame]`, values in `(−π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap<T> {
    values: Array3<T>,
    kind: PhaseKind,
    pairs: Vec<(usize, usize)>,
    silent: Array3<bool>,
}

impl<T: Real> PhaseMap<T> {
    /// Wraps every value into `(−π, π]`.
    pub fn new(values: Array3<T>, kind: PhaseKind, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if values.dim().0 != pairs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} phase planes for {} pairs",
                values.dim().0,
                pairs.len()
            )));
        }
        let silent = Array3::from_elem(values.dim(), false);
        Ok(PhaseMap {
            values: values.mapv(Real::wrap_phase),
            kind,
            pairs,
            silent,
        })
    }

    pub fn values(&self) -> &Array3<T> {
        &self.values
    }

    pub fn kind(&self) -> PhaseKind {
        self.kind
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Bins where either channel of the pair was below [`SILENT_MAGNITUDE`].
    pub fn silent(&self) -> &Array3<bool> {
        &self.silent
    }

    /// `(pairs, bins, frames)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Per-bin spatial feature, indexed `[bin, frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatureMap<T> {
    values: Array2<T>,
    normalized: bool,
    num_pairs: usize,
    silent: Array2<bool>,
}

impl<T: Real> SpatialFeatureMap<T> {
    pub fn from_values(values: Array2<T>, normalized: bool, num_pairs: usize) -> Self {
        let silent = Array2::from_elem(values.dim(), false);
        SpatialFeatureMap {
            values,
            normalized,
            num_pairs,
            silent,
        }
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    /// Bins where any pair's IPD was undefined.
    pub fn silent(&self) -> &Array2<bool> {
        &self.silent
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Complex input indexed `[channel, bin, frame]` with `2M²` channels: the
/// row-major vectorised spatial covariance followed by the row-major
/// vectorised steering outer product.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexInputTensor<T> {
    data: Array3<Complex<T>>,
    num_mics: usize,
}

impl<T: Real> ComplexInputTensor<T> {
    pub fn new(data: Array3<Complex<T>>, num_mics: usize) -> Result<Self> {
        if data.dim().0 != 2 * num_mics * num_mics {
            return Err(Error::DimensionMismatch(format!(
                "{} channels, expected 2M² = {}",
                data.dim().0,
                2 * num_mics * num_mics
            )));
        }
        Ok(ComplexInputTensor { data, num_mics })
    }

    pub fn data(&self) -> &Array3<Complex<T>> {
        &self.data
    }

    pub fn num_mics(&self) -> usize {
        self.num_mics
    }

    /// `(channels, bins, frames)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Covariance entry `Φ_ij(f, t)`.
    pub fn covariance(&self, i: usize, j: usize, f: usize, t: usize) -> Complex<T> {
        self.data[[i * self.num_mics + j, f, t]]
    }

    /// Steering outer-product entry `v_i · conj(v_j)` at bin `f`, frame `t`.
    pub fn steering_outer(&self, i: usize, j: usize, f: usize, t: usize) -> Complex<T> {
        let m2 = self.num_mics * self.num_mics;
        self.data[[m2 + i * self.num_mics + j, f, t]]
    }

    /// Real parts stacked over imaginary parts, `[4M², F, T]`.
    pub fn real_imag_stacked(&self) -> Array3<T> {
        let re = self.data.mapv(|c| c.re);
        let im = self.data.mapv(|c| c.im);
        ndarray::concatenate(Axis(0), &[re.view(), im.view()]).expect("matching shapes")
    }

    /// `(real, imag)` as separate `[2M², F, T]` tensors.
    pub fn split(&self) -> (Array3<T>, Array3<T>) {
        (self.data.mapv(|c| c.re), self.data.mapv(|c| c.im))
    }
}

/// Unwrapped phase accumulated over a path-length difference at bin `k`.
fn path_phase<T: Real>(cfg: &StftConfig, k: usize, path_diff_m: T, speed_of_sound: T) -> T {
    T::TAU() * cfg.bin_hz::<T>(k) * path_diff_m / speed_of_sound
}

fn check_pairs(pairs: &[(usize, usize)], m: usize) -> Result<()> {
    for &(a, b) in pairs {
        if a >= m || b >= m || a == b {
            return Err(Error::InvalidInput(format!("pair ({a}, {b}) invalid for {m} channels")));
        }
    }
    Ok(())
}

/// Observed inter-channel phase difference for each pair.
pub fn compute_ipd<T: Real>(spec: &ComplexSpectrogram<T>, pairs: &[(usize, usize)]) -> Result<PhaseMap<T>> {
    check_pairs(pairs, spec.num_channels())?;
    let (f, t) = (spec.num_bins(), spec.num_frames());
    let mut values = Array3::zeros((pairs.len(), f, t));
    let mut silent = Array3::from_elem((pairs.len(), f, t), false);
    let data = spec.data();
    let eps = T::lit(SILENT_MAGNITUDE);
    for (p, &(a, b)) in pairs.iter().enumerate() {
        Zip::from(values.index_axis_mut(Axis(0), p))
            .and(silent.index_axis_mut(Axis(0), p))
            .and(data.index_axis(Axis(0), a))
            .and(data.index_axis(Axis(0), b))
            .for_each(|v, s, &y1, &y2| {
                if y1.norm() < eps || y2.norm() < eps {
                    *v = T::zero();
                    *s = true;
                } else {
                    *v = (y1 * y2.conj()).arg().wrap_phase();
                }
            });
    }
    Ok(PhaseMap {
        values,
        kind: PhaseKind::Ipd,
        pairs: pairs.to_vec(),
        silent,
    })
}

fn constant_over_frames<T: Real>(
    per_pair_bin: Array2<T>,
    n_frames: usize,
    kind: PhaseKind,
    pairs: Vec<(usize, usize)>,
) -> PhaseMap<T> {
    let (p, f) = per_pair_bin.dim();
    let values = Array3::from_shape_fn((p, f, n_frames), |(i, k, _)| per_pair_bin[[i, k]]);
    PhaseMap {
        silent: Array3::from_elem(values.dim(), false),
        values,
        kind,
        pairs,
    }
}

/// Target-dependent phase difference from the full 3D location.
pub fn compute_tpd_3d<T: Real>(
    geom: &MicArrayGeometry<T>,
    loc: &SpeakerLocation3D<T>,
    cfg: &StftConfig,
    n_frames: usize,
    speed_of_sound: T,
) -> PhaseMap<T> {
    let dists = geom.pair_distances(loc);
    let per = Array2::from_shape_fn((dists.len(), cfg.num_bins()), |(p, k)| {
        let (d1, d2) = dists[p];
        path_phase(cfg, k, d2 - d1, speed_of_sound).wrap_phase()
    });
    constant_over_frames(per, n_frames, PhaseKind::Tpd3d, geom.pairs().to_vec())
}

/// Far-field, azimuth-only phase difference for a collinear array:
/// `2π·f·(x_m1 − x_m2)·cosθa / c`.
pub fn compute_tpd_1d<T: Real>(
    geom: &MicArrayGeometry<T>,
    azimuth_rad: T,
    cfg: &StftConfig,
    n_frames: usize,
    speed_of_sound: T,
) -> Result<PhaseMap<T>> {
    if !geom.is_collinear() {
        return Err(Error::UnsupportedGeometry(
            "azimuth-only TPD needs all microphones on the array axis".into(),
        ));
    }
    let x = geom.axial_coordinates();
    let cos_a = azimuth_rad.cos();
    let pairs = geom.pairs();
    let per = Array2::from_shape_fn((pairs.len(), cfg.num_bins()), |(p, k)| {
        let (a, b) = pairs[p];
        path_phase(cfg, k, (x[a] - x[b]) * cos_a, speed_of_sound).wrap_phase()
    });
    Ok(constant_over_frames(per, n_frames, PhaseKind::Tpd1d, pairs.to_vec()))
}

/// `SF(f, t) = Σ_p ⟨e^{TPD_p}, e^{IPD_p}⟩`, optionally divided by `P`.
pub fn compute_sf<T: Real>(ipd: &PhaseMap<T>, tpd: &PhaseMap<T>, normalize: bool) -> Result<SpatialFeatureMap<T>> {
    if ipd.dim() != tpd.dim() {
        return Err(Error::DimensionMismatch(format!(
            "IPD {:?} vs TPD {:?}",
            ipd.dim(),
            tpd.dim()
        )));
    }
    if ipd.pairs != tpd.pairs {
        return Err(Error::DimensionMismatch("IPD and TPD pair lists differ".into()));
    }
    let (p, f, t) = ipd.dim();
    let mut values = Array2::zeros((f, t));
    let mut silent = Array2::from_elem((f, t), false);
    for pair in 0..p {
        Zip::from(&mut values)
            .and(&mut silent)
            .and(tpd.values.index_axis(Axis(0), pair))
            .and(ipd.values.index_axis(Axis(0), pair))
            .and(ipd.silent.index_axis(Axis(0), pair))
            .for_each(|v, s, &a, &b, &sil| {
                *v += embed_inner(a, b);
                *s |= sil;
            });
    }
    if normalize {
        let n = T::from_usize_lossy(p);
        values.mapv_inplace(|v| v / n);
    }
    Ok(SpatialFeatureMap {
        values,
        normalized: normalize,
        num_pairs: p,
        silent,
    })
}

/// `⟨[cos a, sin a], [cos b, sin b]⟩`, which equals `cos(a − b)`.
#[inline]
pub fn embed_inner<T: Real>(a: T, b: T) -> T {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    ca * cb + sa * sb
}

/// Steering vectors `[M, F]`, referenced to microphone 0.
pub fn steering_vector<T: Real>(
    geom: &MicArrayGeometry<T>,
    loc: &SpeakerLocation3D<T>,
    cfg: &StftConfig,
    speed_of_sound: T,
) -> Array2<Complex<T>> {
    let d = geom.mic_distances(loc);
    Array2::from_shape_fn((geom.num_mics(), cfg.num_bins()), |(m, k)| {
        if m == 0 {
            return Complex::new(T::one(), T::zero());
        }
        let phase = path_phase(cfg, k, d[m] - d[0], speed_of_sound);
        Complex::from_polar(T::one(), -phase)
    })
}

/// Covariance + steering complex input `[2M², F, T]`.
///
/// `Φ(f, t) = (1 − λ)·y yᴴ + λ·Φ(f, t − 1)` with `Φ(f, −1) = 0`; `λ = 0`
/// gives the instantaneous outer product.
pub fn assemble_complex_input<T: Real>(
    spec: &ComplexSpectrogram<T>,
    geom: &MicArrayGeometry<T>,
    loc: &SpeakerLocation3D<T>,
    smoothing: T,
    speed_of_sound: T,
) -> Result<ComplexInputTensor<T>> {
    let m = geom.num_mics();
    if spec.num_channels() != m {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has {} channels, geometry {m} microphones",
            spec.num_channels()
        )));
    }
    if !(smoothing >= T::zero() && smoothing < T::one()) {
        return Err(Error::InvalidInput(format!(
            "smoothing factor {smoothing} outside [0, 1)"
        )));
    }
    let (f, t) = (spec.num_bins(), spec.num_frames());
    let y = spec.data();
    let v = steering_vector(geom, loc, spec.config(), speed_of_sound);
    let m2 = m * m;
    let zero = Complex::new(T::zero(), T::zero());
    let mut data = Array3::from_elem((2 * m2, f, t), zero);
    let keep = T::one() - smoothing;
    for k in 0..f {
        for i in 0..m {
            for j in 0..m {
                let ch = i * m + j;
                let mut prev = zero;
                for frame in 0..t {
                    let inst = y[[i, k, frame]] * y[[j, k, frame]].conj();
                    let phi = inst * keep + prev * smoothing;
                    data[[ch, k, frame]] = phi;
                    prev = phi;
                }
                let outer = v[[i, k]] * v[[j, k]].conj();
                for frame in 0..t {
                    data[[m2 + ch, k, frame]] = outer;
                }
            }
        }
    }
    Ok(ComplexInputTensor { data, num_mics: m })
}

/// Mean SF over target-dominant bins minus mean SF over bins dominated by any
/// other source. Silent bins are ignored.
pub fn sf_contrast<T: Real>(sf: &SpatialFeatureMap<T>, mask: &DominanceMask, target: usize) -> Result<T> {
    if sf.dim() != mask.dim() {
        return Err(Error::DimensionMismatch(format!(
            "SF {:?} vs mask {:?}",
            sf.dim(),
            mask.dim()
        )));
    }
    let (mut st, mut nt, mut si, mut ni) = (T::zero(), 0usize, T::zero(), 0usize);
    Zip::from(&sf.values)
        .and(&sf.silent)
        .and(mask.labels())
        .for_each(|&v, &silent, &label| match label {
            _ if silent => {}
            Some(s) if s == target => {
                st += v;
                nt += 1;
            }
            Some(_) => {
                si += v;
                ni += 1;
            }
            None => {}
        });
    if nt == 0 {
        return Err(Error::EmptyClass("target-dominant"));
    }
    if ni == 0 {
        return Err(Error::EmptyClass("interferer-dominant"));
    }
    Ok(st / T::from_usize_lossy(nt) - si / T::from_usize_lossy(ni))
}

/// Mean SF over non-silent bins whose power is at least `rel_floor` times the
/// peak of `power` (e.g. `0.01` for bins within 20 dB of the peak).
pub fn mean_sf_above_power<T: Real>(sf: &SpatialFeatureMap<T>, power: &Array2<T>, rel_floor: T) -> Result<T> {
    if sf.dim() != power.dim() {
        return Err(Error::DimensionMismatch(format!(
            "SF {:?} vs power {:?}",
            sf.dim(),
            power.dim()
        )));
    }
    let peak = power.iter().fold(T::zero(), |a, &b| a.max(b));
    let thr = peak * rel_floor;
    let (mut sum, mut n) = (T::zero(), 0usize);
    Zip::from(&sf.values).and(&sf.silent).and(power).for_each(|&v, &s, &p| {
        if !s && p >= thr && p > T::zero() {
            sum += v;
            n += 1;
        }
    });
    if n == 0 {
        return Err(Error::EmptyClass("above-floor"));
    }
    Ok(sum / T::from_usize_lossy(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::stft::{forward_stft, Window};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

    fn spec_from(data: Array3<Complex<f64>>) -> ComplexSpectrogram<f64> {
        let cfg = StftConfig::new(16_000.0, 8, 8, 8, Window::Hann).unwrap();
        let frames = data.dim().2;
        ComplexSpectrogram::from_parts(data, cfg, 8 * frames).unwrap()
    }

    #[test]
    fn ipd_identical_channels_is_zero() {
        let d = Array3::from_shape_fn((2, 5, 3), |(_, k, t)| Complex::new(1.0 + k as f64, t as f64 - 1.0));
        let ipd = compute_ipd(&spec_from(d), &[(0, 1)]).unwrap();
        assert!(ipd.values().iter().all(|&v| v == 0.0));
        assert_eq!(ipd.kind(), PhaseKind::Ipd);
    }

    #[test]
    fn ipd_pure_rotation() {
        let rot = Complex::from_polar(1.0, FRAC_PI_3);
        let d = Array3::from_shape_fn((2, 5, 3), |(m, k, t)| {
            let y = Complex::new(0.3 + k as f64, 0.7 - t as f64);
            if m == 1 {
                y * rot
            } else {
                y
            }
        });
        let ipd = compute_ipd(&spec_from(d), &[(0, 1)]).unwrap();
        assert!(ipd.values().iter().all(|&v| (v + FRAC_PI_3).abs() < 1e-12));
    }

    #[test]
    fn ipd_flags_silent_bins_and_rejects_bad_pairs() {
        let mut d = Array3::from_elem((2, 5, 2), Complex::new(1.0, 1.0));
        d[[1, 2, 1]] = Complex::new(0.0, 0.0);
        let s = spec_from(d);
        let ipd = compute_ipd(&s, &[(0, 1)]).unwrap();
        assert!(ipd.silent()[[0, 2, 1]]);
        assert_eq!(ipd.values()[[0, 2, 1]], 0.0);
        assert_eq!(ipd.silent().iter().filter(|&&b| b).count(), 1);
        assert!(compute_ipd(&s, &[(0, 2)]).is_err());
        assert!(compute_ipd(&s, &[(1, 1)]).is_err());
    }

    #[test]
    fn ipd_of_integer_delay() {
        let cfg = StftConfig::new(16_000.0, 512, 128, 512, Window::Hann).unwrap();
        let k0 = 40usize;
        let f0 = cfg.bin_hz::<f64>(k0);
        let sig = |n: i64| (2.0 * PI * f0 * n as f64 / 16_000.0).sin();
        let x0: Vec<f64> = (0..4096).map(sig).collect();
        let x1: Vec<f64> = (0..4096).map(|n| sig(n - 8)).collect();
        let s = forward_stft(&[x0, x1], &cfg).unwrap();
        let ipd = compute_ipd(&s, &[(0, 1)]).unwrap();
        let expected = (2.0 * PI * f0 * 8.0 / 16_000.0).wrap_phase();
        for t in 0..s.num_frames() - 1 {
            assert!((ipd.values()[[0, k0, t]] - expected).wrap_phase().abs() < 1e-9);
        }
    }

    fn pair_geom(spacing: f64) -> MicArrayGeometry<f64> {
        MicArrayGeometry::linear(2, spacing).unwrap()
    }

    #[test]
    fn tpd3d_broadside_and_dc() {
        let cfg = StftConfig::default();
        let broadside = SpeakerLocation3D::new(FRAC_PI_2, 0.0, 1.7).unwrap();
        let g_sym =
            MicArrayGeometry::new(vec![Vec3::new(-0.1, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0)], None, None).unwrap();
        let tpd = compute_tpd_3d(&g_sym, &broadside, &cfg, 3, 343.0);
        assert!(tpd.values().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(tpd.kind(), PhaseKind::Tpd3d);

        let g = MicArrayGeometry::linear(4, 0.05).unwrap();
        let skew = SpeakerLocation3D::new(0.4, 0.2, 1.1).unwrap();
        let tpd = compute_tpd_3d(&g, &skew, &cfg, 2, 343.0);
        assert_eq!(tpd.dim(), (3, 257, 2));
        assert!(tpd.values().index_axis(Axis(1), 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tpd3d_nyquist_from_euclid_oracle() {
        let cfg = StftConfig::default();
        let g = pair_geom(0.1);
        let (a, d) = (FRAC_PI_4, 1.5);
        let loc = SpeakerLocation3D::new(a, 0.0, d).unwrap();
        let s = [d * a.cos(), d * a.sin(), 0.0];
        let dist = |x: f64| ((s[0] - x).powi(2) + s[1].powi(2) + s[2].powi(2)).sqrt();
        let (d1, d2) = (dist(-0.05), dist(0.05));
        let expected = (2.0 * PI * 8000.0 * (d2 - d1) / 343.0).wrap_phase();
        let tpd = compute_tpd_3d(&g, &loc, &cfg, 2, 343.0);
        for t in 0..2 {
            assert!((tpd.values()[[0, 256, t]] - expected).wrap_phase().abs() < 1e-9);
        }
    }

    #[test]
    fn tpd1d_cases() {
        let cfg = StftConfig::default();
        let g = pair_geom(0.05);
        let tpd = compute_tpd_1d(&g, FRAC_PI_2, &cfg, 2, 343.0).unwrap();
        assert!(tpd.values().iter().all(|v| v.abs() < 1e-12));
        // 1 kHz is bin 32 for a 512-point FFT at 16 kHz
        let tpd = compute_tpd_1d(&g, 0.0, &cfg, 2, 343.0).unwrap();
        // mic 0 sits at x = -0.025, so (x_0 - x_1) = -0.05
        let expected = (-2.0 * PI * 1000.0 * 0.05 / 343.0).wrap_phase();
        assert!((tpd.values()[[0, 32, 0]] - expected).abs() < 1e-12);
        let planar = MicArrayGeometry::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.1, 0.0, 0.0),
                Vec3::new(0.0, 0.1, 0.0),
            ],
            None,
            None,
        )
        .unwrap();
        assert!(matches!(
            compute_tpd_1d(&planar, 0.3, &cfg, 1, 343.0),
            Err(Error::UnsupportedGeometry(_))
        ));
    }

    #[test]
    fn tpd1d_is_far_field_limit_of_tpd3d() {
        let cfg = StftConfig::default();
        let g = MicArrayGeometry::linear(4, 0.05).unwrap();
        for &a in &[0.0, 0.3, 1.0, 1.9, 2.8, PI] {
            let far = SpeakerLocation3D::new(a, 0.0, 1e4).unwrap();
            let t3 = compute_tpd_3d(&g, &far, &cfg, 1, 343.0);
            let t1 = compute_tpd_1d(&g, a, &cfg, 1, 343.0).unwrap();
            let max = t3
                .values()
                .iter()
                .zip(t1.values())
                .map(|(x, y)| (x - y).wrap_phase().abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-3, "azimuth {a}: {max}");
        }
    }

    fn phase_map(v: Array3<f64>) -> PhaseMap<f64> {
        let pairs = (0..v.dim().0).map(|p| (p, p + 1)).collect();
        PhaseMap::new(v, PhaseKind::Ipd, pairs).unwrap()
    }

    #[test]
    fn sf_perfect_and_antiphase() {
        let a = Array3::from_shape_fn((2, 4, 3), |(p, f, t)| (p + f * 3 + t) as f64 * 0.37);
        let sf = compute_sf(&phase_map(a.clone()), &phase_map(a.clone()), true).unwrap();
        assert!(sf.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let raw = compute_sf(&phase_map(a.clone()), &phase_map(a.clone()), false).unwrap();
        assert!(raw.values().iter().all(|v| (v - 2.0).abs() < 1e-12));
        let b = a.mapv(|v| v + PI);
        let sf = compute_sf(&phase_map(a), &phase_map(b), true).unwrap();
        assert!(sf.values().iter().all(|v| (v + 1.0).abs() < 1e-12));
        assert!(sf.is_normalized());
    }

    #[test]
    fn sf_dimension_mismatch() {
        let a = phase_map(Array3::zeros((2, 4, 3)));
        let b = phase_map(Array3::zeros((2, 4, 2)));
        assert!(matches!(compute_sf(&a, &b, true), Err(Error::DimensionMismatch(_))));
        let c = PhaseMap::new(Array3::zeros((2, 4, 3)), PhaseKind::Tpd3d, vec![(0, 2), (1, 2)]).unwrap();
        assert!(compute_sf(&a, &c, true).is_err());
    }

    proptest! {
        #[test]
        fn cos_identity(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assert!((embed_inner(a, b) - (a - b).cos()).abs() < 1e-12);
        }

        #[test]
        fn sf_wrap_invariant(vals in proptest::collection::vec(-PI..PI, 12), shifts in proptest::collection::vec(-3i32..3, 12)) {
            let a = Array3::from_shape_vec((2, 3, 2), vals.clone()).unwrap();
            let b = Array3::from_shape_vec((2, 3, 2), vals.iter().map(|v| v * 0.5 + 0.1).collect()).unwrap();
            let shifted = Array3::from_shape_vec(
                (2, 3, 2),
                vals.iter().zip(&shifts).map(|(v, &s)| v + 2.0 * PI * s as f64).collect(),
            ).unwrap();
            let sf1 = compute_sf(&phase_map(b.clone()), &phase_map(a), true).unwrap();
            let sf2 = compute_sf(&phase_map(b), &phase_map(shifted), true).unwrap();
            for (x, y) in sf1.values().iter().zip(sf2.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn sf_monotone_in_agreement(tpd in -PI..PI, ipd in -PI..PI, frac in 0.0f64..1.0) {
            let delta = (tpd - ipd).wrap_phase();
            let closer = ipd + frac * delta;
            let t = phase_map(Array3::from_elem((1, 1, 1), tpd));
            let s0 = compute_sf(&phase_map(Array3::from_elem((1, 1, 1), ipd)), &t, true).unwrap();
            let s1 = compute_sf(&phase_map(Array3::from_elem((1, 1, 1), closer)), &t, true).unwrap();
            prop_assert!(s1.values()[[0, 0]] >= s0.values()[[0, 0]] - 1e-12);
        }

        #[test]
        fn sf_bounds(vals in proptest::collection::vec(-PI..PI, 24)) {
            let a = Array3::from_shape_vec((3, 4, 2), vals[..24].to_vec()).unwrap();
            let b = a.mapv(|v| (v * 1.7).sin() * 3.0);
            let n = compute_sf(&phase_map(a.clone()), &phase_map(b.clone()), true).unwrap();
            let r = compute_sf(&phase_map(a), &phase_map(b), false).unwrap();
            prop_assert!(n.values().iter().all(|v| v.abs() <= 1.0 + 1e-12));
            prop_assert!(r.values().iter().all(|v| v.abs() <= 3.0 + 1e-12));
        }
    }

    #[test]
    fn steering_reference_unit_modulus_and_tpd_consistency() {
        let cfg = StftConfig::default();
        let g = MicArrayGeometry::<f64>::linear(4, 0.04).unwrap();
        let loc = SpeakerLocation3D::new(1.1, 0.35, 1.3).unwrap();
        let v = steering_vector(&g, &loc, &cfg, 343.0);
        assert_eq!(v.dim(), (4, 257));
        for k in 0..257 {
            assert_eq!(v[[0, k]], Complex::new(1.0, 0.0));
            for m in 0..4 {
                assert!((v[[m, k]].norm() - 1.0).abs() < 1e-12);
            }
        }
        let tpd = compute_tpd_3d(&g, &loc, &cfg, 1, 343.0);
        for (p, &(a, b)) in g.pairs().iter().enumerate() {
            for k in 0..257 {
                // conj(v_m1)·v_m2 carries −TPD; v_m1·conj(v_m2) carries +TPD (the IPD orientation)
                let neg = (v[[a, k]].conj() * v[[b, k]]).arg();
                assert!((neg + tpd.values()[[p, k, 0]]).wrap_phase().abs() < 1e-12);
                let pos = (v[[a, k]] * v[[b, k]].conj()).arg();
                assert!((pos - tpd.values()[[p, k, 0]]).wrap_phase().abs() < 1e-12);
            }
        }
    }

    fn two_mic_spec() -> (ComplexSpectrogram<f64>, MicArrayGeometry<f64>, SpeakerLocation3D<f64>) {
        let cfg = StftConfig::new(16_000.0, 8, 4, 8, Window::Hann).unwrap();
        let data = Array3::from_shape_fn((2, 5, 3), |(m, k, t)| {
            Complex::new((m + 2 * k) as f64 * 0.1 - t as f64, (k * t) as f64 * 0.05 + m as f64)
        });
        let spec = ComplexSpectrogram::from_parts(data, cfg, 16).unwrap();
        let g = MicArrayGeometry::linear(2, 0.05).unwrap();
        let loc = SpeakerLocation3D::new(0.8, 0.1, 1.0).unwrap();
        (spec, g, loc)
    }

    #[test]
    fn complex_input_shape_and_hermitian() {
        let (spec, g, loc) = two_mic_spec();
        for lambda in [0.0, 0.6] {
            let x = assemble_complex_input(&spec, &g, &loc, lambda, 343.0).unwrap();
            assert_eq!(x.dim(), (8, 5, 3));
            for f in 0..5 {
                for t in 0..3 {
                    for i in 0..2 {
                        for j in 0..2 {
                            assert!((x.covariance(i, j, f, t) - x.covariance(j, i, f, t).conj()).norm() < 1e-9);
                            assert!(
                                (x.steering_outer(i, j, f, t) - x.steering_outer(j, i, f, t).conj()).norm() < 1e-12
                            );
                        }
                    }
                }
            }
        }
        assert!(assemble_complex_input(&spec, &g, &loc, 1.0, 343.0).is_err());
        let g3 = MicArrayGeometry::linear(3, 0.05).unwrap();
        assert!(assemble_complex_input(&spec, &g3, &loc, 0.0, 343.0).is_err());
    }

    #[test]
    fn complex_input_recursive_smoothing() {
        let (spec, g, loc) = two_mic_spec();
        let x = assemble_complex_input(&spec, &g, &loc, 0.5, 343.0).unwrap();
        let y = spec.data();
        let inst = |t: usize| y[[0, 2, t]] * y[[1, 2, t]].conj();
        let phi0 = inst(0) * 0.5;
        let phi1 = inst(1) * 0.5 + phi0 * 0.5;
        assert!((x.covariance(0, 1, 2, 1) - phi1).norm() < 1e-12);
        let stacked = x.real_imag_stacked();
        assert_eq!(stacked.dim(), (16, 5, 3));
        assert_eq!(stacked[[9, 2, 1]], x.data()[[1, 2, 1]].im);
    }

    #[test]
    fn contrast_basic_cases() {
        let labels = Array2::from_shape_fn((4, 2), |(f, _)| match f {
            0 | 1 => Some(0),
            2 => Some(1),
            _ => None,
        });
        let mask = DominanceMask::from_labels(labels, -30.0);
        let sf = Array2::<f64>::from_shape_fn((4, 2), |(f, _)| if f < 2 { 1.0 } else { -1.0 });
        let sf = SpatialFeatureMap::from_values(sf, true, 2);
        assert!((sf_contrast(&sf, &mask, 0).unwrap() - 2.0).abs() < 1e-15);
        let flat = SpatialFeatureMap::from_values(Array2::<f64>::from_elem((4, 2), 0.3), true, 2);
        assert!(sf_contrast(&flat, &mask, 0).unwrap().abs() < 1e-15);

        let one_class = DominanceMask::from_labels(Array2::from_elem((4, 2), Some(0)), -30.0);
        assert!(matches!(sf_contrast(&flat, &one_class, 0), Err(Error::EmptyClass(_))));
        assert!(matches!(sf_contrast(&flat, &one_class, 1), Err(Error::EmptyClass(_))));
        let small = SpatialFeatureMap::from_values(Array2::<f64>::zeros((3, 2)), true, 2);
        assert!(sf_contrast(&small, &mask, 0).is_err());
    }

    #[test]
    fn mean_sf_respects_power_floor() {
        let sf = SpatialFeatureMap::from_values(
            Array2::<f64>::from_shape_vec((2, 2), vec![1.0, 0.0, -1.0, 0.5]).unwrap(),
            true,
            1,
        );
        let power = Array2::from_shape_vec((2, 2), vec![100.0, 0.5, 2.0, 50.0]).unwrap();
        let m = mean_sf_above_power(&sf, &power, 0.01).unwrap();
        assert!((m - (1.0 - 1.0 + 0.5) / 3.0).abs() < 1e-15);
    }
}
