//! Self-checks run by `spatialfeat verify` and the acceptance suite.
//!
//! Every check computes its reference independently of the code under test
//! (explicit Cartesian geometry, direct complex arithmetic, mirror images,
//! finite differences) and reports the worst deviation against a threshold.

use anyhow::Result;
use ndarray::{Array3, Array4};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spatialfeat::complex_embed::{self, Activation, ComplexConvLayer, EmbedConfig, Variant};
use spatialfeat::geometry::{GeometryConfig, MicArrayGeometry, SpeakerLocation3D, Vec3};
use spatialfeat::room_sim::{estimate_rt60, image_sources, simulate_rir, SceneConfig, SourceSpec, LARGE_ROOM};
use spatialfeat::spatial_features::ComplexInputTensor;
use spatialfeat::stft::{forward_stft, inverse_stft, StftConfig};
use spatialfeat::swap_sampler::{
    branch_stats, homogeneity_violations, plan_epoch, DatasetItem, DatasetMeta, Eligibility, PlanOptions,
};

use crate::pipeline::{simulate_and_analyze, Fault, FeatureOptions, TpdKind};
use crate::scene::preset;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured quantity compared against `threshold`.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            value,
            threshold,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: value={:.6e} threshold={:.6e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

/// `pair_distances` against distances from explicitly constructed Cartesian
/// positions, on random arrays with a prescribed axis.
pub fn geometry_oracle(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(2..=6);
        let raw: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-0.2..0.2)))
            .collect();
        let az_axis: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let tilt: f64 = rng.random_range(-0.5..0.5);
        let axis = [az_axis.cos() * tilt.cos(), az_axis.sin() * tilt.cos(), tilt.sin()];
        let pairs: Vec<[usize; 2]> = (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| [a, b]))
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let pairs = if pairs.is_empty() { vec![[0, 1]] } else { pairs };
        let geom = MicArrayGeometry::<f64>::from_config(&GeometryConfig {
            mic_positions: raw.clone(),
            pairs: Some(pairs.clone()),
            array_axis: Some(axis),
        })?;
        let loc = SpeakerLocation3D::new(
            rng.random_range(0.0..=std::f64::consts::PI),
            rng.random_range(-1.4..1.4),
            rng.random_range(0.3..5.0),
        )?;

        // Oracle frame: e1 along the axis, e3 the world vertical made
        // orthogonal to e1, e2 = e3 × e1. The camera is the mic centroid.
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let norm = |a: [f64; 3]| dot(a, a).sqrt();
        let e1 = axis.map(|v| v / norm(axis));
        let up = [0.0, 0.0, 1.0];
        let k = dot(up, e1);
        let e3 = [up[0] - k * e1[0], up[1] - k * e1[1], up[2] - k * e1[2]];
        let e3 = e3.map(|v| v / norm(e3));
        let e2 = [
            e3[1] * e1[2] - e3[2] * e1[1],
            e3[2] * e1[0] - e3[0] * e1[2],
            e3[0] * e1[1] - e3[1] * e1[0],
        ];
        let (a, e, d) = (loc.azimuth(), loc.elevation(), loc.distance());
        let (c1, c2, c3) = (d * e.cos() * a.cos(), d * e.cos() * a.sin(), d * e.sin());
        let centroid: [f64; 3] = std::array::from_fn(|j| raw.iter().map(|p| p[j]).sum::<f64>() / n as f64);
        let speaker: [f64; 3] = std::array::from_fn(|j| centroid[j] + c1 * e1[j] + c2 * e2[j] + c3 * e3[j]);
        let euclid = |m: usize| {
            let p = raw[m];
            ((p[0] - speaker[0]).powi(2) + (p[1] - speaker[1]).powi(2) + (p[2] - speaker[2]).powi(2)).sqrt()
        };
        for (&[m1, m2], (d1, d2)) in pairs.iter().zip(geom.pair_distances(&loc)) {
            worst = worst.max((d1 - euclid(m1)).abs()).max((d2 - euclid(m2)).abs());
        }
    }
    let threshold = 1e-9;
    Ok(CheckResult::new(
        "geometry_oracle",
        worst < threshold,
        worst,
        threshold,
        format!("{cases} random (array, location) cases, max |Δd| in m"),
    ))
}

/// Relative L2 error of analysis followed by synthesis, default framing.
pub fn stft_round_trip(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = StftConfig::default();
    let x: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = inverse_stft(&forward_stft(&x, &cfg)?)?;
    // Interior only: half a window is dropped at each edge.
    let edge = cfg.win_length / 2;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in x.iter().zip(&y) {
        for i in edge..a.len() - edge {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += a[i] * a[i];
        }
    }
    let err = (num / den).sqrt();
    let threshold = 1e-6;
    Ok(CheckResult::new(
        "stft_round_trip",
        err < threshold,
        err,
        threshold,
        "4 channels x 1 s white noise, relative L2 error excluding half a window at each edge".into(),
    ))
}

/// Direct complex-arithmetic 2D convolution with zero padding.
fn complex_conv_reference(
    w: &Array4<Complex<f64>>,
    x: &Array3<Complex<f64>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Array3<Complex<f64>> {
    let (co_n, ci_n, kh, kw) = w.dim();
    let (_, h, wd) = x.dim();
    let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let wo = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    Array3::from_shape_fn((co_n, ho, wo), |(co, i, j)| {
        let mut acc = Complex::new(0.0, 0.0);
        for ci in 0..ci_n {
            for a in 0..kh {
                for b in 0..kw {
                    let hi = (i * stride.0 + a) as isize - pad.0 as isize;
                    let wj = (j * stride.1 + b) as isize - pad.1 as isize;
                    if hi >= 0 && wj >= 0 && (hi as usize) < h && (wj as usize) < wd {
                        acc += w[[co, ci, a, b]] * x[[ci, hi as usize, wj as usize]];
                    }
                }
            }
        }
        acc
    })
}

/// Cross-product layer (identity activation) against complex arithmetic on
/// random small instances.
pub fn complex_conv_oracle(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (co, ci) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(kh..=9), rng.random_range(kw..=9));
        let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
        let pad = (rng.random_range(0..=1), rng.random_range(0..=1));
        let mut u = || rng.random_range(-1.0..1.0);
        let wc = Array4::from_shape_fn((co, ci, kh, kw), |_| Complex::new(u(), u()));
        let xc = Array3::from_shape_fn((ci, h, w), |_| Complex::new(u(), u()));
        let layer = ComplexConvLayer::new(wc.mapv(|c| c.re), wc.mapv(|c| c.im), stride, pad, Activation::Identity)?;
        let (r, i) = complex_embed::complex_conv2d_forward(&layer, &xc.mapv(|c| c.re), &xc.mapv(|c| c.im))?;
        let expect = complex_conv_reference(&wc, &xc, stride, pad);
        for (ix, e) in expect.indexed_iter() {
            worst = worst.max((r[ix] - e.re).abs()).max((i[ix] - e.im).abs());
        }
    }
    let threshold = 1e-10;
    Ok(CheckResult::new(
        "complex_conv_oracle",
        worst < threshold,
        worst,
        threshold,
        format!("{instances} random instances, max abs deviation"),
    ))
}

/// Small embedder configuration used for gradient checks.
pub fn grad_check_config(variant: Variant) -> EmbedConfig {
    let mut cfg = EmbedConfig::new(variant, 3).with_channels(4);
    cfg.layers[1].channels = 3;
    cfg
}

/// A random complex input with Hermitian covariance blocks and unit-modulus
/// steering blocks, `M = 2`, `F = 9`, `T = 8`.
pub fn random_complex_input(seed: u64) -> Result<ComplexInputTensor<f64>> {
    let (m, f, t) = (2usize, 9usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<Complex<f64>> = (0..m * f * t)
        .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let v: Vec<Complex<f64>> = (0..m * f)
        .map(|_| Complex::from_polar(1.0, rng.random_range(-3.1..3.1)))
        .collect();
    let data = Array3::from_shape_fn((2 * m * m, f, t), |(ch, k, n)| {
        let (block, ij) = (ch / (m * m), ch % (m * m));
        let (i, j) = (ij / m, ij % m);
        if block == 0 {
            y[(i * f + k) * t + n] * y[(j * f + k) * t + n].conj()
        } else {
            v[i * f + k] * v[j * f + k].conj()
        }
    });
    Ok(ComplexInputTensor::new(data, m)?)
}

/// Analytic gradients of all three variants against central differences.
pub fn gradient_check(seeds: std::ops::Range<u64>) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let (mut params, mut kinks) = (0usize, 0usize);
    for seed in seeds.clone() {
        let input = random_complex_input(seed)?;
        for variant in [Variant::Naive, Variant::Separate, Variant::CrossProduct] {
            let r = complex_embed::grad_check(&grad_check_config(variant), &input, seed)?;
            worst = worst.max(r.max_rel_error);
            params += r.num_params;
            kinks += r.kinks_skipped;
        }
    }
    let threshold = 1e-4;
    Ok(CheckResult::new(
        "gradient_check",
        worst < threshold,
        worst,
        threshold,
        format!(
            "3 variants x {} seeds, {params} parameters checked, {kinks} skipped at ReLU kinks",
            seeds.end - seeds.start
        ),
    ))
}

/// Mean normalized SF of a single-source anechoic scene over bins with at
/// least 1 % of the peak power.
pub fn anechoic_fidelity(seed: u64, fault: Option<Fault>) -> Result<CheckResult> {
    let scene = preset("anechoic-single", seed)?;
    let opts = FeatureOptions {
        fault,
        ..FeatureOptions::default()
    };
    let a = simulate_and_analyze(&scene, &opts)?;
    let threshold = 0.95;
    Ok(CheckResult::new(
        "anechoic_fidelity",
        a.report.mean_sf >= threshold,
        a.report.mean_sf,
        threshold,
        format!(
            "{} s, {}-mic anechoic scene, mean SF (pass if >= threshold)",
            scene.duration_s,
            scene.array.geometry.mic_positions.len()
        ),
    ))
}

fn single_source_scene(rt60: f64, order: usize, src: [f64; 3]) -> Result<SceneConfig<f64>> {
    Ok(SceneConfig {
        room_dims: Vec3::from_array(LARGE_ROOM),
        rt60_s: rt60,
        max_image_order: order,
        sources: vec![SourceSpec {
            position: Vec3::from_array(src),
            signal: vec![0.0; 16],
        }],
        array: MicArrayGeometry::linear(4, 0.05)?,
        array_center: Vec3::new(2.6, 0.5, 1.2),
        noise_snr_db: None,
        sample_rate_hz: 16_000.0,
        seed: 0,
        speed_of_sound: 343.0,
    })
}

/// Order-1 image count and arrival times against explicit mirror images.
pub fn rir_first_order() -> Result<CheckResult> {
    let room = LARGE_ROOM;
    let src = [1.3, 2.7, 1.6];
    let scene = single_source_scene(0.5, 1, src)?;
    let images = image_sources(scene.room_dims, scene.sources[0].position, 1);

    // Direct path plus one mirror across each of the six walls.
    let mut mirrors = vec![src];
    for axis in 0..3 {
        for wall in [0.0, room[axis]] {
            let mut p = src;
            p[axis] = 2.0 * wall - src[axis];
            mirrors.push(p);
        }
    }
    let mic = scene.mic_room_positions()[0].to_array();
    let fs = scene.sample_rate_hz;
    let delay =
        |p: [f64; 3]| ((p[0] - mic[0]).powi(2) + (p[1] - mic[1]).powi(2) + (p[2] - mic[2]).powi(2)).sqrt() / 343.0 * fs;
    let mut expected: Vec<f64> = mirrors.iter().map(|&p| delay(p)).collect();
    let mut got: Vec<f64> = images.iter().map(|im| delay(im.position.to_array())).collect();
    expected.sort_by(f64::total_cmp);
    got.sort_by(f64::total_cmp);
    let position_err = expected
        .iter()
        .zip(&got)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    // Every expected arrival shows up as a local peak within ±1 sample.
    let rir = simulate_rir(&scene, 0, 0)?;
    let taps = &rir.taps;
    let mut peak_err = 0.0f64;
    for &d in &expected {
        let centre = (d + rir.delay_offset_samples as f64).round() as usize;
        let peak = (centre.saturating_sub(3)..=centre + 3)
            .max_by(|&a, &b| taps[a].abs().total_cmp(&taps[b].abs()))
            .unwrap_or(centre);
        peak_err = peak_err.max((peak as f64 - rir.delay_offset_samples as f64 - d).abs());
    }
    let count_ok = images.len() == 7 && mirrors.len() == 7;
    let threshold = 1.0;
    let worst = position_err.max(peak_err);
    Ok(CheckResult::new(
        "rir_first_order",
        count_ok && worst <= threshold,
        worst,
        threshold,
        format!(
            "{} order-1 paths (expected 7), max arrival error in samples",
            images.len()
        ),
    ))
}

/// Schroeder-integrated RT60 of a simulated response against its target.
pub fn rt60_estimate(target_s: f64) -> Result<CheckResult> {
    let scene = single_source_scene(target_s, 20, [1.3, 2.7, 1.6])?;
    let rir = simulate_rir(&scene, 0, 0)?;
    let est = estimate_rt60(&rir, scene.sample_rate_hz).unwrap_or(f64::NAN);
    let rel = (est - target_s).abs() / target_s;
    let threshold = 0.25;
    Ok(CheckResult::new(
        "rt60_estimate",
        rel <= threshold,
        rel,
        threshold,
        format!("target {target_s} s, estimated {est:.3} s, relative error"),
    ))
}

/// Branch-A proportion over `batches` batches at `alpha`, plus homogeneity.
pub fn swap_sampler(alpha: f64, batches: usize, seed: u64) -> Result<CheckResult> {
    let items = (0..300)
        .map(|i| DatasetItem {
            id: format!("utt{i:04}"),
            eligibility: [Eligibility::AExtra, Eligibility::BPlain, Eligibility::Both][i % 3],
            duration_s: 1.0 + (i % 7) as f64,
        })
        .collect();
    let meta = DatasetMeta::new(items)?;
    let mut opts = PlanOptions::new(alpha, 16, seed);
    opts.num_batches = Some(batches);
    let plan = plan_epoch(&meta, &opts)?;
    let stats = branch_stats(&plan)?;
    let violations = homogeneity_violations(&plan, &meta);
    let (lo, hi) = (alpha - 0.02, alpha + 0.02);
    Ok(CheckResult::new(
        "swap_sampler",
        violations == 0 && (lo..=hi).contains(&stats.proportion_a),
        stats.proportion_a,
        alpha,
        format!(
            "{batches} batches, branch-A proportion must lie in [{lo:.2}, {hi:.2}], {violations} homogeneity violations"
        ),
    ))
}

/// Contrast of the two-speaker preset, anechoic against RT60 = 0.6 s; passes
/// if it drops for every source in every seed.
pub fn reverberation_contrast(seeds: std::ops::Range<u64>) -> Result<CheckResult> {
    let mut worst_margin = f64::INFINITY;
    let mut wins = 0;
    let mut total = 0;
    for seed in seeds {
        let clean = simulate_and_analyze(&preset("two-speaker-anechoic", seed)?, &FeatureOptions::default())?;
        let reverb = simulate_and_analyze(&preset("two-speaker-reverberant", seed)?, &FeatureOptions::default())?;
        for (a, b) in clean.report.sources.iter().zip(&reverb.report.sources) {
            let margin = a.sf_contrast.unwrap_or(f64::NAN) - b.sf_contrast.unwrap_or(f64::NAN);
            worst_margin = worst_margin.min(margin);
            wins += usize::from(margin > 0.0);
            total += 1;
        }
    }
    Ok(CheckResult::new(
        "reverberation_contrast",
        total > 0 && wins == total,
        worst_margin,
        0.0,
        format!("contrast(anechoic) - contrast(RT60 0.6 s) > 0 in {wins}/{total} (seed, source) cases; value is the smallest margin"),
    ))
}

/// Contrast with the 3D TPD against the 1D TPD for the target of `preset_name`.
pub fn tpd_3d_vs_1d(preset_name: &str, seeds: std::ops::Range<u64>) -> Result<CheckResult> {
    let mut worst_margin = f64::INFINITY;
    let mut wins = 0;
    let mut total = 0;
    for seed in seeds {
        let scene = preset(preset_name, seed)?;
        let contrast = |tpd| -> Result<f64> {
            let opts = FeatureOptions {
                tpd,
                ..FeatureOptions::default()
            };
            Ok(simulate_and_analyze(&scene, &opts)?.report.sources[0]
                .sf_contrast
                .unwrap_or(f64::NAN))
        };
        let margin = contrast(TpdKind::ThreeD)? - contrast(TpdKind::OneD)?;
        worst_margin = worst_margin.min(margin);
        wins += usize::from(margin > 0.0);
        total += 1;
    }
    Ok(CheckResult::new(
        &format!("tpd_3d_vs_1d[{preset_name}]"),
        total > 0 && wins == total,
        worst_margin,
        0.0,
        format!("contrast(3D) - contrast(1D) > 0 in {wins}/{total} seeds; value is the smallest margin"),
    ))
}

/// The checks run by `spatialfeat verify`.
pub fn run_all(fault: Option<Fault>, full: bool) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        geometry_oracle(1000, 1)?,
        stft_round_trip(2)?,
        complex_conv_oracle(100, 3)?,
        gradient_check(0..if full { 20 } else { 3 })?,
        anechoic_fidelity(4, fault)?,
        rir_first_order()?,
        rt60_estimate(0.4)?,
        swap_sampler(0.7, 10_000, 5)?,
    ];
    if full {
        out.push(reverberation_contrast(0..10)?);
        out.push(tpd_3d_vs_1d("elevation-pair", 0..10)?);
        out.push(tpd_3d_vs_1d("distance-pair", 0..10)?);
    }
    Ok(out)
}
