//! Scene rendering and feature extraction, in memory and on disk.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::{Array2, ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spatialfeat::geometry::{MicArrayGeometry, SpeakerLocation3D};
use spatialfeat::io::{self, SampleFormat};
use spatialfeat::room_sim::{self, dominance_mask, render_scene_detailed, DominanceMask, Rir};
use spatialfeat::spatial_features::{
    assemble_complex_input, compute_ipd, compute_sf, compute_tpd_1d, compute_tpd_3d, mean_sf_above_power, sf_contrast,
    PhaseMap, SpatialFeatureMap,
};
use spatialfeat::stft::{forward_stft, ComplexSpectrogram, StftConfig};

use crate::scene::{LocationFile, SceneFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TpdKind {
    #[value(name = "1d")]
    #[serde(rename = "1d")]
    OneD,
    #[value(name = "3d")]
    #[serde(rename = "3d")]
    ThreeD,
}

/// Deliberate defects for negative-control testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Negates every TPD value.
    TpdSign,
}

/// Standard deviations of the location error applied before computing TPDs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jitter {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
}

impl Jitter {
    pub fn is_zero(&self) -> bool {
        self.azimuth_deg == 0.0 && self.elevation_deg == 0.0 && self.distance_m == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOptions {
    pub tpd: TpdKind,
    pub normalize: bool,
    pub floor_db: f64,
    /// Covariance smoothing factor λ for the complex input.
    pub lambda: f64,
    pub jitter: Jitter,
    pub seed: u64,
    pub complex_input: bool,
    pub fault: Option<Fault>,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            tpd: TpdKind::ThreeD,
            normalize: true,
            floor_db: -30.0,
            lambda: 0.0,
            jitter: Jitter::default(),
            seed: 0,
            complex_input: false,
            fault: None,
        }
    }
}

/// Bins at or above this fraction of the peak mixture power enter `mean_sf`.
pub const MEAN_SF_POWER_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub index: usize,
    /// Location used for the TPD, after any jitter.
    pub location: LocationFile,
    /// `None` when fewer than two sources own bins.
    pub sf_contrast: Option<f64>,
    /// Mean SF over bins with at least 1 % of the peak mixture power.
    pub mean_sf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub rt60_s: f64,
    pub tpd: TpdKind,
    pub normalize: bool,
    pub floor_db: f64,
    pub lambda: f64,
    pub num_pairs: usize,
    pub num_bins: usize,
    pub num_frames: usize,
    pub sources: Vec<SourceReport>,
    /// Mean of `mean_sf` over sources.
    pub mean_sf: f64,
}

pub struct Analysis {
    pub ipd: PhaseMap<f64>,
    pub tpd: Vec<PhaseMap<f64>>,
    pub sf: Vec<SpatialFeatureMap<f64>>,
    pub mask: Option<DominanceMask>,
    pub mixture_spec: ComplexSpectrogram<f64>,
    pub report: FeatureReport,
}

/// Everything needed to compute features for one rendered scene.
pub struct FeatureInput<'a> {
    pub mixture: &'a [Vec<f64>],
    /// `[source][mic][sample]` reverberant images, for the dominance mask.
    pub images: &'a [Vec<Vec<f64>>],
    pub geometry: &'a MicArrayGeometry<f64>,
    pub locations: &'a [SpeakerLocation3D<f64>],
    pub stft: &'a StftConfig,
    pub speed_of_sound: f64,
    pub rt60_s: f64,
}

fn jittered(locs: &[SpeakerLocation3D<f64>], j: &Jitter, seed: u64) -> Result<Vec<SpeakerLocation3D<f64>>> {
    if j.is_zero() {
        return Ok(locs.to_vec());
    }
    ensure!(
        j.azimuth_deg >= 0.0 && j.elevation_deg >= 0.0 && j.distance_m >= 0.0,
        "jitter standard deviations must be non-negative"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |sd: f64| -> Result<f64> { Ok(Normal::new(0.0, sd)?.sample(&mut rng)) };
    locs.iter()
        .map(|l| {
            let az = (l.azimuth() + draw(j.azimuth_deg.to_radians())?).clamp(0.0, std::f64::consts::PI);
            let el = (l.elevation() + draw(j.elevation_deg.to_radians())?)
                .clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
            let d = (l.distance() + draw(j.distance_m)?).max(1e-3);
            Ok(SpeakerLocation3D::new(az, el, d)?)
        })
        .collect()
}

fn location_file(l: &SpeakerLocation3D<f64>) -> LocationFile {
    LocationFile {
        azimuth_deg: l.azimuth().to_degrees(),
        elevation_deg: l.elevation().to_degrees(),
        distance_m: l.distance(),
    }
}

/// IPD, per-source TPD and SF, the dominance mask and the summary report.
pub fn analyze(input: &FeatureInput<'_>, opts: &FeatureOptions) -> Result<Analysis> {
    ensure!(
        input.locations.len() == input.images.len(),
        "{} locations for {} source images",
        input.locations.len(),
        input.images.len()
    );
    let spec = forward_stft(input.mixture, input.stft)?;
    let n_frames = spec.num_frames();
    let ipd = compute_ipd(&spec, input.geometry.pairs())?;
    let locs = jittered(input.locations, &opts.jitter, opts.seed)?;
    let mut tpds = Vec::with_capacity(locs.len());
    for loc in &locs {
        let mut tpd = match opts.tpd {
            TpdKind::ThreeD => compute_tpd_3d(input.geometry, loc, input.stft, n_frames, input.speed_of_sound),
            TpdKind::OneD => compute_tpd_1d(
                input.geometry,
                loc.azimuth(),
                input.stft,
                n_frames,
                input.speed_of_sound,
            )?,
        };
        if opts.fault == Some(Fault::TpdSign) {
            let kind = tpd.kind();
            let pairs = tpd.pairs().to_vec();
            tpd = PhaseMap::new(tpd.values().mapv(|v| -v), kind, pairs)?;
        }
        tpds.push(tpd);
    }
    let sfs = tpds
        .iter()
        .map(|t| compute_sf(&ipd, t, opts.normalize))
        .collect::<spatialfeat::Result<Vec<_>>>()?;

    let mask = if input.images.len() >= 2 {
        let specs = input
            .images
            .iter()
            .map(|img| forward_stft(&img[..1], input.stft))
            .collect::<spatialfeat::Result<Vec<_>>>()?;
        Some(dominance_mask(&specs, opts.floor_db)?)
    } else {
        None
    };
    let power = spec.power(0);
    let mut sources = Vec::new();
    for (i, sf) in sfs.iter().enumerate() {
        let contrast = match &mask {
            Some(m) => match sf_contrast(sf, m, i) {
                Ok(c) => Some(c),
                Err(spatialfeat::Error::EmptyClass(_)) => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        sources.push(SourceReport {
            index: i,
            location: location_file(&locs[i]),
            sf_contrast: contrast,
            mean_sf: mean_sf_above_power(sf, &power, MEAN_SF_POWER_FLOOR)?,
        });
    }
    let mean_sf = sources.iter().map(|s| s.mean_sf).sum::<f64>() / sources.len().max(1) as f64;
    let report = FeatureReport {
        rt60_s: input.rt60_s,
        tpd: opts.tpd,
        normalize: opts.normalize,
        floor_db: opts.floor_db,
        lambda: opts.lambda,
        num_pairs: input.geometry.num_pairs(),
        num_bins: spec.num_bins(),
        num_frames: n_frames,
        sources,
        mean_sf,
    };
    Ok(Analysis {
        ipd,
        tpd: tpds,
        sf: sfs,
        mask,
        mixture_spec: spec,
        report,
    })
}

/// Renders `scene` in memory and analyses it.
pub fn simulate_and_analyze(scene: &SceneFile, opts: &FeatureOptions) -> Result<Analysis> {
    let cfg = scene.build()?;
    let render = render_scene_detailed(&cfg)?;
    let locations = (0..cfg.sources.len())
        .map(|i| cfg.source_location(i))
        .collect::<spatialfeat::Result<Vec<_>>>()?;
    analyze(
        &FeatureInput {
            mixture: &render.mixture,
            images: &render.images,
            geometry: &cfg.array,
            locations: &locations,
            stft: &scene.stft_config()?,
            speed_of_sound: cfg.speed_of_sound,
            rt60_s: cfg.rt60_s,
        },
        opts,
    )
}

/// Paths written by [`simulate_to_dir`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimArtifacts {
    pub scene: PathBuf,
    pub mixture: PathBuf,
    pub sources: Vec<PathBuf>,
    pub rirs: Vec<PathBuf>,
}

fn sample_rate_u32(fs: f64) -> Result<u32> {
    ensure!(
        fs.fract() == 0.0 && fs > 0.0 && fs <= u32::MAX as f64,
        "sample rate {fs} is not a WAV rate"
    );
    Ok(fs as u32)
}

/// Stacks one source's per-mic RIRs into `[mic, tap]`, zero-padding shorter
/// responses.
fn rir_matrix(rirs: &[Rir<f64>]) -> Array2<f64> {
    let len = rirs.iter().map(Rir::len).max().unwrap_or(0);
    let mut m = Array2::zeros((rirs.len(), len));
    for (row, r) in m.axis_iter_mut(Axis(0)).zip(rirs) {
        for (dst, &v) in row.into_iter().zip(&r.taps) {
            *dst = v;
        }
    }
    m
}

/// Renders `scene` into `out`:
///
/// * `scene.json`: the scene with absolute source positions and STFT settings;
/// * `mixture.wav`: all mics, 32-bit float;
/// * `sources/source_<k>.wav`: source `k`'s reverberant image at every mic;
/// * `rirs/rir_s<k>_m<m>.wav` and `rirs/rir_s<k>.sfmap` (`[mic, tap]`).
pub fn simulate_to_dir(scene: &SceneFile, out: &Path) -> Result<SimArtifacts> {
    let resolved = scene.resolved()?;
    let cfg = resolved.build()?;
    let render = render_scene_detailed(&cfg)?;
    let fs = sample_rate_u32(cfg.sample_rate_hz)?;
    fs::create_dir_all(out.join("sources"))?;
    fs::create_dir_all(out.join("rirs"))?;

    let scene_path = out.join("scene.json");
    fs::write(&scene_path, resolved.to_json() + "\n")?;
    let mixture = out.join("mixture.wav");
    io::write_wav(&mixture, &render.mixture, fs, SampleFormat::Float32)?;
    let mut sources = Vec::new();
    for (k, img) in render.images.iter().enumerate() {
        let p = out.join("sources").join(format!("source_{k}.wav"));
        io::write_wav(&p, img, fs, SampleFormat::Float32)?;
        sources.push(p);
    }
    let mut rirs = Vec::new();
    for (k, per_mic) in render.rirs.iter().enumerate() {
        for (m, r) in per_mic.iter().enumerate() {
            let p = out.join("rirs").join(format!("rir_s{k}_m{m}.wav"));
            io::write_wav(&p, std::slice::from_ref(&r.taps), fs, SampleFormat::Float32)?;
            rirs.push(p);
        }
        let p = out.join("rirs").join(format!("rir_s{k}.sfmap"));
        io::write_sfmap_file(&p, &rir_matrix(per_mic))?;
        rirs.push(p);
    }
    Ok(SimArtifacts {
        scene: scene_path,
        mixture,
        sources,
        rirs,
    })
}

fn read_wav_checked(path: &Path, fs: u32) -> Result<Vec<Vec<f64>>> {
    let (data, rate) = io::read_wav::<f64, _>(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(rate == fs, "{} has sample rate {rate}, scene says {fs}", path.display());
    Ok(data)
}

fn write_csv(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> spatialfeat::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a directory written by [`simulate_to_dir`] and writes features to
/// `<run>/features/`:
///
/// * `ipd_pair_<p>.sfmap` / `.csv` (`[bin, frame]`),
/// * `tpd_source_<k>.sfmap` (`[pair, bin]`),
/// * `sf_source_<k>.sfmap` / `.csv` (`[bin, frame]`),
/// * `complex_input_source_<k>.bin` (real and imaginary tensors) if requested,
/// * `report.json`.
pub fn features_from_dir(run: &Path, scene_override: Option<&Path>, opts: &FeatureOptions) -> Result<FeatureReport> {
    let scene_path = scene_override.map_or_else(|| run.join("scene.json"), Path::to_path_buf);
    if !scene_path.exists() {
        bail!("missing scene file {}; run `sim` first", scene_path.display());
    }
    let scene = SceneFile::load(&scene_path)?;
    let geom = scene.geometry()?;
    let stft = scene.stft_config()?;
    let fs = sample_rate_u32(scene.sample_rate_hz)?;
    let center = spatialfeat::geometry::Vec3::from_array(scene.array.center);
    let locations = (0..scene.sources.len())
        .map(|i| Ok(geom.point_to_location(scene.source_position(i, &geom)? - center)?))
        .collect::<Result<Vec<_>>>()?;

    let mixture = read_wav_checked(&run.join("mixture.wav"), fs)?;
    ensure!(
        mixture.len() == geom.num_mics(),
        "mixture has {} channels, array has {} mics",
        mixture.len(),
        geom.num_mics()
    );
    let images = (0..scene.sources.len())
        .map(|k| read_wav_checked(&run.join("sources").join(format!("source_{k}.wav")), fs))
        .collect::<Result<Vec<_>>>()?;

    let analysis = analyze(
        &FeatureInput {
            mixture: &mixture,
            images: &images,
            geometry: &geom,
            locations: &locations,
            stft: &stft,
            speed_of_sound: scene.speed_of_sound,
            rt60_s: scene.rt60_s,
        },
        opts,
    )?;

    let out = run.join("features");
    fs::create_dir_all(&out)?;
    for (p, ipd) in analysis.ipd.values().axis_iter(Axis(0)).enumerate() {
        let ipd = ipd.to_owned();
        io::write_sfmap_file(out.join(format!("ipd_pair_{p}.sfmap")), &ipd)?;
        write_csv(&out.join(format!("ipd_pair_{p}.csv")), |w| {
            io::write_feature_csv(w, &ipd)
        })?;
    }
    for (k, (tpd, sf)) in analysis.tpd.iter().zip(&analysis.sf).enumerate() {
        let per_bin = tpd.values().index_axis(Axis(2), 0).to_owned();
        io::write_sfmap_file(out.join(format!("tpd_source_{k}.sfmap")), &per_bin)?;
        io::write_sfmap_file(out.join(format!("sf_source_{k}.sfmap")), sf.values())?;
        write_csv(&out.join(format!("sf_source_{k}.csv")), |w| {
            io::write_feature_csv(w, sf.values())
        })?;
    }
    if opts.complex_input {
        for (k, loc) in locations.iter().enumerate() {
            let x = assemble_complex_input(&analysis.mixture_spec, &geom, loc, opts.lambda, scene.speed_of_sound)?;
            let tensors: Vec<ArrayD<f64>> =
                vec![x.data().mapv(|c| c.re).into_dyn(), x.data().mapv(|c| c.im).into_dyn()];
            let mut w = BufWriter::new(fs::File::create(out.join(format!("complex_input_source_{k}.bin")))?);
            io::write_tensors(&mut w, &tensors)?;
            w.flush()?;
        }
    }
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&analysis.report)? + "\n",
    )?;
    Ok(analysis.report)
}

/// The anechoic render of `scene` (which must have `rt60_s = 0`).
pub fn anechoic_mixture(scene: &SceneFile) -> Result<Vec<Vec<f64>>> {
    let cfg = scene.resolved()?.build()?;
    Ok(room_sim::render_anechoic(&cfg)?)
}
