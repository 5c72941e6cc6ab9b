//! JSON scene files and built-in presets.

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spatialfeat::geometry::{GeometryConfig, MicArrayGeometry, SpeakerLocation3D, Vec3};
use spatialfeat::room_sim::{SceneConfig, SourceSpec, LARGE_ROOM};
use spatialfeat::signals::SignalSpec;
use spatialfeat::stft::StftConfig;
use spatialfeat::SPEED_OF_SOUND;

fn default_order() -> usize {
    15
}

fn default_fs() -> f64 {
    16_000.0
}

fn default_c() -> f64 {
    SPEED_OF_SOUND
}

/// Array description: mic offsets (room axes, meters) around `center`, where
/// the camera sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayFile {
    pub center: [f64; 3],
    #[serde(flatten)]
    pub geometry: GeometryConfig,
}

/// Location relative to the camera, in the array frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationFile {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
}

/// A source placed either at an absolute room `position` or at a
/// camera-relative `location`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<LocationFile>,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub room_dims: [f64; 3],
    #[serde(default)]
    pub rt60_s: f64,
    #[serde(default = "default_order")]
    pub max_image_order: usize,
    #[serde(default = "default_fs")]
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_snr_db: Option<f64>,
    pub array: ArrayFile,
    pub sources: Vec<SourceFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stft: Option<StftConfig>,
}

impl SceneFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing scene file")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialises")
    }

    pub fn geometry(&self) -> Result<MicArrayGeometry<f64>> {
        Ok(MicArrayGeometry::from_config(&self.array.geometry)?)
    }

    /// STFT settings, scaled from the 16 kHz defaults (25 ms window, 10 ms
    /// hop) when absent.
    pub fn stft_config(&self) -> Result<StftConfig> {
        let cfg = match self.stft {
            Some(c) => c,
            None => {
                let d = StftConfig::default();
                let scale = self.sample_rate_hz / d.sample_rate_hz;
                let win = (d.win_length as f64 * scale).round() as usize;
                let hop = (d.hop as f64 * scale).round() as usize;
                StftConfig::new(self.sample_rate_hz, win, hop, win.next_power_of_two(), d.window)?
            }
        };
        ensure!(
            cfg.sample_rate_hz == self.sample_rate_hz,
            "STFT sample rate {} differs from scene sample rate {}",
            cfg.sample_rate_hz,
            self.sample_rate_hz
        );
        cfg.validate()?;
        Ok(cfg)
    }

    /// Room position of source `i`.
    pub fn source_position(&self, i: usize, geom: &MicArrayGeometry<f64>) -> Result<Vec3<f64>> {
        let s = &self.sources[i];
        let center = Vec3::from_array(self.array.center);
        match (s.position, s.location) {
            (Some(p), None) => Ok(Vec3::from_array(p)),
            (None, Some(l)) => {
                let loc = SpeakerLocation3D::from_degrees(l.azimuth_deg, l.elevation_deg, l.distance_m)?;
                Ok(center + geom.location_to_point(&loc))
            }
            _ => bail!("source {i} needs exactly one of `position` or `location`"),
        }
    }

    pub fn num_samples(&self) -> Result<usize> {
        ensure!(
            self.duration_s.is_finite() && self.duration_s > 0.0,
            "duration must be positive"
        );
        Ok((self.duration_s * self.sample_rate_hz).round() as usize)
    }

    pub fn build(&self) -> Result<SceneConfig<f64>> {
        let geom = self.geometry()?;
        let len = self.num_samples()?;
        let sources = (0..self.sources.len())
            .map(|i| {
                Ok(SourceSpec {
                    position: self.source_position(i, &geom)?,
                    signal: self.sources[i].signal.generate(self.sample_rate_hz, len),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = SceneConfig {
            room_dims: Vec3::from_array(self.room_dims),
            rt60_s: self.rt60_s,
            max_image_order: self.max_image_order,
            sources,
            array: geom,
            array_center: Vec3::from_array(self.array.center),
            noise_snr_db: self.noise_snr_db,
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
            speed_of_sound: self.speed_of_sound,
        };
        scene.validate()?;
        scene.reflection_coefficient()?;
        Ok(scene)
    }

    /// Copy with every source given as an absolute position.
    pub fn resolved(&self) -> Result<SceneFile> {
        let geom = self.geometry()?;
        let mut out = self.clone();
        for i in 0..out.sources.len() {
            let p = self.source_position(i, &geom)?;
            out.sources[i].position = Some(p.to_array());
            out.sources[i].location = None;
        }
        out.stft = Some(self.stft_config()?);
        Ok(out)
    }
}

pub const PRESETS: &[&str] = &[
    "anechoic-single",
    "two-speaker-anechoic",
    "two-speaker-reverberant",
    "elevation-pair",
    "distance-pair",
    "planar-array",
];

fn linear_array(center: [f64; 3], n: usize, spacing: f64) -> ArrayFile {
    let half = (n - 1) as f64 * spacing / 2.0;
    ArrayFile {
        center,
        geometry: GeometryConfig {
            mic_positions: (0..n).map(|i| [i as f64 * spacing - half, 0.0, 0.0]).collect(),
            pairs: None,
            array_axis: None,
        },
    }
}

fn voice_at(rng: &mut ChaCha8Rng, f0_range: (f64, f64), az: f64, el: f64, d: f64) -> SourceFile {
    SourceFile {
        position: None,
        location: Some(LocationFile {
            azimuth_deg: az,
            elevation_deg: el,
            distance_m: d,
        }),
        signal: SignalSpec::Voice {
            f0_hz: rng.random_range(f0_range.0..f0_range.1),
            seed: rng.random(),
        },
    }
}

/// Built-in scene; `seed` drives the source signals and the noise.
///
/// All presets use the 5.2 × 4.2 × 2.8 m room with a 4-mic, 5 cm linear
/// array 0.6 m in front of the `y = 0` wall, facing into the room.
pub fn preset(name: &str, seed: u64) -> Result<SceneFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = [2.6, 0.6, 1.2];
    let low = (95.0, 140.0);
    let high = (170.0, 240.0);
    let (rt60_s, array, sources) = match name {
        "anechoic-single" => (
            0.0,
            linear_array(center, 4, 0.05),
            vec![voice_at(&mut rng, low, 60.0, 10.0, 1.5)],
        ),
        "two-speaker-anechoic" | "two-speaker-reverberant" => {
            let rt = if name.ends_with("anechoic") { 0.0 } else { 0.6 };
            let s = vec![
                voice_at(&mut rng, low, 50.0, 5.0, 1.4),
                voice_at(&mut rng, high, 115.0, 0.0, 1.6),
            ];
            (rt, linear_array(center, 4, 0.05), s)
        }
        "elevation-pair" => {
            let s = vec![
                voice_at(&mut rng, low, 60.0, 25.0, 1.4),
                voice_at(&mut rng, high, 50.0, 5.0, 1.4),
            ];
            (0.0, linear_array(center, 4, 0.05), s)
        }
        "distance-pair" => {
            let s = vec![
                voice_at(&mut rng, low, 60.0, 0.0, 0.5),
                voice_at(&mut rng, high, 50.0, 0.0, 1.0),
            ];
            (0.0, linear_array(center, 4, 0.05), s)
        }
        "planar-array" => {
            let mut array = linear_array(center, 4, 0.05);
            array.geometry.mic_positions[3] = [0.0, 0.05, 0.0];
            (0.0, array, vec![voice_at(&mut rng, low, 70.0, 10.0, 1.5)])
        }
        other => bail!("unknown preset {other:?}; available: {}", PRESETS.join(", ")),
    };
    Ok(SceneFile {
        room_dims: LARGE_ROOM,
        rt60_s,
        max_image_order: default_order(),
        sample_rate_hz: default_fs(),
        duration_s: 3.0,
        seed,
        speed_of_sound: default_c(),
        noise_snr_db: None,
        array,
        sources,
        stft: None,
    })
}
