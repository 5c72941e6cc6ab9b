//! Multi-channel spatial-audio features for target-speaker processing.
//!
//! The crate covers the full chain from array geometry to features:
//!
//! * [`geometry`]: microphone array, camera-centred speaker locations and
//!   per-microphone path lengths.
//! * [`stft`]: multi-channel short-time Fourier analysis and synthesis.
//! * [`spatial_features`]: IPD, 1D/3D TPD, the cosine spatial feature SF,
//!   steering vectors and the covariance + steering complex input.
//! * [`room_sim`]: a shoebox image-source simulator used as a testbench for
//!   reverberation effects on the spatial feature.
//! * [`complex_embed`]: real, split and complex convolutional input
//!   embeddings over the complex input, with analytic gradients.
//! * [`swap_sampler`]: homogeneous batch planning for two-branch training.
//! * [`io`]: WAV, `SFMAP1` and CSV exchange formats.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases at the
//! crate root pin the common double-precision instantiations.

pub mod complex_embed;
pub mod error;
pub mod geometry;
pub mod io;
pub mod room_sim;
pub mod scalar;
pub mod signals;
pub mod spatial_features;
pub mod stft;
pub mod swap_sampler;

pub use error::{Error, Result};
pub use scalar::Real;

/// Speed of sound used when nothing else is configured, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Vec3 = geometry::Vec3<f64>;
pub type MicArrayGeometry = geometry::MicArrayGeometry<f64>;
pub type SpeakerLocation3D = geometry::SpeakerLocation3D<f64>;
pub type ComplexSpectrogram = stft::ComplexSpectrogram<f64>;
pub type PhaseMap = spatial_features::PhaseMap<f64>;
pub type SpatialFeatureMap = spatial_features::SpatialFeatureMap<f64>;
pub type ComplexInputTensor = spatial_features::ComplexInputTensor<f64>;
pub type SceneConfig = room_sim::SceneConfig<f64>;
pub type Rir = room_sim::Rir<f64>;
pub type Embedder = complex_embed::Embedder<f64>;

pub type MicArrayGeometry32 = geometry::MicArrayGeometry<f32>;
pub type ComplexSpectrogram32 = stft::ComplexSpectrogram<f32>;
pub type SpatialFeatureMap32 = spatial_features::SpatialFeatureMap<f32>;
