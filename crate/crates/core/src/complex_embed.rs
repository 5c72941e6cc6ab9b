//! Convolutional input embeddings over the covariance + steering complex input.
//!
//! Three variants map a `[2M², F, T]` complex tensor to a real `[H, T/4]`
//! embedding:
//!
//! * **naive**: real and imaginary parts stacked into `4M²` real channels and
//!   passed through a real conv stack;
//! * **separate**: real and imaginary parts passed independently through a
//!   conv stack (shared by default) and fused as `R² + I²`;
//! * **cross-product**: complex convolution,
//!   `[F(W_r∗R − W_i∗I), F(W_i∗R + W_r∗I)]` per layer, fused as `R² + I²`.
//!
//! After the conv stack the frequency axis is flattened into the channel
//! axis and linearly projected to `H` (no bias). Every variant has an
//! analytic backward pass; [`grad_check`] compares it with central finite
//! differences.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayD, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::spatial_features::ComplexInputTensor;
use crate::{Error, Real, Result};

/// Required total time-axis downsampling of the conv stack.
pub const TIME_REDUCTION: usize = 4;
/// Finite-difference step used by [`grad_check`].
pub const FD_EPSILON: f64 = 1e-5;
/// Gradient magnitude floor in the relative-error denominator.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Naive,
    Separate,
    CrossProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative; the ReLU subgradient at 0 is 0.
    #[inline]
    fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub channels: usize,
    /// `(frequency, time)` kernel size.
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl LayerSpec {
    pub fn conv3x3(channels: usize) -> Self {
        LayerSpec {
            channels,
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        }
    }

    fn out_len(&self, len: usize, axis: usize) -> Option<usize> {
        let (k, s, p) = match axis {
            0 => (self.kernel.0, self.stride.0, self.padding.0),
            _ => (self.kernel.1, self.stride.1, self.padding.1),
        };
        let padded = len + 2 * p;
        (padded >= k).then(|| (padded - k) / s + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub variant: Variant,
    pub layers: Vec<LayerSpec>,
    pub hidden_dim: usize,
    pub activation: Activation,
    /// Separate variant only: real and imaginary branches share weights.
    pub shared_weights: bool,
}

impl EmbedConfig {
    /// Two 3×3 stride-2 layers of 32 channels with ReLU.
    pub fn new(variant: Variant, hidden_dim: usize) -> Self {
        EmbedConfig {
            variant,
            layers: vec![LayerSpec::conv3x3(32), LayerSpec::conv3x3(32)],
            hidden_dim,
            activation: Activation::Relu,
            shared_weights: true,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.layers.iter_mut().for_each(|l| l.channels = channels);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidInput("hidden dimension must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("at least one conv layer required".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.channels == 0 || l.kernel.0 == 0 || l.kernel.1 == 0 || l.stride.0 == 0 || l.stride.1 == 0 {
                return Err(Error::InvalidInput(format!("layer {i} has a zero size or stride")));
            }
        }
        let time_stride: usize = self.layers.iter().map(|l| l.stride.1).product();
        if time_stride != TIME_REDUCTION {
            return Err(Error::InvalidInput(format!(
                "total time stride is {time_stride}, expected {TIME_REDUCTION}"
            )));
        }
        Ok(())
    }

    /// Real input channels of the first layer for an `M`-mic input.
    pub fn input_channels(&self, num_mics: usize) -> usize {
        let m2 = num_mics * num_mics;
        match self.variant {
            Variant::Naive => 4 * m2,
            Variant::Separate | Variant::CrossProduct => 2 * m2,
        }
    }

    fn branch_count(&self) -> usize {
        match self.variant {
            Variant::Naive => 1,
            Variant::Separate if self.shared_weights => 1,
            Variant::Separate | Variant::CrossProduct => 2,
        }
    }
}

/// Geometry of one convolution application.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    stride: (usize, usize),
    padding: (usize, usize),
}

fn conv_forward<T: Real>(w: &Array4<T>, x: &Array3<T>, g: ConvGeom) -> Result<Array3<T>> {
    let (co_n, ci_n, kh, kw) = w.dim();
    let (ci_x, h, wd) = x.dim();
    if ci_n != ci_x {
        return Err(Error::DimensionMismatch(format!(
            "kernel expects {ci_n} input channels, got {ci_x}"
        )));
    }
    let (hp, wp) = (h + 2 * g.padding.0, wd + 2 * g.padding.1);
    if hp < kh || wp < kw {
        return Err(Error::DimensionMismatch(format!(
            "input {h}×{wd} (padded {hp}×{wp}) smaller than kernel {kh}×{kw}"
        )));
    }
    let (ho, wo) = ((hp - kh) / g.stride.0 + 1, (wp - kw) / g.stride.1 + 1);
    let mut out = Array3::zeros((co_n, ho, wo));
    for co in 0..co_n {
        for ci in 0..ci_n {
            for a in 0..kh {
                for b in 0..kw {
                    let wv = w[[co, ci, a, b]];
                    if wv == T::zero() {
                        continue;
                    }
                    for i in 0..ho {
                        let Some(hi) = (i * g.stride.0 + a).checked_sub(g.padding.0).filter(|&v| v < h) else {
                            continue;
                        };
                        for j in 0..wo {
                            let Some(wj) = (j * g.stride.1 + b).checked_sub(g.padding.1).filter(|&v| v < wd) else {
                                continue;
                            };
                            out[[co, i, j]] += wv * x[[ci, hi, wj]];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `∂L/∂W` given the layer input and `∂L/∂z`.
fn conv_weight_grad<T: Real>(
    x: &Array3<T>,
    grad: &Array3<T>,
    kernel: (usize, usize, usize, usize),
    g: ConvGeom,
) -> Array4<T> {
    let (co_n, ci_n, kh, kw) = kernel;
    let (_, h, wd) = x.dim();
    let (_, ho, wo) = grad.dim();
    let mut dw = Array4::zeros(kernel);
    for co in 0..co_n {
        for ci in 0..ci_n {
            for a in 0..kh {
                for b in 0..kw {
                    let mut acc = T::zero();
                    for i in 0..ho {
                        let Some(hi) = (i * g.stride.0 + a).checked_sub(g.padding.0).filter(|&v| v < h) else {
                            continue;
                        };
                        for j in 0..wo {
                            let Some(wj) = (j * g.stride.1 + b).checked_sub(g.padding.1).filter(|&v| v < wd) else {
                                continue;
                            };
                            acc += grad[[co, i, j]] * x[[ci, hi, wj]];
                        }
                    }
                    dw[[co, ci, a, b]] = acc;
                }
            }
        }
    }
    dw
}

/// `∂L/∂x` given the kernel and `∂L/∂z`.
fn conv_input_grad<T: Real>(
    w: &Array4<T>,
    grad: &Array3<T>,
    input_shape: (usize, usize, usize),
    g: ConvGeom,
) -> Array3<T> {
    let (co_n, ci_n, kh, kw) = w.dim();
    let (_, h, wd) = input_shape;
    let (_, ho, wo) = grad.dim();
    let mut dx = Array3::zeros(input_shape);
    for co in 0..co_n {
        for ci in 0..ci_n {
            for a in 0..kh {
                for b in 0..kw {
                    let wv = w[[co, ci, a, b]];
                    for i in 0..ho {
                        let Some(hi) = (i * g.stride.0 + a).checked_sub(g.padding.0).filter(|&v| v < h) else {
                            continue;
                        };
                        for j in 0..wo {
                            let Some(wj) = (j * g.stride.1 + b).checked_sub(g.padding.1).filter(|&v| v < wd) else {
                                continue;
                            };
                            dx[[ci, hi, wj]] += wv * grad[[co, i, j]];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// One complex convolution layer with real and imaginary kernels
/// `[C_out, C_in, kH, kW]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConvLayer<T> {
    pub w_r: Array4<T>,
    pub w_i: Array4<T>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub activation: Activation,
}

impl<T: Real> ComplexConvLayer<T> {
    pub fn new(
        w_r: Array4<T>,
        w_i: Array4<T>,
        stride: (usize, usize),
        padding: (usize, usize),
        activation: Activation,
    ) -> Result<Self> {
        if w_r.dim() != w_i.dim() {
            return Err(Error::DimensionMismatch("W_r and W_i shapes differ".into()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidInput("stride must be at least 1".into()));
        }
        if w_r.iter().chain(w_i.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight".into()));
        }
        Ok(ComplexConvLayer {
            w_r,
            w_i,
            stride,
            padding,
            activation,
        })
    }

    fn geom(&self) -> ConvGeom {
        ConvGeom {
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Pre-activation outputs `(W_r∗R − W_i∗I, W_i∗R + W_r∗I)`.
    fn pre_activation(&self, r: &Array3<T>, i: &Array3<T>) -> Result<(Array3<T>, Array3<T>)> {
        if r.dim() != i.dim() {
            return Err(Error::DimensionMismatch(
                "real and imaginary inputs differ in shape".into(),
            ));
        }
        let g = self.geom();
        let zr = conv_forward(&self.w_r, r, g)? - conv_forward(&self.w_i, i, g)?;
        let zi = conv_forward(&self.w_i, r, g)? + conv_forward(&self.w_r, i, g)?;
        Ok((zr, zi))
    }
}

/// `[F(W_r∗R − W_i∗I), F(W_i∗R + W_r∗I)]`.
pub fn complex_conv2d_forward<T: Real>(
    layer: &ComplexConvLayer<T>,
    r: &Array3<T>,
    i: &Array3<T>,
) -> Result<(Array3<T>, Array3<T>)> {
    let (zr, zi) = layer.pre_activation(r, i)?;
    let act = layer.activation;
    Ok((zr.mapv(|v| act.apply(v)), zi.mapv(|v| act.apply(v))))
}

/// Conv stack plus projection, built for a fixed mic count and bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder<T> {
    cfg: EmbedConfig,
    num_mics: usize,
    num_bins: usize,
    /// `branches[b][layer]`; naive/shared-separate: one branch;
    /// unshared-separate: real then imaginary branch; cross-product: `W_r`
    /// then `W_i`.
    branches: Vec<Vec<Array4<T>>>,
    /// `[H, C_last · F_last]`, column index `c · F_last + f`.
    projection: Array2<T>,
    out_bins: usize,
}

/// Forward intermediates for one real branch application.
struct RealTrace<T> {
    inputs: Vec<Array3<T>>,
    pre: Vec<Array3<T>>,
    out: Array3<T>,
}

/// Forward intermediates for the complex stack.
struct ComplexTrace<T> {
    inputs: Vec<(Array3<T>, Array3<T>)>,
    pre: Vec<(Array3<T>, Array3<T>)>,
    out: (Array3<T>, Array3<T>),
}

enum Trace<T> {
    Naive(RealTrace<T>),
    Separate(RealTrace<T>, RealTrace<T>),
    Complex(ComplexTrace<T>),
}

impl<T> Trace<T> {
    /// All pre-activations in a fixed order.
    fn pre_activations(&self) -> Vec<&Array3<T>> {
        match self {
            Trace::Naive(t) => t.pre.iter().collect(),
            Trace::Separate(a, b) => a.pre.iter().chain(&b.pre).collect(),
            Trace::Complex(c) => c.pre.iter().flat_map(|(r, i)| [r, i]).collect(),
        }
    }
}

/// Fused conv features and the projected embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutput<T> {
    /// `[C_last, F_last, T/4]`; `R² + I²` for separate and cross-product.
    pub fused: Array3<T>,
    /// `[H, T/4]`.
    pub embedding: Array2<T>,
}

impl<T: Real> Embedder<T> {
    /// Uniform initialisation in `±1/sqrt(fan_in)` from `seed`.
    pub fn new(cfg: EmbedConfig, num_mics: usize, num_bins: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if num_mics == 0 || num_bins == 0 {
            return Err(Error::InvalidInput("need at least one mic and one bin".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: (usize, usize, usize, usize), fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array4::from_shape_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
        };
        let mut branches = Vec::new();
        for _ in 0..cfg.branch_count() {
            let mut c_in = cfg.input_channels(num_mics);
            let mut layers = Vec::new();
            for l in &cfg.layers {
                let shape = (l.channels, c_in, l.kernel.0, l.kernel.1);
                layers.push(uniform(shape, c_in * l.kernel.0 * l.kernel.1));
                c_in = l.channels;
            }
            branches.push(layers);
        }
        let out_bins = cfg
            .layers
            .iter()
            .try_fold(num_bins, |f, l| l.out_len(f, 0))
            .ok_or_else(|| Error::InvalidInput(format!("{num_bins} bins too few for the conv stack")))?;
        let c_last = cfg.layers.last().map_or(0, |l| l.channels);
        let fan = c_last * out_bins;
        let bound = 1.0 / (fan as f64).sqrt();
        let projection = Array2::from_shape_fn((cfg.hidden_dim, fan), |_| T::lit(rng.random_range(-bound..=bound)));
        Ok(Embedder {
            cfg,
            num_mics,
            num_bins,
            branches,
            projection,
            out_bins,
        })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.cfg
    }

    pub fn num_mics(&self) -> usize {
        self.num_mics
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Conv stack kernels, per branch and layer.
    pub fn conv_weights(&self) -> &[Vec<Array4<T>>] {
        &self.branches
    }

    pub fn projection(&self) -> &Array2<T> {
        &self.projection
    }

    /// Parameters in the conv stack (projection excluded).
    pub fn conv_param_count(&self) -> usize {
        self.branches.iter().flatten().map(|w| w.len()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.conv_param_count() + self.projection.len()
    }

    /// All parameters, branches first (layer by layer, row-major) then the
    /// projection.
    pub fn params(&self) -> Vec<T> {
        self.branches
            .iter()
            .flatten()
            .flat_map(|w| w.iter().copied())
            .chain(self.projection.iter().copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut it = values.iter().copied();
        for w in self.branches.iter_mut().flatten() {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        self.projection
            .iter_mut()
            .for_each(|v| *v = it.next().expect("length checked"));
        Ok(())
    }

    fn set_param(&mut self, index: usize, value: T) {
        let mut idx = index;
        for w in self.branches.iter_mut().flatten() {
            if idx < w.len() {
                *w.iter_mut().nth(idx).expect("index in range") = value;
                return;
            }
            idx -= w.len();
        }
        *self.projection.iter_mut().nth(idx).expect("index in range") = value;
    }

    /// Replaces every weight with zero.
    pub fn zero_weights(&mut self) {
        self.branches.iter_mut().flatten().for_each(|w| w.fill(T::zero()));
        self.projection.fill(T::zero());
    }

    fn geom(&self, layer: usize) -> ConvGeom {
        let l = &self.cfg.layers[layer];
        ConvGeom {
            stride: l.stride,
            padding: l.padding,
        }
    }

    fn check_input(&self, input: &ComplexInputTensor<T>) -> Result<()> {
        let (c, f, t) = input.dim();
        if input.num_mics() != self.num_mics || c != 2 * self.num_mics * self.num_mics {
            return Err(Error::DimensionMismatch(format!(
                "input has {c} channels, embedder expects {}",
                2 * self.num_mics * self.num_mics
            )));
        }
        if f != self.num_bins {
            return Err(Error::DimensionMismatch(format!(
                "input has {f} bins, embedder built for {}",
                self.num_bins
            )));
        }
        if t == 0 || t % TIME_REDUCTION != 0 {
            return Err(Error::InvalidInput(format!(
                "frame count {t} not divisible by {TIME_REDUCTION}"
            )));
        }
        Ok(())
    }

    fn run_real(&self, branch: usize, x: Array3<T>) -> Result<RealTrace<T>> {
        let act = self.cfg.activation;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut cur = x;
        for (l, w) in self.branches[branch].iter().enumerate() {
            let z = conv_forward(w, &cur, self.geom(l))?;
            let a = z.mapv(|v| act.apply(v));
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        Ok(RealTrace { inputs, pre, out: cur })
    }

    fn run_complex(&self, r: Array3<T>, i: Array3<T>) -> Result<ComplexTrace<T>> {
        let act = self.cfg.activation;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut cur = (r, i);
        for l in 0..self.cfg.layers.len() {
            let layer = ComplexConvLayer {
                w_r: self.branches[0][l].clone(),
                w_i: self.branches[1][l].clone(),
                stride: self.cfg.layers[l].stride,
                padding: self.cfg.layers[l].padding,
                activation: act,
            };
            let (zr, zi) = layer.pre_activation(&cur.0, &cur.1)?;
            let next = (zr.mapv(|v| act.apply(v)), zi.mapv(|v| act.apply(v)));
            inputs.push(cur);
            pre.push((zr, zi));
            cur = next;
        }
        Ok(ComplexTrace { inputs, pre, out: cur })
    }

    fn trace(&self, input: &ComplexInputTensor<T>) -> Result<(Trace<T>, Array3<T>)> {
        self.check_input(input)?;
        let fuse = |r: &Array3<T>, i: &Array3<T>| {
            let mut f = r.mapv(|v| v * v);
            Zip::from(&mut f).and(i).for_each(|a, &b| *a += b * b);
            f
        };
        Ok(match self.cfg.variant {
            Variant::Naive => {
                let t = self.run_real(0, input.real_imag_stacked())?;
                let fused = t.out.clone();
                (Trace::Naive(t), fused)
            }
            Variant::Separate => {
                let (re, im) = input.split();
                let tr = self.run_real(0, re)?;
                let ti = self.run_real(self.branches.len() - 1, im)?;
                let fused = fuse(&tr.out, &ti.out);
                (Trace::Separate(tr, ti), fused)
            }
            Variant::CrossProduct => {
                let (re, im) = input.split();
                let tc = self.run_complex(re, im)?;
                let fused = fuse(&tc.out.0, &tc.out.1);
                (Trace::Complex(tc), fused)
            }
        })
    }

    fn project(&self, fused: &Array3<T>) -> Array2<T> {
        let (c, f, t) = fused.dim();
        let flat = fused
            .view()
            .into_shape_with_order((c * f, t))
            .expect("contiguous fused features");
        self.projection.dot(&flat)
    }

    /// Embedding `[H, T/4]` together with the fused conv features.
    pub fn forward_detailed(&self, input: &ComplexInputTensor<T>) -> Result<EmbedOutput<T>> {
        let (_, fused) = self.trace(input)?;
        let embedding = self.project(&fused);
        let expected_t = input.dim().2 / TIME_REDUCTION;
        if embedding.dim().1 != expected_t {
            return Err(Error::InvalidInput(format!(
                "conv stack produced {} frames, expected {expected_t}",
                embedding.dim().1
            )));
        }
        Ok(EmbedOutput { fused, embedding })
    }

    pub fn forward(&self, input: &ComplexInputTensor<T>) -> Result<Array2<T>> {
        Ok(self.forward_detailed(input)?.embedding)
    }

    /// Embedding plus the sign pattern of every ReLU pre-activation, from one
    /// pass. The pattern is used for kink detection.
    fn forward_with_pattern(&self, input: &ComplexInputTensor<T>) -> Result<(Array2<T>, Vec<bool>)> {
        let (trace, fused) = self.trace(input)?;
        let pattern = trace
            .pre_activations()
            .into_iter()
            .flat_map(|z| z.iter().map(|&v| v > T::zero()).collect::<Vec<_>>())
            .collect();
        Ok((self.project(&fused), pattern))
    }

    fn backprop_real(&self, branch: usize, trace: &RealTrace<T>, grad_out: Array3<T>) -> Vec<Array4<T>> {
        let act = self.cfg.activation;
        let n = trace.pre.len();
        let mut grads = vec![Array4::zeros((0, 0, 0, 0)); n];
        let mut g = grad_out;
        for l in (0..n).rev() {
            Zip::from(&mut g)
                .and(&trace.pre[l])
                .for_each(|d, &z| *d *= act.derivative(z));
            let w = &self.branches[branch][l];
            grads[l] = conv_weight_grad(&trace.inputs[l], &g, w.dim(), self.geom(l));
            if l > 0 {
                g = conv_input_grad(w, &g, trace.inputs[l].dim(), self.geom(l));
            }
        }
        grads
    }

    fn backprop_complex(
        &self,
        trace: &ComplexTrace<T>,
        grad_out: (Array3<T>, Array3<T>),
    ) -> (Vec<Array4<T>>, Vec<Array4<T>>) {
        let act = self.cfg.activation;
        let n = trace.pre.len();
        let mut gwr = vec![Array4::zeros((0, 0, 0, 0)); n];
        let mut gwi = vec![Array4::zeros((0, 0, 0, 0)); n];
        let (mut gr, mut gi) = grad_out;
        for l in (0..n).rev() {
            Zip::from(&mut gr)
                .and(&trace.pre[l].0)
                .for_each(|d, &z| *d *= act.derivative(z));
            Zip::from(&mut gi)
                .and(&trace.pre[l].1)
                .for_each(|d, &z| *d *= act.derivative(z));
            let (xr, xi) = &trace.inputs[l];
            let (wr, wi) = (&self.branches[0][l], &self.branches[1][l]);
            let g = self.geom(l);
            let shape = wr.dim();
            // zr = Wr∗R − Wi∗I, zi = Wi∗R + Wr∗I
            gwr[l] = conv_weight_grad(xr, &gr, shape, g) + conv_weight_grad(xi, &gi, shape, g);
            gwi[l] = conv_weight_grad(xr, &gi, shape, g) - conv_weight_grad(xi, &gr, shape, g);
            if l > 0 {
                let s = xr.dim();
                let nr = conv_input_grad(wr, &gr, s, g) + conv_input_grad(wi, &gi, s, g);
                let ni = conv_input_grad(wr, &gi, s, g) - conv_input_grad(wi, &gr, s, g);
                gr = nr;
                gi = ni;
            }
        }
        (gwr, gwi)
    }

    /// Gradient of `L = Σ upstream ⊙ embedding` with respect to every
    /// parameter, in [`Self::params`] order.
    pub fn gradients(&self, input: &ComplexInputTensor<T>, upstream: &Array2<T>) -> Result<Vec<T>> {
        let (trace, fused) = self.trace(input)?;
        let (c, f, t) = fused.dim();
        if upstream.dim() != (self.cfg.hidden_dim, t) {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient {:?}, embedding is {:?}",
                upstream.dim(),
                (self.cfg.hidden_dim, t)
            )));
        }
        let flat = fused
            .view()
            .into_shape_with_order((c * f, t))
            .expect("contiguous fused features");
        let d_proj = upstream.dot(&flat.t());
        let d_fused = self
            .projection
            .t()
            .dot(upstream)
            .into_shape_with_order((c, f, t))
            .expect("shape preserved");

        let two = T::lit(2.0);
        let conv_grads: Vec<Vec<Array4<T>>> = match &trace {
            Trace::Naive(tr) => vec![self.backprop_real(0, tr, d_fused)],
            Trace::Separate(tr, ti) => {
                let gr = &d_fused * &tr.out.mapv(|v| v * two);
                let gi = &d_fused * &ti.out.mapv(|v| v * two);
                let a = self.backprop_real(0, tr, gr);
                let b = self.backprop_real(self.branches.len() - 1, ti, gi);
                if self.branches.len() == 1 {
                    vec![a.into_iter().zip(b).map(|(x, y)| x + y).collect()]
                } else {
                    vec![a, b]
                }
            }
            Trace::Complex(tc) => {
                let gr = &d_fused * &tc.out.0.mapv(|v| v * two);
                let gi = &d_fused * &tc.out.1.mapv(|v| v * two);
                let (a, b) = self.backprop_complex(tc, (gr, gi));
                vec![a, b]
            }
        };
        Ok(conv_grads
            .iter()
            .flatten()
            .flat_map(|w| w.iter().copied())
            .chain(d_proj.iter().copied())
            .collect())
    }

    /// Parameters as `f64` tensors, in [`Self::params`] order.
    pub fn to_tensors(&self) -> Vec<ArrayD<f64>> {
        self.branches
            .iter()
            .flatten()
            .map(|w| w.mapv(|v| v.to_f64_lossy()).into_dyn())
            .chain(std::iter::once(self.projection.mapv(|v| v.to_f64_lossy()).into_dyn()))
            .collect()
    }

    /// Loads tensors written by [`Self::to_tensors`] into an embedder of the
    /// same configuration.
    pub fn load_tensors(&mut self, tensors: &[ArrayD<f64>]) -> Result<()> {
        let expected: Vec<Vec<usize>> = self
            .branches
            .iter()
            .flatten()
            .map(|w| w.shape().to_vec())
            .chain(std::iter::once(self.projection.shape().to_vec()))
            .collect();
        let got: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        if expected != got {
            return Err(Error::DimensionMismatch(format!(
                "tensor shapes {got:?}, expected {expected:?}"
            )));
        }
        let flat: Vec<T> = tensors.iter().flat_map(|t| t.iter().map(|&v| T::lit(v))).collect();
        self.set_params(&flat)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        io::write_tensors(&mut w, &self.to_tensors())?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        let tensors = io::read_tensors(std::io::BufReader::new(std::fs::File::open(path)?))?;
        self.load_tensors(&tensors)
    }
}

/// Embeds `input` with `embedder`.
pub fn embed_forward<T: Real>(embedder: &Embedder<T>, input: &ComplexInputTensor<T>) -> Result<Array2<T>> {
    embedder.forward(input)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub num_params: usize,
    /// Parameters skipped because a ±ε perturbation flipped some ReLU.
    pub kinks_skipped: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares analytic gradients with central differences (`ε = 1e-5`) for an
/// embedder initialised from `seed`. The scalar loss is a weighted sum of the
/// embedding with weights drawn uniformly from `[-1, 1]` using the same seed.
pub fn grad_check(cfg: &EmbedConfig, input: &ComplexInputTensor<f64>, seed: u64) -> Result<GradCheckReport> {
    let (_, f, t) = input.dim();
    let embedder = Embedder::<f64>::new(cfg.clone(), input.num_mics(), f, seed)?;
    grad_check_embedder(&embedder, input, seed, t / TIME_REDUCTION)
}

/// [`grad_check`] on an existing embedder.
pub fn grad_check_embedder(
    embedder: &Embedder<f64>,
    input: &ComplexInputTensor<f64>,
    seed: u64,
    out_frames: usize,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let weights = Array2::from_shape_fn((embedder.cfg.hidden_dim, out_frames), |_| rng.random_range(-1.0..=1.0));
    let relu = embedder.cfg.activation == Activation::Relu;
    let eval = |e: &Embedder<f64>| -> Result<(f64, Vec<bool>)> {
        let (out, pattern) = e.forward_with_pattern(input)?;
        Ok(((&out * &weights).sum(), pattern))
    };

    let analytic = embedder.gradients(input, &weights)?;
    if let Some(index) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let (_, base_pattern) = eval(embedder)?;
    let params = embedder.params();
    let mut probe = embedder.clone();
    let (mut max_err, mut kinks) = (0.0f64, 0usize);
    for (idx, &theta) in params.iter().enumerate() {
        probe.set_param(idx, theta + FD_EPSILON);
        let (plus, pattern_plus) = eval(&probe)?;
        probe.set_param(idx, theta - FD_EPSILON);
        let (minus, pattern_minus) = eval(&probe)?;
        probe.set_param(idx, theta);
        let crosses_plus = relu && pattern_plus != base_pattern;
        let crosses_minus = relu && pattern_minus != base_pattern;
        let numeric = (plus - minus) / (2.0 * FD_EPSILON);
        if !numeric.is_finite() {
            return Err(Error::NonFiniteGradient { index: idx });
        }
        if crosses_plus || crosses_minus {
            kinks += 1;
            continue;
        }
        max_err = max_err.max(relative_error(analytic[idx], numeric));
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        num_params: params.len(),
        kinks_skipped: kinks,
    })
}
