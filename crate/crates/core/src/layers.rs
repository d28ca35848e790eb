//! Layer descriptors. Each layer owns [`ParamId`]s into a [`ParamStore`] and
//! builds its forward pass on a [`Graph`] through a [`Binding`].

use rand::Rng;

use crate::error::Result;
use crate::params::{Binding, EqualizedParam, ParamId, ParamStore, Role};
use crate::rng;
use crate::{Graph, Tensor, Var};

pub const WEIGHT_SUFFIX: &str = "weight_orig";
pub const DEFAULT_GAIN: f64 = 2.0;

fn register_weight<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    shape: Vec<usize>,
    gain: f64,
    rng: &mut R,
) -> ParamId {
    let fan_in = shape[1..].iter().product();
    store.add(
        format!("{prefix}.{WEIGHT_SUFFIX}"),
        Tensor::randn(shape, rng),
        Role::Weight(EqualizedParam::new(fan_in, gain)),
    )
}

/// Equalized fully connected layer, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        bias_init: impl Fn(usize) -> f32,
        rng: &mut R,
    ) -> Self {
        let weight = register_weight(store, prefix, vec![outputs, inputs], gain, rng);
        let bias = store.add(format!("{prefix}.bias"), Tensor::from_fn(vec![outputs], bias_init), Role::Bias);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let wt = g.transpose(b.get(self.weight))?;
        let y = g.matmul(x, wt)?;
        Ok(g.add(y, b.get(self.bias))?)
    }
}

/// Equalized convolution, weight `[out, in, k, k]`, "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(vec![outputs]), Role::Bias);
        let weight = register_weight(store, prefix, vec![outputs, inputs, kernel, kernel], gain, rng);
        Self {
            weight,
            bias,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, b.get(self.weight), Some(b.get(self.bias)), 1, self.pad)?)
    }
}

/// Learned affine map from a w vector to per-channel `(y_s, y_b)`, or to
/// `y_s` alone when `scale_only`. The `y_s` bias starts at 1.
#[derive(Clone, Debug)]
pub struct StyleAffine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub scale_only: bool,
}

pub struct Style {
    pub scale: Var,
    pub shift: Option<Var>,
}

impl StyleAffine {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        latent_size: usize,
        channels: usize,
        scale_only: bool,
        rng: &mut R,
    ) -> Self {
        let outputs = if scale_only { channels } else { 2 * channels };
        let bias = store.add(
            format!("{prefix}.style.bias"),
            Tensor::from_fn(vec![outputs], |i| if i < channels { 1.0 } else { 0.0 }),
            Role::Bias,
        );
        let weight = register_weight(store, &format!("{prefix}.style"), vec![outputs, latent_size], 1.0, rng);
        Self {
            weight,
            bias,
            channels,
            scale_only,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, w: Var) -> Result<Style> {
        let lin = Linear {
            weight: self.weight,
            bias: self.bias,
        };
        let y = lin.forward(g, b, w)?;
        if self.scale_only {
            return Ok(Style { scale: y, shift: None });
        }
        let scale = g.narrow(y, 1, 0, self.channels)?;
        let shift = g.narrow(y, 1, self.channels, self.channels)?;
        Ok(Style {
            scale,
            shift: Some(shift),
        })
    }
}

/// Per-channel strength for a single-channel noise image. Starts at 0.
#[derive(Clone, Debug)]
pub struct NoiseInjector {
    pub strength: ParamId,
}

impl NoiseInjector {
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let strength = store.add(
            format!("{prefix}.noise_strength"),
            Tensor::zeros(vec![channels]),
            Role::NoiseStrength,
        );
        Self { strength }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var, noise: Tensor) -> Result<Var> {
        Ok(g.inject_noise(x, b.get(self.strength), noise)?)
    }
}

/// Noise image `[n, 1, h, w]` for one injector. A single N(0,1) map is
/// drawn from `(seed, block, injector)` and shared by every sample.
pub fn noise_map(seed: u64, block: usize, injector: usize, n: usize, h: usize, w: usize) -> Tensor {
    let mut r = rng::stream(seed, &[rng::label::NOISE, block as u64, injector as u64]);
    let plane: Tensor = Tensor::randn(vec![h * w], &mut r);
    let mut data = Vec::with_capacity(n * h * w);
    for _ in 0..n {
        data.extend_from_slice(plane.data());
    }
    Tensor::new(vec![n, 1, h, w], data).expect("noise shape")
}

/// `y_s · (x − μ(x)) / σ(x) + y_b` per sample and channel.
pub fn adain(g: &mut Graph, x: Var, y_s: Var, y_b: Option<Var>) -> Result<Var> {
    let normed = g.instance_norm(x)?;
    Ok(g.channel_affine(normed, Some(y_s), y_b)?)
}

/// Row-wise normalization to unit RMS.
pub fn pixel_norm(g: &mut Graph, z: Var) -> Result<Var> {
    Ok(g.pixel_norm(z)?)
}

/// Largest divisor of `n` that does not exceed `group_size`.
pub fn stddev_group(n: usize, group_size: usize) -> usize {
    (1..=group_size.min(n).max(1)).rev().find(|d| n % d == 0).unwrap_or(1)
}

/// Appends the group standard-deviation feature map.
pub fn minibatch_stddev(g: &mut Graph, x: Var, group_size: usize) -> Result<Var> {
    let n = g.shape(x)[0];
    Ok(g.minibatch_stddev(x, stddev_group(n, group_size))?)
}
