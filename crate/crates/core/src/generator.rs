//! Style-based generator: mapping network, synthesis blocks, style mixing,
//! truncation and the moving-average copy.

use serde::{Deserialize, Serialize};

use crate::autodiff::UpsampleMode;
use crate::error::{Error, Result};
use crate::layers::{self, Conv, Linear, NoiseInjector, StyleAffine, DEFAULT_GAIN};
use crate::params::{Binding, ParamId, ParamStore, Role};
use crate::rng;
use crate::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub latent_size: usize,
    pub n_layers: usize,
    pub img_channels: usize,
    pub min_res: usize,
    pub blocks: usize,
    pub max_res: usize,
    /// Output channels of each synthesis block, coarse to fine.
    pub channels: Vec<usize>,
    pub leaky_slope: f32,
    pub truncation_psi: f32,
    /// Truncation applies to style layers below this index. `None` means all.
    pub truncation_cutoff: Option<usize>,
    pub w_avg_decay: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl GeneratorConfig {
    /// 16×16 output from two blocks.
    pub fn desk() -> Self {
        Self {
            latent_size: 512,
            n_layers: 8,
            img_channels: 3,
            min_res: 4,
            blocks: 2,
            max_res: 16,
            channels: vec![64, 32],
            leaky_slope: 0.2,
            truncation_psi: 1.0,
            truncation_cutoff: None,
            w_avg_decay: 0.995,
        }
    }

    /// 128×128 output from five blocks.
    pub fn full() -> Self {
        Self {
            blocks: 5,
            max_res: 128,
            channels: vec![256, 256, 128, 64, 32],
            ..Self::desk()
        }
    }

    /// Side length produced by the block ladder before any crop.
    pub fn ladder_res(&self) -> usize {
        self.min_res << self.blocks
    }

    pub fn num_style_layers(&self) -> usize {
        2 * self.blocks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.latent_size == 0 || self.img_channels == 0 || self.min_res == 0 || self.blocks == 0 {
            return bad("latent_size, img_channels, min_res and blocks must be positive".into());
        }
        if self.blocks > 12 {
            return bad(format!("blocks = {} is too deep", self.blocks));
        }
        let hi = self.min_res << self.blocks;
        let lo = (self.min_res - 1) << self.blocks;
        if self.max_res > hi || self.max_res < lo || self.max_res == 0 {
            return bad(format!(
                "max_res {} outside [{lo}, {hi}] for min_res {} and {} blocks",
                self.max_res, self.min_res, self.blocks
            ));
        }
        if self.channels.len() != self.blocks || self.channels.contains(&0) {
            return bad(format!(
                "channels {:?} must list {} positive widths",
                self.channels, self.blocks
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope {} not in (0, 1)", self.leaky_slope));
        }
        if !(0.0..=1.0).contains(&self.truncation_psi) {
            return bad(format!("truncation_psi {} not in [0, 1]", self.truncation_psi));
        }
        if let Some(c) = self.truncation_cutoff {
            if c > self.num_style_layers() {
                return bad(format!("truncation_cutoff {c} exceeds {} style layers", self.num_style_layers()));
            }
        }
        if !(0.0..=1.0).contains(&self.w_avg_decay) {
            return bad(format!("w_avg_decay {} not in [0, 1]", self.w_avg_decay));
        }
        Ok(())
    }
}

/// Per-layer w vectors, `[N, layers, latent_size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WBatch {
    w: Tensor,
}

impl WBatch {
    pub fn new(w: Tensor) -> Result<Self> {
        if w.rank() != 3 {
            return Err(Error::InvalidArgument(format!("w batch must be rank 3, got {:?}", w.shape())));
        }
        Ok(Self { w })
    }

    /// Repeats `w: [N, L]` for every style layer.
    pub fn broadcast(w: &Tensor, layers: usize) -> Result<Self> {
        if w.rank() != 2 || layers == 0 {
            return Err(Error::InvalidArgument(format!("expected [N, L] w, got {:?}", w.shape())));
        }
        let (n, l) = (w.shape()[0], w.shape()[1]);
        let mut data = Vec::with_capacity(n * layers * l);
        for row in w.data().chunks(l) {
            for _ in 0..layers {
                data.extend_from_slice(row);
            }
        }
        Self::new(Tensor::new(vec![n, layers, l], data)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layers(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn latent_size(&self) -> usize {
        self.w.shape()[2]
    }

    /// Layers `[0, crossover)` from `w1`, the rest from `w2`.
    pub fn style_mix(w1: &WBatch, w2: &WBatch, crossover: usize) -> Result<WBatch> {
        if w1.w.shape() != w2.w.shape() {
            return Err(Error::InvalidArgument(format!(
                "style_mix shapes {:?} and {:?}",
                w1.w.shape(),
                w2.w.shape()
            )));
        }
        if crossover > w1.layers() {
            return Err(Error::InvalidArgument(format!(
                "crossover {crossover} outside [0, {}]",
                w1.layers()
            )));
        }
        let l = w1.latent_size();
        let mut data = w2.w.data().to_vec();
        for (k, row) in data.chunks_mut(l).enumerate() {
            if k % w1.layers() < crossover {
                row.copy_from_slice(&w1.w.data()[k * l..(k + 1) * l]);
            }
        }
        Self::new(Tensor::new(w1.w.shape().to_vec(), data)?)
    }

    /// `w_avg + psi · (w − w_avg)` on layers below `cutoff`.
    pub fn truncate(&self, w_avg: &Tensor, psi: f32, cutoff: usize) -> Result<WBatch> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::InvalidArgument(format!("truncation psi {psi} not in [0, 1]")));
        }
        let l = self.latent_size();
        if w_avg.len() != l {
            return Err(Error::InvalidArgument(format!(
                "w_avg has {} entries, latent size is {l}",
                w_avg.len()
            )));
        }
        if psi == 1.0 {
            return Ok(self.clone());
        }
        let avg = w_avg.data();
        let mut data = self.w.data().to_vec();
        for (k, row) in data.chunks_mut(l).enumerate() {
            if k % self.layers() < cutoff {
                for (v, a) in row.iter_mut().zip(avg) {
                    *v = a + psi * (*v - a);
                }
            }
        }
        Self::new(Tensor::new(self.w.shape().to_vec(), data)?)
    }
}

#[derive(Clone, Debug)]
struct GBlock {
    upconv: Conv,
    upconv_style: StyleAffine,
    conv: Conv,
    conv_style: StyleAffine,
    noise: NoiseInjector,
    noise2: NoiseInjector,
    to_channels: Conv,
    to_channels_style: StyleAffine,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    mapping: Vec<Linear>,
    input: ParamId,
    blocks: Vec<GBlock>,
    w_avg: ParamId,
}

impl Generator {
    /// Fresh weights: raw N(0,1), zero biases, style scale bias 1, zero noise
    /// strengths, constant input of ones.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, &[rng::label::INIT_G]);
        let mut params = ParamStore::new();
        let l = config.latent_size;
        let mapping = (0..config.n_layers)
            .map(|i| Linear::register(&mut params, &format!("Map_Net.{i}"), l, l, DEFAULT_GAIN, |_| 0.0, &mut r))
            .collect();
        let c0 = config.channels[0];
        let input = params.add(
            "Src_Net.input",
            Tensor::ones(vec![c0, config.min_res, config.min_res]),
            Role::ConstInput,
        );
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut prev = c0;
        for (b, &ch) in config.channels.iter().enumerate() {
            let p = format!("Src_Net.{b}");
            let upconv = Conv::register(&mut params, &format!("{p}.upconv"), prev, ch, 3, DEFAULT_GAIN, &mut r);
            let upconv_style = StyleAffine::register(&mut params, &format!("{p}.upconv"), l, ch, false, &mut r);
            let conv = Conv::register(&mut params, &format!("{p}.conv"), ch, ch, 3, DEFAULT_GAIN, &mut r);
            let conv_style = StyleAffine::register(&mut params, &format!("{p}.conv"), l, ch, false, &mut r);
            let noise = NoiseInjector::register(&mut params, &format!("{p}.noise"), ch);
            let noise2 = NoiseInjector::register(&mut params, &format!("{p}.noise2"), ch);
            let to_channels = Conv::register(
                &mut params,
                &format!("{p}.to_channels"),
                ch,
                config.img_channels,
                1,
                1.0,
                &mut r,
            );
            let to_channels_style = StyleAffine::register(&mut params, &format!("{p}.to_channels"), l, ch, true, &mut r);
            blocks.push(GBlock {
                upconv,
                upconv_style,
                conv,
                conv_style,
                noise,
                noise2,
                to_channels,
                to_channels_style,
            });
            prev = ch;
        }
        let w_avg = params.add("Src_Net.w_avg", Tensor::zeros(vec![l]), Role::Buffer);
        Ok(Self {
            config,
            params,
            mapping,
            input,
            blocks,
            w_avg,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_style_layers(&self) -> usize {
        self.config.num_style_layers()
    }

    pub fn w_avg(&self) -> &Tensor {
        self.params.get(self.w_avg)
    }

    /// Same network with the equalized multipliers folded into the weights.
    pub fn baked(&self) -> Self {
        Self {
            params: self.params.baked(),
            ..self.clone()
        }
    }

    fn check_latent(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.config.latent_size {
            return Err(Error::InvalidArgument(format!(
                "latents must be [N, {}], got {shape:?}",
                self.config.latent_size
            )));
        }
        Ok(())
    }

    /// Mapping network on graph values: pixel norm then leaky linears.
    pub fn map_graph(&self, g: &mut Graph, b: &Binding, z: Var) -> Result<Var> {
        self.check_latent(g.shape(z))?;
        let mut x = layers::pixel_norm(g, z)?;
        for lin in &self.mapping {
            x = lin.forward(g, b, x)?;
            x = g.leaky_relu(x, self.config.leaky_slope);
        }
        Ok(x)
    }

    /// Synthesis network. `ws` holds one `[N, L]` vector per style layer.
    pub fn synth_graph(&self, g: &mut Graph, b: &Binding, ws: &[Var], noise_seed: u64) -> Result<Var> {
        if ws.len() != self.num_style_layers() {
            return Err(Error::InvalidArgument(format!(
                "{} style vectors for {} style layers",
                ws.len(),
                self.num_style_layers()
            )));
        }
        let n = g.shape(ws[0])[0];
        let slope = self.config.leaky_slope;
        let mut x = g.repeat_batch(b.get(self.input), n)?;
        let mut image: Option<Var> = None;
        for (i, blk) in self.blocks.iter().enumerate() {
            let (w0, w1) = (ws[2 * i], ws[2 * i + 1]);
            x = g.upsample2(x, UpsampleMode::Nearest)?;
            x = blk.upconv.forward(g, b, x)?;
            let (h, w) = (g.shape(x)[2], g.shape(x)[3]);
            x = blk.noise.forward(g, b, x, layers::noise_map(noise_seed, i, 0, n, h, w))?;
            let s = blk.upconv_style.forward(g, b, w0)?;
            x = layers::adain(g, x, s.scale, s.shift)?;
            x = g.leaky_relu(x, slope);
            x = blk.conv.forward(g, b, x)?;
            x = blk.noise2.forward(g, b, x, layers::noise_map(noise_seed, i, 1, n, h, w))?;
            let s = blk.conv_style.forward(g, b, w1)?;
            x = layers::adain(g, x, s.scale, s.shift)?;
            x = g.leaky_relu(x, slope);
            let s = blk.to_channels_style.forward(g, b, w1)?;
            let modulated = g.channel_affine(x, Some(s.scale), None)?;
            let img = blk.to_channels.forward(g, b, modulated)?;
            image = Some(match image {
                None => img,
                Some(prev) => {
                    let up = g.upsample2(prev, UpsampleMode::Bilinear)?;
                    g.add(img, up)?
                }
            });
        }
        let mut out = image.expect("at least one block");
        let r = self.config.max_res;
        if g.shape(out)[2] != r {
            out = g.crop_center(out, r, r)?;
        }
        Ok(out)
    }

    /// Splits a constant `[N, S, L]` w batch into per-layer graph values.
    pub fn w_vars(&self, g: &mut Graph, w: &WBatch) -> Result<Vec<Var>> {
        if w.layers() != self.num_style_layers() || w.latent_size() != self.config.latent_size {
            return Err(Error::InvalidArgument(format!(
                "w batch {:?} does not fit {} layers of width {}",
                w.tensor().shape(),
                self.num_style_layers(),
                self.config.latent_size
            )));
        }
        let all = g.constant(w.tensor().clone());
        let (n, l) = (w.len(), w.latent_size());
        (0..w.layers())
            .map(|k| {
                let slice = g.narrow(all, 1, k, 1)?;
                Ok(g.reshape(slice, &[n, l])?)
            })
            .collect()
    }

    /// z → w for a batch of latents `[N, latent_size]`.
    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let b = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let w = self.map_graph(&mut g, &b, zv)?;
        Ok(g.value(w).clone())
    }

    /// Images `[N, img_channels, max_res, max_res]` from per-layer w vectors.
    pub fn synthesize(&self, w: &WBatch, noise_seed: u64) -> Result<Tensor> {
        let mut g = Graph::inference();
        let b = self.params.bind(&mut g, false);
        let ws = self.w_vars(&mut g, w)?;
        let img = self.synth_graph(&mut g, &b, &ws, noise_seed)?;
        Ok(g.value(img).clone())
    }

    pub fn truncation_cutoff(&self) -> usize {
        self.config.truncation_cutoff.unwrap_or(self.num_style_layers())
    }

    /// Maps, applies truncation with `psi`, and synthesizes.
    pub fn generate(&self, z: &Tensor, noise_seed: u64, psi: f32) -> Result<Tensor> {
        let w = self.map_latent(z)?;
        let wb = WBatch::broadcast(&w, self.num_style_layers())?;
        let wb = wb.truncate(self.w_avg(), psi, self.truncation_cutoff())?;
        self.synthesize(&wb, noise_seed)
    }

    /// Moves `w_avg` towards the batch mean of `w: [N, L]`.
    pub fn update_w_avg(&mut self, w: &Tensor) {
        let l = self.config.latent_size;
        let n = w.len() / l;
        let decay = self.config.w_avg_decay;
        let mut mean = vec![0.0f64; l];
        for row in w.data().chunks(l) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v as f64;
            }
        }
        let avg = self.params.get_mut(self.w_avg).data_mut();
        for (a, m) in avg.iter_mut().zip(mean) {
            let m = (m / n as f64) as f32;
            *a = m + decay * (*a - m);
        }
    }

    /// `stable ← decay·stable + (1−decay)·live` for every trainable tensor.
    /// Buffers are copied.
    pub fn ema_update(stable: &mut Generator, live: &Generator, decay: f32) -> Result<()> {
        stable.params.check_compatible(&live.params)?;
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("ema decay {decay} not in [0, 1]")));
        }
        for ((_, s), (_, l)) in stable.params.iter_mut().zip(live.params.iter()) {
            if !s.role.trainable() {
                s.value = l.value.clone();
                continue;
            }
            for (a, b) in s.value.data_mut().iter_mut().zip(l.value.data()) {
                *a = decay * *a + (1.0 - decay) * *b;
            }
        }
        Ok(())
    }
}
