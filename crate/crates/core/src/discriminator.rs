//! Convolutional critic mirroring the generator ladder.

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::layers::{self, Conv, Linear, DEFAULT_GAIN};
use crate::params::{Binding, ParamStore};
use crate::rng;
use crate::{Graph, Tensor, Var};

pub const DEFAULT_GROUP_SIZE: usize = 8;

#[derive(Clone, Debug)]
struct DBlock {
    conv1: Conv,
    conv2: Conv,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    img_channels: usize,
    max_res: usize,
    ladder_res: usize,
    group_size: usize,
    slope: f32,
    params: ParamStore,
    from_channels: Conv,
    blocks: Vec<DBlock>,
    final_conv: Conv,
    fc: Linear,
    out: Linear,
}

impl Discriminator {
    /// Builds the mirror of the generator described by `config`: a 1×1
    /// input conv, one two-conv average-pooled block per generator block,
    /// then minibatch stddev, a 3×3 conv and two linear layers.
    pub fn new(config: &GeneratorConfig, group_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if group_size == 0 {
            return Err(Error::Config("group_size must be positive".into()));
        }
        let mut r = rng::stream(seed, &[rng::label::INIT_D]);
        let mut params = ParamStore::new();
        let ch = &config.channels;
        let nb = config.blocks;
        let top = ch[nb - 1];
        let from_channels = Conv::register(&mut params, "from_channels", config.img_channels, top, 1, DEFAULT_GAIN, &mut r);
        let mut blocks = Vec::with_capacity(nb);
        for j in 0..nb {
            let cin = ch[nb - 1 - j];
            let cout = ch[(nb - 1 - j).saturating_sub(1)];
            let conv1 = Conv::register(&mut params, &format!("blocks.{j}.conv1"), cin, cin, 3, DEFAULT_GAIN, &mut r);
            let conv2 = Conv::register(&mut params, &format!("blocks.{j}.conv2"), cin, cout, 3, DEFAULT_GAIN, &mut r);
            blocks.push(DBlock { conv1, conv2 });
        }
        let c0 = ch[0];
        let final_conv = Conv::register(&mut params, "final_conv", c0 + 1, c0, 3, DEFAULT_GAIN, &mut r);
        let flat = c0 * config.min_res * config.min_res;
        let fc = Linear::register(&mut params, "fc", flat, c0, DEFAULT_GAIN, |_| 0.0, &mut r);
        let out = Linear::register(&mut params, "out", c0, 1, 1.0, |_| 0.0, &mut r);
        Ok(Self {
            img_channels: config.img_channels,
            max_res: config.max_res,
            ladder_res: config.ladder_res(),
            group_size,
            slope: config.leaky_slope,
            params,
            from_channels,
            blocks,
            final_conv,
            fc,
            out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Logits `[N, 1]` for images `[N, C, max_res, max_res]` on a graph.
    pub fn score_graph(&self, g: &mut Graph, b: &Binding, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != self.img_channels || s[2] != self.max_res || s[3] != self.max_res {
            return Err(Error::InvalidArgument(format!(
                "discriminator expects [N, {}, {r}, {r}], got {s:?}",
                self.img_channels,
                r = self.max_res
            )));
        }
        let mut x = images;
        if self.ladder_res != self.max_res {
            x = g.pad_center(x, self.ladder_res, self.ladder_res)?;
        }
        x = self.from_channels.forward(g, b, x)?;
        x = g.leaky_relu(x, self.slope);
        for blk in &self.blocks {
            x = blk.conv1.forward(g, b, x)?;
            x = g.leaky_relu(x, self.slope);
            x = blk.conv2.forward(g, b, x)?;
            x = g.leaky_relu(x, self.slope);
            x = g.avg_pool2(x)?;
        }
        x = layers::minibatch_stddev(g, x, self.group_size)?;
        x = self.final_conv.forward(g, b, x)?;
        x = g.leaky_relu(x, self.slope);
        let n = s[0];
        let flat: usize = g.shape(x)[1..].iter().product();
        x = g.reshape(x, &[n, flat])?;
        x = self.fc.forward(g, b, x)?;
        x = g.leaky_relu(x, self.slope);
        self.out.forward(g, b, x)
    }

    /// Realness logits `[N, 1]`.
    pub fn get_score(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let y = self.score_graph(&mut g, &b, x)?;
        Ok(g.value(y).clone())
    }
}

/// Elementwise logistic sigmoid.
pub fn probability(logits: &Tensor) -> Tensor {
    logits.map(|x| {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    })
}

/// Mean of `probability(logits)`, accumulated in `f64`.
pub fn mean_probability(logits: &Tensor) -> f64 {
    probability(logits).mean()
}
