//! Latent sampling, scaling and per-dimension edits.
//!
//! A [`LatentBatch`] keeps its sampled `z` untouched and records edits as a
//! global scale plus per-dimension offsets, so `+δ` followed by `−δ` on the
//! same dimension gives back the original values exactly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::generator::{Generator, WBatch};
use crate::rng;
use crate::Tensor;

pub const SCALING_FACTORS: [f32; 9] = [0.05, 0.10, 0.25, 0.5, 1.0, 1.5, 2.5, 5.0, 10.0];
pub const DELTA_BOUND: f32 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    z: Tensor,
    seed: u64,
    scale: f64,
    offsets: BTreeMap<usize, f64>,
}

/// N(0, I) latents `[n, latent_size]` from `seed`.
pub fn sample_latents(n: usize, latent_size: usize, seed: u64) -> Result<LatentBatch> {
    if n == 0 || latent_size == 0 {
        return Err(Error::InvalidArgument("latent batch must be non-empty".into()));
    }
    let mut r = rng::stream(seed, &[rng::label::LATENT]);
    Ok(LatentBatch {
        z: Tensor::randn(vec![n, latent_size], &mut r),
        seed,
        scale: 1.0,
        offsets: BTreeMap::new(),
    })
}

impl LatentBatch {
    /// Wraps existing latents `[N, L]`.
    pub fn from_tensor(z: Tensor, seed: u64) -> Result<Self> {
        if z.rank() != 2 {
            return Err(Error::InvalidArgument(format!("latents must be [N, L], got {:?}", z.shape())));
        }
        Ok(Self {
            z,
            seed,
            scale: 1.0,
            offsets: BTreeMap::new(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_size(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn base(&self) -> &Tensor {
        &self.z
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Nonzero per-dimension offsets.
    pub fn offsets(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.offsets.iter().map(|(&d, &o)| (d, o))
    }

    /// Current values `scale·z + offset`.
    pub fn values(&self) -> Tensor {
        apply_edit(&self.z, self.scale, &self.offsets)
    }
}

fn apply_edit(z: &Tensor, scale: f64, offsets: &BTreeMap<usize, f64>) -> Tensor {
    if scale == 1.0 && offsets.is_empty() {
        return z.clone();
    }
    let l = z.shape()[1];
    let s = scale as f32;
    let mut out = z.map(|v| v * s);
    for row in out.data_mut().chunks_mut(l) {
        for (&d, &o) in offsets {
            row[d] += o as f32;
        }
    }
    out
}

/// Multiplies the whole batch (including existing offsets) by `factor`.
pub fn scale_latent(batch: &LatentBatch, factor: f32) -> Result<LatentBatch> {
    if !factor.is_finite() {
        return Err(Error::InvalidArgument(format!("scale factor {factor} is not finite")));
    }
    let f = factor as f64;
    let mut out = batch.clone();
    out.scale *= f;
    out.offsets.values_mut().for_each(|o| *o *= f);
    out.offsets.retain(|_, o| *o != 0.0);
    Ok(out)
}

/// Per-dimension deltas and a global scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub deltas: Vec<(usize, f32)>,
    pub scale: f32,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            deltas: Vec::new(),
            scale: 1.0,
        }
    }
}

impl Perturbation {
    pub fn new(deltas: Vec<(usize, f32)>, scale: f32) -> Self {
        Self { deltas, scale }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.deltas.iter().all(|&(_, d)| d == 0.0)
    }

    /// Checks indices against `latent_size`, uniqueness, finiteness, and
    /// `|δ| ≤ bound` unless `bound` is `None`.
    pub fn validate(&self, latent_size: usize, bound: Option<f32>) -> Result<()> {
        if !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!("scale {} is not finite", self.scale)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(d, delta) in &self.deltas {
            if d >= latent_size {
                return Err(Error::InvalidArgument(format!(
                    "dimension {d} out of range for latent size {latent_size}"
                )));
            }
            if !seen.insert(d) {
                return Err(Error::InvalidArgument(format!("dimension {d} listed twice")));
            }
            if !delta.is_finite() {
                return Err(Error::InvalidArgument(format!("delta {delta} on dimension {d} is not finite")));
            }
            if let Some(b) = bound {
                if delta.abs() > b {
                    return Err(Error::InvalidArgument(format!(
                        "delta {delta} on dimension {d} exceeds ±{b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `z'[., d] = scale·z[., d] + δ_d` for listed `d`, other dimensions scaled
/// only. The input batch is not modified.
pub fn perturb(batch: &LatentBatch, p: &Perturbation, bound: Option<f32>) -> Result<LatentBatch> {
    p.validate(batch.latent_size(), bound)?;
    let mut out = scale_latent(batch, p.scale)?;
    for &(d, delta) in &p.deltas {
        let o = out.offsets.entry(d).or_insert(0.0);
        *o += delta as f64;
        if *o == 0.0 {
            out.offsets.remove(&d);
        }
    }
    Ok(out)
}

/// Where a perturbation is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Space {
    /// Before the mapping network.
    #[default]
    Z,
    /// After the mapping network, on every style layer.
    W,
}

#[derive(Clone, Debug)]
pub struct ImagePair {
    pub before: Tensor,
    pub after: Tensor,
    /// Per-image L2 distance between `before` and `after`.
    pub distances: Vec<f64>,
}

/// Per-image Euclidean distance between two `[N, ...]` batches.
pub fn l2_distances(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = a.shape()[0];
    let per = a.len() / n;
    a.data()
        .chunks(per)
        .zip(b.data().chunks(per))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| {
                    let d = (*p - *q) as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Images from `base` and from `base` edited by `p`, with one shared noise
/// seed so only the latent change moves pixels.
pub fn compare_pair(
    g: &Generator,
    base: &LatentBatch,
    p: &Perturbation,
    noise_seed: u64,
    psi: f32,
    space: Space,
    bound: Option<f32>,
) -> Result<ImagePair> {
    let layers = g.num_style_layers();
    let cutoff = g.truncation_cutoff();
    let (before, after) = match space {
        Space::Z => {
            let edited = perturb(base, p, bound)?;
            let before = g.generate(&base.values(), noise_seed, psi)?;
            let after = if edited == *base {
                before.clone()
            } else {
                g.generate(&edited.values(), noise_seed, psi)?
            };
            (before, after)
        }
        Space::W => {
            let w = g.map_latent(&base.values())?;
            let wb = LatentBatch::from_tensor(w, base.seed())?;
            let edited = perturb(&wb, p, bound)?;
            let render = |b: &LatentBatch| -> Result<Tensor> {
                let batch = WBatch::broadcast(&b.values(), layers)?.truncate(g.w_avg(), psi, cutoff)?;
                g.synthesize(&batch, noise_seed)
            };
            let before = render(&wb)?;
            let after = if edited == wb { before.clone() } else { render(&edited)? };
            (before, after)
        }
    };
    let distances = l2_distances(&before, &after);
    Ok(ImagePair {
        before,
        after,
        distances,
    })
}
