//! Magnitude pruning of `weight_orig` tensors and the threshold sweep.

use indexmap::IndexMap;

use crate::discriminator::{mean_probability, Discriminator};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::layers::WEIGHT_SUFFIX;
use crate::params::ParamStore;
use crate::Tensor;

/// Biases, noise strengths, the constant input and buffers are never pruned.
pub fn is_prunable(key: &str) -> bool {
    key.ends_with(WEIGHT_SUFFIX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PruneScope {
    /// One threshold for the whole network.
    #[default]
    Global,
    /// Each tensor uses `threshold × std(tensor)`.
    PerLayer,
}

/// Binary keep-masks keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    pub threshold: f64,
    pub masks: IndexMap<String, Tensor>,
}

impl PruneMask {
    pub fn kept(&self) -> usize {
        self.masks.values().map(|m| m.data().iter().filter(|&&v| v != 0.0).count()).sum()
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("prune threshold {t} must be ≥ 0")));
    }
    Ok(())
}

/// Zeroes entries with `|w| < threshold` and keeps `|w| ≥ threshold`.
/// Returns the number kept.
pub fn prune_slice(w: &mut [f32], threshold: f64) -> usize {
    let mut kept = 0;
    for v in w.iter_mut() {
        if (v.abs() as f64) >= threshold {
            kept += 1;
        } else {
            *v = 0.0;
        }
    }
    kept
}

fn population_std(d: &[f32]) -> f64 {
    crate::tensor::kernels::moments(d).1.sqrt()
}

/// Prunes every prunable tensor of `store` in place.
pub fn prune_store(store: &mut ParamStore, threshold: f64, scope: PruneScope) -> Result<PruneMask> {
    check_threshold(threshold)?;
    let mut masks = IndexMap::new();
    for (key, p) in store.iter_mut() {
        if !is_prunable(key) {
            continue;
        }
        let t = match scope {
            PruneScope::Global => threshold,
            PruneScope::PerLayer => threshold * population_std(p.value.data()),
        };
        let mask = p.value.map(|v| if (v.abs() as f64) >= t { 1.0 } else { 0.0 });
        prune_slice(p.value.data_mut(), t);
        masks.insert(key.to_string(), mask);
    }
    Ok(PruneMask { threshold, masks })
}

/// Network-wide pruning of the generator's weights.
pub fn prune_generator(g: &mut Generator, threshold: f64) -> Result<PruneMask> {
    prune_store(g.params_mut(), threshold, PruneScope::Global)
}

/// Nonzero entries across prunable tensors.
pub fn count_nonzero(store: &ParamStore) -> usize {
    store
        .iter()
        .filter(|(k, _)| is_prunable(k))
        .map(|(_, p)| p.value.data().iter().filter(|&&v| v != 0.0).count())
        .sum()
}

/// Element count across prunable tensors.
pub fn total_weights(store: &ParamStore) -> usize {
    store.iter().filter(|(k, _)| is_prunable(k)).map(|(_, p)| p.value.len()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStat {
    pub key: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl WeightStat {
    fn of(key: String, d: &[f32]) -> Self {
        let (mean, var) = crate::tensor::kernels::moments(d);
        let (min, max) = d
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v as f64), b.max(v as f64)));
        Self {
            key,
            min,
            max,
            mean,
            std: var.sqrt(),
            count: d.len(),
        }
    }
}

/// Per-tensor statistics over prunable weights plus an aggregate row
/// keyed `total`.
pub fn weight_stats(store: &ParamStore) -> (Vec<WeightStat>, WeightStat) {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (key, p) in store.iter() {
        if is_prunable(key) {
            rows.push(WeightStat::of(key.to_string(), p.value.data()));
            all.extend_from_slice(p.value.data());
        }
    }
    let total = if all.is_empty() {
        WeightStat {
            key: "total".into(),
            min: 0.0,
            max: 0.0,
            mean: 0.0,
            std: 0.0,
            count: 0,
        }
    } else {
        WeightStat::of("total".into(), &all)
    };
    (rows, total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// One copy pruned at each threshold in turn; masks nest.
    #[default]
    Cumulative,
    /// Every threshold starts again from the original weights.
    Pristine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepParams {
    pub start: f64,
    pub end: f64,
    pub step: f64,
    pub image_every: usize,
    pub mode: SweepMode,
    pub noise_seed: u64,
    pub psi: f32,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 1.0,
            step: 0.001,
            image_every: 20,
            mode: SweepMode::Cumulative,
            noise_seed: 0,
            psi: 1.0,
        }
    }
}

/// `start + i·step` for every `i` that stays within `end` (with a small
/// tolerance so the endpoint is included).
pub fn thresholds(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    check_threshold(start)?;
    if !(step > 0.0) || !(end >= start) || !end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold grid start={start} end={end} step={step}"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub nonzero_count: usize,
    pub mean_d_score: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub index: usize,
    pub threshold: f64,
    pub images: Tensor,
}

#[derive(Clone, Debug)]
pub struct PruneReport {
    pub rows: Vec<SweepRow>,
    pub total_weights: usize,
    pub snapshots: Vec<Snapshot>,
}

pub const REPORT_HEADER: &str = "threshold,nonzero_count,mean_d_score";

impl PruneReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let t = (r.threshold * 1e9).round() / 1e9;
            s.push_str(&format!("{t},{},{}\n", r.nonzero_count, r.mean_d_score));
        }
        s
    }

    /// Largest gap between the nonzero-count curve and the straight line
    /// joining its endpoints, as a fraction of the total weight count.
    pub fn chord_deviation(&self) -> f64 {
        let (Some(first), Some(last)) = (self.rows.first(), self.rows.last()) else {
            return 0.0;
        };
        let span = last.threshold - first.threshold;
        if span <= 0.0 || self.total_weights == 0 {
            return 0.0;
        }
        let (c0, c1) = (first.nonzero_count as f64, last.nonzero_count as f64);
        self.rows
            .iter()
            .map(|r| {
                let chord = c0 + (c1 - c0) * (r.threshold - first.threshold) / span;
                (r.nonzero_count as f64 - chord).abs()
            })
            .fold(0.0, f64::max)
            / self.total_weights as f64
    }
}

/// File name for a sweep image grid.
pub fn snapshot_name(threshold: f64) -> String {
    format!("sweep_t{threshold:.3}.png")
}

/// Prunes `g` at every threshold of the grid and scores images from the
/// fixed `latents` with `d`. `g` itself is left untouched.
pub fn sweep(g: &Generator, d: &Discriminator, latents: &Tensor, params: &SweepParams) -> Result<PruneReport> {
    if latents.rank() != 2 || latents.shape()[0] == 0 {
        return Err(Error::InvalidArgument("sweep needs a non-empty latent batch".into()));
    }
    if params.image_every == 0 {
        return Err(Error::InvalidArgument("image_every must be positive".into()));
    }
    let grid = thresholds(params.start, params.end, params.step)?;
    let total = total_weights(g.params());
    let mut work = g.clone();
    let mut rows = Vec::with_capacity(grid.len());
    let mut snapshots = Vec::new();
    for (i, &t) in grid.iter().enumerate() {
        if params.mode == SweepMode::Pristine {
            work = g.clone();
        }
        prune_generator(&mut work, t)?;
        let images = work.generate(latents, params.noise_seed, params.psi)?;
        let score = mean_probability(&d.get_score(&images)?);
        rows.push(SweepRow {
            threshold: t,
            nonzero_count: count_nonzero(work.params()),
            mean_d_score: score,
        });
        if i % params.image_every == 0 {
            snapshots.push(Snapshot {
                index: i,
                threshold: t,
                images,
            });
        }
    }
    Ok(PruneReport {
        rows,
        total_weights: total,
        snapshots,
    })
}
