//! Adversarial training: losses, optimizer, data, and the step loop.

mod adam;
mod data;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use data::{denormalize_image, normalize_image, prepare_image, Dataset, ImageFolder, SyntheticFaces, MEAN, STD};

use crate::checkpoint::{Checkpoint, ModelSet};
use crate::discriminator::probability;
use crate::error::{Error, Result, TensorError};
use crate::generator::Generator;
use crate::rng;
use crate::{Graph, Scalar, Tensor, Var};

/// `−mean[log σ(real)] − mean[log(1 − σ(fake))]`, using `log(1 − σ(x)) = log σ(−x)`.
pub fn d_loss<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var, TensorError> {
    let lr = g.log_sigmoid(real);
    let a = g.mean_all(lr);
    let nf = g.neg(fake);
    let lf = g.log_sigmoid(nf);
    let b = g.mean_all(lf);
    let s = g.add(a, b)?;
    Ok(g.neg(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GLossVariant {
    /// `mean[log(1 − σ(fake))]`
    Minimax,
    /// `−mean[log σ(fake)]`
    #[default]
    NonSaturating,
}

impl FromStr for GLossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(Self::Minimax),
            "non-saturating" | "non_saturating" | "nonsaturating" => Ok(Self::NonSaturating),
            _ => Err(Error::InvalidArgument(format!(
                "unknown generator loss {s:?} (minimax | non-saturating)"
            ))),
        }
    }
}

impl fmt::Display for GLossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Minimax => "minimax",
            Self::NonSaturating => "non-saturating",
        })
    }
}

pub fn g_loss<T: Scalar>(g: &mut Graph<T>, fake: Var, variant: GLossVariant) -> Var {
    match variant {
        GLossVariant::Minimax => {
            let nf = g.neg(fake);
            let l = g.log_sigmoid(nf);
            g.mean_all(l)
        }
        GLossVariant::NonSaturating => {
            let l = g.log_sigmoid(fake);
            let m = g.mean_all(l);
            g.neg(m)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `range`, or over `[min, max]` of the data when `None`.
/// Values outside the range land in the outermost bins.
pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("histogram of an empty set".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let width = hi - lo;
    let edges = (0..=bins).map(|i| lo + width * i as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    /// Iterations to run in this session, on top of any resumed count.
    pub max_iter: u64,
    pub batch_size: usize,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub ema_decay: f32,
    pub seed: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    /// 0 disables histogram snapshots.
    pub histogram_every: u64,
    pub histogram_bins: usize,
    pub g_loss: GLossVariant,
    /// When false the `seconds` column is written as 0, so that logs of
    /// identical runs compare byte for byte.
    pub record_time: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            batch_size: 16,
            adam_g: AdamConfig::default(),
            adam_d: AdamConfig::default(),
            ema_decay: 0.999,
            seed: 0,
            checkpoint_every: 500,
            histogram_every: 100,
            histogram_bins: 20,
            g_loss: GLossVariant::NonSaturating,
            record_time: true,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for a in [self.adam_g, self.adam_d] {
            if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
                return Err(Error::Config(format!("invalid Adam settings {a:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} not in [0, 1]", self.ema_decay)));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        Ok(())
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub seconds: f64,
    pub real_probs: Vec<f64>,
    pub fake_probs: Vec<f64>,
}

pub const METRICS_HEADER: &str = "iter,d_loss,g_loss,d_real_mean,d_fake_mean,seconds";
pub const CHECKPOINT_FILE: &str = "checkpoint.sgln";
pub const METRICS_FILE: &str = "metrics.csv";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.d_loss, self.g_loss, self.d_real_mean, self.d_fake_mean, self.seconds
        )
    }
}

const OPT_G: &str = "opt.G.";
const OPT_D: &str = "opt.D.";

pub struct Trainer {
    pub models: ModelSet,
    pub params: TrainParams,
    opt_g: Adam,
    opt_d: Adam,
    iter: u64,
}

impl Trainer {
    pub fn new(models: ModelSet, params: TrainParams) -> Result<Self> {
        params.validate()?;
        let opt_g = Adam::new(params.adam_g, models.g.params());
        let opt_d = Adam::new(params.adam_d, models.d.params());
        Ok(Self {
            models,
            params,
            opt_g,
            opt_d,
            iter: 0,
        })
    }

    /// Restores models, optimizer moments and the iteration counter.
    pub fn resume(ckpt: &Checkpoint, params: TrainParams) -> Result<Self> {
        let models = ModelSet::from_checkpoint(ckpt)?;
        let mut t = Self::new(models, params)?;
        t.opt_g.read_from(ckpt, OPT_G, t.models.g.params())?;
        t.opt_d.read_from(ckpt, OPT_D, t.models.d.params())?;
        t.iter = ckpt.scalar("train.iter")? as u64;
        Ok(t)
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = self.models.to_checkpoint()?;
        self.opt_g.write_into(&mut c, OPT_G, self.models.g.params())?;
        self.opt_d.write_into(&mut c, OPT_D, self.models.d.params())?;
        c.put_scalar("train.iter", self.iter as f64)?;
        c.put_scalar("train.seed", self.params.seed as f64)?;
        Ok(c)
    }

    /// One discriminator update followed by one generator update. Random
    /// draws depend only on `(seed, iteration)`.
    pub fn step(&mut self, data: &dyn Dataset) -> Result<StepMetrics> {
        let it = self.iter;
        let seed = self.params.seed;
        let n = self.params.batch_size;
        let l = self.models.config().latent_size;
        if data.resolution() != self.models.config().max_res {
            return Err(Error::Config(format!(
                "dataset resolution {} differs from max_res {}",
                data.resolution(),
                self.models.config().max_res
            )));
        }

        let mut r = rng::stream(seed, &[rng::label::TRAIN_D, it]);
        let z: Tensor = Tensor::randn(vec![n, l], &mut r);
        let noise_seed: u64 = r.random();
        let reals = data.batch(it * n as u64, n)?;
        let fakes = self.models.g.generate(&z, noise_seed, 1.0)?;

        let (d_loss_v, real_logits, fake_logits) = {
            let d = &self.models.d;
            let mut g = Graph::new();
            let b = d.params().bind(&mut g, true);
            let rv = g.constant(reals);
            let fv = g.constant(fakes);
            let lr = d.score_graph(&mut g, &b, rv)?;
            let lf = d.score_graph(&mut g, &b, fv)?;
            let loss = d_loss(&mut g, lr, lf)?;
            g.backward(loss)?;
            let grads = b.grads(&g);
            self.opt_d.step(self.models.d.params_mut(), &grads);
            (g.value(loss).item() as f64, g.value(lr).clone(), g.value(lf).clone())
        };

        let mut r = rng::stream(seed, &[rng::label::TRAIN_G, it]);
        let z: Tensor = Tensor::randn(vec![n, l], &mut r);
        let noise_seed: u64 = r.random();
        let (g_loss_v, w) = {
            let gen = &self.models.g;
            let mut g = Graph::new();
            let bg = gen.params().bind(&mut g, true);
            let bd = self.models.d.params().bind(&mut g, false);
            let zv = g.constant(z);
            let w = gen.map_graph(&mut g, &bg, zv)?;
            let ws = vec![w; gen.num_style_layers()];
            let img = gen.synth_graph(&mut g, &bg, &ws, noise_seed)?;
            let logits = self.models.d.score_graph(&mut g, &bd, img)?;
            let loss = g_loss(&mut g, logits, self.params.g_loss);
            g.backward(loss)?;
            let grads = bg.grads(&g);
            self.opt_g.step(self.models.g.params_mut(), &grads);
            (g.value(loss).item() as f64, g.value(w).clone())
        };
        self.models.g.update_w_avg(&w);
        Generator::ema_update(&mut self.models.g_ema, &self.models.g, self.params.ema_decay)?;

        if !d_loss_v.is_finite() || !g_loss_v.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter: it,
                d_loss: d_loss_v,
                g_loss: g_loss_v,
            });
        }
        self.iter += 1;
        let real_probs: Vec<f64> = probability(&real_logits).data().iter().map(|&v| v as f64).collect();
        let fake_probs: Vec<f64> = probability(&fake_logits).data().iter().map(|&v| v as f64).collect();
        Ok(StepMetrics {
            iter: it,
            d_loss: d_loss_v,
            g_loss: g_loss_v,
            d_real_mean: real_probs.iter().sum::<f64>() / n as f64,
            d_fake_mean: fake_probs.iter().sum::<f64>() / n as f64,
            seconds: 0.0,
            real_probs,
            fake_probs,
        })
    }

    /// Runs `max_iter` steps. With `out_dir`, appends to `metrics.csv`,
    /// writes histogram snapshots and checkpoints there.
    pub fn run(
        &mut self,
        data: &dyn Dataset,
        out_dir: Option<&Path>,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>> {
        let start = Instant::now();
        let mut metrics_file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                let fresh = self.iter == 0 || !path.exists();
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                if fresh {
                    writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((f, path))
            }
            None => None,
        };
        let mut all = Vec::with_capacity(self.params.max_iter as usize);
        for _ in 0..self.params.max_iter {
            let mut m = self.step(data)?;
            if self.params.record_time {
                m.seconds = start.elapsed().as_secs_f64();
            }
            if let Some((f, path)) = metrics_file.as_mut() {
                writeln!(f, "{}", m.csv_row()).map_err(|e| Error::io(&*path, e))?;
            }
            if let Some(dir) = out_dir {
                let done = self.iter;
                if self.params.histogram_every > 0 && done % self.params.histogram_every == 0 {
                    write_histogram(dir, &m, self.params.histogram_bins)?;
                }
                if self.params.checkpoint_every > 0 && done % self.params.checkpoint_every == 0 {
                    self.checkpoint()?.save(dir.join(CHECKPOINT_FILE))?;
                }
            }
            on_step(&m);
            all.push(m);
        }
        if let Some(dir) = out_dir {
            self.checkpoint()?.save(dir.join(CHECKPOINT_FILE))?;
        }
        Ok(all)
    }
}

/// Writes `hist_{iter}.csv` with columns `lo,hi,real,fake` over `[0, 1]`.
pub fn write_histogram(dir: &Path, m: &StepMetrics, bins: usize) -> Result<()> {
    let real = histogram(&m.real_probs, bins, Some((0.0, 1.0)))?;
    let fake = histogram(&m.fake_probs, bins, Some((0.0, 1.0)))?;
    let mut s = String::from("lo,hi,real,fake\n");
    for k in 0..bins {
        s.push_str(&format!(
            "{},{},{},{}\n",
            real.edges[k],
            real.edges[k + 1],
            real.counts[k],
            fake.counts[k]
        ));
    }
    let path = dir.join(format!("hist_{:06}.csv", m.iter + 1));
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
