//! Central finite-difference oracle for reverse-mode gradients.
//!
//! Each case builds a scalar from its inputs. The analytic gradient comes
//! from `Graph::backward`; the oracle re-evaluates the forward pass with each
//! input element nudged by ±h and differences the results. Error is
//! reported per input as ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylegan_lens::autodiff::{ReduceKind, UpsampleMode};
use stylegan_lens::training::{d_loss, g_loss, GLossVariant};
use stylegan_lens::{Graph, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

pub type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-2.0..2.0))
}

/// Reduces a non-scalar output to a scalar with fixed, non-uniform weights so
/// every output element contributes a distinct sensitivity.
fn scalarize(g: &mut Graph<f64>, out: Var) -> Var {
    if g.value(out).len() == 1 {
        return out;
    }
    let shape = g.value(out).shape().to_vec();
    let weights = g.constant(Tensor::from_fn(shape, |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0));
    let prod = g.mul(out, weights).unwrap();
    g.sum_all(prod)
}

fn eval(case: &Case, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::<f64>::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars);
    let loss = scalarize(&mut g, out);
    g.value(loss).item()
}

/// Largest per-input relative error for one case.
pub fn relative_error(case: &Case) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars);
    let loss = scalarize(&mut g, out);
    g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(case.inputs[k].shape().to_vec()));
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[j] += STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[j] -= STEP;
            *slot = (eval(case, &plus) - eval(case, &minus)) / (2.0 * STEP);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let err = if denom < 1e-12 { diff } else { diff / denom };
        worst = worst.max(err);
    }
    worst
}

macro_rules! case {
    ($name:expr, [$($shape:expr),*], $rng:expr, $build:expr) => {
        Case {
            name: $name,
            inputs: vec![$(uniform(&$shape, $rng)),*],
            build: Box::new($build),
        }
    };
}

/// Every differentiable op, a three-op composite, and both loss functions.
pub fn suite() -> Vec<Case> {
    let rng = &mut ChaCha8Rng::seed_from_u64(20_240_917);
    vec![
        case!("add", [[3, 4], [3, 4]], rng, |g, v| g.add(v[0], v[1]).unwrap()),
        case!("add_trailing_broadcast", [[3, 4], [4]], rng, |g, v| g.add(v[0], v[1]).unwrap()),
        case!("sub", [[3, 4], [3, 4]], rng, |g, v| g.sub(v[0], v[1]).unwrap()),
        case!("mul", [[3, 4], [3, 4]], rng, |g, v| g.mul(v[0], v[1]).unwrap()),
        case!("mul_scalar_broadcast", [[3, 4], [1]], rng, |g, v| g.mul(v[0], v[1]).unwrap()),
        case!("div", [[3, 4], [3, 4]], rng, |g, v| {
            // keep the divisor away from zero
            let d = g.mul(v[1], v[1]).unwrap();
            let d = g.add_scalar(d, 0.5);
            g.div(v[0], d).unwrap()
        }),
        case!("add_mul_scalar", [[5]], rng, |g, v| {
            let a = g.add_scalar(v[0], 0.3);
            g.mul_scalar(a, -1.7)
        }),
        case!("matmul", [[3, 4], [4, 2]], rng, |g, v| g.matmul(v[0], v[1]).unwrap()),
        case!("transpose", [[3, 4]], rng, |g, v| g.transpose(v[0]).unwrap()),
        case!("conv2d_3x3", [[1, 2, 4, 4], [3, 2, 3, 3], [3]], rng, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap()
        }),
        case!("conv2d_1x1", [[2, 3, 3, 3], [2, 3, 1, 1], [2]], rng, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap()
        }),
        case!("conv2d_stride2", [[1, 2, 5, 5], [2, 2, 3, 3]], rng, |g, v| {
            g.conv2d(v[0], v[1], None, 2, 1).unwrap()
        }),
        case!("leaky_relu", [[4, 5]], rng, |g, v| g.leaky_relu(v[0], 0.2)),
        case!("upsample_nearest", [[1, 2, 3, 3]], rng, |g, v| {
            g.upsample(v[0], 2, UpsampleMode::Nearest).unwrap()
        }),
        case!("upsample_bilinear", [[1, 2, 3, 4]], rng, |g, v| {
            g.upsample(v[0], 2, UpsampleMode::Bilinear).unwrap()
        }),
        case!("avg_pool2", [[1, 2, 4, 4]], rng, |g, v| g.avg_pool2(v[0]).unwrap()),
        case!("reduce_sum", [[2, 3, 4]], rng, |g, v| g.reduce(ReduceKind::Sum, v[0], &[1]).unwrap()),
        case!("reduce_mean", [[2, 3, 4]], rng, |g, v| g.reduce(ReduceKind::Mean, v[0], &[0, 2]).unwrap()),
        case!("reduce_std", [[2, 3, 4]], rng, |g, v| g.reduce(ReduceKind::Std, v[0], &[2]).unwrap()),
        case!("instance_norm", [[2, 2, 3, 3]], rng, |g, v| g.instance_norm(v[0]).unwrap()),
        case!("channel_affine_per_sample", [[2, 3, 2, 2], [2, 3], [2, 3]], rng, |g, v| {
            g.channel_affine(v[0], Some(v[1]), Some(v[2])).unwrap()
        }),
        case!("channel_affine_shared", [[2, 3, 2, 2], [3]], rng, |g, v| {
            g.channel_affine(v[0], Some(v[1]), None).unwrap()
        }),
        case!("inject_noise", [[2, 3, 2, 2], [3]], rng, |g, v| {
            let noise = Tensor::from_fn(vec![2, 1, 2, 2], |i| (i as f64 * 0.37).sin());
            g.inject_noise(v[0], v[1], noise).unwrap()
        }),
        case!("pixel_norm", [[3, 5]], rng, |g, v| g.pixel_norm(v[0]).unwrap()),
        case!("minibatch_stddev", [[4, 2, 2, 2]], rng, |g, v| g.minibatch_stddev(v[0], 2).unwrap()),
        case!("sigmoid", [[6]], rng, |g, v| g.sigmoid(v[0])),
        case!("log_sigmoid", [[6]], rng, |g, v| g.log_sigmoid(v[0])),
        case!("reshape", [[2, 6]], rng, |g, v| g.reshape(v[0], &[3, 4]).unwrap()),
        case!("repeat_batch", [[2, 3]], rng, |g, v| g.repeat_batch(v[0], 3).unwrap()),
        case!("narrow", [[3, 6]], rng, |g, v| g.narrow(v[0], 1, 2, 3).unwrap()),
        case!("crop_center", [[1, 2, 5, 5]], rng, |g, v| g.crop_center(v[0], 3, 2).unwrap()),
        case!("pad_center", [[1, 2, 2, 3]], rng, |g, v| g.pad_center(v[0], 4, 4).unwrap()),
        case!("composite_leaky_matmul_sum", [[3, 4], [4, 5]], rng, |g, v| {
            let h = g.matmul(v[0], v[1]).unwrap();
            let a = g.leaky_relu(h, 0.2);
            g.sum_all(a)
        }),
        case!("d_loss", [[2, 1], [2, 1]], rng, |g, v| d_loss(g, v[0], v[1]).unwrap()),
        case!("g_loss_minimax", [[2, 1]], rng, |g, v| {
            g_loss(g, v[0], GLossVariant::Minimax)
        }),
        case!("g_loss_non_saturating", [[2, 1]], rng, |g, v| {
            g_loss(g, v[0], GLossVariant::NonSaturating)
        }),
    ]
}
