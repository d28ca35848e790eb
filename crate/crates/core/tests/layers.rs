mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylegan_lens::layers::{adain, noise_map, pixel_norm};
use stylegan_lens::params::EqualizedParam;
use stylegan_lens::{Graph, Tensor};

fn channel_moments(t: &Tensor, plane: usize) -> Vec<(f64, f64)> {
    t.data()
        .chunks(plane)
        .map(|c| {
            let n = c.len() as f64;
            let m = c.iter().map(|&v| v as f64).sum::<f64>() / n;
            let v = c.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .collect()
}

fn run_adain(x: Tensor, ys: Tensor, yb: Tensor) -> Tensor {
    let mut g = Graph::inference();
    let (xv, sv, bv) = (g.constant(x), g.constant(ys), g.constant(yb));
    let out = adain(&mut g, xv, sv, Some(bv)).unwrap();
    g.value(out).clone()
}

#[test]
fn adain_hand_example() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let out = run_adain(x, Tensor::full(vec![1, 1], 2.0), Tensor::full(vec![1, 1], 1.0));
    for (got, want) in out.data().iter().zip([-1.6833f32, 0.1056, 1.8944, 3.6833]) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn adain_identity_on_standardized_input() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![-1.0f32, 1.0, -1.0, 1.0]).unwrap();
    let out = run_adain(x.clone(), Tensor::ones(vec![1, 1]), Tensor::zeros(vec![1, 1]));
    assert!(out.max_abs_diff(&x) < 1e-6);
}

#[test]
fn adain_constant_channel_gives_shift() {
    let x = Tensor::full(vec![1, 2, 3, 3], 4.5f32);
    let out = run_adain(x, Tensor::full(vec![1, 2], -3.0), Tensor::new(vec![1, 2], vec![0.25, -7.0]).unwrap());
    assert!(out.data()[..9].iter().all(|&v| v == 0.25));
    assert!(out.data()[9..].iter().all(|&v| v == -7.0));
}

#[test]
fn adain_moment_contract_200_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (n, c, h, w) = (2, 3, 4, 4);
        let scale: f32 = rng.random_range(0.1..5.0);
        let shift: f32 = rng.random_range(-5.0..5.0);
        let x = Tensor::from_fn(vec![n, c, h, w], |_| rng.random_range(-1.0f32..1.0) * scale + shift);
        let ys = Tensor::from_fn(vec![n, c], |_| rng.random_range(-3.0f32..3.0));
        let yb = Tensor::from_fn(vec![n, c], |_| rng.random_range(-3.0f32..3.0));
        let out = run_adain(x, ys.clone(), yb.clone());
        for (k, (m, s)) in channel_moments(&out, h * w).into_iter().enumerate() {
            assert!((m - yb.data()[k] as f64).abs() <= 1e-4);
            assert!((s - (ys.data()[k] as f64).abs()).abs() <= 1e-3);
        }
    }
}

#[test]
fn equalized_multipliers() {
    let raw = Tensor::from_fn(vec![4], |i| i as f32 - 1.5);
    assert_eq!(EqualizedParam::new(2, 2.0).scale(&raw), raw);
    assert_eq!(EqualizedParam::new(512, 2.0).multiplier(), 0.0625);
}

#[test]
fn fresh_raw_weights_are_standard_normal() {
    let g = common::tiny_generator(5);
    let big = stylegan_lens::Generator::new(stylegan_lens::GeneratorConfig::desk(), 5).unwrap();
    for gen in [&g, &big] {
        for (key, p) in gen.params().iter() {
            if !key.ends_with("weight_orig") || p.value.len() < 10_000 {
                continue;
            }
            let (m, s) = channel_moments(&p.value, p.value.len())[0];
            assert!(m.abs() < 0.05, "{key} mean {m}");
            assert!((s - 1.0).abs() < 0.05, "{key} std {s}");
        }
    }
}

fn inject(x: &Tensor, strength: f32, seed: u64) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let sv = g.constant(Tensor::full(vec![c], strength));
    let out = g.inject_noise(xv, sv, noise_map(seed, 0, 0, n, h, w)).unwrap();
    g.value(out).clone()
}

#[test]
fn zero_strength_noise_is_identity() {
    let x = Tensor::from_fn(vec![2, 3, 4, 4], |i| (i as f32).sin());
    assert_eq!(inject(&x, 0.0, 9), x);
    assert_eq!(inject(&x, 1.0, 9), inject(&x, 1.0, 9));
}

#[test]
fn unit_noise_adds_unit_variance() {
    // Input pixels ~ N(0, 4) independent of the noise; output variance should be 5.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    let mut count = 0usize;
    for seed in 0..1000 {
        let x: Tensor = Tensor::randn(vec![1, 1, 4, 4], &mut rng).map(|v| 2.0 * v);
        for &v in inject(&x, 1.0, seed).data() {
            sum += v as f64;
            sq += (v as f64).powi(2);
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let var = sq / count as f64 - mean * mean;
    assert!(count >= 10_000);
    assert!((var / 5.0 - 1.0).abs() < 0.05, "variance {var}");
}

fn run_pixel_norm(z: Tensor) -> Tensor {
    let mut g = Graph::inference();
    let v = g.constant(z);
    let out = pixel_norm(&mut g, v).unwrap();
    g.value(out).clone()
}

#[test]
fn pixel_norm_examples() {
    let out = run_pixel_norm(Tensor::new(vec![1, 2], vec![3.0f32, 4.0]).unwrap());
    assert!((out.data()[0] - 0.8485).abs() < 1e-4);
    assert!((out.data()[1] - 1.1314).abs() < 1e-4);
    assert_eq!(run_pixel_norm(Tensor::zeros(vec![2, 3])).data(), &[0.0; 6]);
    let out = run_pixel_norm(Tensor::new(vec![1, 4], vec![10.0f32, 0.0, 0.0, 0.0]).unwrap());
    assert!((out.data()[0] - 2.0).abs() < 1e-5);
    let rms = (out.data().iter().map(|v| v * v).sum::<f32>() / 4.0).sqrt();
    assert!((rms - 1.0).abs() < 1e-5);
}

#[test]
fn minibatch_stddev_examples() {
    let x = Tensor::new(vec![2, 1, 2, 2], vec![0.0f32, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
    let mut g = Graph::inference();
    let v = g.constant(x);
    let out = stylegan_lens::layers::minibatch_stddev(&mut g, v, 8).unwrap();
    let t = g.value(out);
    assert_eq!(t.shape(), &[2, 2, 2, 2]);
    assert_eq!(&t.data()[4..8], &[1.0; 4]);
    assert_eq!(&t.data()[12..16], &[1.0; 4]);

    let same = Tensor::from_fn(vec![4, 3, 2, 2], |i| (i % 12) as f32);
    let v = g.constant(same);
    let out = stylegan_lens::layers::minibatch_stddev(&mut g, v, 8).unwrap();
    let t = g.value(out);
    assert_eq!(t.shape(), &[4, 4, 2, 2]);
    for s in 0..4 {
        assert!(t.data()[s * 16 + 12..s * 16 + 16].iter().all(|&v| v == 0.0));
    }
}

proptest! {
    #[test]
    fn adain_moments_hold(seed in 0u64..1000, ys in -4.0f32..4.0, yb in -4.0f32..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Tensor = Tensor::randn(vec![1, 1, 5, 5], &mut rng);
        let out = run_adain(x, Tensor::full(vec![1, 1], ys), Tensor::full(vec![1, 1], yb));
        let (m, s) = channel_moments(&out, 25)[0];
        prop_assert!((m - yb as f64).abs() <= 1e-4);
        prop_assert!((s - ys.abs() as f64).abs() <= 1e-3);
    }
}
