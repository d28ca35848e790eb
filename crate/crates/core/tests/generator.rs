mod common;

use common::{tiny_config, tiny_generator};
use stylegan_lens::latent::sample_latents;
use stylegan_lens::params::Role;
use stylegan_lens::{Generator, GeneratorConfig, Tensor, WBatch};

fn z(n: usize, l: usize, seed: u64) -> Tensor {
    sample_latents(n, l, seed).unwrap().values()
}

#[test]
fn desk_output_shape() {
    let g = Generator::new(GeneratorConfig::desk(), 0).unwrap();
    let img = g.generate(&z(32, 512, 1), 0, 1.0).unwrap();
    assert_eq!(img.shape(), &[32, 3, 16, 16]);
    assert!(img.all_finite());
    assert_eq!(g.num_style_layers(), 4);
}

#[test]
fn map_latent_shape_and_rows() {
    let g = Generator::new(GeneratorConfig::desk(), 0).unwrap();
    let w = g.map_latent(&z(32, 512, 2)).unwrap();
    assert_eq!(w.shape(), &[32, 512]);

    let row = z(1, 512, 3);
    let twice = Tensor::stack(&[row.index_axis0(0), row.index_axis0(0)]).unwrap();
    let w = g.map_latent(&twice).unwrap();
    assert_eq!(w.data()[..512], w.data()[512..]);
    assert!(g.map_latent(&z(2, 16, 0)).is_err());
}

#[test]
fn map_latent_zero_weights_gives_zero() {
    let mut g = tiny_generator(1);
    for (key, p) in g.params_mut().iter_mut() {
        if key.starts_with("Map_Net") {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
    }
    let w = g.map_latent(&z(4, 32, 9)).unwrap();
    assert!(w.data().iter().all(|&v| v == 0.0));
}

#[test]
fn generate_is_deterministic() {
    let g = tiny_generator(2);
    let lat = z(6, 32, 4);
    assert_eq!(g.generate(&lat, 5, 0.7).unwrap(), g.generate(&lat, 5, 0.7).unwrap());
    assert_ne!(g.generate(&lat, 5, 1.0).unwrap(), g.generate(&z(6, 32, 5), 5, 1.0).unwrap());
}

#[test]
fn psi_zero_collapses_batch() {
    let mut g = tiny_generator(3);
    let lat = z(32, 32, 5);
    g.update_w_avg(&g.map_latent(&lat).unwrap());
    let img = g.generate(&lat, 0, 0.0).unwrap();
    let first = img.index_axis0(0);
    for i in 1..32 {
        assert_eq!(img.index_axis0(i), first);
    }
}

#[test]
fn truncate_examples() {
    let w = WBatch::new(Tensor::new(vec![1, 1, 2], vec![1.0f32, 3.0]).unwrap()).unwrap();
    let avg = Tensor::new(vec![2], vec![1.0f32, 1.0]).unwrap();
    let t = w.truncate(&avg, 0.7, 1).unwrap();
    assert!((t.tensor().data()[0] - 1.0).abs() < 1e-6);
    assert!((t.tensor().data()[1] - 2.4).abs() < 1e-6);
    assert_eq!(w.truncate(&avg, 1.0, 1).unwrap(), w);
    assert_eq!(w.truncate(&avg, 0.0, 1).unwrap().tensor().data(), avg.data());
    assert_eq!(w.truncate(&avg, 0.0, 0).unwrap(), w);
    assert!(w.truncate(&avg, 1.5, 1).is_err());
    assert!(w.truncate(&avg, -0.1, 1).is_err());
}

#[test]
fn style_mix_boundaries() {
    let g = tiny_generator(4);
    let layers = g.num_style_layers();
    let w1 = WBatch::broadcast(&g.map_latent(&z(3, 32, 10)).unwrap(), layers).unwrap();
    let w2 = WBatch::broadcast(&g.map_latent(&z(3, 32, 11)).unwrap(), layers).unwrap();
    let img = |w: &WBatch| g.synthesize(w, 0).unwrap();

    assert_eq!(img(&WBatch::style_mix(&w1, &w1, 2).unwrap()), img(&w1));
    assert_eq!(img(&WBatch::style_mix(&w1, &w2, 0).unwrap()), img(&w2));
    assert_eq!(img(&WBatch::style_mix(&w1, &w2, layers).unwrap()), img(&w1));
    assert!(WBatch::style_mix(&w1, &w2, layers + 1).is_err());

    let mixed = WBatch::style_mix(&w1, &w2, 1).unwrap();
    let l = 32;
    assert_eq!(mixed.tensor().data()[..l], w1.tensor().data()[..l]);
    assert_eq!(mixed.tensor().data()[l..2 * l], w2.tensor().data()[l..2 * l]);
}

#[test]
fn ema_examples() {
    let live = tiny_generator(5);
    let mut stable = tiny_generator(6);
    Generator::ema_update(&mut stable, &live, 0.0).unwrap();
    for ((_, a), (_, b)) in stable.params().iter().zip(live.params().iter()) {
        assert_eq!(a.value, b.value);
    }

    let before = tiny_generator(7);
    let mut s = before.clone();
    Generator::ema_update(&mut s, &live, 1.0).unwrap();
    for ((_, a), (_, b)) in s.params().iter().zip(before.params().iter()) {
        if a.role.trainable() {
            assert_eq!(a.value, b.value);
        }
    }

    let mut zero = tiny_generator(8);
    let mut one = tiny_generator(8);
    for (_, p) in zero.params_mut().iter_mut() {
        p.value = p.value.map(|_| 0.0);
    }
    for (_, p) in one.params_mut().iter_mut() {
        p.value = p.value.map(|_| 1.0);
    }
    Generator::ema_update(&mut zero, &one, 0.999).unwrap();
    for (_, p) in zero.params().iter() {
        if p.role.trainable() {
            assert!(p.value.data().iter().all(|&v| (v - 0.001).abs() < 1e-7));
        }
    }

    let other = Generator::new(GeneratorConfig::desk(), 0).unwrap();
    assert!(Generator::ema_update(&mut zero, &other, 0.5).is_err());
}

#[test]
fn w_avg_tracks_mapped_mean() {
    let mut g = tiny_generator(9);
    let w = Tensor::full(vec![4, 32], 2.0f32);
    g.update_w_avg(&w);
    assert!(g.w_avg().data().iter().all(|&v| (v - 0.01).abs() < 1e-6));
    assert!(matches!(g.params().by_key("Src_Net.w_avg").unwrap().role, Role::Buffer));
}

#[test]
fn fresh_init_values() {
    let g = tiny_generator(10);
    for (key, p) in g.params().iter() {
        if key.ends_with("noise_strength") || key == "Src_Net.w_avg" {
            assert!(p.value.data().iter().all(|&v| v == 0.0), "{key}");
        }
        if key == "Src_Net.input" {
            assert!(p.value.data().iter().all(|&v| v == 1.0));
        }
        if key.ends_with("to_channels.style.bias") {
            assert!(p.value.data().iter().all(|&v| v == 1.0));
        }
        if key.ends_with("conv.style.bias") {
            let c = p.value.len() / 2;
            assert!(p.value.data()[..c].iter().all(|&v| v == 1.0));
            assert!(p.value.data()[c..].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn baked_generator_matches_runtime_scaling() {
    let g = tiny_generator(11);
    let lat = z(4, 32, 12);
    let a = g.generate(&lat, 3, 1.0).unwrap();
    let b = g.baked().generate(&lat, 3, 1.0).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-5);
}

#[test]
fn cropped_output_when_max_res_is_not_a_ladder_size() {
    let cfg = GeneratorConfig {
        max_res: 12,
        ..tiny_config()
    };
    let g = Generator::new(cfg, 0).unwrap();
    assert_eq!(g.generate(&z(2, 32, 0), 0, 1.0).unwrap().shape(), &[2, 3, 12, 12]);
}
