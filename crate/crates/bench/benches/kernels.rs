use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stylegan_lens::latent::sample_latents;
use stylegan_lens::pruning::prune_generator;
use stylegan_lens::rng::stream;
use stylegan_lens::{Checkpoint, Generator, GeneratorConfig, Graph, ModelSet, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = stream(1, &[]);
    let x: Tensor = Tensor::randn(vec![16, 64, 8, 8], &mut rng);
    let w: Tensor = Tensor::randn(vec![64, 64, 3, 3], &mut rng);
    c.bench_function("conv2d 16x64x8x8 k3", |b| {
        b.iter(|| {
            let mut g = Graph::inference();
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
            black_box(g.value(y).len())
        })
    });
}

fn generate(c: &mut Criterion) {
    let g = Generator::new(GeneratorConfig::desk(), 1).unwrap();
    let z = sample_latents(32, g.config().latent_size, 1).unwrap().values();
    c.bench_function("generate desk x32", |b| b.iter(|| black_box(g.generate(&z, 1, 1.0).unwrap())));
}

fn prune(c: &mut Criterion) {
    let g = Generator::new(GeneratorConfig::desk(), 1).unwrap();
    c.bench_function("prune desk t=0.5", |b| {
        b.iter(|| {
            let mut g = g.clone();
            black_box(prune_generator(&mut g, 0.5).unwrap().kept())
        })
    });
}

fn checkpoint(c: &mut Criterion) {
    let models = ModelSet::new(GeneratorConfig::desk(), 8, 1).unwrap();
    let ckpt = models.to_checkpoint().unwrap();
    let bytes = ckpt.to_bytes();
    c.bench_function("checkpoint encode", |b| b.iter(|| black_box(ckpt.to_bytes().len())));
    c.bench_function("checkpoint decode", |b| b.iter(|| black_box(Checkpoint::from_bytes(&bytes).unwrap())));
}

criterion_group!(benches, conv, generate, prune, checkpoint);
criterion_main!(benches);
