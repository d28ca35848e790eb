//! Shared oracles for the integration suites.
#![allow(dead_code)]

pub mod gradcheck;

use stylegan_lens::generator::{Generator, GeneratorConfig};

/// A small generator used wherever a real network is needed but its size is
/// irrelevant: 16×16 output, two blocks, narrow channels.
pub fn tiny_config() -> GeneratorConfig {
    GeneratorConfig {
        latent_size: 32,
        n_layers: 2,
        channels: vec![8, 4],
        ..GeneratorConfig::desk()
    }
}

pub fn tiny_generator(seed: u64) -> Generator {
    Generator::new(tiny_config(), seed).expect("valid tiny config")
}
