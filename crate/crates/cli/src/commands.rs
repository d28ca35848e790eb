use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use stylegan_lens::checkpoint::G_PREFIX;
use stylegan_lens::imaging::{encode_grid, encode_png};
use stylegan_lens::latent::{compare_pair, sample_latents, scale_latent, Perturbation, Space, DELTA_BOUND};
use stylegan_lens::pruning::{self, snapshot_name, SweepMode, SweepParams};
use stylegan_lens::training::{Dataset, ImageFolder, SyntheticFaces, TrainParams, Trainer, CHECKPOINT_FILE};
use stylegan_lens::{Checkpoint, GeneratorConfig, ModelSet, Tensor};

use crate::args::*;
use crate::{CliError, CliResult, HOME_ENV};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Generate(a) => generate(&a),
        Command::PruneSweep(a) => prune_sweep(&a),
        Command::LatentScale(a) => latent_scale(&a),
        Command::LatentPerturb(a) => latent_perturb(&a),
        Command::Stats(a) => stats(&a),
        Command::RemapKeys(a) => remap_keys(&a),
        Command::Serve(a) => crate::service::run_server(&a),
    }
}

pub fn out_dir(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(HOME_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn prepare_out(common: &Common) -> CliResult<PathBuf> {
    let dir = out_dir(common);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

pub fn read_config(path: Option<&Path>) -> CliResult<Option<GeneratorConfig>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: GeneratorConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: invalid config: {e}", path.display())))?;
    cfg.validate()?;
    Ok(Some(cfg))
}

/// Models from `--checkpoint`, or freshly initialized from `--config` and
/// `--seed`. A `--config` that disagrees with the checkpoint is an error.
pub fn load_models(common: &Common, group_size: usize) -> CliResult<ModelSet> {
    let cfg = read_config(common.config.as_deref())?;
    match &common.checkpoint {
        Some(path) => {
            let models = ModelSet::from_checkpoint(&Checkpoint::load(path)?)?;
            if let Some(cfg) = &cfg {
                models.expect_config(cfg)?;
            }
            Ok(models)
        }
        None => Ok(ModelSet::new(cfg.unwrap_or_default(), group_size, common.seed)?),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn check_count(count: usize) -> CliResult<()> {
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    Ok(())
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let out = prepare_out(&a.common)?;
    let params = TrainParams {
        max_iter: a.iters,
        batch_size: a.batch_size,
        seed: a.common.seed,
        checkpoint_every: a.checkpoint_every,
        histogram_every: a.histogram_every,
        g_loss: a.g_loss,
        record_time: !a.no_time,
        ..Default::default()
    };
    let mut trainer = match &a.common.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::resume(&ckpt, params)?;
            if let Some(cfg) = read_config(a.common.config.as_deref())? {
                t.models.expect_config(&cfg)?;
            }
            t
        }
        None => Trainer::new(load_models(&a.common, a.group_size)?, params)?,
    };
    let res = trainer.models.config().max_res;
    let data: Box<dyn Dataset> = match &a.data {
        Some(dir) => Box::new(ImageFolder::open(dir, res, a.common.seed)?),
        None => Box::new(SyntheticFaces::new(res, a.common.seed)),
    };
    let metrics = trainer.run(data.as_ref(), Some(&out), |m| {
        if (m.iter + 1) % 100 == 0 {
            eprintln!(
                "iter {:>6}  d_loss {:.4}  g_loss {:.4}  D(x) {:.3}  D(G(z)) {:.3}",
                m.iter + 1,
                m.d_loss,
                m.g_loss,
                m.d_real_mean,
                m.d_fake_mean
            );
        }
    })?;
    println!(
        "trained {} iterations (total {}), checkpoint {}",
        metrics.len(),
        trainer.iteration(),
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn generate(a: &GenerateArgs) -> CliResult<()> {
    check_count(a.count)?;
    let models = load_models(&a.common, 8)?;
    let g = &models.g_ema;
    let psi = a.psi.unwrap_or(g.config().truncation_psi);
    let z = sample_latents(a.count, g.config().latent_size, a.common.seed)?;
    let images = g.generate(&z.values(), a.common.seed, psi)?;
    let out = prepare_out(&a.common)?;
    for i in 0..a.count {
        write_file(&out.join(format!("sample_{i:03}.png")), &encode_png(&images.index_axis0(i))?)?;
    }
    write_file(&out.join("grid.png"), &encode_grid(&images, a.cols)?)?;
    println!("wrote {} images to {}", a.count, out.display());
    Ok(())
}

fn prune_sweep(a: &SweepArgs) -> CliResult<()> {
    check_count(a.count)?;
    if a.in_place && a.common.checkpoint.is_none() {
        return Err(CliError::usage("--in-place needs --checkpoint"));
    }
    let mut models = load_models(&a.common, 8)?;
    let params = SweepParams {
        start: a.start,
        end: a.end,
        step: a.step,
        image_every: a.image_every,
        mode: if a.pristine { SweepMode::Pristine } else { SweepMode::Cumulative },
        noise_seed: a.common.seed,
        psi: models.config().truncation_psi,
    };
    let z = sample_latents(a.count, models.config().latent_size, a.common.seed)?;
    let report = pruning::sweep(&models.g_ema, &models.d, &z.values(), &params)?;
    let out = prepare_out(&a.common)?;
    write_file(&out.join("prune_report.csv"), report.to_csv().as_bytes())?;
    for s in &report.snapshots {
        write_file(&out.join(snapshot_name(s.threshold)), &encode_grid(&s.images, 8)?)?;
    }
    let (first, last) = (&report.rows[0], report.rows.last().expect("non-empty grid"));
    println!(
        "{} thresholds: nonzero {} -> {} of {}, mean D score {:.2}% -> {:.2}%, chord deviation {:.2}%",
        report.rows.len(),
        first.nonzero_count,
        last.nonzero_count,
        report.total_weights,
        first.mean_d_score * 100.0,
        last.mean_d_score * 100.0,
        report.chord_deviation() * 100.0
    );
    if a.in_place {
        let path = a.common.checkpoint.as_ref().expect("checked above");
        pruning::prune_generator(&mut models.g_ema, last.threshold)?;
        pruning::prune_generator(&mut models.g, last.threshold)?;
        merge(&Checkpoint::load(path)?, &models.to_checkpoint()?).save(path)?;
        println!("pruned checkpoint {} at threshold {}", path.display(), last.threshold);
    }
    Ok(())
}

/// `base` with every entry of `update` replacing the same key.
fn merge(base: &Checkpoint, update: &Checkpoint) -> Checkpoint {
    let mut out = Checkpoint::new();
    for (k, v) in base.iter() {
        let v = update.get(k).unwrap_or(v).clone();
        out.insert(k, v).expect("keys already unique");
    }
    out
}

fn latent_scale(a: &ScaleArgs) -> CliResult<()> {
    check_count(a.count)?;
    let models = load_models(&a.common, 8)?;
    let g = &models.g_ema;
    let base = sample_latents(a.count, g.config().latent_size, a.common.seed)?;
    let out = prepare_out(&a.common)?;
    for &f in &a.factors {
        let z = scale_latent(&base, f)?;
        let images = g.generate(&z.values(), a.common.seed, g.config().truncation_psi)?;
        let path = out.join(format!("latent_scale_{f}.png"));
        write_file(&path, &encode_grid(&images, 8)?)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn perturb_name(p: &Perturbation) -> String {
    let mut name = String::from("perturb");
    for (d, delta) in &p.deltas {
        name.push_str(&format!("_dim{d}_delta{delta}"));
    }
    if p.scale != 1.0 || p.deltas.is_empty() {
        name.push_str(&format!("_scale{}", p.scale));
    }
    name + ".png"
}

fn latent_perturb(a: &PerturbArgs) -> CliResult<()> {
    check_count(a.count)?;
    let models = load_models(&a.common, 8)?;
    let g = &models.g_ema;
    let base = sample_latents(a.count, g.config().latent_size, a.common.seed)?;
    let p = Perturbation::new(a.deltas.clone(), a.scale);
    let bound = (!a.unbounded).then_some(DELTA_BOUND);
    let space = if a.w_space { Space::W } else { Space::Z };
    let pair = compare_pair(g, &base, &p, a.common.seed, g.config().truncation_psi, space, bound)?;
    let out = prepare_out(&a.common)?;
    write_file(&out.join("perturb_original.png"), &encode_grid(&pair.before, 8)?)?;
    let name = perturb_name(&p);
    write_file(&out.join(&name), &encode_grid(&pair.after, 8)?)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "image,l2_distance");
    for (i, d) in pair.distances.iter().enumerate() {
        let _ = writeln!(stdout, "{i},{d}");
    }
    eprintln!("wrote perturb_original.png and {name} to {}", out.display());
    Ok(())
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

/// The key table and weight statistics printed by `stats`.
pub fn stats_table(models: &ModelSet) -> String {
    let g = models.g_ema.params();
    let (weight_rows, _) = pruning::weight_stats(g);
    let mut s = format!(
        "{:<40} {:>14} {:>9} {:>10} {:>10} {:>10} {:>10}\n",
        "key", "shape", "count", "min", "max", "mean", "std"
    );
    for (key, p) in g.iter() {
        let stat = weight_rows.iter().find(|r| r.key == key);
        match stat {
            Some(r) => s.push_str(&format!(
                "{:<40} {:>14} {:>9} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                key,
                shape_str(p.value.shape()),
                p.value.len(),
                r.min,
                r.max,
                r.mean,
                r.std
            )),
            None => s.push_str(&format!("{:<40} {:>14} {:>9}\n", key, shape_str(p.value.shape()), p.value.len())),
        }
    }
    s.push_str(&format!("generator parameters: {}\n", g.total_elements()));
    s.push_str(&format!(
        "prunable weights: {} (nonzero {})\n",
        pruning::total_weights(g),
        pruning::count_nonzero(g)
    ));
    s.push_str(&format!("discriminator parameters: {}\n", models.d.params().total_elements()));
    s
}

fn stats(a: &StatsArgs) -> CliResult<()> {
    let models = load_models(&a.common, 8)?;
    print!("{}", stats_table(&models));
    Ok(())
}

fn remap_keys(a: &RemapArgs) -> CliResult<()> {
    let Some(path) = &a.common.checkpoint else {
        return Err(CliError::usage("remap-keys needs --checkpoint"));
    };
    let ckpt = Checkpoint::load(path)?;
    let rules: Vec<(&str, &str)> = a.rules.iter().map(|(f, t)| (f.as_str(), t.as_str())).collect();
    let remapped = ckpt.remap_keys(&rules)?;
    let dest = match &a.output {
        Some(p) => p.clone(),
        None => prepare_out(&a.common)?.join("remapped.sgln"),
    };
    remapped.save(&dest)?;
    let changed = ckpt.keys().zip(remapped.keys()).filter(|(x, y)| x != y).count();
    let g_keys = remapped.keys().filter(|k| k.starts_with(G_PREFIX)).count();
    println!("{changed} keys renamed ({g_keys} generator keys), written to {}", dest.display());
    Ok(())
}

/// PNG bytes for each image of a `[N, 3, H, W]` batch.
pub fn png_list(images: &Tensor) -> CliResult<Vec<Vec<u8>>> {
    (0..images.shape()[0])
        .map(|i| encode_png(&images.index_axis0(i)).map_err(CliError::from))
        .collect()
}
