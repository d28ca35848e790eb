use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stylegan_lens::training::GLossVariant;

#[derive(Debug, Parser)]
#[command(name = "stylegan-lens", version, about = "Train, prune and probe a small style-based GAN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Generator configuration as JSON. Defaults to the 16×16 desk config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `.sgln` checkpoint. Without it a freshly initialized model is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory. Defaults to $STYLEGAN_LENS_HOME, then `./out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adversarial training on synthetic faces or an image folder.
    Train(TrainArgs),
    /// Writes one PNG per sample plus a grid.
    Generate(GenerateArgs),
    /// Prunes at every threshold of a grid and scores the result.
    PruneSweep(SweepArgs),
    /// Renders one grid per latent scaling factor.
    LatentScale(ScaleArgs),
    /// Renders a batch before and after per-dimension latent deltas.
    LatentPerturb(PerturbArgs),
    /// Prints the key table and weight statistics.
    Stats(StatsArgs),
    /// Rewrites checkpoint key suffixes.
    RemapKeys(RemapArgs),
    /// Serves the JSON API and the UI bundle.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2000)]
    pub iters: u64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Folder of RGB images. Synthetic faces when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = GLossVariant::NonSaturating)]
    pub g_loss: GLossVariant,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 500)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 100)]
    pub histogram_every: u64,
    /// Writes 0 in the `seconds` column so repeated runs compare byte for byte.
    #[arg(long)]
    pub no_time: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    #[arg(long)]
    pub psi: Option<f32>,
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.0)]
    pub start: f64,
    #[arg(long, default_value_t = 1.0)]
    pub end: f64,
    #[arg(long, default_value_t = 0.001)]
    pub step: f64,
    #[arg(long, default_value_t = 20)]
    pub image_every: usize,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Re-prune every threshold from the original weights.
    #[arg(long)]
    pub pristine: bool,
    /// Also write the generator pruned at `--end` back into the checkpoint.
    #[arg(long)]
    pub in_place: bool,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.10,0.25,0.5,1.0,1.5,2.5,5.0,10.0")]
    pub factors: Vec<f32>,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub common: Common,
    /// `dim:delta`, repeatable, e.g. `--delta 3:10`.
    #[arg(long = "delta", value_parser = parse_delta)]
    pub deltas: Vec<(usize, f32)>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f32,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Apply the edit after the mapping network.
    #[arg(long)]
    pub w_space: bool,
    /// Lift the ±10 delta bound.
    #[arg(long)]
    pub unbounded: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RemapArgs {
    #[command(flatten)]
    pub common: Common,
    /// `from=to` suffix rule, repeatable.
    #[arg(long = "rule", value_parser = parse_rule, required = true)]
    pub rules: Vec<(String, String)>,
    /// Destination file. Defaults to `<out>/remapped.sgln`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory with the built UI bundle.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Permit `/api/prune` with `in_place: true`.
    #[arg(long)]
    pub allow_in_place: bool,
}

fn parse_delta(s: &str) -> Result<(usize, f32), String> {
    let (d, v) = s.split_once(':').ok_or_else(|| format!("expected dim:delta, got {s:?}"))?;
    let d = d.trim().parse().map_err(|e| format!("dimension {d:?}: {e}"))?;
    let v = v.trim().parse().map_err(|e| format!("delta {v:?}: {e}"))?;
    Ok((d, v))
}

fn parse_rule(s: &str) -> Result<(String, String), String> {
    let (a, b) = s.split_once('=').ok_or_else(|| format!("expected from=to, got {s:?}"))?;
    if a.is_empty() || b.is_empty() {
        return Err(format!("empty side in rule {s:?}"));
    }
    Ok((a.to_string(), b.to_string()))
}
