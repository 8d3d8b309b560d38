use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use seqshort::FreezePolicy;

/// Learned-query sequence shortening for bag classification.
///
/// Any option can also be given in a flat `key = value` file passed with
/// `--config FILE`; keys are long option names without the dashes, and
/// options on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "seqshort", version, args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` configuration file (`#` starts a comment).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic witness dataset with a stratified train/val split.
    Gen(GenArgs),
    /// Train a model on the `train` split, validating on `val`.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Export rollout heatmaps and the query entropy profile.
    Explain(ExplainArgs),
    /// Tabulate analytic FLOPs (and optionally latency) across bag lengths.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    /// L=2, h=64, S=8, k=2, 4 encoder heads.
    Toy,
    /// h=768, k=4, base-size 12-layer encoder, S=256.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPreset {
    Toy,
    Lnm,
    Subtype,
}

impl TrainPreset {
    pub fn name(self) -> &'static str {
        match self {
            TrainPreset::Toy => "toy",
            TrainPreset::Lnm => "lnm",
            TrainPreset::Subtype => "subtype",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Instance feature dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Total number of bags, split evenly across classes.
    #[arg(long, default_value_t = 200)]
    pub bags: usize,
    #[arg(long, default_value_t = 30)]
    pub bag_min: usize,
    #[arg(long, default_value_t = 60)]
    pub bag_max: usize,
    /// Witness instances per bag (sets both bounds).
    #[arg(long)]
    pub witnesses: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub witness_min: usize,
    #[arg(long, default_value_t = 3)]
    pub witness_max: usize,
    /// Offset of witness instances along their class direction.
    #[arg(long, default_value_t = 4.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Fraction of each class held out as `val`.
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Also write `manifest_fold{i}.csv` for stratified k-fold validation.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Model architecture options shared by `train` and `bench`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelPreset::Toy)]
    pub model: ModelPreset,
    /// Summary length S.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// SeqShort heads k.
    #[arg(long)]
    pub seqshort_heads: Option<usize>,
    #[arg(long)]
    pub encoder_heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub head: Option<Head>,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub pos_embeddings: OnOff,
    /// Standard deviation of the normal weight initialisation.
    #[arg(long)]
    pub init_std: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schedule preset: toy, lnm (5 warmup epochs, 1 cycle, lr 1e-4, batch 16)
    /// or subtype (10 warmup epochs, 2 cycles, lr 5e-5, batch 32).
    #[arg(long, value_enum, default_value_t = TrainPreset::Toy)]
    pub preset: TrainPreset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub cosine_cycles: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `none` or `frozen_except_layernorm`.
    #[arg(long)]
    pub freeze: Option<FreezePolicy>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for `report.json` and `model.sqck`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split tag to evaluate; `all` uses every entry.
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Bag files to explain.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub bags: Vec<PathBuf>,
    /// Dataset manifest whose `--split` bags are explained as well.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Also export the head-averaged SeqShort attention of these queries.
    #[arg(long, value_delimiter = ',')]
    pub query: Vec<usize>,
    /// Sort the entropy profile by decreasing relative entropy.
    #[arg(long)]
    pub sort: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Comma-separated bag lengths M.
    #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
    pub lengths: Vec<usize>,
    /// Instance feature dimension d; 32 for the toy model, 1280 for the full-size one.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Timed forward passes per length; 0 skips timing.
    #[arg(long, default_value_t = 0)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output CSV; the resolved configuration goes to the same path with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

/// Turns `key = value` lines into `--key value` arguments.
pub fn config_file_args(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected `key = value`", path.display(), n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            return Err(format!("{}:{}: empty key", path.display(), n + 1));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_owned());
            }
        }
    }
    Ok(out)
}

/// Removes `--config FILE` from `argv` and splices the file's arguments in
/// right after the subcommand, so explicit flags still win.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_owned());
        } else {
            rest.push(a);
        }
    }
    let Some(config) = config else {
        return Ok(rest);
    };
    let extra = config_file_args(Path::new(&config))?;
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    rest.splice(sub..sub, extra);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_expansion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\n[train]\nepochs = 3\nbatch_size=2 # trailing\nsort = true\n").unwrap();
        let argv: Vec<String> = ["seqshort", "--config", p.to_str().unwrap(), "train", "--epochs", "5"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_config(argv).unwrap();
        assert_eq!(
            out,
            vec!["seqshort", "train", "--epochs", "3", "--batch-size", "2", "--sort", "--epochs", "5"]
        );
    }

    #[test]
    fn bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cfg");
        std::fs::write(&p, "epochs 3\n").unwrap();
        assert!(config_file_args(&p).is_err());
    }
}
