use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use relbias::encoder::BiasMode;
use relbias::linearize::PositionalScheme;
use relbias::toytask::TaskKind;

#[derive(Debug, Parser)]
#[command(name = "relbias", version, about = "Relation-biased table-text encoder toolkit")]
pub struct Cli {
    /// Where to write the run manifest. Defaults to `<primary output>.manifest.json`,
    /// or `relbias-<command>.manifest.json` in the working directory for
    /// commands without an output file.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flatten one table-text pair into tokens with every id stream.
    Linearize(LinearizeArgs),
    /// Relation type matrix of one pair.
    Biasmap(BiasmapArgs),
    /// Encode one pair, or predict cells for a whole corpus.
    Encode(EncodeArgs),
    /// Finite-difference check of the hand-written gradients.
    Gradcheck(GradcheckArgs),
    /// Parameter arithmetic for a model shape.
    Paramcount(ParamcountArgs),
    /// Generate a synthetic cell-selection corpus.
    GenTask(GenTaskArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Train with and without some relation types and compare.
    Ablate(AblateArgs),
    /// Apply a seeded row and column permutation to every pair of a corpus.
    Perturb(PerturbArgs),
    /// Check that encoder outputs follow their tokens under permutations.
    InvarianceCheck(InvarianceArgs),
    /// Prediction variation between two prediction files.
    Vp(VpArgs),
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    #[arg(long, default_value = "pcp")]
    pub scheme: PositionalScheme,
    /// Pair JSON file.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = relbias::linearize::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: u32,
    #[arg(long, default_value_t = relbias::linearize::DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct BiasmapArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Comma-separated type codes (or names) to fold into OTHERS.
    #[arg(long, value_delimiter = ',', value_name = "TYPES")]
    pub ablate: Vec<relbias::relations::BiasTypeId>,
    #[arg(long, default_value_t = relbias::linearize::DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

/// How a command obtains a model: a checkpoint, or a fresh initialization
/// from a configuration and an explicit seed.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["model_config", "init_seed"])]
    pub model: Option<PathBuf>,
    /// Model configuration JSON for a fresh initialization.
    #[arg(long, value_name = "PATH")]
    pub model_config: Option<PathBuf>,
    /// Seed for a fresh initialization.
    #[arg(long, value_name = "SEED", required_unless_present = "model")]
    pub init_seed: Option<u64>,
    /// Overrides the configured positional scheme of a fresh model.
    #[arg(long, conflicts_with = "model")]
    pub scheme: Option<PositionalScheme>,
    /// Overrides the configured bias mode of a fresh model.
    #[arg(long, conflicts_with = "model")]
    pub bias_mode: Option<BiasMode>,
    /// Standard deviation of the random bias scalars of a fresh model
    /// (0 keeps them at zero).
    #[arg(long, default_value_t = 0.5, conflicts_with = "model")]
    pub bias_scale: f64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Pair JSON file to encode.
    #[arg(long = "in", value_name = "PATH", requires = "out", conflicts_with = "corpus")]
    pub input: Option<PathBuf>,
    /// Encoding JSON output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Include attention weights in the encoding output.
    #[arg(long)]
    pub attention: bool,
    /// Pair JSONL corpus to predict.
    #[arg(
        long,
        value_name = "PATH",
        requires = "predictions",
        required_unless_present = "input"
    )]
    pub corpus: Option<PathBuf>,
    /// Prediction JSONL output.
    #[arg(long, value_name = "PATH")]
    pub predictions: Option<PathBuf>,
    /// Permutation JSONL from `perturb`; attached to each prediction.
    #[arg(long, value_name = "PATH", requires = "corpus")]
    pub perms: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model configuration JSON; defaults to 2 layers, 2 heads, width 8.
    #[arg(long, value_name = "PATH")]
    pub model_config: Option<PathBuf>,
    #[arg(long, value_name = "SEED")]
    pub init_seed: u64,
    #[arg(long)]
    pub scheme: Option<PositionalScheme>,
    #[arg(long)]
    pub bias_mode: Option<BiasMode>,
    /// Standard deviation of the random bias scalars.
    #[arg(long, default_value_t = 0.5)]
    pub bias_scale: f64,
    /// Pair JSONL batch; defaults to a built-in two-row example.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Lower bound of the relative-error denominator.
    #[arg(long, default_value_t = 1e-6)]
    pub floor: f64,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamcountArgs {
    #[arg(long)]
    pub layers: usize,
    #[arg(long)]
    pub heads: usize,
    #[arg(long)]
    pub dmodel: usize,
    #[arg(long, default_value_t = 512)]
    pub positions: usize,
    #[arg(long, default_value_t = relbias::linearize::DEFAULT_VOCAB_SIZE as usize)]
    pub vocab: usize,
    #[arg(long, default_value = "pcp")]
    pub scheme: PositionalScheme,
}

#[derive(Debug, Args)]
pub struct GenTaskArgs {
    #[arg(long)]
    pub kind: TaskKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_rows: usize,
    #[arg(long, default_value_t = 4)]
    pub max_rows: usize,
    #[arg(long, default_value_t = 2)]
    pub min_cols: usize,
    #[arg(long, default_value_t = 3)]
    pub max_cols: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration JSON.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Pair JSONL training corpus.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Checkpoint output.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Pair JSONL held-out corpus evaluated during training.
    #[arg(long, value_name = "PATH")]
    pub eval: Option<PathBuf>,
    /// Per-epoch metrics JSON output.
    #[arg(long, value_name = "PATH")]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Relation types removed in the ablated arm.
    #[arg(long, value_delimiter = ',', required = true, value_name = "TYPES")]
    pub types: Vec<relbias::relations::BiasTypeId>,
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub eval: PathBuf,
    /// JSON report output.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Text report output; defaults to the JSON path with a `.txt` extension.
    #[arg(long, value_name = "PATH")]
    pub text: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Permuted pair JSONL output.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Permutation JSONL output, one record per pair.
    #[arg(long, value_name = "PATH")]
    pub perms: PathBuf,
}

#[derive(Debug, Args)]
pub struct InvarianceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Permutation seeds: `a..b` (inclusive), `a..=b`, or a comma list.
    #[arg(long, default_value = "0..99")]
    pub seeds: String,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VpArgs {
    /// Prediction JSONL on the original tables.
    #[arg(long, value_name = "PATH")]
    pub before: PathBuf,
    /// Prediction JSONL on the perturbed tables.
    #[arg(long, value_name = "PATH")]
    pub after: PathBuf,
    /// Pair JSONL holding the gold cells.
    #[arg(long, value_name = "PATH")]
    pub gold: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Parses `a..b` (inclusive), `a..=b` or `a,b,c`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed {t:?} in {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
        if a > b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    let seeds = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0..99").unwrap().len(), 100);
        assert_eq!(parse_seed_list("3..=5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_list("7, 1").unwrap(), vec![7, 1]);
        assert!(parse_seed_list("5..2").is_err());
        assert!(parse_seed_list("x").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
