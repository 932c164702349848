use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rebat", version, about = "Adversarial training with loss rebalancing and robust-overfitting diagnostics")]
pub struct Cli {
    /// Log per-epoch progress.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one run from an experiment file.
    Train(TrainArgs),
    /// Train one run per value of the `[sweep]` axis and summarize.
    Sweep(TrainArgs),
    /// Clean and robust accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Post-hoc analyses of checkpoints.
    #[command(subcommand)]
    Diagnose(DiagnoseCommand),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment TOML file.
    pub config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from `final.ckpt` or `last_good.ckpt` in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Attack overrides in units of 1/255; unset fields keep the config's eval attack.
#[derive(Args, Debug, Clone, Default)]
pub struct AttackArgs {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

/// Dataset and checkpoint selection shared by most analyses.
#[derive(Args, Debug, Clone)]
pub struct Source {
    /// Experiment TOML file naming the dataset.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate the weight average instead of the online weights.
    #[arg(long)]
    pub wa: bool,
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum DiagnoseCommand {
    /// Adversarial confusion matrix (JSON and CSV).
    Confusion {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wa: bool,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        attack: AttackArgs,
        /// Output path prefix; writes `<prefix>.json` and `<prefix>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectral norm of `A − Aᵀ` for a confusion matrix JSON.
    Symmetry {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use raw counts instead of rates.
        #[arg(long)]
        counts: bool,
    },
    /// Bilateral correlation between train-time and test-time confusion changes.
    Correlation {
        #[arg(long)]
        train_before: PathBuf,
        #[arg(long)]
        test_before: PathBuf,
        #[arg(long)]
        test_after: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Early-checkpoint adversarial examples scored on a later checkpoint.
    ProbeMemorization {
        #[arg(long)]
        early: PathBuf,
        #[arg(long)]
        late: PathBuf,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = 1)]
        min_samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Late-checkpoint adversarial examples scored on a reference checkpoint
    /// against the misclassified labels.
    ProbeTarget {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        late: PathBuf,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = 1)]
        min_samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 1-D adversarial loss along a filter-normalized random direction (CSV).
    Landscape {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wa: bool,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plant descent-PGD features into the training set and continue
    /// training, against a uniform-noise control (CSV).
    Inject {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Experiment TOML; its `[train]` section drives the continuation.
        #[arg(long)]
        config: PathBuf,
        /// Injection strengths in units of 1/255.
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Continuation epochs; overrides the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relabel misclassified adversarial examples with their predictions.
    NonrobustDataset {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = 0.0)]
        min_success_rate: f64,
        #[arg(long)]
        subsample: Option<usize>,
        /// Also write a copy with uniformly random labels.
        #[arg(long)]
        random_label_control: bool,
        /// Dataset file; a JSON summary is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}
