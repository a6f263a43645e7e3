//! `hetcomp`: data preparation, teacher training with trajectory capture,
//! ensemble inspection, distillation, evaluation and the trajectory studies.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hetcomp", version, about = "Ranking distillation from heterogeneous teacher trajectories")]
pub struct Cli {
    /// Root seed; components derive their seeds from it by fixed offsets.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-user loops. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// `key=value` file with defaults for any long flag of the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic interaction file.
    Synth(SynthArgs),
    /// Filter and split an interaction file into a dataset directory.
    Prepare(PrepareArgs),
    /// Train one teacher and record its trajectory.
    TrainTeacher(TeacherArgs),
    /// Write the consolidated ranking of the teachers' final checkpoints.
    Ensemble(EnsembleArgs),
    /// Distil a student from teacher trajectories.
    Distill(DistillArgs),
    /// Score a student (or a ranking file) on the test set or against the ensemble.
    Evaluate(EvaluateArgs),
    /// Unique / unpopular item counts across each trajectory's checkpoints.
    AnalyzeTrajectory(AnalyzeArgs),
    /// Distil fixed-target students from every checkpoint and ensemble.
    StudyDiscrepancy(StudyArgs),
}

#[derive(Args, Debug)]
pub struct DataArg {
    /// Dataset directory written by `prepare` (falls back to `HETCOMP_DATA_DIR`).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub affinity: Option<f64>,
    /// Output interaction file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub kcore: Option<usize>,
    /// Train, validation and test shares, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    pub ratios: Option<String>,
    /// Output directory (falls back to `HETCOMP_DATA_DIR`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// mf, ml or dnn.
    #[arg(long)]
    pub kind: Option<String>,
    /// Label used in file names and reports (defaults to the kind).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of checkpoints.
    #[arg(long = "E")]
    pub checkpoints: Option<usize>,
    /// Length of the stored top-K lists.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub reg: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_epochs: Option<usize>,
    /// per-checkpoint or converged.
    #[arg(long)]
    pub consistency: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub trajectories: Vec<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, num_args = 1.., required = true)]
    pub trajectories: Vec<PathBuf>,
    #[arg(long)]
    pub student_kind: Option<String>,
    #[arg(long)]
    pub student_dim: Option<usize>,
    /// full, no_dkc, no_ado, no_pplus, merged_pd, stacked or rrd.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub reg: Option<f64>,
    /// DKC period in epochs.
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub anneal: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k_dkc: Option<usize>,
    #[arg(long)]
    pub p_minus: Option<usize>,
    #[arg(long)]
    pub n_sample: Option<usize>,
    /// Early-stopping patience in evaluations; 0 disables it.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Student checkpoint.
    #[arg(long, conflicts_with = "rankings", required_unless_present = "rankings")]
    pub model: Option<PathBuf>,
    /// Ranking file as written by `ensemble`, evaluated instead of a model.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// testset or trajectory-final-ensemble.
    #[arg(long)]
    pub against: Option<String>,
    #[arg(long, num_args = 1..)]
    pub trajectories: Vec<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Prefix length of the target used for the NLL.
    #[arg(long)]
    pub p_minus: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, num_args = 1.., required = true)]
    pub trajectories: Vec<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub unpopular_share: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Heterogeneous teachers: each checkpoint is a supervision, and so is their ensemble.
    #[arg(long, num_args = 1.., required = true)]
    pub trajectories: Vec<PathBuf>,
    /// Same-kind teachers whose ensemble is one more supervision.
    #[arg(long, num_args = 1..)]
    pub homogeneous: Vec<PathBuf>,
    #[arg(long)]
    pub student_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub p_minus: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
