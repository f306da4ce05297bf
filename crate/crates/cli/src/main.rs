//! `pathloss`: synthetic scenarios, feature extraction, GBDT training and
//! tuning, coverage maps, empirical baselines and SHAP reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pathloss", version, about = "Pathloss prediction from geodata with boosted trees")]
struct Cli {
    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic city with sites and UE traces.
    Gen(GenArgs),
    /// Bin traces and write the feature matrix.
    Features(FeaturesArgs),
    /// Train a GBDT model and cross-validate its configuration.
    Train(TrainArgs),
    /// Hyperparameter search.
    Tune(TuneArgs),
    /// Predict RSS at points or over a coverage lattice.
    Predict(PredictArgs),
    /// Empirical-model RSS predictions.
    Empirical(EmpiricalArgs),
    /// RMSE/R2 table: GBDT against empirical models and the oracle.
    Compare(CompareArgs),
    /// SHAP attributions and the lighter-model report.
    Explain(ExplainArgs),
    /// Training and prediction timings.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length of the square city in meters.
    #[arg(long, default_value_t = 1000.0)]
    pub area: f64,
    #[arg(long, default_value_t = 5.0)]
    pub cellsize: f64,
    /// Number of three-sector sites.
    #[arg(long, default_value_t = 4)]
    pub sites: usize,
    /// UE traces per square kilometer.
    #[arg(long, default_value_t = 10_000.0)]
    pub ue_density: f64,
    /// Number of clutter classes.
    #[arg(long, default_value_t = 15)]
    pub clutters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Location of the three rasters; the clutter count comes from
/// `scenario.json` in the same directory unless given.
#[derive(Debug, Args)]
pub struct GeoArgs {
    #[arg(long)]
    pub geo: PathBuf,
    #[arg(long)]
    pub clutters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
    /// Average bins in the linear (mW) domain instead of dB.
    #[arg(long)]
    pub linear_average: bool,
    #[arg(long, default_value_t = 1.5)]
    pub h_ue: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GbdtArgs {
    #[arg(long, default_value_t = 500)]
    pub n_estimators: usize,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    pub min_samples_leaf: usize,
    #[arg(long, default_value_t = 255)]
    pub n_bins: usize,
    /// Enable gradient-based one-side sampling with fractions `a,b`
    /// (bare flag: 0.2,0.1).
    #[arg(long, num_args = 0..=1, default_missing_value = "0.2,0.1")]
    pub goss: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub gbdt: GbdtArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Cross-validation report (skipped when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "tpe", value_parser = ["grid", "random", "tpe", "anneal"])]
    pub strategy: String,
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Tune on a seeded fraction of the rows.
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
    #[arg(long)]
    pub report: PathBuf,
    /// Refit the best configuration on all rows and save it.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long)]
    pub sites: PathBuf,
    /// CSV with columns x,y,cell_id and optionally h_ue.
    #[arg(long, conflicts_with = "grid")]
    pub points: Option<PathBuf>,
    /// Best-server coverage over the bin lattice covering the rasters.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 1.5)]
    pub h_ue: f64,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub out_pgm: Option<PathBuf>,
    #[arg(long, default_value_t = -120.0, allow_negative_numbers = true)]
    pub pgm_min: f64,
    #[arg(long, default_value_t = -40.0, allow_negative_numbers = true)]
    pub pgm_max: f64,
}

#[derive(Debug, Args)]
pub struct EmpiricalArgs {
    /// cost-hata, sui, spm or itu-452.
    #[arg(long)]
    pub model_name: String,
    /// key = value parameter file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    pub h_ue: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// GBDT configuration as key = value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario description with oracle parameters (default: scenario.json
    /// next to the rasters).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rows explained (seeded sample when the matrix is larger).
    #[arg(long, default_value_t = pathloss::explain::SHAP_SAMPLE_ROWS)]
    pub max_rows: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Feature for a dependence export (needs --interaction).
    #[arg(long, requires = "interaction")]
    pub dependence: Option<String>,
    /// Feature whose value colours the dependence export.
    #[arg(long, requires = "dependence")]
    pub interaction: Option<String>,
    /// Skip the cross-validated lighter-model comparison.
    #[arg(long)]
    pub no_lighter: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// GBDT configuration as key = value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Timed repetitions per learner; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub report: PathBuf,
}

/// Invalid flag combinations found after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a, cli.manifest),
        Command::Features(a) => commands::features(a, cli.manifest),
        Command::Train(a) => commands::train(a, cli.manifest),
        Command::Tune(a) => commands::tune(a, cli.manifest),
        Command::Predict(a) => commands::predict(a, cli.manifest),
        Command::Empirical(a) => commands::empirical(a, cli.manifest),
        Command::Compare(a) => commands::compare(a, cli.manifest),
        Command::Explain(a) => commands::explain(a, cli.manifest),
        Command::Bench(a) => commands::bench(a, cli.manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut line = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !line.contains(&c) {
                    line = format!("{line}: {c}");
                }
            }
            let line = line.replace('\n', " ");
            eprintln!("error: {line}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
