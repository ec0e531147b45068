use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hetero_sdm_cli::commands::{
    cmd_eval, cmd_gradcheck, cmd_train, format_mean_auc, EvalExpectations, GradcheckSpec,
};
use hetero_sdm_cli::manifest::{ModelKind, Overrides, RunManifest};
use hetero_sdm_cli::sweep::cmd_sweep;
use hetero_sdm_cli::CliError;

/// Train, evaluate and sweep graph-based species distribution models.
#[derive(Parser, Debug)]
#[command(name = "hetero-sdm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a run manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a region's presence/absence sites.
    Eval(EvalArgs),
    /// Train and evaluate every point of a hyperparameter grid.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences on a toy graph.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct FeatureFlags {
    /// Append location coordinates to the environmental features.
    #[arg(long)]
    include_coords: bool,
    /// Feed raw (unscaled) location features to the graph model.
    #[arg(long)]
    no_normalize_gnn_inputs: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; overrides the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Region directory with the canonical CSV files; overrides the manifest.
    #[arg(long)]
    region_dir: Option<PathBuf>,
    #[arg(long)]
    seed_override: Option<u64>,
    #[command(flatten)]
    features: FeatureFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Gnn,
    Baseline,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Region directory; defaults to the region of `--manifest`.
    #[arg(long)]
    region_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report path (JSON); a CSV with the same stem is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail unless the checkpoint holds this kind of model.
    #[arg(long, value_enum)]
    model_kind: Option<KindArg>,
    #[command(flatten)]
    features: FeatureFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep specification (JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_override: Option<u64>,
    /// Number of runs to execute concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: u16,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Gradient check configuration (JSON); defaults to a small toy model.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed_override: Option<u64>,
    /// Perturb one analytic gradient entry before comparison.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("HETERO_SDM_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(CliError::Validation(format!(
                "HETERO_SDM_LOG must be quiet, info or debug, got `{other}`"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let outcome = cmd_train(
                &a.manifest,
                &Overrides {
                    output_dir: a.out,
                    region_dir: a.region_dir,
                    seed: a.seed_override,
                    include_coords: a.features.include_coords,
                    no_normalize_gnn_inputs: a.features.no_normalize_gnn_inputs,
                },
            )?;
            println!(
                "trained {} epochs, final loss {:.6}; checkpoint {}",
                outcome.epochs,
                outcome.final_loss,
                outcome.checkpoint.display()
            );
        }
        Command::Eval(a) => {
            let region_dir = match (a.region_dir, &a.manifest) {
                (Some(d), _) => d,
                (None, Some(m)) => RunManifest::load(m)?
                    .region
                    .dir
                    .ok_or_else(|| CliError::Validation("manifest region has no `dir`".into()))?,
                (None, None) => {
                    return Err(CliError::Validation("eval needs --region-dir or --manifest".into()))
                }
            };
            let expect = EvalExpectations {
                model_kind: a.model_kind.map(|k| match k {
                    KindArg::Gnn => ModelKind::Gnn,
                    KindArg::Baseline => ModelKind::Baseline,
                }),
                include_coords: a.features.include_coords,
                no_normalize_gnn_inputs: a.features.no_normalize_gnn_inputs,
            };
            let outcome = cmd_eval(&a.checkpoint, &region_dir, a.out.as_deref(), &expect)?;
            log::info!("report written to {}", outcome.json_path.display());
            println!("{}", format_mean_auc(&outcome.report));
        }
        Command::Sweep(a) => {
            let runs = cmd_sweep(&a.manifest, a.out.as_deref(), a.seed_override, usize::from(a.parallel))?;
            println!("completed {} runs", runs.len());
        }
        Command::Gradcheck(a) => {
            let mut spec = match &a.manifest {
                Some(p) => GradcheckSpec::load(p)?,
                None => GradcheckSpec::default(),
            };
            if let Some(s) = a.seed_override {
                spec.seed = s;
            }
            let report = cmd_gradcheck(&spec, a.corrupt_gradient)?;
            println!(
                "checked {} entries in {} tensors; max relative error {:.3e}",
                report.num_entries(),
                report.tensors.len(),
                report.max_rel_error()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_logging().and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
