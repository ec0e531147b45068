use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hetero_sdm::baseline::BaselineData;
use hetero_sdm::gradcheck::{GradcheckProblem, GradcheckReport, Tolerance};
use hetero_sdm::nn::Activation;
use hetero_sdm::{
    build_training_graph, evaluate_checkpoint, load_region, train_baseline, train_with_hook, Checkpoint,
    EpochRecord, EvalReport, ModelConfig, SavedModel, TrainError,
};

use crate::manifest::{ModelKind, Overrides, RunManifest};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "train_log.jsonl";
pub const TIMING_LOG_FILE: &str = "timing.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "eval_report.json";

#[derive(Debug)]
pub struct TrainOutcome {
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Loss log and timing log written line by line as training progresses.
struct EpochLogs {
    loss: BufWriter<File>,
    timing: BufWriter<File>,
    loss_path: PathBuf,
}

impl EpochLogs {
    fn create(dir: &Path) -> Result<Self, CliError> {
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(&p, e))
        };
        Ok(Self {
            loss: open(LOSS_LOG_FILE)?,
            timing: open(TIMING_LOG_FILE)?,
            loss_path: dir.join(LOSS_LOG_FILE),
        })
    }

    fn write(&mut self, r: &EpochRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.loss, r)?;
        self.loss.write_all(b"\n")?;
        writeln!(self.timing, r#"{{"epoch":{},"seconds":{}}}"#, r.epoch, r.seconds)?;
        self.loss.flush()?;
        self.timing.flush()
    }
}

/// Trains the model described by the manifest and writes the checkpoint, the
/// loss log, a timing log and the resolved manifest to the output directory.
pub fn cmd_train(manifest_path: &Path, overrides: &Overrides) -> Result<TrainOutcome, CliError> {
    let mut manifest = RunManifest::load(manifest_path)?;
    manifest.apply(overrides);
    train_manifest(&manifest)
}

pub fn train_manifest(manifest: &RunManifest) -> Result<TrainOutcome, CliError> {
    manifest.validate()?;
    let resolved = manifest.resolved();
    let paths = resolved.region.existing_paths()?;
    let dataset = load_region(&resolved.region.code, &paths)?;
    let summary = dataset.summary();
    log::info!(
        "region {}: {} PO locations, {} background, {} test sites, {} species",
        summary.region_code,
        summary.po_locations,
        summary.background_locations,
        summary.test_locations,
        summary.species
    );

    let out = &resolved.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let manifest_json = serde_json::to_string_pretty(&resolved).expect("manifest serializes") + "\n";
    let mpath = out.join(MANIFEST_FILE);
    fs::write(&mpath, manifest_json).map_err(|e| CliError::io(&mpath, e))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut logs = EpochLogs::create(out)?;

    let (epochs, final_loss) = match resolved.model_kind {
        ModelKind::Gnn => {
            let config = resolved.train_config();
            let training = build_training_graph(&dataset, &config.model, &resolved.features)?;
            let snapshot = |epoch: usize, params: &hetero_sdm::ParamStore| Checkpoint {
                region: dataset.region_code.clone(),
                species_ids: training.species_ids.clone(),
                features: resolved.features,
                normalizer: training.pipeline.normalizer.clone(),
                epoch,
                model: SavedModel::Gnn {
                    train: config,
                    input_dims: hetero_sdm::InputDims::of_graph(&training.graph).expect("validated graph"),
                    params: params.clone(),
                },
            };
            let result = train_with_hook(&training, &config, |record, params| {
                logs.write(record).map_err(|e| {
                    TrainError::Checkpoint(hetero_sdm::CheckpointError::Io {
                        path: logs.loss_path.display().to_string(),
                        source: e,
                    })
                })?;
                let every = config.checkpoint_every;
                if every > 0 && (record.epoch + 1) % every == 0 {
                    snapshot(record.epoch, params).save(&ckpt_path)?;
                }
                Ok(())
            });
            match result {
                Ok((params, history)) => {
                    let last = history.last().expect("at least one epoch");
                    snapshot(last.epoch, &params).save(&ckpt_path)?;
                    (history.len(), last.loss)
                }
                Err(TrainError::NonFiniteLoss { epoch, last_good }) => {
                    snapshot(epoch.saturating_sub(1), &last_good).save(&ckpt_path)?;
                    return Err(CliError::Runtime(format!(
                        "non-finite loss at epoch {epoch}; last good parameters saved to {}",
                        ckpt_path.display()
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
        ModelKind::Baseline => {
            let config = resolved.baseline_config();
            let data = BaselineData::from_dataset(&dataset, resolved.features.include_coords)?;
            let trained = train_baseline(&data, &config)?;
            for r in &trained.history {
                logs.write(r).map_err(|e| CliError::io(&logs.loss_path, e))?;
            }
            let last = trained.history.last().expect("at least one epoch");
            Checkpoint {
                region: dataset.region_code.clone(),
                species_ids: dataset.species_ids(),
                features: resolved.features,
                normalizer: data.pipeline.normalizer.clone(),
                epoch: last.epoch,
                model: SavedModel::Baseline {
                    config,
                    params: trained.params,
                },
            }
            .save(&ckpt_path)?;
            (trained.history.len(), last.loss)
        }
    };
    log::info!("trained {epochs} epochs, final loss {final_loss:.6}");
    Ok(TrainOutcome {
        output_dir: out.clone(),
        checkpoint: ckpt_path,
        loss_log: logs.loss_path.clone(),
        epochs,
        final_loss,
    })
}

/// Flags that must agree with the checkpoint when given.
#[derive(Clone, Debug, Default)]
pub struct EvalExpectations {
    pub model_kind: Option<ModelKind>,
    pub include_coords: bool,
    pub no_normalize_gnn_inputs: bool,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub json_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Scores a checkpoint on the presence/absence sites of a region directory
/// and writes the report as JSON plus a per-species CSV next to it.
pub fn cmd_eval(
    checkpoint_path: &Path,
    region_dir: &Path,
    out: Option<&Path>,
    expect: &EvalExpectations,
) -> Result<EvalOutcome, CliError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let kind = match checkpoint.model {
        SavedModel::Gnn { .. } => ModelKind::Gnn,
        SavedModel::Baseline { .. } => ModelKind::Baseline,
    };
    if let Some(k) = expect.model_kind {
        if k != kind {
            return Err(CliError::Validation(format!(
                "--model-kind {} given but the checkpoint holds a {} model",
                k.name(),
                kind.name()
            )));
        }
    }
    if expect.include_coords && !checkpoint.features.include_coords {
        return Err(CliError::Validation(
            "--include-coords given but the checkpoint was trained without coordinates".into(),
        ));
    }
    if expect.no_normalize_gnn_inputs && checkpoint.features.normalize_gnn_inputs && kind == ModelKind::Gnn {
        return Err(CliError::Validation(
            "--no-normalize-gnn-inputs given but the checkpoint was trained with normalized inputs".into(),
        ));
    }

    let spec = crate::manifest::RegionSpec {
        code: checkpoint.region.clone(),
        dir: Some(region_dir.to_path_buf()),
        ..Default::default()
    };
    let dataset = load_region(&checkpoint.region, &spec.existing_paths()?)?;
    let report = evaluate_checkpoint(&checkpoint, &dataset)?;

    let json_path = match out {
        Some(p) => p.to_path_buf(),
        None => checkpoint_path.parent().unwrap_or(Path::new(".")).join(REPORT_FILE),
    };
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    report.write_json(&json_path)?;
    let csv_path = json_path.with_extension("csv");
    let file = File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    report
        .write_csv(BufWriter::new(file))
        .map_err(|e| CliError::io(&csv_path, e))?;
    Ok(EvalOutcome {
        report,
        json_path,
        csv_path,
    })
}

/// Mean AUC as printed on standard output.
pub fn format_mean_auc(report: &EvalReport) -> String {
    match report.mean_auc {
        Some(a) => format!("mean AUC: {a:.4}"),
        None => "mean AUC: n/a (no species with both test classes)".into(),
    }
}

/// Gradient check configuration file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSpec {
    pub model: ModelConfig,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                latent_dim: 8,
                num_hidden_layers: 1,
                num_message_passing_steps: 1,
                activation: Activation::Silu,
                ..Default::default()
            },
            seed: 0,
            epsilon: 1e-5,
        }
    }
}

impl GradcheckSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("invalid gradcheck config: {e}")))
    }
}

/// Finite-difference check of every parameter role on a generated toy graph.
/// `corrupt_gradient` perturbs one analytic gradient entry to exercise the
/// failure path.
pub fn cmd_gradcheck(spec: &GradcheckSpec, corrupt_gradient: bool) -> Result<GradcheckReport, CliError> {
    spec.model.validate()?;
    if !(spec.epsilon.is_finite() && spec.epsilon > 0.0) {
        return Err(CliError::Validation("epsilon must be positive".into()));
    }
    let problem = GradcheckProblem::toy(&spec.model, spec.seed)?;
    let tolerance = Tolerance {
        epsilon: spec.epsilon,
        ..Default::default()
    };
    let report = problem.check_with(tolerance, |g| {
        if corrupt_gradient {
            if let Some(m) = g.mlps.values_mut().next() {
                m.weights[0][[0, 0]] += 1e-2;
            }
        }
    })?;
    if report.passed() {
        Ok(report)
    } else {
        let worst = report.failures().next().expect("failed report has a failure");
        Err(CliError::GradcheckBreach(format!(
            "{} tensor {} entry {}: analytic {:e}, numeric {:e} (max relative error {:e})",
            worst.role,
            worst.tensor,
            worst.worst_entry,
            worst.analytic,
            worst.numeric,
            report.max_rel_error()
        )))
    }
}
