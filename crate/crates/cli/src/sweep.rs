//! Grid sweeps over graph model hyperparameters.
//!
//! ```json
//! {
//!   "base_manifest": "awt.json",
//!   "grid": { "latent": [16, 32], "steps": [1, 2] },
//!   "output_dir": "sweeps/awt"
//! }
//! ```
//!
//! Grid keys are visited in sorted order with the last key varying fastest.
//! Every run gets its own `run_NNN` directory; `summary.csv` lists the varied
//! values and the mean test AUC of each run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::commands::{cmd_eval, train_manifest, EvalExpectations};
use crate::manifest::{ModelKind, Overrides, RunManifest};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base_manifest: PathBuf,
    pub grid: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

struct Axis {
    pointer: &'static str,
    domain: fn() -> Vec<Value>,
}

/// Location of a grid key inside a resolved manifest and its allowed values.
fn axis(key: &str) -> Option<Axis> {
    let a = |pointer, domain| Some(Axis { pointer, domain });
    match key {
        "latent" | "latent_dim" => a("/train/model/latent_dim", || vec![json!(16), json!(20), json!(32), json!(64)]),
        "hidden_layers" | "num_hidden_layers" => {
            a("/train/model/num_hidden_layers", || vec![json!(1), json!(2), json!(3)])
        }
        "steps" | "num_message_passing_steps" => {
            a("/train/model/num_message_passing_steps", || vec![json!(1), json!(2), json!(3)])
        }
        "direction" => a("/train/model/direction", || vec![json!("one_way"), json!("bidirectional")]),
        "include_negative_edges" => a("/train/model/include_negative_edges", || vec![json!(true), json!(false)]),
        "aggregation" => a("/train/model/aggregation", || vec![json!("segment_sum"), json!("segment_mean")]),
        "activation" => a("/train/model/activation", || {
            ["relu", "leakyrelu", "softplus", "silu", "hardsilu", "sparseplus"]
                .map(Value::from)
                .to_vec()
        }),
        "learning_rate" => a("/train/learning_rate", || vec![json!(0.001), json!(0.0001)]),
        "strategy" | "sampling_strategy" => a("/train/sampling/strategy", || {
            vec![json!("uniform"), json!("stratified_k_locations")]
        }),
        "negatives_per_epoch" => a("/train/sampling/negatives_per_epoch", || {
            vec![json!("match_positive_count"), json!({"fixed": 1000})]
        }),
        "proportion_from_po" => a("/train/sampling/proportion_from_po", || {
            vec![json!("random"), json!(0.75), json!(1.0)]
        }),
        _ => None,
    }
}

fn same_value(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// One grid point: `(key, value)` in sorted key order.
pub type Assignment = Vec<(String, Value)>;

impl SweepSpec {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read sweep spec {}: {e}", path.display())))?;
        let mut spec: SweepSpec =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("invalid sweep spec: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if spec.base_manifest.is_relative() {
            spec.base_manifest = base.join(&spec.base_manifest);
        }
        if let Some(o) = &mut spec.output_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        spec.validate()?;
        Ok((spec, base.to_path_buf()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.grid.is_empty() {
            return Err(CliError::Validation("sweep grid is empty".into()));
        }
        for (key, values) in &self.grid {
            let ax = axis(key).ok_or_else(|| CliError::Validation(format!("unknown sweep parameter `{key}`")))?;
            if values.is_empty() {
                return Err(CliError::Validation(format!("sweep parameter `{key}` has no values")));
            }
            let domain = (ax.domain)();
            for v in values {
                if !domain.iter().any(|d| same_value(d, v)) {
                    return Err(CliError::Validation(format!(
                        "sweep value {v} for `{key}` is outside {}",
                        Value::from(domain.clone())
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cross product of the grid.
    pub fn assignments(&self) -> Vec<Assignment> {
        let mut out: Vec<Assignment> = vec![Vec::new()];
        for (key, values) in &self.grid {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut a = prefix.clone();
                        a.push((key.clone(), v.clone()));
                        a
                    })
                })
                .collect();
        }
        out
    }
}

/// `base` with the grid values written into the model section.
pub fn apply_assignment(base: &RunManifest, assignment: &Assignment) -> Result<RunManifest, CliError> {
    let mut value = serde_json::to_value(base.resolved()).expect("manifest serializes");
    for (key, v) in assignment {
        let ax = axis(key).expect("validated key");
        let slot = value
            .pointer_mut(ax.pointer)
            .ok_or_else(|| CliError::Validation(format!("manifest has no field for `{key}`")))?;
        *slot = v.clone();
    }
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("sweep produced an invalid manifest: {e}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub index: usize,
    pub assignment: Assignment,
    pub output_dir: PathBuf,
    pub mean_auc: Option<f64>,
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn summary_csv(spec: &SweepSpec, runs: &[SweepRun]) -> String {
    let mut out = String::from("run");
    for key in spec.grid.keys() {
        out.push(',');
        out.push_str(key);
    }
    out.push_str(",mean_auc\n");
    for r in runs {
        out.push_str(&format!("run_{:03}", r.index));
        for (_, v) in &r.assignment {
            // quote values that contain commas, such as {"fixed":1000}
            let s = render(v);
            if s.contains(',') || s.contains('"') {
                out.push_str(&format!(",\"{}\"", s.replace('"', "\"\"")));
            } else {
                out.push_str(&format!(",{s}"));
            }
        }
        match r.mean_auc {
            Some(a) => out.push_str(&format!(",{a}\n")),
            None => out.push_str(",\n"),
        }
    }
    out
}

/// Trains and evaluates every grid point, `parallel` runs at a time.
pub fn cmd_sweep(
    spec_path: &Path,
    output_dir: Option<&Path>,
    seed: Option<u64>,
    parallel: usize,
) -> Result<Vec<SweepRun>, CliError> {
    let (spec, _) = SweepSpec::load(spec_path)?;
    let mut base = RunManifest::load(&spec.base_manifest)?;
    if base.model_kind != ModelKind::Gnn {
        return Err(CliError::Validation("sweeps support graph model manifests only".into()));
    }
    base.apply(&Overrides {
        seed,
        ..Default::default()
    });
    let root = output_dir
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| base.output_dir.join("sweep"));
    fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;

    let mut plans = Vec::new();
    for (index, assignment) in spec.assignments().into_iter().enumerate() {
        let mut manifest = apply_assignment(&base, &assignment)?;
        manifest.output_dir = root.join(format!("run_{index:03}"));
        manifest.validate()?;
        plans.push((index, assignment, manifest));
    }
    log::info!("sweep: {} runs into {}", plans.len(), root.display());

    let run_one = |(index, assignment, manifest): &(usize, Assignment, RunManifest)| -> Result<SweepRun, CliError> {
        let trained = train_manifest(manifest)?;
        let region_dir = manifest
            .region
            .dir
            .clone()
            .ok_or_else(|| CliError::Validation("sweep evaluation needs `region.dir`".into()))?;
        let eval = cmd_eval(&trained.checkpoint, &region_dir, None, &EvalExpectations::default())?;
        log::info!("run_{index:03}: mean AUC {:?}", eval.report.mean_auc);
        Ok(SweepRun {
            index: *index,
            assignment: assignment.clone(),
            output_dir: manifest.output_dir.clone(),
            mean_auc: eval.report.mean_auc,
        })
    };
    let results: Vec<Result<SweepRun, CliError>> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
        pool.install(|| plans.par_iter().map(run_one).collect())
    } else {
        plans.iter().map(run_one).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let summary = root.join(SUMMARY_FILE);
    fs::write(&summary, summary_csv(&spec, &runs)).map_err(|e| CliError::io(&summary, e))?;
    Ok(runs)
}
