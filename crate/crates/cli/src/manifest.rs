//! JSON run manifests.
//!
//! ```json
//! {
//!   "region": { "code": "AWT", "dir": "data/AWT" },
//!   "model_kind": "gnn",
//!   "train": { "num_epochs": 200, "model": { "latent_dim": 32 } },
//!   "features": { "include_coords": false },
//!   "output_dir": "runs/awt",
//!   "seed": 7
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hetero_sdm::{BaselineConfig, FeatureOptions, RegionPaths, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gnn,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gnn => "gnn",
            ModelKind::Baseline => "baseline",
        }
    }
}

/// Region files: a directory with the canonical file names, individual paths,
/// or a directory with some files overridden.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub po: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa_env: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<PathBuf>,
}

impl RegionSpec {
    pub fn paths(&self) -> Result<RegionPaths, CliError> {
        let base = self.dir.as_ref().map(RegionPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| CliError::Validation(format!("region needs `dir` or an explicit `{name}` path")))
        };
        Ok(RegionPaths {
            po: pick(&self.po, base.as_ref().map(|b| &b.po), "po")?,
            bg: pick(&self.bg, base.as_ref().map(|b| &b.bg), "bg")?,
            pa_env: pick(&self.pa_env, base.as_ref().map(|b| &b.pa_env), "pa_env")?,
            pa_labels: pick(&self.pa_labels, base.as_ref().map(|b| &b.pa_labels), "pa_labels")?,
            species: pick(&self.species, base.as_ref().map(|b| &b.species), "species")?,
        })
    }

    /// Region paths, failing with the first one that does not exist.
    pub fn existing_paths(&self) -> Result<RegionPaths, CliError> {
        let paths = self.paths()?;
        if let Some(missing) = paths.first_missing() {
            return Err(CliError::Validation(format!(
                "region file not found: {}",
                missing.display()
            )));
        }
        Ok(paths)
    }

    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.dir,
            &mut self.po,
            &mut self.bg,
            &mut self.pa_env,
            &mut self.pa_labels,
            &mut self.species,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub region: RegionSpec,
    pub model_kind: ModelKind,
    /// Graph model training settings; only with `model_kind: gnn`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Baseline settings; only with `model_kind: baseline`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub features: FeatureOptions,
    pub output_dir: PathBuf,
    /// Overrides every seed in the model sections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Command-line overrides applied on top of a manifest.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub region_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub include_coords: bool,
    pub no_normalize_gnn_inputs: bool,
}

impl RunManifest {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut m: RunManifest =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("invalid manifest: {e}")))?;
        m.region.resolve_against(base_dir);
        if m.output_dir.is_relative() {
            m.output_dir = base_dir.join(&m.output_dir);
        }
        m.check_kind()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    fn check_kind(&self) -> Result<(), CliError> {
        match (self.model_kind, &self.train, &self.baseline) {
            (ModelKind::Gnn, _, Some(_)) => Err(CliError::Validation(
                "manifest with model_kind `gnn` must not carry a `baseline` section".into(),
            )),
            (ModelKind::Baseline, Some(_), _) => Err(CliError::Validation(
                "manifest with model_kind `baseline` must not carry a `train` section".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(dir) = &o.region_dir {
            self.region = RegionSpec {
                code: self.region.code.clone(),
                dir: Some(dir.clone()),
                ..Default::default()
            };
        }
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        self.features.include_coords |= o.include_coords;
        if o.no_normalize_gnn_inputs {
            self.features.normalize_gnn_inputs = false;
        }
    }

    /// Graph model settings with the manifest seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.unwrap_or_default();
        if let Some(seed) = self.seed {
            t.seed = seed;
            t.sampling.seed = seed;
        }
        t
    }

    /// Baseline settings with the manifest seed applied.
    pub fn baseline_config(&self) -> BaselineConfig {
        let mut b = self.baseline.unwrap_or_default();
        if let Some(seed) = self.seed {
            b.seed = seed;
        }
        b
    }

    /// Fully explicit copy: defaults filled in and the seed folded into the
    /// model section.
    pub fn resolved(&self) -> RunManifest {
        let mut m = self.clone();
        match m.model_kind {
            ModelKind::Gnn => m.train = Some(self.train_config()),
            ModelKind::Baseline => m.baseline = Some(self.baseline_config()),
        }
        m
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.check_kind()?;
        match self.model_kind {
            ModelKind::Gnn => self.train_config().validate()?,
            ModelKind::Baseline => self.baseline_config().validate()?,
        }
        self.region.existing_paths()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunManifest, CliError> {
        RunManifest::from_json(text, Path::new("/base"))
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let m = parse(r#"{"region": {"code": "R", "dir": "data", "po": "/abs/po.csv"},
                          "model_kind": "gnn", "output_dir": "out"}"#)
        .unwrap();
        let p = m.region.paths().unwrap();
        assert_eq!(p.po, PathBuf::from("/abs/po.csv"));
        assert_eq!(p.bg, PathBuf::from("/base/data/bg.csv"));
        assert_eq!(m.output_dir, PathBuf::from("/base/out"));
    }

    #[test]
    fn exactly_one_model_kind() {
        let both = r#"{"region": {"code": "R", "dir": "d"}, "model_kind": "gnn",
                       "baseline": {}, "output_dir": "o"}"#;
        assert!(matches!(parse(both), Err(CliError::Validation(_))));
        let unknown = r#"{"region": {"code": "R", "dir": "d"}, "model_kind": "forest", "output_dir": "o"}"#;
        assert!(parse(unknown).is_err());
    }

    #[test]
    fn seed_reaches_every_stream() {
        let mut m = parse(r#"{"region": {"code": "R", "dir": "d"}, "model_kind": "gnn",
                              "output_dir": "o", "seed": 5}"#)
        .unwrap();
        assert_eq!(m.train_config().seed, 5);
        assert_eq!(m.train_config().sampling.seed, 5);
        m.apply(&Overrides {
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!(m.resolved().train.unwrap().sampling.seed, 9);
    }

    #[test]
    fn missing_region_file_is_named() {
        let m = parse(r#"{"region": {"code": "R", "dir": "/nowhere"}, "model_kind": "baseline", "output_dir": "o"}"#)
            .unwrap();
        let err = m.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("/nowhere/po.csv"), "{err}");
    }
}
