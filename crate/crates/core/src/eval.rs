//! Presence/absence evaluation: per-species ROC AUC on held-out test sites.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{predict_baseline, BaselineError};
use crate::checkpoint::{Checkpoint, CheckpointError, SavedModel};
use crate::gnn::{probability_matrix, InputDims, ModelConfig, ModelError, ParamStore};
use crate::graph::{GraphError, NodeSet, TypedGraph, LOCATION};
use crate::ingest::{build_training_graph, IngestError, RegionDataset};
use crate::train::{inference_graph, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC is undefined when all labels are {0}")]
    DegenerateLabels(u8),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("checkpoint does not match the region: {0}")]
    RegionMismatch(String),
    #[error("cannot write report to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

/// Area under the ROC curve via the rank-sum statistic, with tied scores
/// given their average rank.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(EvalError::DegenerateLabels(0));
    }
    if n_neg == 0 {
        return Err(EvalError::DegenerateLabels(1));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Appends test locations to the location node set without adding any edges.
/// Returns the new graph and the row range of the test locations.
pub fn build_test_graph(
    train_graph: &TypedGraph,
    test_features: &Array2<f64>,
) -> Result<(TypedGraph, Range<usize>), EvalError> {
    let loc = train_graph.node_set(LOCATION)?;
    let start = loc.count();
    if test_features.ncols() != loc.feature_dim() {
        return Err(GraphError::FeatureWidthMismatch {
            set: LOCATION.into(),
            expected: loc.feature_dim(),
            actual: test_features.ncols(),
        }
        .into());
    }
    let features = concatenate(Axis(0), &[loc.features.view(), test_features.view()])
        .expect("widths checked");
    let graph = train_graph.with_node_set(NodeSet::new(LOCATION, features))?;
    Ok((graph, start..start + test_features.nrows()))
}

/// Test-site probabilities of the graph model, `n_test x n_species`.
pub fn predict_gnn(
    message_graph: &TypedGraph,
    params: &ParamStore,
    model: &ModelConfig,
    test_features: &Array2<f64>,
) -> Result<Array2<f64>, EvalError> {
    let (graph, range) = build_test_graph(message_graph, test_features)?;
    Ok(probability_matrix(&graph, params, model, range)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesScore {
    pub species_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub region: String,
    pub model: String,
    pub per_species: Vec<SpeciesScore>,
    /// Mean over scored species; `None` when no species could be scored.
    pub mean_auc: Option<f64>,
    pub n_species_scored: usize,
}

impl EvalReport {
    /// Scores every species column. Species whose test labels are all equal
    /// are reported as skipped.
    pub fn from_probabilities(
        region: &str,
        model: &str,
        species_ids: &[String],
        probabilities: &Array2<f64>,
        labels: &Array2<u8>,
    ) -> Result<Self, EvalError> {
        if probabilities.dim() != labels.dim() || species_ids.len() != labels.ncols() {
            return Err(EvalError::LengthMismatch {
                scores: probabilities.len(),
                labels: labels.len(),
            });
        }
        let mut per_species = Vec::with_capacity(species_ids.len());
        for (j, id) in species_ids.iter().enumerate() {
            let scores = probabilities.column(j).to_vec();
            let y = labels.column(j).to_vec();
            per_species.push(match auc_roc(&scores, &y) {
                Ok(auc) => SpeciesScore {
                    species_id: id.clone(),
                    auc: Some(auc),
                    skipped: None,
                },
                Err(EvalError::DegenerateLabels(v)) => SpeciesScore {
                    species_id: id.clone(),
                    auc: None,
                    skipped: Some(format!("all test labels are {v}")),
                },
                Err(e) => return Err(e),
            });
        }
        let scored: Vec<f64> = per_species.iter().filter_map(|s| s.auc).collect();
        Ok(Self {
            region: region.to_string(),
            model: model.to_string(),
            mean_auc: (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64),
            n_species_scored: scored.len(),
            per_species,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json + "\n").map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// `species_id,auc` rows; skipped species have an empty AUC.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "species_id,auc")?;
        for s in &self.per_species {
            match s.auc {
                Some(a) => writeln!(out, "{},{a}", s.species_id)?,
                None => writeln!(out, "{},", s.species_id)?,
            }
        }
        Ok(())
    }
}

/// Rebuilds the training graph of `dataset` and scores the checkpoint on the
/// region's presence/absence sites.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, dataset: &RegionDataset) -> Result<EvalReport, EvalError> {
    if checkpoint.region != dataset.region_code {
        return Err(EvalError::RegionMismatch(format!(
            "checkpoint region `{}`, dataset region `{}`",
            checkpoint.region, dataset.region_code
        )));
    }
    if checkpoint.species_ids != dataset.species_ids() {
        return Err(EvalError::RegionMismatch("species tables differ".into()));
    }
    let pipeline = checkpoint.pipeline();
    let test_features = pipeline.test_features(dataset);
    let labels = dataset.test_labels();
    let (probs, kind) = match &checkpoint.model {
        SavedModel::Gnn {
            train,
            input_dims,
            params,
        } => {
            let training = build_training_graph(dataset, &train.model, &checkpoint.features)?;
            let dims = InputDims::of_graph(&training.graph)?;
            if dims != *input_dims {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "region produces input widths {dims:?}, checkpoint expects {input_dims:?}"
                ))
                .into());
            }
            if training.pipeline.normalizer != checkpoint.normalizer {
                return Err(EvalError::RegionMismatch(
                    "feature normalization differs from the training data".into(),
                ));
            }
            let graph = inference_graph(&training, train)?;
            (predict_gnn(&graph, params, &train.model, &test_features)?, "gnn")
        }
        SavedModel::Baseline { params, .. } => (predict_baseline(params, &test_features)?, "baseline"),
    };
    EvalReport::from_probabilities(&dataset.region_code, kind, &checkpoint.species_ids, &probs, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(auc_roc(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.4, 0.3, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc_roc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn degenerate_and_mismatched() {
        assert!(matches!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(EvalError::DegenerateLabels(1))));
        assert!(matches!(auc_roc(&[0.1, 0.2], &[0, 0]), Err(EvalError::DegenerateLabels(0))));
        assert!(matches!(auc_roc(&[0.1], &[0, 1]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn report_skips_degenerate_species() {
        let probs = array![[0.9, 0.1], [0.2, 0.3], [0.6, 0.8]];
        let labels = array![[1u8, 1], [0, 1], [1, 1]];
        let ids = vec!["a".to_string(), "b".to_string()];
        let r = EvalReport::from_probabilities("R", "gnn", &ids, &probs, &labels).unwrap();
        assert_eq!(r.n_species_scored, 1);
        assert_eq!(r.mean_auc, Some(1.0));
        assert!(r.per_species[1].skipped.is_some());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["per_species"][1].get("auc").is_none());
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "species_id,auc\na,1\nb,\n");
    }

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    total += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        total / pairs
    }

    proptest! {
        #[test]
        fn matches_pairwise_count(
            data in prop::collection::vec((0u8..6, 0u8..2), 2..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, l)| l).collect();
            match auc_roc(&scores, &labels) {
                Ok(a) => prop_assert!((a - brute_force(&scores, &labels)).abs() < 1e-12),
                Err(EvalError::DegenerateLabels(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn invariant_under_monotone_maps(
            data in prop::collection::vec((-50i32..50, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s)).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, l)| l).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp() * 3.0 + 1.0).collect();
            if let Ok(a) = auc_roc(&scores, &labels) {
                prop_assert_eq!(a, auc_roc(&mapped, &labels).unwrap());
            }
        }
    }
}
