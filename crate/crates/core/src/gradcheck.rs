//! Central finite-difference checks of the analytic model gradients.

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::gnn::{loss, loss_and_gradients, Direction, InputDims, ModelConfig, ModelError, ParamStore};
use crate::graph::{EdgeSet, NodeSet, TypedGraph, DET_L2S, DET_S2L, LOCATION, NONDET_L2S, NONDET_S2L, SPECIES};
use crate::nn::ParamTensors;
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    pub epsilon: f64,
    /// Bound on `|a - n| / max(|a|, |n|)`.
    pub relative: f64,
    /// Bound on `|a - n|` used when `|a|` is below `small_gradient`.
    pub absolute: f64,
    pub small_gradient: f64,
    /// Units in the last place of the loss that a central difference may lose
    /// to rounding. Entries whose discrepancy stays within that bound are
    /// accepted even when the relative test cannot resolve them.
    pub rounding_ulps: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            relative: 1e-4,
            absolute: 1e-6,
            small_gradient: 1e-8,
            rounding_ulps: 8.0,
        }
    }
}

/// Which test decided an entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Relative,
    Absolute,
    RoundingBound,
    Failed,
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        self.judge(analytic, numeric, 0.0) != Verdict::Failed
    }

    /// Largest error of a central difference caused by rounding the loss
    /// values `plus` and `minus`.
    pub fn rounding_bound(&self, plus: f64, minus: f64) -> f64 {
        let ulp = |x: f64| {
            let x = x.abs();
            f64::from_bits(x.to_bits() + 1) - x
        };
        self.rounding_ulps * ulp(plus.abs().max(minus.abs())) / (2.0 * self.epsilon)
    }

    pub fn judge(&self, analytic: f64, numeric: f64, rounding_bound: f64) -> Verdict {
        let diff = (analytic - numeric).abs();
        if analytic.abs() < self.small_gradient {
            if diff <= self.absolute {
                Verdict::Absolute
            } else {
                Verdict::Failed
            }
        } else if diff / analytic.abs().max(numeric.abs()) <= self.relative {
            Verdict::Relative
        } else if diff <= rounding_bound {
            Verdict::RoundingBound
        } else {
            Verdict::Failed
        }
    }
}

/// Worst entry of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub role: String,
    /// Position in `(weight, bias)` layer order.
    pub tensor: usize,
    pub entries: usize,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    /// Largest relative error over entries judged by the relative rule.
    pub max_rel_error: f64,
    /// Entries accepted only because their discrepancy is within rounding.
    pub rounding_limited: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: Tolerance,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }

    /// Largest relative error over entries whose analytic gradient is not
    /// negligible.
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn num_entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries).sum()
    }

    pub fn num_rounding_limited(&self) -> usize {
        self.tensors.iter().map(|t| t.rounding_limited).sum()
    }
}

/// A graph, parameters and labelled target pairs to differentiate.
#[derive(Clone, Debug)]
pub struct GradcheckProblem {
    pub graph: TypedGraph,
    pub params: ParamStore,
    pub model: ModelConfig,
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl GradcheckProblem {
    /// Six locations and four species with random features, detection edges
    /// and, when the model uses them, non-detection edges.
    pub fn toy(model: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = stream_rng(seed, 0x6772_6164, 0);
        let mut features = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
        };
        let loc = features(6, 3);
        let sp = features(4, 5);
        let det = EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, vec![0, 0, 1, 2, 3, 5], vec![0, 1, 1, 2, 3, 0])?;
        let nondet = EdgeSet::with_unit_features(NONDET_L2S, LOCATION, SPECIES, vec![1, 4, 4, 5], vec![2, 0, 3, 1])?;
        let mut graph = TypedGraph::new()
            .add_node_set(NodeSet::new(LOCATION, loc))?
            .add_node_set(NodeSet::new(SPECIES, sp))?;
        let bidirectional = model.direction == Direction::Bidirectional;
        if bidirectional {
            graph = graph.add_edge_set(det.reversed(DET_S2L))?;
        }
        if model.include_negative_edges {
            if bidirectional {
                graph = graph.add_edge_set(nondet.reversed(NONDET_S2L))?;
            }
            graph = graph.add_edge_set(nondet)?;
        }
        graph = graph.add_edge_set(det)?;
        let dims = InputDims::of_graph(&graph)?;
        let params = ParamStore::init(model, dims, seed)?;
        let pairs = vec![(0, 0), (1, 1), (2, 2), (1, 2), (4, 0), (5, 3), (3, 1)];
        let labels = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        Ok(Self {
            graph,
            params,
            model: *model,
            pairs,
            labels,
        })
    }

    pub fn check(&self, tolerance: Tolerance) -> Result<GradcheckReport, ModelError> {
        self.check_with(tolerance, |_| {})
    }

    /// As [`check`](Self::check) but lets `corrupt` modify the analytic
    /// gradients before comparison.
    pub fn check_with(
        &self,
        tolerance: Tolerance,
        corrupt: impl FnOnce(&mut ParamStore),
    ) -> Result<GradcheckReport, ModelError> {
        let (_, mut analytic) =
            loss_and_gradients(&self.graph, &self.params, &self.model, &self.pairs, &self.labels)?;
        corrupt(&mut analytic);
        let f = |p: &ParamStore| loss(&self.graph, p, &self.model, &self.pairs, &self.labels);
        let eps = tolerance.epsilon;

        let mut probe = self.params.clone();
        let mut tensors = Vec::new();
        let layout: Vec<(String, usize)> = self
            .params
            .mlps
            .iter()
            .flat_map(|(role, m)| (0..m.weights.len() * 2).map(move |t| (role.clone(), t)))
            .collect();
        let grads = analytic.tensor_slices().into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();

        for (flat, (role, tensor)) in layout.into_iter().enumerate() {
            let n = grads[flat].len();
            let mut worst: Option<TensorCheck> = None;
            let mut max_rel = 0.0f64;
            let mut rounding_limited = 0;
            for k in 0..n {
                let original = probe.tensor_slices()[flat][k];
                probe.tensor_slices_mut()[flat][k] = original + eps;
                let plus = f(&probe)?;
                probe.tensor_slices_mut()[flat][k] = original - eps;
                let minus = f(&probe)?;
                probe.tensor_slices_mut()[flat][k] = original;

                let numeric = (plus - minus) / (2.0 * eps);
                let a = grads[flat][k];
                let abs_error = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
                let verdict = tolerance.judge(a, numeric, tolerance.rounding_bound(plus, minus));
                let passed = verdict != Verdict::Failed;
                match verdict {
                    Verdict::Relative | Verdict::Failed if a.abs() >= tolerance.small_gradient => {
                        max_rel = max_rel.max(rel_error)
                    }
                    Verdict::RoundingBound => rounding_limited += 1,
                    _ => {}
                }
                let worse = match &worst {
                    None => true,
                    Some(w) => (w.passed && !passed) || (w.passed == passed && abs_error > w.abs_error),
                };
                if worse {
                    worst = Some(TensorCheck {
                        role: role.clone(),
                        tensor,
                        entries: n,
                        worst_entry: k,
                        analytic: a,
                        numeric,
                        abs_error,
                        rel_error,
                        max_rel_error: 0.0,
                        rounding_limited: 0,
                        passed,
                    });
                }
            }
            if let Some(mut w) = worst {
                w.max_rel_error = max_rel;
                w.rounding_limited = rounding_limited;
                tensors.push(w);
            }
        }
        Ok(GradcheckReport { tolerance, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn model(direction: Direction, negative: bool, steps: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            num_hidden_layers: 1,
            num_message_passing_steps: steps,
            direction,
            include_negative_edges: negative,
            activation: Activation::Silu,
            ..Default::default()
        }
    }

    #[test]
    fn smooth_model_passes() {
        let p = GradcheckProblem::toy(&model(Direction::Bidirectional, true, 2), 1).unwrap();
        let r = p.check(Tolerance::default()).unwrap();
        assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.num_entries(), p.params.num_parameters());
        assert!(r.max_rel_error() < 1e-4);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let p = GradcheckProblem::toy(&model(Direction::OneWay, false, 1), 2).unwrap();
        let r = p
            .check_with(Tolerance::default(), |g| {
                let m = g.mlps.get_mut("embedder/species").unwrap();
                m.weights[0][[0, 0]] += 1e-3;
            })
            .unwrap();
        let failures: Vec<_> = r.failures().collect();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].role, "embedder/species");
        assert_eq!(failures[0].tensor, 0);
    }

    #[test]
    fn tolerance_rules() {
        let t = Tolerance::default();
        assert!(t.accepts(1.0, 1.00005));
        assert!(!t.accepts(1.0, 1.001));
        assert!(t.accepts(1e-9, 5e-7));
        assert!(!t.accepts(1e-9, 2e-6));
        // 3e-8 off by 1e-11 is beyond 1e-4 relative but inside the rounding
        // bound of a loss near 0.7
        let bound = t.rounding_bound(0.7, 0.7);
        assert!(bound > 1e-11 && bound < 1e-10);
        assert_eq!(t.judge(3e-8, 3e-8 + 1e-11, bound), Verdict::RoundingBound);
        assert_eq!(t.judge(3e-8, 3e-8 + 1e-9, bound), Verdict::Failed);
        assert_eq!(t.judge(0.1, 0.1 + 1e-9, bound), Verdict::Relative);
    }
}
