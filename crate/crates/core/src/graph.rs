//! Heterogeneous graph with named node sets and directed, typed edge sets.
//!
//! Graphs are values: every constructor returns a new graph and leaves the
//! receiver untouched. Node and edge sets are reference counted so that
//! deriving a graph (for example appending test locations) only copies the
//! sets that change.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use ndarray::Array2;
use thiserror::Error;

pub const LOCATION: &str = "location";
pub const SPECIES: &str = "species";
pub const DET_L2S: &str = "det_l2s";
pub const DET_S2L: &str = "det_s2l";
pub const NONDET_L2S: &str = "nondet_l2s";
pub const NONDET_S2L: &str = "nondet_s2l";

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node set `{0}` already exists")]
    DuplicateNodeSet(String),
    #[error("edge set `{0}` already exists")]
    DuplicateEdgeSet(String),
    #[error("unknown node set `{0}`")]
    UnknownNodeSet(String),
    #[error("unknown edge set `{0}`")]
    UnknownEdgeSet(String),
    #[error("edge set `{set}`: {role} index {index} out of bounds for node set of size {count}")]
    IndexOutOfBounds {
        set: String,
        role: &'static str,
        index: usize,
        count: usize,
    },
    #[error("edge set `{set}` contains duplicate edge ({sender}, {receiver})")]
    DuplicateEdge {
        set: String,
        sender: usize,
        receiver: usize,
    },
    #[error("`{set}`: {what} has {actual} rows, expected {expected}")]
    RowMismatch {
        set: String,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("`{set}`: feature width {actual}, expected {expected}")]
    FeatureWidthMismatch {
        set: String,
        expected: usize,
        actual: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    pub name: String,
    pub features: Array2<f64>,
}

impl NodeSet {
    pub fn new(name: impl Into<String>, features: Array2<f64>) -> Self {
        Self {
            name: name.into(),
            features,
        }
    }

    pub fn count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub name: String,
    pub sender_set: String,
    pub receiver_set: String,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub features: Array2<f64>,
}

impl EdgeSet {
    pub fn new(
        name: impl Into<String>,
        sender_set: impl Into<String>,
        receiver_set: impl Into<String>,
        senders: Vec<usize>,
        receivers: Vec<usize>,
        features: Array2<f64>,
    ) -> Result<Self, GraphError> {
        let name = name.into();
        if senders.len() != receivers.len() {
            return Err(GraphError::RowMismatch {
                set: name,
                what: "receivers",
                expected: senders.len(),
                actual: receivers.len(),
            });
        }
        if features.nrows() != senders.len() {
            return Err(GraphError::RowMismatch {
                set: name,
                what: "features",
                expected: senders.len(),
                actual: features.nrows(),
            });
        }
        let mut seen = HashSet::with_capacity(senders.len());
        for (&s, &r) in senders.iter().zip(&receivers) {
            if !seen.insert((s, r)) {
                return Err(GraphError::DuplicateEdge {
                    set: name,
                    sender: s,
                    receiver: r,
                });
            }
        }
        Ok(Self {
            name,
            sender_set: sender_set.into(),
            receiver_set: receiver_set.into(),
            senders,
            receivers,
            features,
        })
    }

    /// Edge set whose edges all carry the single constant feature `1.0`.
    pub fn with_unit_features(
        name: impl Into<String>,
        sender_set: impl Into<String>,
        receiver_set: impl Into<String>,
        senders: Vec<usize>,
        receivers: Vec<usize>,
    ) -> Result<Self, GraphError> {
        let n = senders.len();
        Self::new(
            name,
            sender_set,
            receiver_set,
            senders,
            receivers,
            Array2::ones((n, 1)),
        )
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    /// Same edges in the opposite direction; features are copied.
    pub fn reversed(&self, new_name: impl Into<String>) -> EdgeSet {
        EdgeSet {
            name: new_name.into(),
            sender_set: self.receiver_set.clone(),
            receiver_set: self.sender_set.clone(),
            senders: self.receivers.clone(),
            receivers: self.senders.clone(),
            features: self.features.clone(),
        }
    }
}

/// Free-function form of [`EdgeSet::reversed`].
pub fn reverse_edge_set(set: &EdgeSet, new_name: impl Into<String>) -> EdgeSet {
    set.reversed(new_name)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypedGraph {
    node_sets: BTreeMap<String, Arc<NodeSet>>,
    edge_sets: BTreeMap<String, Arc<EdgeSet>>,
}

impl TypedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node_set(&self, set: NodeSet) -> Result<TypedGraph, GraphError> {
        if self.node_sets.contains_key(&set.name) {
            return Err(GraphError::DuplicateNodeSet(set.name));
        }
        let mut g = self.clone();
        g.node_sets.insert(set.name.clone(), Arc::new(set));
        Ok(g)
    }

    pub fn add_edge_set(&self, set: EdgeSet) -> Result<TypedGraph, GraphError> {
        if self.edge_sets.contains_key(&set.name) {
            return Err(GraphError::DuplicateEdgeSet(set.name));
        }
        self.check_edge_bounds(&set)?;
        let mut g = self.clone();
        g.edge_sets.insert(set.name.clone(), Arc::new(set));
        Ok(g)
    }

    /// Replaces (or inserts) an edge set, validating it against the node sets.
    pub fn with_edge_set(&self, set: EdgeSet) -> Result<TypedGraph, GraphError> {
        self.check_edge_bounds(&set)?;
        let mut g = self.clone();
        g.edge_sets.insert(set.name.clone(), Arc::new(set));
        Ok(g)
    }

    pub fn without_edge_set(&self, name: &str) -> TypedGraph {
        let mut g = self.clone();
        g.edge_sets.remove(name);
        g
    }

    /// Replaces an existing node set. The feature width must be unchanged and
    /// the new set must still cover every edge endpoint.
    pub fn with_node_set(&self, set: NodeSet) -> Result<TypedGraph, GraphError> {
        let old = self
            .node_sets
            .get(&set.name)
            .ok_or_else(|| GraphError::UnknownNodeSet(set.name.clone()))?;
        if old.feature_dim() != set.feature_dim() {
            return Err(GraphError::FeatureWidthMismatch {
                set: set.name,
                expected: old.feature_dim(),
                actual: set.features.ncols(),
            });
        }
        let mut g = self.clone();
        g.node_sets.insert(set.name.clone(), Arc::new(set));
        for e in g.edge_sets.values() {
            g.check_edge_bounds(e)?;
        }
        Ok(g)
    }

    pub fn node_set(&self, name: &str) -> Result<&NodeSet, GraphError> {
        self.node_sets
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| GraphError::UnknownNodeSet(name.to_string()))
    }

    pub fn edge_set(&self, name: &str) -> Result<&EdgeSet, GraphError> {
        self.edge_sets
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| GraphError::UnknownEdgeSet(name.to_string()))
    }

    pub fn has_edge_set(&self, name: &str) -> bool {
        self.edge_sets.contains_key(name)
    }

    pub fn node_sets(&self) -> impl Iterator<Item = &NodeSet> {
        self.node_sets.values().map(|s| s.as_ref())
    }

    pub fn edge_sets(&self) -> impl Iterator<Item = &EdgeSet> {
        self.edge_sets.values().map(|s| s.as_ref())
    }

    /// Re-checks every structural invariant of the graph.
    pub fn validate(&self) -> Result<(), GraphError> {
        for e in self.edge_sets.values() {
            self.check_edge_bounds(e)?;
            // rebuilding runs the length and duplicate checks again
            EdgeSet::new(
                e.name.clone(),
                e.sender_set.clone(),
                e.receiver_set.clone(),
                e.senders.clone(),
                e.receivers.clone(),
                e.features.clone(),
            )?;
        }
        Ok(())
    }

    fn check_edge_bounds(&self, set: &EdgeSet) -> Result<(), GraphError> {
        let senders = self.node_set(&set.sender_set)?;
        let receivers = self.node_set(&set.receiver_set)?;
        let check = |idx: &[usize], count: usize, role| {
            match idx.iter().find(|&&i| i >= count) {
                Some(&index) => Err(GraphError::IndexOutOfBounds {
                    set: set.name.clone(),
                    role,
                    index,
                    count,
                }),
                None => Ok(()),
            }
        };
        check(&set.senders, senders.count(), "sender")?;
        check(&set.receivers, receivers.count(), "receiver")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn two_by_two() -> TypedGraph {
        TypedGraph::new()
            .add_node_set(NodeSet::new(LOCATION, Array2::zeros((2, 3))))
            .unwrap()
            .add_node_set(NodeSet::new(SPECIES, Array2::eye(2)))
            .unwrap()
    }

    #[test]
    fn add_node_set_keeps_original() {
        let g = TypedGraph::new();
        let g2 = g
            .add_node_set(NodeSet::new(SPECIES, Array2::eye(3)))
            .unwrap();
        assert_eq!(g.node_sets().count(), 0);
        assert_eq!(g2.node_sets().count(), 1);
        assert_eq!(g2.node_set(SPECIES).unwrap().count(), 3);
    }

    #[test]
    fn duplicate_node_set_rejected() {
        let g = TypedGraph::new()
            .add_node_set(NodeSet::new(SPECIES, Array2::eye(3)))
            .unwrap();
        let err = g
            .add_node_set(NodeSet::new(SPECIES, Array2::eye(2)))
            .unwrap_err();
        assert_eq!(err, GraphError::DuplicateNodeSet(SPECIES.into()));
    }

    #[test]
    fn empty_node_set_is_valid() {
        let g = TypedGraph::new()
            .add_node_set(NodeSet::new("loc", Array2::zeros((0, 13))))
            .unwrap();
        let s = g.node_set("loc").unwrap();
        assert_eq!((s.count(), s.feature_dim()), (0, 13));
        g.validate().unwrap();
    }

    #[test]
    fn edge_set_construction_and_errors() {
        let g = two_by_two();
        let e = EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, vec![0, 1], vec![1, 0])
            .unwrap();
        let g2 = g.add_edge_set(e).unwrap();
        assert_eq!(g2.edge_set(DET_L2S).unwrap().len(), 2);
        g2.validate().unwrap();

        let bad = EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, vec![5], vec![0])
            .unwrap();
        assert!(matches!(
            g.add_edge_set(bad),
            Err(GraphError::IndexOutOfBounds { index: 5, count: 2, .. })
        ));

        let dup = EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, vec![0, 0], vec![1, 1]);
        assert!(matches!(dup, Err(GraphError::DuplicateEdge { sender: 0, receiver: 1, .. })));

        let unknown =
            EdgeSet::with_unit_features("x", "nowhere", SPECIES, vec![], vec![]).unwrap();
        assert_eq!(
            g.add_edge_set(unknown).unwrap_err(),
            GraphError::UnknownNodeSet("nowhere".into())
        );
    }

    #[test]
    fn reverse_edge_set_swaps_roles() {
        let e = EdgeSet::new(
            DET_L2S,
            LOCATION,
            SPECIES,
            vec![0],
            vec![1],
            array![[2.5]],
        )
        .unwrap();
        let r = reverse_edge_set(&e, DET_S2L);
        assert_eq!(r.senders, vec![1]);
        assert_eq!(r.receivers, vec![0]);
        assert_eq!(r.sender_set, SPECIES);
        assert_eq!(r.receiver_set, LOCATION);
        assert_eq!(r.features, e.features);

        let mut back = r.reversed("other");
        back.name = DET_L2S.into();
        assert_eq!(back, e);

        let empty = EdgeSet::with_unit_features("e", LOCATION, SPECIES, vec![], vec![]).unwrap();
        assert!(empty.reversed("r").is_empty());
    }

    #[test]
    fn replacing_node_set_checks_edges() {
        let g = two_by_two()
            .add_edge_set(
                EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, vec![1], vec![0]).unwrap(),
            )
            .unwrap();
        let grown = g
            .with_node_set(NodeSet::new(LOCATION, Array2::zeros((5, 3))))
            .unwrap();
        assert_eq!(grown.node_set(LOCATION).unwrap().count(), 5);
        assert_eq!(grown.edge_set(DET_L2S).unwrap(), g.edge_set(DET_L2S).unwrap());
        assert!(g
            .with_node_set(NodeSet::new(LOCATION, Array2::zeros((1, 3))))
            .is_err());
        assert!(g
            .with_node_set(NodeSet::new(LOCATION, Array2::zeros((2, 4))))
            .is_err());
    }
}
