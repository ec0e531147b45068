//! Fixtures shared by the benchmarks.

use hetero_sdm::synthetic::{generate_region, SyntheticRegionSpec};
use hetero_sdm::{
    build_training_graph, FeatureOptions, InputDims, ModelConfig, ParamStore, TrainingGraph,
};

/// A synthetic region of roughly the given size, its training graph and
/// freshly initialised parameters.
pub struct GnnFixture {
    pub training: TrainingGraph,
    pub model: ModelConfig,
    pub params: ParamStore,
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl GnnFixture {
    pub fn new(num_po_locations: usize, num_species: usize, model: ModelConfig) -> Self {
        let dataset = generate_region(&SyntheticRegionSpec {
            region_code: "BENCH".into(),
            num_species,
            num_po_locations,
            num_background: num_po_locations,
            num_test: 10,
            ..Default::default()
        });
        let training = build_training_graph(&dataset, &model, &FeatureOptions::default())
            .expect("synthetic region builds");
        let dims = InputDims::of_graph(&training.graph).expect("valid graph");
        let params = ParamStore::init(&model, dims, 0).expect("valid model");
        // every positive plus one background pair per positive
        let n_bg = training.num_background_locations;
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for (k, p) in training.positives.iter().enumerate() {
            pairs.push((p.location_index, p.species_index));
            labels.push(1.0);
            pairs.push((training.num_po_locations + k % n_bg, p.species_index));
            labels.push(0.0);
        }
        Self {
            training,
            model,
            params,
            pairs,
            labels,
        }
    }
}
