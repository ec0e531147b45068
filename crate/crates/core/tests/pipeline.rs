use hetero_sdm::baseline::BaselineData;
use hetero_sdm::synthetic::{generate_region, SyntheticRegionSpec};
use hetero_sdm::{
    build_training_graph, evaluate_checkpoint, load_region, train, train_baseline, write_region,
    BaselineConfig, Checkpoint, Direction, FeatureOptions, InputDims, ModelConfig, SavedModel,
    TrainConfig,
};

fn region() -> hetero_sdm::RegionDataset {
    generate_region(&SyntheticRegionSpec {
        region_code: "PIPE".into(),
        num_po_locations: 120,
        num_background: 200,
        num_test: 80,
        seed: 4,
        ..Default::default()
    })
}

#[test]
fn csv_round_trip_preserves_dataset() {
    let d = region();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_region(&d, dir.path()).unwrap();
    let back = load_region("PIPE", &paths).unwrap();
    assert_eq!(back.summary(), d.summary());
    assert_eq!(back.species_ids(), d.species_ids());
    assert_eq!(back.test_labels(), d.test_labels());
}

#[test]
fn gnn_checkpoint_evaluates_after_reload() {
    let d = region();
    let config = TrainConfig {
        num_epochs: 30,
        learning_rate: 1e-2,
        model: ModelConfig {
            latent_dim: 16,
            direction: Direction::Bidirectional,
            ..Default::default()
        },
        ..Default::default()
    };
    let features = FeatureOptions::default();
    let tg = build_training_graph(&d, &config.model, &features).unwrap();
    let (params, history) = train(&tg, &config).unwrap();
    assert_eq!(history.len(), 30);
    assert!(history.last().unwrap().loss < history[0].loss);

    let ck = Checkpoint {
        region: d.region_code.clone(),
        species_ids: tg.species_ids.clone(),
        features,
        normalizer: tg.pipeline.normalizer.clone(),
        epoch: 29,
        model: SavedModel::Gnn {
            train: config,
            input_dims: InputDims::of_graph(&tg.graph).unwrap(),
            params,
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let a = evaluate_checkpoint(&ck, &d).unwrap();
    let b = evaluate_checkpoint(&loaded, &d).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_species.len(), 5);
    assert!(a.mean_auc.unwrap() > 0.5);
}

#[test]
fn baseline_checkpoint_rejects_other_region() {
    let d = region();
    let data = BaselineData::from_dataset(&d, false).unwrap();
    let config = BaselineConfig {
        num_epochs: 5,
        ..Default::default()
    };
    let trained = train_baseline(&data, &config).unwrap();
    let mut ck = Checkpoint {
        region: d.region_code.clone(),
        species_ids: d.species_ids(),
        features: FeatureOptions::default(),
        normalizer: data.pipeline.normalizer.clone(),
        epoch: 4,
        model: SavedModel::Baseline {
            config,
            params: trained.params,
        },
    };
    assert!(evaluate_checkpoint(&ck, &d).is_ok());
    ck.region = "ELSEWHERE".into();
    assert!(evaluate_checkpoint(&ck, &d).is_err());
}
