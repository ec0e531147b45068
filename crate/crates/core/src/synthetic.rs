//! Synthetic regions with known logistic suitability surfaces.
//!
//! Every species has a linear response to the environment passed through a
//! sigmoid. Presence-only records are drawn with probability proportional to
//! suitability, background sites are uniform, and presence/absence test labels
//! are Bernoulli draws of the true suitability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{PaSite, PoRecord, RegionDataset, Site, SpeciesEntry};
use crate::nn::sigmoid;
use crate::rng::{stream_rng, streams};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticRegionSpec {
    pub region_code: String,
    pub num_species: usize,
    pub num_env: usize,
    /// Species are assigned to groups round-robin; 0 means no groups.
    pub num_groups: usize,
    pub num_po_locations: usize,
    pub num_background: usize,
    pub num_test: usize,
    /// Standard deviation of the per-feature response weights.
    pub weight_scale: f64,
    /// Mean of the per-species intercepts.
    pub intercept: f64,
    /// Scales suitability into the per-species detection probability.
    pub detection_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticRegionSpec {
    fn default() -> Self {
        Self {
            region_code: "SYN".into(),
            num_species: 5,
            num_env: 4,
            num_groups: 0,
            num_po_locations: 200,
            num_background: 500,
            num_test: 300,
            weight_scale: 4.0,
            intercept: -0.5,
            detection_rate: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticRegionSpec {
    /// Sized like the Australian Wet Tropics region: 13 covariates, 40
    /// species in two groups.
    pub fn awt_like() -> Self {
        Self {
            region_code: "AWT".into(),
            num_species: 40,
            num_env: 13,
            num_groups: 2,
            num_po_locations: 3806,
            num_background: 10_000,
            num_test: 442,
            ..Default::default()
        }
    }

    /// Sized like the Switzerland region: 13 covariates, 30 ungrouped species.
    pub fn swi_like() -> Self {
        Self {
            region_code: "SWI".into(),
            num_species: 30,
            num_env: 13,
            num_groups: 0,
            num_po_locations: 2000,
            num_background: 10_000,
            num_test: 500,
            ..Default::default()
        }
    }
}

/// True response surface of one species.
#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Response {
    pub fn suitability(&self, env: &[f64]) -> f64 {
        let z: f64 = self.weights.iter().zip(env).map(|(w, e)| w * e).sum::<f64>() + self.bias;
        sigmoid(z)
    }
}

pub fn responses(spec: &SyntheticRegionSpec) -> Vec<Response> {
    let mut rng = stream_rng(spec.seed, streams::SYNTHETIC, 0);
    let w = Normal::new(0.0, spec.weight_scale).expect("finite scale");
    let b = Normal::new(spec.intercept, 0.5).expect("finite scale");
    (0..spec.num_species)
        .map(|_| Response {
            weights: (0..spec.num_env).map(|_| w.sample(&mut rng)).collect(),
            bias: b.sample(&mut rng),
        })
        .collect()
}

fn random_site(rng: &mut ChaCha8Rng, num_env: usize) -> Site {
    Site {
        x: rng.random_range(0.0..100.0),
        y: rng.random_range(0.0..100.0),
        env: (0..num_env).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

pub fn species_id(index: usize) -> String {
    format!("sp{index:03}")
}

pub fn generate_region(spec: &SyntheticRegionSpec) -> RegionDataset {
    let truth = responses(spec);
    let species_table: Vec<SpeciesEntry> = (0..spec.num_species)
        .map(|s| SpeciesEntry {
            species_id: species_id(s),
            group: (spec.num_groups > 0).then(|| format!("g{}", s % spec.num_groups)),
        })
        .collect();

    let mut rng = stream_rng(spec.seed, streams::SYNTHETIC, 1);
    let mut po_records = Vec::new();
    let mut locations = 0;
    let max_attempts = 1000 * spec.num_po_locations.max(1);
    let mut attempts = 0;
    while locations < spec.num_po_locations && attempts < max_attempts {
        attempts += 1;
        let site = random_site(&mut rng, spec.num_env);
        let mut any = false;
        for (s, r) in truth.iter().enumerate() {
            if rng.random::<f64>() < spec.detection_rate * r.suitability(&site.env) {
                po_records.push(PoRecord {
                    species_id: species_id(s),
                    x: site.x,
                    y: site.y,
                    env: site.env.clone(),
                });
                any = true;
            }
        }
        locations += usize::from(any);
    }

    let mut rng = stream_rng(spec.seed, streams::SYNTHETIC, 2);
    let background_locations = (0..spec.num_background)
        .map(|_| random_site(&mut rng, spec.num_env))
        .collect();

    let mut rng = stream_rng(spec.seed, streams::SYNTHETIC, 3);
    let pa_test = (0..spec.num_test)
        .map(|i| {
            let site = random_site(&mut rng, spec.num_env);
            let labels = truth
                .iter()
                .map(|r| u8::from(rng.random::<f64>() < r.suitability(&site.env)))
                .collect();
            PaSite {
                site_id: format!("t{i:05}"),
                x: site.x,
                y: site.y,
                env: site.env,
                labels,
            }
        })
        .collect();

    RegionDataset {
        region_code: spec.region_code.clone(),
        env_feature_names: (0..spec.num_env).map(|k| format!("env{k:02}")).collect(),
        po_records,
        background_locations,
        pa_test,
        species_table,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_spec() {
        let spec = SyntheticRegionSpec::default();
        let d = generate_region(&spec);
        let s = d.summary();
        assert_eq!(s.po_locations, 200);
        assert_eq!(s.background_locations, 500);
        assert_eq!(s.test_locations, 300);
        assert_eq!(s.species, 5);
        assert!(s.po_records >= 200);
        assert_eq!(generate_region(&spec), d);
    }

    #[test]
    fn every_species_has_both_test_classes() {
        let d = generate_region(&SyntheticRegionSpec::default());
        let labels = d.test_labels();
        for col in labels.columns() {
            let pos = col.iter().filter(|&&v| v == 1).count();
            assert!(pos > 0 && pos < col.len());
        }
    }

    #[test]
    fn groups_are_round_robin() {
        let d = generate_region(&SyntheticRegionSpec {
            num_groups: 2,
            num_po_locations: 10,
            num_background: 1,
            num_test: 1,
            ..Default::default()
        });
        assert_eq!(d.species_table[0].group.as_deref(), Some("g0"));
        assert_eq!(d.species_table[3].group.as_deref(), Some("g1"));
    }
}
