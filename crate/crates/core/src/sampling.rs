//! Pseudo-negative target pairs.
//!
//! Unobserved species at presence-only locations and every species at
//! background locations are treated as absent. Location indices follow the
//! training graph layout: presence-only locations `0..num_po`, background
//! locations `num_po..num_po + num_background`.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{streams, stream_rng};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("requested {requested} negatives from {pool} locations but only {available} candidate pairs exist")]
    Infeasible {
        pool: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("positive pair ({location}, {species}) is not a presence-only location/species pair")]
    InvalidPositive { location: usize, species: usize },
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledPair {
    pub location_index: usize,
    pub species_index: usize,
    pub label: u8,
}

impl LabeledPair {
    pub fn positive(location_index: usize, species_index: usize) -> Self {
        Self {
            location_index,
            species_index,
            label: 1,
        }
    }

    pub fn negative(location_index: usize, species_index: usize) -> Self {
        Self {
            location_index,
            species_index,
            label: 0,
        }
    }

    pub fn key(&self) -> (usize, usize) {
        (self.location_index, self.species_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    Uniform,
    StratifiedKLocations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCount {
    #[default]
    MatchPositiveCount,
    Fixed(usize),
}

/// Share of negatives taken from presence-only locations. `Random` draws a
/// fresh uniform share every epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProportionRepr", into = "ProportionRepr")]
pub enum Proportion {
    Fixed(f64),
    Random,
}

impl Default for Proportion {
    fn default() -> Self {
        Proportion::Fixed(0.75)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ProportionRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<ProportionRepr> for Proportion {
    type Error = String;

    fn try_from(r: ProportionRepr) -> Result<Self, Self::Error> {
        match r {
            ProportionRepr::Value(v) if (0.0..=1.0).contains(&v) => Ok(Proportion::Fixed(v)),
            ProportionRepr::Value(v) => Err(format!("proportion {v} outside [0, 1]")),
            ProportionRepr::Word(w) if w == "random" => Ok(Proportion::Random),
            ProportionRepr::Word(w) => Err(format!("unknown proportion `{w}`")),
        }
    }
}

impl From<Proportion> for ProportionRepr {
    fn from(p: Proportion) -> Self {
        match p {
            Proportion::Fixed(v) => ProportionRepr::Value(v),
            Proportion::Random => ProportionRepr::Word("random".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    /// Negative locations per species under the stratified strategy.
    pub k_locations: usize,
    /// Ignored by the stratified strategy, which draws `k_locations` per species.
    pub negatives_per_epoch: NegativeCount,
    pub proportion_from_po: Proportion,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Uniform,
            k_locations: 50,
            negatives_per_epoch: NegativeCount::MatchPositiveCount,
            proportion_from_po: Proportion::default(),
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if let Proportion::Fixed(p) = self.proportion_from_po {
            if !(0.0..=1.0).contains(&p) {
                return Err(SamplingError::InvalidConfig(format!(
                    "proportion_from_po {p} outside [0, 1]"
                )));
            }
        }
        if self.strategy == SamplingStrategy::StratifiedKLocations && self.k_locations == 0 {
            return Err(SamplingError::InvalidConfig("k_locations must be at least 1".into()));
        }
        Ok(())
    }

    /// PO share used in `epoch`.
    pub fn proportion_for_epoch(&self, epoch: u64) -> f64 {
        match self.proportion_from_po {
            Proportion::Fixed(p) => p,
            Proportion::Random => {
                stream_rng(self.seed, streams::PROPORTION, epoch).random::<f64>()
            }
        }
    }
}

/// Candidate pools for one training graph; reusable across epochs.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    num_po: usize,
    num_background: usize,
    num_species: usize,
    num_positives: usize,
    po_pool: Vec<(usize, usize)>,
    po_pool_by_species: Vec<Vec<usize>>,
}

impl NegativeSampler {
    pub fn new(
        positives: &[LabeledPair],
        num_po: usize,
        num_background: usize,
        num_species: usize,
    ) -> Result<Self, SamplingError> {
        let mut observed = HashSet::with_capacity(positives.len());
        for p in positives {
            if p.location_index >= num_po || p.species_index >= num_species {
                return Err(SamplingError::InvalidPositive {
                    location: p.location_index,
                    species: p.species_index,
                });
            }
            observed.insert(p.key());
        }
        let mut po_pool = Vec::new();
        let mut po_pool_by_species = vec![Vec::new(); num_species];
        for loc in 0..num_po {
            for (sp, pool) in po_pool_by_species.iter_mut().enumerate() {
                if !observed.contains(&(loc, sp)) {
                    po_pool.push((loc, sp));
                    pool.push(loc);
                }
            }
        }
        Ok(Self {
            num_po,
            num_background,
            num_species,
            num_positives: observed.len(),
            po_pool,
            po_pool_by_species,
        })
    }

    pub fn po_pool_size(&self) -> usize {
        self.po_pool.len()
    }

    pub fn background_pool_size(&self) -> usize {
        self.num_background * self.num_species
    }

    /// Label-0 pairs for `epoch`, without replacement within the epoch.
    pub fn sample(
        &self,
        config: &SamplingConfig,
        epoch: u64,
    ) -> Result<Vec<LabeledPair>, SamplingError> {
        config.validate()?;
        let proportion = config.proportion_for_epoch(epoch);
        let mut rng = stream_rng(config.seed, streams::NEGATIVES, epoch);
        match config.strategy {
            SamplingStrategy::Uniform => {
                let count = match config.negatives_per_epoch {
                    NegativeCount::MatchPositiveCount => self.num_positives,
                    NegativeCount::Fixed(n) => n,
                };
                let from_po = ((proportion * count as f64).round() as usize).min(count);
                let from_bg = count - from_po;
                if from_po > self.po_pool.len() {
                    return Err(SamplingError::Infeasible {
                        pool: "presence-only",
                        requested: from_po,
                        available: self.po_pool.len(),
                    });
                }
                if from_bg > self.background_pool_size() {
                    return Err(SamplingError::Infeasible {
                        pool: "background",
                        requested: from_bg,
                        available: self.background_pool_size(),
                    });
                }
                let mut out = Vec::with_capacity(count);
                for i in index::sample(&mut rng, self.po_pool.len(), from_po) {
                    let (l, s) = self.po_pool[i];
                    out.push(LabeledPair::negative(l, s));
                }
                for i in index::sample(&mut rng, self.background_pool_size(), from_bg) {
                    out.push(LabeledPair::negative(
                        self.num_po + i / self.num_species,
                        i % self.num_species,
                    ));
                }
                Ok(out)
            }
            SamplingStrategy::StratifiedKLocations => {
                let k = config.k_locations;
                let k_po = ((proportion * k as f64).round() as usize).min(k);
                let mut out = Vec::new();
                for (sp, pool) in self.po_pool_by_species.iter().enumerate() {
                    // shift the shortfall of one source onto the other
                    let mut take_po = k_po.min(pool.len());
                    let take_bg = (k - take_po).min(self.num_background);
                    take_po = (k - take_bg).min(pool.len());
                    for i in index::sample(&mut rng, pool.len(), take_po) {
                        out.push(LabeledPair::negative(pool[i], sp));
                    }
                    for i in index::sample(&mut rng, self.num_background, take_bg) {
                        out.push(LabeledPair::negative(self.num_po + i, sp));
                    }
                }
                Ok(out)
            }
        }
    }
}

pub fn sample_negatives(
    positives: &[LabeledPair],
    num_po_locations: usize,
    num_background_locations: usize,
    num_species: usize,
    config: &SamplingConfig,
    epoch: u64,
) -> Result<Vec<LabeledPair>, SamplingError> {
    NegativeSampler::new(
        positives,
        num_po_locations,
        num_background_locations,
        num_species,
    )?
    .sample(config, epoch)
}

/// All positives followed by the negatives, shuffled by `(seed, epoch)`.
pub fn build_epoch_batch(
    positives: &[LabeledPair],
    negatives: &[LabeledPair],
    seed: u64,
    epoch: u64,
) -> Vec<LabeledPair> {
    let mut batch: Vec<LabeledPair> = positives.iter().chain(negatives).copied().collect();
    batch.shuffle(&mut stream_rng(seed, streams::SHUFFLE, epoch));
    batch
}
