//! Region data in canonical CSV form and construction of the training graph.
//!
//! Expected files (UTF-8, header row, `.` decimal separator):
//!
//! | file            | columns                                   |
//! |-----------------|-------------------------------------------|
//! | `po.csv`        | `species_id, x, y, <env_1..env_k>`        |
//! | `bg.csv`        | `x, y, <env_1..env_k>`                    |
//! | `pa_env.csv`    | `site_id, x, y, <env_1..env_k>`           |
//! | `pa_labels.csv` | `site_id, <one 0/1 column per species_id>`|
//! | `species.csv`   | `species_id, group` (group may be empty)  |
//!
//! Environmental columns are matched by name; `po.csv` fixes their order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::Normalizer;
use crate::gnn::{Direction, ModelConfig};
use crate::graph::{
    EdgeSet, GraphError, NodeSet, TypedGraph, DET_L2S, DET_S2L, LOCATION, SPECIES,
};
use crate::sampling::LabeledPair;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}, column `{column}`: `{value}` is not a finite number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: unknown species `{species}`")]
    UnknownSpecies { path: PathBuf, species: String },
    #[error("{path}: expected {expected} fields, found {actual}")]
    InconsistentWidth {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: row {row}, column `{column}`: label `{value}` is not 0 or 1")]
    NonBinaryLabel {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: duplicate {what} `{id}`")]
    Duplicate {
        path: PathBuf,
        what: &'static str,
        id: String,
    },
    #[error("{path}: site `{site}` has no row in the companion file")]
    UnmatchedSite { path: PathBuf, site: String },
    #[error("unknown species group `{0}`")]
    UnknownGroup(String),
    #[error("dataset has no presence-only records")]
    NoPresenceRecords,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPaths {
    pub po: PathBuf,
    pub bg: PathBuf,
    pub pa_env: PathBuf,
    pub pa_labels: PathBuf,
    pub species: PathBuf,
}

impl RegionPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            po: dir.join("po.csv"),
            bg: dir.join("bg.csv"),
            pa_env: dir.join("pa_env.csv"),
            pa_labels: dir.join("pa_labels.csv"),
            species: dir.join("species.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 5] {
        [
            &self.po,
            &self.bg,
            &self.pa_env,
            &self.pa_labels,
            &self.species,
        ]
    }

    /// First path that does not exist, if any.
    pub fn first_missing(&self) -> Option<&Path> {
        self.all().into_iter().find(|p| !p.exists())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoRecord {
    pub species_id: String,
    pub x: f64,
    pub y: f64,
    pub env: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub x: f64,
    pub y: f64,
    pub env: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaSite {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub env: Vec<f64>,
    /// Aligned with `RegionDataset::species_table`.
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SpeciesEntry {
    pub species_id: String,
    pub group: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionDataset {
    pub region_code: String,
    pub env_feature_names: Vec<String>,
    pub po_records: Vec<PoRecord>,
    pub background_locations: Vec<Site>,
    pub pa_test: Vec<PaSite>,
    /// Sorted by species id; this order defines species indices.
    pub species_table: Vec<SpeciesEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegionSummary {
    pub region_code: String,
    pub env_features: usize,
    pub species: usize,
    pub po_records: usize,
    pub po_locations: usize,
    pub background_locations: usize,
    pub test_locations: usize,
}

impl RegionDataset {
    pub fn num_species(&self) -> usize {
        self.species_table.len()
    }

    pub fn species_ids(&self) -> Vec<String> {
        self.species_table
            .iter()
            .map(|s| s.species_id.clone())
            .collect()
    }

    pub fn summary(&self) -> RegionSummary {
        RegionSummary {
            region_code: self.region_code.clone(),
            env_features: self.env_feature_names.len(),
            species: self.species_table.len(),
            po_records: self.po_records.len(),
            po_locations: aggregate_locations(&self.po_records, &self.species_table)
                .map(|a| a.locations.len())
                .unwrap_or(0),
            background_locations: self.background_locations.len(),
            test_locations: self.pa_test.len(),
        }
    }

    /// PA labels as an `n_test x n_species` matrix.
    pub fn test_labels(&self) -> Array2<u8> {
        let n = self.num_species();
        Array2::from_shape_fn((self.pa_test.len(), n), |(i, j)| self.pa_test[i].labels[j])
    }
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let csv_err = |source: csv::Error| match source.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => IngestError::InconsistentWidth {
                path: path.to_path_buf(),
                expected: *expected_len as usize,
                actual: *len as usize,
            },
            _ => IngestError::Csv {
                path: path.to_path_buf(),
                source,
            },
        };
        let headers = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    fn number(&self, row: usize, col: usize) -> Result<f64, IngestError> {
        let raw = &self.rows[row][col];
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(IngestError::NonNumeric {
                path: self.path.clone(),
                row: row + 1,
                column: self.headers[col].clone(),
                value: raw.to_string(),
            }),
        }
    }

    /// Environmental column indices in the order of `names`; the table must
    /// hold exactly `fixed + names.len()` columns.
    fn env_columns(&self, names: &[String], fixed: usize) -> Result<Vec<usize>, IngestError> {
        if self.headers.len() != fixed + names.len() {
            return Err(IngestError::InconsistentWidth {
                path: self.path.clone(),
                expected: fixed + names.len(),
                actual: self.headers.len(),
            });
        }
        names.iter().map(|n| self.column(n)).collect()
    }

    fn env(&self, row: usize, cols: &[usize]) -> Result<Vec<f64>, IngestError> {
        cols.iter().map(|&c| self.number(row, c)).collect()
    }
}

pub fn load_region(region_code: &str, paths: &RegionPaths) -> Result<RegionDataset, IngestError> {
    let species_table = load_species(&paths.species)?;
    let known: HashMap<&str, usize> = species_table
        .iter()
        .enumerate()
        .map(|(i, s)| (s.species_id.as_str(), i))
        .collect();

    let po = Table::read(&paths.po)?;
    let sp_col = po.column("species_id")?;
    let (px, py) = (po.column("x")?, po.column("y")?);
    let env_feature_names: Vec<String> = po
        .headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![sp_col, px, py].contains(i))
        .map(|(_, h)| h.clone())
        .collect();
    let po_env = po.env_columns(&env_feature_names, 3)?;
    let mut po_records = Vec::with_capacity(po.rows.len());
    for r in 0..po.rows.len() {
        let species_id = po.rows[r][sp_col].to_string();
        if !known.contains_key(species_id.as_str()) {
            return Err(IngestError::UnknownSpecies {
                path: po.path.clone(),
                species: species_id,
            });
        }
        po_records.push(PoRecord {
            species_id,
            x: po.number(r, px)?,
            y: po.number(r, py)?,
            env: po.env(r, &po_env)?,
        });
    }

    let bg = Table::read(&paths.bg)?;
    let (bx, by) = (bg.column("x")?, bg.column("y")?);
    let bg_env = bg.env_columns(&env_feature_names, 2)?;
    let background_locations = (0..bg.rows.len())
        .map(|r| {
            Ok(Site {
                x: bg.number(r, bx)?,
                y: bg.number(r, by)?,
                env: bg.env(r, &bg_env)?,
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;

    let pa_test = load_pa(paths, &env_feature_names, &species_table)?;

    Ok(RegionDataset {
        region_code: region_code.to_string(),
        env_feature_names,
        po_records,
        background_locations,
        pa_test,
        species_table,
    })
}

fn load_species(path: &Path) -> Result<Vec<SpeciesEntry>, IngestError> {
    let t = Table::read(path)?;
    let id = t.column("species_id")?;
    let group = t.column("group")?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        let species_id = row[id].to_string();
        if !seen.insert(species_id.clone()) {
            return Err(IngestError::Duplicate {
                path: t.path.clone(),
                what: "species",
                id: species_id,
            });
        }
        let g = row[group].to_string();
        out.push(SpeciesEntry {
            species_id,
            group: (!g.is_empty()).then_some(g),
        });
    }
    out.sort();
    Ok(out)
}

fn load_pa(
    paths: &RegionPaths,
    env_names: &[String],
    species_table: &[SpeciesEntry],
) -> Result<Vec<PaSite>, IngestError> {
    let env_t = Table::read(&paths.pa_env)?;
    let sid = env_t.column("site_id")?;
    let (ex, ey) = (env_t.column("x")?, env_t.column("y")?);
    let env_cols = env_t.env_columns(env_names, 3)?;

    let lab_t = Table::read(&paths.pa_labels)?;
    let lab_sid = lab_t.column("site_id")?;
    for (i, h) in lab_t.headers.iter().enumerate() {
        if i != lab_sid && !species_table.iter().any(|s| &s.species_id == h) {
            return Err(IngestError::UnknownSpecies {
                path: lab_t.path.clone(),
                species: h.clone(),
            });
        }
    }
    let label_cols = species_table
        .iter()
        .map(|s| lab_t.column(&s.species_id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut labels_by_site: HashMap<String, Vec<u8>> = HashMap::new();
    for (r, row) in lab_t.rows.iter().enumerate() {
        let labels = label_cols
            .iter()
            .map(|&c| match &row[c] {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(IngestError::NonBinaryLabel {
                    path: lab_t.path.clone(),
                    row: r + 1,
                    column: lab_t.headers[c].clone(),
                    value: other.to_string(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if labels_by_site
            .insert(row[lab_sid].to_string(), labels)
            .is_some()
        {
            return Err(IngestError::Duplicate {
                path: lab_t.path.clone(),
                what: "site",
                id: row[lab_sid].to_string(),
            });
        }
    }

    let mut out = Vec::with_capacity(env_t.rows.len());
    for r in 0..env_t.rows.len() {
        let site_id = env_t.rows[r][sid].to_string();
        let labels = labels_by_site
            .remove(&site_id)
            .ok_or_else(|| IngestError::UnmatchedSite {
                path: lab_t.path.clone(),
                site: site_id.clone(),
            })?;
        out.push(PaSite {
            site_id,
            x: env_t.number(r, ex)?,
            y: env_t.number(r, ey)?,
            env: env_t.env(r, &env_cols)?,
            labels,
        });
    }
    if let Some(site) = labels_by_site.into_keys().min() {
        return Err(IngestError::UnmatchedSite {
            path: env_t.path.clone(),
            site,
        });
    }
    Ok(out)
}

/// Writes a dataset in the canonical CSV layout (inverse of [`load_region`]).
pub fn write_region(dataset: &RegionDataset, dir: impl AsRef<Path>) -> Result<RegionPaths, IngestError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths = RegionPaths::in_dir(dir);
    let fmt = |v: &f64| v.to_string();
    let env_header = |fixed: &[&str]| {
        fixed
            .iter()
            .map(|s| s.to_string())
            .chain(dataset.env_feature_names.iter().cloned())
            .collect::<Vec<_>>()
    };

    write_csv(&paths.po, env_header(&["species_id", "x", "y"]), dataset.po_records.iter().map(|r| {
        [r.species_id.clone(), fmt(&r.x), fmt(&r.y)]
            .into_iter()
            .chain(r.env.iter().map(fmt))
            .collect()
    }))?;
    write_csv(&paths.bg, env_header(&["x", "y"]), dataset.background_locations.iter().map(|s| {
        [fmt(&s.x), fmt(&s.y)]
            .into_iter()
            .chain(s.env.iter().map(fmt))
            .collect()
    }))?;
    write_csv(&paths.pa_env, env_header(&["site_id", "x", "y"]), dataset.pa_test.iter().map(|s| {
        [s.site_id.clone(), fmt(&s.x), fmt(&s.y)]
            .into_iter()
            .chain(s.env.iter().map(fmt))
            .collect()
    }))?;
    let label_header = std::iter::once("site_id".to_string())
        .chain(dataset.species_table.iter().map(|s| s.species_id.clone()))
        .collect();
    write_csv(&paths.pa_labels, label_header, dataset.pa_test.iter().map(|s| {
        std::iter::once(s.site_id.clone())
            .chain(s.labels.iter().map(|l| l.to_string()))
            .collect()
    }))?;
    write_csv(
        &paths.species,
        vec!["species_id".into(), "group".into()],
        dataset
            .species_table
            .iter()
            .map(|s| vec![s.species_id.clone(), s.group.clone().unwrap_or_default()]),
    )?;
    Ok(paths)
}

fn write_csv(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), IngestError> {
    let err = |source: csv::Error| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(&header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Exact coordinate key; `-0.0` and `0.0` coincide.
#[derive(Clone, Copy, Debug)]
pub struct LocationKey {
    pub x: f64,
    pub y: f64,
}

impl LocationKey {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x: x + 0.0, y: y + 0.0 }
    }
}

impl PartialEq for LocationKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for LocationKey {}

impl PartialOrd for LocationKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LocationKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.x
            .total_cmp(&other.x)
            .then_with(|| self.y.total_cmp(&other.y))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedLocation {
    pub key: LocationKey,
    pub env: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedPresence {
    /// Sorted by location key.
    pub locations: Vec<AggregatedLocation>,
    /// Unique `(location index, species index)` pairs.
    pub detections: BTreeSet<(usize, usize)>,
}

/// Groups records by exact `(x, y)`, averaging their features, and collects
/// the distinct detection pairs. The result does not depend on record order.
pub fn aggregate_locations(
    records: &[PoRecord],
    species_table: &[SpeciesEntry],
) -> Result<AggregatedPresence, IngestError> {
    let species_index: HashMap<&str, usize> = species_table
        .iter()
        .enumerate()
        .map(|(i, s)| (s.species_id.as_str(), i))
        .collect();
    let mut groups: BTreeMap<LocationKey, (Vec<&[f64]>, BTreeSet<usize>)> = BTreeMap::new();
    for r in records {
        let sp = *species_index
            .get(r.species_id.as_str())
            .ok_or_else(|| IngestError::UnknownSpecies {
                path: PathBuf::from("po.csv"),
                species: r.species_id.clone(),
            })?;
        let entry = groups.entry(LocationKey::new(r.x, r.y)).or_default();
        entry.0.push(&r.env);
        entry.1.insert(sp);
    }
    let mut locations = Vec::with_capacity(groups.len());
    let mut detections = BTreeSet::new();
    for (i, (key, (mut rows, species))) in groups.into_iter().enumerate() {
        // fixed summation order
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
        let width = rows[0].len();
        let mut mean = vec![0.0; width];
        for row in &rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        locations.push(AggregatedLocation { key, env: mean });
        detections.extend(species.into_iter().map(|s| (i, s)));
    }
    Ok(AggregatedPresence {
        locations,
        detections,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeciesFeatureSpec {
    pub one_hot_dim: usize,
    pub include_group: bool,
    pub group_vocabulary: Vec<String>,
}

impl SpeciesFeatureSpec {
    /// Group one-hots are requested only when the table carries groups.
    pub fn from_table(table: &[SpeciesEntry], include_group: bool) -> Self {
        let vocab: BTreeSet<String> = table.iter().filter_map(|s| s.group.clone()).collect();
        Self {
            one_hot_dim: table.len(),
            include_group: include_group && !vocab.is_empty(),
            group_vocabulary: vocab.into_iter().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.one_hot_dim
            + if self.include_group {
                self.group_vocabulary.len()
            } else {
                0
            }
    }
}

/// Row `j`: one-hot of species `j`, followed by the one-hot of its group when
/// groups are included. Species without a group get a zero group block.
pub fn build_species_features(
    table: &[SpeciesEntry],
    spec: &SpeciesFeatureSpec,
) -> Result<Array2<f64>, IngestError> {
    if spec.include_group && spec.group_vocabulary.is_empty() {
        return Err(IngestError::UnknownGroup(
            "group features requested but the vocabulary is empty".into(),
        ));
    }
    let mut out = Array2::zeros((table.len(), spec.dim()));
    for (j, s) in table.iter().enumerate() {
        out[[j, j]] = 1.0;
        if spec.include_group {
            if let Some(g) = &s.group {
                let pos = spec
                    .group_vocabulary
                    .iter()
                    .position(|v| v == g)
                    .ok_or_else(|| IngestError::UnknownGroup(g.clone()))?;
                out[[j, spec.one_hot_dim + pos]] = 1.0;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    /// Append `(x, y)` to the environmental features.
    pub include_coords: bool,
    /// Min-max scale location features of the graph model to `[-1, 1]`.
    pub normalize_gnn_inputs: bool,
    /// Append species group one-hots when the region provides groups.
    pub include_group: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            include_coords: false,
            normalize_gnn_inputs: true,
            include_group: true,
        }
    }
}

/// Raw `(x, y, env)` to model input features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePipeline {
    pub include_coords: bool,
    pub normalizer: Option<Normalizer>,
}

impl FeaturePipeline {
    pub fn raw(&self, x: f64, y: f64, env: &[f64]) -> Vec<f64> {
        let mut v = env.to_vec();
        if self.include_coords {
            v.push(x);
            v.push(y);
        }
        v
    }

    pub fn transform_rows<'a>(
        &self,
        rows: impl ExactSizeIterator<Item = (f64, f64, &'a [f64])>,
        width: usize,
    ) -> Array2<f64> {
        let n = rows.len();
        let mut out = Array2::zeros((n, width + if self.include_coords { 2 } else { 0 }));
        for (i, (x, y, env)) in rows.enumerate() {
            for (o, v) in out.row_mut(i).iter_mut().zip(self.raw(x, y, env)) {
                *o = v;
            }
        }
        match &self.normalizer {
            Some(n) => n.apply(&out),
            None => out,
        }
    }

    pub fn test_features(&self, dataset: &RegionDataset) -> Array2<f64> {
        self.transform_rows(
            dataset.pa_test.iter().map(|s| (s.x, s.y, s.env.as_slice())),
            dataset.env_feature_names.len(),
        )
    }
}

/// Location rows shared by both models: aggregated presence-only locations
/// followed by background locations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLocations {
    pub presence: AggregatedPresence,
    pub num_background: usize,
    /// Un-normalized features (coordinates appended when requested).
    pub raw_features: Array2<f64>,
}

pub fn training_locations(
    dataset: &RegionDataset,
    include_coords: bool,
) -> Result<TrainingLocations, IngestError> {
    if dataset.po_records.is_empty() {
        return Err(IngestError::NoPresenceRecords);
    }
    let presence = aggregate_locations(&dataset.po_records, &dataset.species_table)?;
    let pipeline = FeaturePipeline {
        include_coords,
        normalizer: None,
    };
    let rows = presence
        .locations
        .iter()
        .map(|l| (l.key.x, l.key.y, l.env.as_slice()))
        .chain(
            dataset
                .background_locations
                .iter()
                .map(|s| (s.x, s.y, s.env.as_slice())),
        )
        .collect::<Vec<_>>();
    let raw_features = pipeline.transform_rows(rows.into_iter(), dataset.env_feature_names.len());
    Ok(TrainingLocations {
        num_background: dataset.background_locations.len(),
        presence,
        raw_features,
    })
}

/// Training graph plus the bookkeeping the trainer and evaluator need.
#[derive(Clone, Debug)]
pub struct TrainingGraph {
    pub graph: TypedGraph,
    pub num_po_locations: usize,
    pub num_background_locations: usize,
    pub species_ids: Vec<String>,
    pub pipeline: FeaturePipeline,
    /// One positive per detection edge, in edge order.
    pub positives: Vec<LabeledPair>,
}

impl TrainingGraph {
    pub fn num_locations(&self) -> usize {
        self.num_po_locations + self.num_background_locations
    }

    pub fn num_species(&self) -> usize {
        self.species_ids.len()
    }

    pub fn test_features(&self, dataset: &RegionDataset) -> Array2<f64> {
        self.pipeline.test_features(dataset)
    }
}

pub fn build_training_graph(
    dataset: &RegionDataset,
    model: &ModelConfig,
    options: &FeatureOptions,
) -> Result<TrainingGraph, IngestError> {
    let locs = training_locations(dataset, options.include_coords)?;
    let normalizer = options
        .normalize_gnn_inputs
        .then(|| Normalizer::fit(&locs.raw_features))
        .transpose()
        .map_err(|_| IngestError::NoPresenceRecords)?;
    let features = match &normalizer {
        Some(n) => n.apply(&locs.raw_features),
        None => locs.raw_features.clone(),
    };
    let spec = SpeciesFeatureSpec::from_table(&dataset.species_table, options.include_group);
    let species_features = build_species_features(&dataset.species_table, &spec)?;

    let (senders, receivers): (Vec<usize>, Vec<usize>) =
        locs.presence.detections.iter().copied().unzip();
    let det = EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, senders, receivers)?;
    let positives = locs
        .presence
        .detections
        .iter()
        .map(|&(l, s)| LabeledPair::positive(l, s))
        .collect();

    let mut graph = TypedGraph::new()
        .add_node_set(NodeSet::new(LOCATION, features))?
        .add_node_set(NodeSet::new(SPECIES, species_features))?;
    if model.direction == Direction::Bidirectional {
        graph = graph.add_edge_set(det.reversed(DET_S2L))?;
    }
    graph = graph.add_edge_set(det)?;

    Ok(TrainingGraph {
        graph,
        num_po_locations: locs.presence.locations.len(),
        num_background_locations: locs.num_background,
        species_ids: dataset.species_ids(),
        pipeline: FeaturePipeline {
            include_coords: options.include_coords,
            normalizer,
        },
        positives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rec(sp: &str, x: f64, y: f64, env: &[f64]) -> PoRecord {
        PoRecord {
            species_id: sp.into(),
            x,
            y,
            env: env.to_vec(),
        }
    }

    fn table(ids: &[(&str, Option<&str>)]) -> Vec<SpeciesEntry> {
        ids.iter()
            .map(|(s, g)| SpeciesEntry {
                species_id: s.to_string(),
                group: g.map(str::to_string),
            })
            .collect()
    }

    #[test]
    fn aggregation_means_and_dedups() {
        let t = table(&[("a", None), ("b", None)]);
        let recs = [
            rec("a", 1.0, 2.0, &[1.0]),
            rec("b", 1.0, 2.0, &[3.0]),
            rec("a", 1.0, 2.0, &[2.0]),
            rec("a", 1.0 + 1e-9, 2.0, &[7.0]),
        ];
        let agg = aggregate_locations(&recs, &t).unwrap();
        assert_eq!(agg.locations.len(), 2);
        assert_eq!(agg.locations[0].env, vec![2.0]);
        assert_eq!(agg.locations[1].env, vec![7.0]);
        assert_eq!(agg.detections, BTreeSet::from([(0, 0), (0, 1), (1, 0)]));
    }

    #[test]
    fn aggregation_is_order_independent() {
        let t = table(&[("a", None), ("b", None)]);
        let mut recs = vec![
            rec("a", 0.0, 0.0, &[0.1, 0.7]),
            rec("b", 0.0, -0.0, &[0.2, 0.3]),
            rec("b", 5.0, 1.0, &[1e16, 1.0]),
            rec("a", 5.0, 1.0, &[-1e16, 3.0]),
            rec("a", 5.0, 1.0, &[1.0, 3.0]),
        ];
        let a = aggregate_locations(&recs, &t).unwrap();
        recs.reverse();
        recs.swap(0, 2);
        let b = aggregate_locations(&recs, &t).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.locations.len(), 2);
    }

    #[test]
    fn species_one_hot_and_groups() {
        let t = table(&[("a", None), ("b", None), ("c", None), ("d", None)]);
        let spec = SpeciesFeatureSpec::from_table(&t, true);
        assert!(!spec.include_group);
        let f = build_species_features(&t, &spec).unwrap();
        assert_eq!(f.row(2).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);

        let t = table(&[("a", Some("plant")), ("b", Some("bird"))]);
        let spec = SpeciesFeatureSpec::from_table(&t, true);
        assert_eq!(spec.group_vocabulary, vec!["bird", "plant"]);
        let f = build_species_features(&t, &spec).unwrap();
        assert_eq!(f, array![[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]]);

        let forced = SpeciesFeatureSpec {
            one_hot_dim: 2,
            include_group: true,
            group_vocabulary: vec![],
        };
        assert!(matches!(
            build_species_features(&t, &forced),
            Err(IngestError::UnknownGroup(_))
        ));
        let wrong = SpeciesFeatureSpec {
            group_vocabulary: vec!["fish".into()],
            ..forced
        };
        assert!(matches!(
            build_species_features(&t, &wrong),
            Err(IngestError::UnknownGroup(g)) if g == "plant"
        ));
    }

    fn small_dataset() -> RegionDataset {
        let species_table = table(&[("s0", None), ("s1", None)]);
        let po_records = vec![
            rec("s0", 0.0, 0.0, &[1.0, 10.0]),
            rec("s1", 0.0, 0.0, &[1.0, 10.0]),
            rec("s0", 1.0, 0.0, &[2.0, 20.0]),
            rec("s1", 2.0, 0.0, &[3.0, 30.0]),
            rec("s1", 2.0, 0.0, &[3.0, 30.0]),
        ];
        let background_locations = vec![
            Site { x: 9.0, y: 9.0, env: vec![0.0, 0.0] },
            Site { x: 8.0, y: 9.0, env: vec![4.0, 40.0] },
        ];
        let pa_test = vec![PaSite {
            site_id: "t0".into(),
            x: 0.5,
            y: 0.5,
            env: vec![2.0, 20.0],
            labels: vec![1, 0],
        }];
        RegionDataset {
            region_code: "TOY".into(),
            env_feature_names: vec!["e1".into(), "e2".into()],
            po_records,
            background_locations,
            pa_test,
            species_table,
        }
    }

    #[test]
    fn training_graph_layout() {
        let d = small_dataset();
        let cfg = ModelConfig::default();
        let tg = build_training_graph(&d, &cfg, &FeatureOptions::default()).unwrap();
        assert_eq!(tg.num_po_locations, 3);
        assert_eq!(tg.num_background_locations, 2);
        assert_eq!(tg.graph.node_set(LOCATION).unwrap().count(), 5);
        assert_eq!(tg.graph.node_set(SPECIES).unwrap().count(), 2);
        assert_eq!(tg.graph.edge_set(DET_L2S).unwrap().len(), 4);
        assert!(!tg.graph.has_edge_set(DET_S2L));
        // background locations never carry detections
        assert!(tg.graph.edge_set(DET_L2S).unwrap().senders.iter().all(|&s| s < 3));
        // features scaled to [-1, 1] over PO and background rows
        let f = &tg.graph.node_set(LOCATION).unwrap().features;
        assert_eq!(f.column(0).to_vec(), vec![-0.5, 0.0, 0.5, -1.0, 1.0]);
        assert_eq!(tg.test_features(&d), array![[0.0, 0.0]]);

        let bidi = ModelConfig {
            direction: Direction::Bidirectional,
            ..cfg
        };
        let tg = build_training_graph(&d, &bidi, &FeatureOptions::default()).unwrap();
        assert_eq!(tg.graph.edge_set(DET_S2L).unwrap().len(), 4);

        let raw = FeatureOptions {
            include_coords: true,
            normalize_gnn_inputs: false,
            include_group: true,
        };
        let tg = build_training_graph(&d, &cfg, &raw).unwrap();
        let f = &tg.graph.node_set(LOCATION).unwrap().features;
        assert_eq!(f.row(0).to_vec(), vec![1.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let d = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_region(&d, dir.path()).unwrap();
        let back = load_region("TOY", &paths).unwrap();
        assert_eq!(back, d);
        let s = back.summary();
        assert_eq!((s.env_features, s.species, s.po_locations, s.test_locations), (2, 2, 3, 1));

        std::fs::write(&paths.po, "species,x,y,e1,e2\ns0,0,0,1,2\n").unwrap();
        assert!(matches!(
            load_region("TOY", &paths),
            Err(IngestError::MissingColumn { column, .. }) if column == "species_id"
        ));
        std::fs::write(&paths.po, "species_id,x,y,e1,e2\ns0,0,0,1,abc\n").unwrap();
        assert!(matches!(load_region("TOY", &paths), Err(IngestError::NonNumeric { .. })));
        std::fs::write(&paths.po, "species_id,x,y,e1,e2\nzz,0,0,1,2\n").unwrap();
        assert!(matches!(load_region("TOY", &paths), Err(IngestError::UnknownSpecies { .. })));
        std::fs::write(&paths.po, "species_id,x,y,e1,e2\ns0,0,0,1\n").unwrap();
        assert!(matches!(load_region("TOY", &paths), Err(IngestError::InconsistentWidth { .. })));
        std::fs::write(&paths.po, "species_id,x,y,e1,e2\ns0,0,0,1,2\n").unwrap();
        std::fs::write(&paths.bg, "x,y,e1\n0,0,1\n").unwrap();
        assert!(matches!(load_region("TOY", &paths), Err(IngestError::InconsistentWidth { .. })));
        std::fs::write(&paths.bg, "x,y,e2,e1\n0,0,5,1\n").unwrap();
        let ok = load_region("TOY", &paths).unwrap();
        assert_eq!(ok.background_locations[0].env, vec![1.0, 5.0]);
        std::fs::write(&paths.pa_labels, "site_id,s0,s1\nt0,1,2\n").unwrap();
        assert!(matches!(load_region("TOY", &paths), Err(IngestError::NonBinaryLabel { .. })));
    }
}
