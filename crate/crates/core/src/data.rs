//! Datasets: synthetic ridge regression samples, the CovType forest-cover
//! table reduced by PCA, and homogeneous partitioning across agents.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{LocalData, Objective, ObjectiveKind};
use crate::rng::{substream, Stream};
use crate::solver::LabeledSet;

/// Noise standard deviation of the synthetic ridge targets.
pub const DEFAULT_NOISE: f64 = 0.1;

/// Row count of the reduced CovType table for which the split is fixed.
pub const COVTYPE_ROWS: usize = 566_602;
/// Nominal training-set size for CovType.
pub const COVTYPE_TRAIN: usize = 400_000;
/// Number of raw CovType feature columns.
pub const COVTYPE_FEATURES: usize = 54;

const LABEL_MAPPING: &str = "cover type 2 -> +1, all other types -> -1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticRidge,
    CovType,
}

/// What the CovType pipeline did to the raw table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub rows_read: usize,
    pub header_skipped: bool,
    pub explained_variance_ratio: Vec<f64>,
    pub label_mapping: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N × p` feature matrix, one sample per row.
    pub features: DMatrix<f64>,
    /// Regression targets or `±1` labels.
    pub targets: DVector<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
    /// Hidden model behind synthetic targets.
    pub hidden: Option<DVector<f64>>,
    pub preprocessing: Option<Preprocessing>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_fn(idx.len(), self.dim(), |i, j| self.features[(idx[i], j)]);
        let b = DVector::from_fn(idx.len(), |i, _| self.targets[idx[i]]);
        (a, b)
    }

    /// The held-out samples, if any.
    pub fn test_set(&self) -> Option<LabeledSet> {
        if self.test.is_empty() {
            return None;
        }
        let (features, labels) = self.rows(&self.test);
        Some(LabeledSet { features, labels })
    }
}

/// Gaussian features, Gaussian hidden model `x̃`, targets `b = a·x̃ + noise`.
pub fn generate_ridge_synthetic(n_samples: usize, p: usize, seed: u64) -> Result<Dataset> {
    generate_ridge_synthetic_with_noise(n_samples, p, seed, DEFAULT_NOISE)
}

pub fn generate_ridge_synthetic_with_noise(
    n_samples: usize,
    p: usize,
    seed: u64,
    noise: f64,
) -> Result<Dataset> {
    if n_samples == 0 || p == 0 {
        return Err(Error::invalid(format!(
            "need N, p >= 1, got N = {n_samples}, p = {p}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = substream(seed, Stream::Aux(0), 0);
    let hidden = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
    let mut features = DMatrix::zeros(n_samples, p);
    let mut targets = DVector::zeros(n_samples);
    let eps = Normal::new(0.0, noise).map_err(|e| Error::invalid(e.to_string()))?;
    for i in 0..n_samples {
        for j in 0..p {
            features[(i, j)] = StandardNormal.sample(&mut rng);
        }
        targets[i] = features.row(i).dot(&hidden.transpose()) + eps.sample(&mut rng);
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut substream(seed, Stream::Aux(1), 0));
    let features = DMatrix::from_fn(n_samples, p, |i, j| features[(order[i], j)]);
    let targets = DVector::from_fn(n_samples, |i, _| targets[order[i]]);
    Ok(Dataset {
        features,
        targets,
        train: (0..n_samples).collect(),
        test: vec![],
        provenance: Provenance::SyntheticRidge,
        hidden: Some(hidden),
        preprocessing: None,
    })
}

/// Rescales feature column `j` by `ratio^(−j/(p−1))`, so the first and last
/// columns differ in scale by `ratio`. Hidden models are rescaled to keep
/// the targets unchanged.
pub fn spread_columns(ds: &mut Dataset, ratio: f64) -> Result<()> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("column ratio must be >= 1, got {ratio}")));
    }
    let p = ds.dim();
    if p < 2 {
        return Ok(());
    }
    for j in 0..p {
        let s = ratio.powf(-(j as f64) / (p as f64 - 1.0));
        ds.features.column_mut(j).scale_mut(s);
        if let Some(h) = ds.hidden.as_mut() {
            h[j] /= s;
        }
    }
    Ok(())
}

/// Principal components of centered data.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `d × k` orthonormal loadings, strongest component first.
    pub components: DMatrix<f64>,
    /// All covariance eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance captured by each kept component.
    pub explained_variance_ratio: Vec<f64>,
}

/// Eigendecomposition of the sample covariance of already centered rows.
pub fn pca(centered: &DMatrix<f64>, k: usize) -> Result<Pca> {
    let (m, d) = centered.shape();
    if k == 0 || k > d {
        return Err(Error::invalid(format!("need 1 <= k <= {d}, got {k}")));
    }
    if m < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let cov = centered.tr_mul(centered) / (m as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let components = DMatrix::from_fn(d, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let explained_variance_ratio = eigenvalues[..k]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        components,
        eigenvalues,
        explained_variance_ratio,
    })
}

/// Centers each column and scales it to unit variance; constant columns
/// are only centered.
pub fn standardize(m: &mut DMatrix<f64>) {
    let rows = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (rows - 1.0).max(1.0)).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

/// Training-set size for `n_rows` samples split across `n_agents`.
///
/// At the reference row count the training set is the smallest multiple of
/// the agent count holding 400000 samples; otherwise the same fraction is
/// applied and rounded up to a multiple of the agent count.
pub fn covtype_train_size(n_rows: usize, n_agents: usize) -> Result<usize> {
    if n_agents == 0 {
        return Err(Error::invalid("agent count must be positive"));
    }
    let target = if n_rows == COVTYPE_ROWS {
        COVTYPE_TRAIN
    } else {
        ((n_rows as f64) * COVTYPE_TRAIN as f64 / COVTYPE_ROWS as f64).round() as usize
    };
    let train = target.div_ceil(n_agents) * n_agents;
    if train > n_rows || train == 0 {
        return Err(Error::invalid(format!(
            "cannot split {n_rows} rows across {n_agents} agents"
        )));
    }
    Ok(train)
}

/// Loads the UCI CovType table: 54 feature columns then the cover type.
pub fn load_covtype(
    path: &Path,
    p_reduced: usize,
    n_agents: usize,
    seed: u64,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_covtype_from_reader(file, p_reduced, n_agents, seed)
}

pub fn load_covtype_from_reader<R: Read>(
    reader: R,
    p_reduced: usize,
    n_agents: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut values: Vec<f64> = vec![];
    let mut labels: Vec<f64> = vec![];
    let mut header_skipped = false;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 1,
            message: e.to_string(),
        })?;
        if row == 0 && rec.get(0).is_some_and(|f| f.trim().parse::<f64>().is_err()) {
            header_skipped = true;
            continue;
        }
        if rec.len() != COVTYPE_FEATURES + 1 {
            return Err(Error::Parse {
                row: row + 1,
                message: format!("expected {} fields, found {}", COVTYPE_FEATURES + 1, rec.len()),
            });
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: row + 1,
                message: format!("column {}: cannot parse {field:?}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("column {}: non-finite value", col + 1),
                });
            }
            if col < COVTYPE_FEATURES {
                values.push(v);
            } else {
                labels.push(if v == 2.0 { 1.0 } else { -1.0 });
            }
        }
    }
    let n_rows = labels.len();
    if n_rows < 2 {
        return Err(Error::invalid("CovType table has fewer than two rows"));
    }
    let mut raw = DMatrix::from_row_slice(n_rows, COVTYPE_FEATURES, &values);
    drop(values);
    standardize(&mut raw);
    let pc = pca(&raw, p_reduced)?;
    let projected = &raw * &pc.components;
    drop(raw);

    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut substream(seed, Stream::Aux(3), 0));
    let features = DMatrix::from_fn(n_rows, p_reduced, |i, j| projected[(order[i], j)]);
    let targets = DVector::from_fn(n_rows, |i, _| labels[order[i]]);
    let n_train = covtype_train_size(n_rows, n_agents)?;
    Ok(Dataset {
        features,
        targets,
        train: (0..n_train).collect(),
        test: (n_train..n_rows).collect(),
        provenance: Provenance::CovType,
        hidden: None,
        preprocessing: Some(Preprocessing {
            rows_read: n_rows,
            header_skipped,
            explained_variance_ratio: pc.explained_variance_ratio,
            label_mapping: LABEL_MAPPING.into(),
        }),
    })
}

/// Sample indices held by each agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
    /// `⌊|train| / n⌋`
    pub per_agent: usize,
    /// Training samples left over by the floor.
    pub dropped: Vec<usize>,
}

/// Shuffles the training indices and cuts them into `n` equal blocks.
pub fn partition_homogeneous(ds: &Dataset, n: usize, seed: u64) -> Result<Partition> {
    if n == 0 {
        return Err(Error::invalid("agent count must be positive"));
    }
    if n > ds.train.len() {
        return Err(Error::invalid(format!(
            "{n} agents exceed {} training samples",
            ds.train.len()
        )));
    }
    let mut idx = ds.train.clone();
    idx.shuffle(&mut substream(seed, Stream::Aux(2), 0));
    let per_agent = idx.len() / n;
    let dropped = idx.split_off(per_agent * n);
    if !dropped.is_empty() {
        log::info!("partition drops {} leftover samples", dropped.len());
    }
    let assignments = idx.chunks(per_agent).map(|c| c.to_vec()).collect();
    Ok(Partition {
        assignments,
        per_agent,
        dropped,
    })
}

pub fn local_data(ds: &Dataset, partition: &Partition) -> Result<Vec<LocalData>> {
    partition
        .assignments
        .iter()
        .map(|idx| {
            let (a, b) = ds.rows(idx);
            LocalData::new(a, b)
        })
        .collect()
}

pub fn build_objective(
    ds: &Dataset,
    partition: &Partition,
    kind: ObjectiveKind,
    lambda: f64,
) -> Result<Objective> {
    Objective::new(kind, lambda, local_data(ds, partition)?)
}
