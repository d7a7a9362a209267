//! Datasets and client partitions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::nn::Batch;
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// `n` labelled examples, features row-major `n × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no examples".into()));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::InvalidDataset(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels)
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidDataset(format!("index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.dim, self.classes)
    }

    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// Unit-variance Gaussian classes around means at `separation` times the
/// vertices of a simplex (`e_c` when `classes ≤ dim`, random unit directions
/// otherwise). Examples are grouped by class.
pub fn synth_gaussian(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidDataset(
            "need at least 2 classes, 1 dimension and 1 example per class".into(),
        ));
    }
    let mut mean_rng = rng::keyed(Domain::Synth, &[seed, 0]);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if classes <= dim {
                let mut m = vec![0.0; dim];
                m[c] = separation;
                m
            } else {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| separation * x / norm).collect()
            }
        })
        .collect();
    let mut noise = rng::keyed(Domain::Synth, &[seed, 1]);
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let e: f64 = StandardNormal.sample(&mut noise);
                features.push(m + e);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, classes)
}

/// Disjoint, non-empty index sets, one per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }
}

fn check_clients(n_clients: usize, n: usize) -> Result<()> {
    if n_clients == 0 {
        return Err(Error::InvalidDataset("need at least one client".into()));
    }
    if n_clients > n {
        return Err(Error::TooManyClients {
            clients: n_clients,
            available: n,
        });
    }
    Ok(())
}

/// Seeded permutation split into `n_clients` shards whose sizes differ by at most one.
pub fn partition_iid(dataset: &Dataset, n_clients: usize, seed: u64) -> Result<Partition> {
    check_clients(n_clients, dataset.len())?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::keyed(Domain::Partition, &[seed, 0]));
    let base = order.len() / n_clients;
    let extra = order.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let len = base + usize::from(c < extra);
        shards.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { shards })
}

/// Dirichlet(`alpha`) label skew: each class is split across clients in
/// proportions drawn from a symmetric Dirichlet. Empty shards are filled by
/// moving one example from the currently largest shard.
pub fn partition_noniid(dataset: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidDataset(format!("concentration {alpha} must be positive")));
    }
    check_clients(n_clients, dataset.len())?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..dataset.classes() {
        let mut rng = rng::keyed(Domain::Partition, &[seed, 1, class as u64]);
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels()[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            weights = vec![1.0; n_clients];
        }
        let total: f64 = weights.iter().sum();
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (c, w) in weights.iter().enumerate() {
            cum += w;
            let end = if c + 1 == n_clients {
                n
            } else {
                (((cum / total) * n as f64).round() as usize).clamp(start, n)
            };
            shards[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    for c in 0..n_clients {
        if shards[c].is_empty() {
            let largest = (0..n_clients)
                .max_by_key(|&j| (shards[j].len(), std::cmp::Reverse(j)))
                .expect("at least one client");
            let moved = shards[largest].pop().expect("largest shard has examples");
            shards[c].push(moved);
        }
    }
    Ok(Partition { shards })
}

/// Shannon entropy (nats) of a label histogram.
pub fn entropy(histogram: &[usize]) -> f64 {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvSchema {
    /// Number of classes; inferred as `max label + 1` when absent.
    pub classes: Option<usize>,
}

/// Reads a header row followed by `features..., label` rows.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    if headers.len() < 2 {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            reason: "need at least one feature column and a label column".into(),
        });
    }
    let dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |reason: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            reason,
        };
        for (col, field) in record.iter().take(dim).enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(format!("column {}: `{field}` is not a number", col + 1)))?;
            features.push(x);
        }
        let raw = record[dim].trim();
        let label: usize = raw
            .parse()
            .map_err(|_| err(format!("label `{raw}` is not a non-negative integer")))?;
        if let Some(k) = schema.classes {
            if label >= k {
                return Err(err(format!("label {label} out of range for {k} classes")));
            }
        }
        labels.push(label);
    }
    let classes = schema
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, dim, classes)
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

/// Writes `f0..f{d-1},label` with shortest round-trip float formatting.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, e))?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_error(path, 1, e))?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.row(i).iter().map(|x| format!("{x:?}")).collect();
        row.push(dataset.labels()[i].to_string());
        w.write_record(&row).map_err(|e| csv_error(path, i as u64 + 2, e))?;
    }
    w.flush()?;
    Ok(())
}
