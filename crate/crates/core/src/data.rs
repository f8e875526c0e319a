//! Datasets, splits and client partitioning.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::seed::{self, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Row-major features with integer labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Domain(format!("label {l} outside 0..{num_classes}")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
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

    pub fn num_classes(&self) -> usize {
        self.num_classes
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

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels, self.dim).expect("dataset shape is validated")
    }

    /// Copies the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    pub fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn require_len(file: &str, bytes: &[u8], needed: usize) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            file: file.to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file. Returns `(count, rows * cols, pixels in [0, 1])`.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<(usize, usize, Vec<f64>)> {
    require_len(file, bytes, 16)?;
    let magic = read_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            file: file.to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4) as usize;
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let pixels = count * rows * cols;
    require_len(file, bytes, 16 + pixels)?;
    let values = bytes[16..16 + pixels].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((count, rows * cols, values))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<usize>> {
    require_len(file, bytes, 8)?;
    let magic = read_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic {
            file: file.to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4) as usize;
    require_len(file, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Loads an MNIST-style image/label file pair. Pixels are scaled to `[0, 1]`;
/// the class count is `max(label) + 1` (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    let (count, dim, pixels) = parse_idx_images(&images, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&labels, &labels_path.display().to_string())?;
    if count != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    LabeledDataset::new(pixels, labels, dim, num_classes)
}

/// `num_classes` isotropic Gaussian clusters. Means are unit-norm and
/// mutually orthogonal when `dim >= num_classes`; otherwise they are spread
/// evenly around a random circle (or over `[-1, 1]` when `dim == 1`).
/// Rows are ordered class by class.
pub fn synthetic_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || dim == 0 {
        return Err(Error::Config(
            "synthetic blobs need at least 2 classes and dim >= 1".into(),
        ));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::Config(format!("blob spread {spread} must be finite and >= 0")));
    }
    let mut rng = seed::stream_rng(seed, Stream::Synthetic, &[]);
    let means = blob_means(num_classes, dim, &mut rng);
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(mean.iter().map(|&m| {
                let noise: f64 = rng.sample(StandardNormal);
                m + spread * noise
            }));
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, dim, num_classes)
}

/// The cluster centres used by [`synthetic_blobs`] for the same arguments.
pub fn synthetic_blob_means(num_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream_rng(seed, Stream::Synthetic, &[]);
    blob_means(num_classes, dim, &mut rng)
}

fn gaussian_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

fn blob_means(num_classes: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if dim >= num_classes {
        // Gram-Schmidt on Gaussian draws.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
        while basis.len() < num_classes {
            let mut v = gaussian_vec(dim, rng);
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                normalize(&mut v);
                basis.push(v);
            }
        }
        basis
    } else if dim >= 2 {
        let mut e1 = gaussian_vec(dim, rng);
        normalize(&mut e1);
        let mut e2 = gaussian_vec(dim, rng);
        let dot: f64 = e2.iter().zip(&e1).map(|(x, y)| x * y).sum();
        e2.iter_mut().zip(&e1).for_each(|(x, y)| *x -= dot * y);
        normalize(&mut e2);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        (0..num_classes)
            .map(|k| {
                let angle = phase + std::f64::consts::TAU * k as f64 / num_classes as f64;
                let (s, c) = angle.sin_cos();
                e1.iter().zip(&e2).map(|(a, b)| c * a + s * b).collect()
            })
            .collect()
    } else {
        (0..num_classes)
            .map(|k| vec![-1.0 + 2.0 * k as f64 / (num_classes - 1) as f64])
            .collect()
    }
}

/// Seeded shuffle, then contiguous cuts at 80% and 90% (floored).
pub fn split_indices(n: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 10 {
        return Err(Error::Domain(format!("need at least 10 examples to split, have {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream_rng(seed, Stream::Split, &[]));
    let train_end = n * 8 / 10;
    let val_end = n * 9 / 10;
    let test = order.split_off(val_end);
    let val = order.split_off(train_end);
    Ok([order, val, test])
}

/// Train/validation/test split in 80/10/10 proportions.
pub fn split_80_10_10(ds: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let [train, val, test] = split_indices(ds.len(), seed)?;
    Ok((ds.subset(&train), ds.subset(&val), ds.subset(&test)))
}

/// Non-IID partition parameters: `num_groups` label groups, concentration `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub q: f64,
    pub num_groups: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups < 2 {
            return Err(Error::Config("partition needs at least 2 label groups".into()));
        }
        if self.n_clients < self.num_groups {
            return Err(Error::Config(format!(
                "{} clients cannot cover {} groups",
                self.n_clients, self.num_groups
            )));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::Config(format!("concentration q = {} outside (0, 1]", self.q)));
        }
        Ok(())
    }

    /// Contiguous client-id ranges, one per group, sizes differing by at most 1.
    pub fn group_members(&self) -> Vec<Range<usize>> {
        let base = self.n_clients / self.num_groups;
        let extra = self.n_clients % self.num_groups;
        let mut start = 0;
        (0..self.num_groups)
            .map(|g| {
                let len = base + usize::from(g < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    pub fn group_of_client(&self, client: usize) -> usize {
        self.group_members()
            .iter()
            .position(|r| r.contains(&client))
            .expect("client id in range")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

/// Routes each label to a group: its own group with probability `q`, any
/// other group with probability `(1 - q) / (L - 1)`.
pub fn assign_groups(labels: &[usize], spec: &PartitionSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let groups = spec.num_groups;
    if let Some(&l) = labels.iter().find(|&&l| l >= groups) {
        return Err(Error::Domain(format!("label {l} has no group among {groups}")));
    }
    let mut rng = seed::stream_rng(spec.seed, Stream::Partition, &[0]);
    Ok(labels
        .iter()
        .map(|&label| {
            if rng.random::<f64>() < spec.q {
                label
            } else {
                let other = rng.random_range(0..groups - 1);
                if other >= label {
                    other + 1
                } else {
                    other
                }
            }
        })
        .collect())
}

/// Non-IID partition of `train` across clients. Within a group, examples
/// are shuffled and dealt round-robin to the group's clients.
pub fn partition_concentration(train: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    if train.num_classes() != spec.num_groups {
        return Err(Error::Config(format!(
            "{} label groups for a dataset with {} classes",
            spec.num_groups,
            train.num_classes()
        )));
    }
    let assignment = assign_groups(train.labels(), spec)?;
    let mut shards: Vec<ClientShard> = (0..spec.n_clients)
        .map(|client_id| ClientShard {
            client_id,
            indices: Vec::new(),
        })
        .collect();
    for (g, members) in spec.group_members().into_iter().enumerate() {
        let mut pool: Vec<usize> = (0..train.len()).filter(|&i| assignment[i] == g).collect();
        pool.shuffle(&mut seed::stream_rng(spec.seed, Stream::Partition, &[1, g as u64]));
        for (j, idx) in pool.into_iter().enumerate() {
            shards[members.start + j % members.len()].indices.push(idx);
        }
    }
    shards.iter_mut().for_each(|s| s.indices.sort_unstable());
    Ok(shards)
}

/// Picks `n_malicious` clients so that they saturate whole groups:
/// `ceil(n_malicious / clients_per_group)` random groups, filled one group
/// at a time.
pub fn select_malicious_group_oriented(spec: &PartitionSpec, n_malicious: usize, seed: u64) -> Result<BTreeSet<usize>> {
    spec.validate()?;
    if n_malicious > spec.n_clients {
        return Err(Error::Config(format!(
            "{n_malicious} malicious clients out of {}",
            spec.n_clients
        )));
    }
    let mut rng = seed::stream_rng(seed, Stream::Malicious, &[]);
    let members = spec.group_members();
    let mut groups: Vec<usize> = (0..spec.num_groups).collect();
    groups.shuffle(&mut rng);

    let mut chosen = BTreeSet::new();
    for g in groups {
        if chosen.len() == n_malicious {
            break;
        }
        let mut ids: Vec<usize> = members[g].clone().collect();
        ids.shuffle(&mut rng);
        let take = (n_malicious - chosen.len()).min(ids.len());
        chosen.extend(ids.into_iter().take(take));
    }
    Ok(chosen)
}

/// Number of groups the group-oriented selection touches.
pub fn malicious_group_count(spec: &PartitionSpec, n_malicious: usize) -> usize {
    let per_group = (spec.n_clients / spec.num_groups).max(1);
    n_malicious.div_ceil(per_group)
}
