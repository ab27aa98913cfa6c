//! Controlled-imbalance partitioning for two-class data.
//!
//! Each client first receives `n_per_class` images of both classes (the
//! zero-skew split). The first half of the clients keep class A (label 0) as
//! their majority, the second half class B (label 1). Skew `s` then removes a
//! seeded random portion of each client's minority images, keeping
//! `floor((1 - s/100) · n)`. The removal order is a fixed per-client
//! permutation, so the images kept at a higher skew are always a subset of the
//! ones kept at a lower skew.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::Dataset;

pub const CLASS_A: usize = 0;
pub const CLASS_B: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSide {
    A,
    B,
}

/// Per-class counts `(n_A, n_B)` after applying `skew` percent to the minority side.
pub fn skewed_counts(counts: (usize, usize), skew: u32, minority: ClassSide) -> Result<(usize, usize)> {
    if skew >= 100 {
        return Err(Error::invalid(format!("skew must be in [0, 100), got {skew}")));
    }
    let keep = |n: usize| n * (100 - skew as usize) / 100;
    let out = match minority {
        ClassSide::A => (keep(counts.0), counts.1),
        ClassSide::B => (counts.0, keep(counts.1)),
    };
    if out.0 == 0 || out.1 == 0 {
        return Err(Error::invalid(format!(
            "skew {skew}% leaves no minority images from {counts:?}"
        )));
    }
    Ok(out)
}

/// Argmax of per-class counts; ties go to the lowest class index.
pub fn expertise_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate().skip(1) {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkewSpec {
    pub skew: u32,
    pub n_per_class: usize,
    pub clients: usize,
    pub seed: u64,
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub dataset: Dataset,
    /// Index of every local image in the partitioned dataset.
    pub source_indices: Vec<usize>,
    pub class_counts: Vec<usize>,
    pub expertise: usize,
    /// The class designated as minority by the half/half construction.
    pub minority: usize,
}

impl ClientShard {
    fn build(client_id: usize, source: &Dataset, indices: Vec<usize>, minority: usize) -> Self {
        let dataset = source.subset(&indices);
        let class_counts = dataset.class_counts();
        ClientShard {
            client_id,
            expertise: expertise_class(&class_counts),
            dataset,
            source_indices: indices,
            class_counts,
            minority,
        }
    }
}

/// The skew-independent part of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSkewSplit {
    pub n_per_class: usize,
    pub seed: u64,
    /// `assignments[client][class]` in removal-permutation order.
    assignments: Vec<[Vec<usize>; 2]>,
}

impl ZeroSkewSplit {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn majority_of(&self, client: usize) -> usize {
        if client < self.clients() / 2 {
            CLASS_A
        } else {
            CLASS_B
        }
    }

    /// Shards at the given skew.
    pub fn apply(&self, dataset: &Dataset, skew: u32) -> Result<Vec<ClientShard>> {
        self.assignments
            .iter()
            .enumerate()
            .map(|(client, per_class)| {
                let majority = self.majority_of(client);
                let minority = 1 - majority;
                let side = if minority == CLASS_A { ClassSide::A } else { ClassSide::B };
                let (na, nb) = skewed_counts((self.n_per_class, self.n_per_class), skew, side)?;
                let mut indices = per_class[CLASS_A][..na].to_vec();
                indices.extend_from_slice(&per_class[CLASS_B][..nb]);
                Ok(ClientShard::build(client, dataset, indices, minority))
            })
            .collect()
    }
}

/// Deals `n_per_class` images of each class to every client.
pub fn zero_skew_split(dataset: &Dataset, clients: usize, n_per_class: usize, seed: u64) -> Result<ZeroSkewSplit> {
    if dataset.classes() != 2 {
        return Err(Error::invalid(format!(
            "skew partitioning is defined for two classes, dataset has {}",
            dataset.classes()
        )));
    }
    if clients < 2 || clients % 2 != 0 {
        return Err(Error::invalid(format!("client count must be even and at least 2, got {clients}")));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("images per class per client must be positive"));
    }
    let required = clients * n_per_class;
    let mut pools = Vec::with_capacity(2);
    for class in [CLASS_A, CLASS_B] {
        let mut idx = dataset.class_indices(class);
        if idx.len() < required {
            return Err(Error::InsufficientData {
                class,
                required,
                available: idx.len(),
            });
        }
        idx.shuffle(&mut rng::stream(seed, Purpose::Split, &[class as u64]));
        pools.push(idx);
    }
    let assignments = (0..clients)
        .map(|client| {
            let mut rng = rng::stream(seed, Purpose::Eliminate, &[client as u64]);
            let mut per_class = [Vec::new(), Vec::new()];
            for class in [CLASS_A, CLASS_B] {
                let mut slice = pools[class][client * n_per_class..(client + 1) * n_per_class].to_vec();
                slice.shuffle(&mut rng);
                per_class[class] = slice;
            }
            per_class
        })
        .collect();
    Ok(ZeroSkewSplit {
        n_per_class,
        seed,
        assignments,
    })
}

/// Zero-skew split followed by minority elimination.
pub fn partition(dataset: &Dataset, spec: &SkewSpec) -> Result<Vec<ClientShard>> {
    zero_skew_split(dataset, spec.clients, spec.n_per_class, spec.seed)?.apply(dataset, spec.skew)
}

/// Stratified train/holdout split of a dataset.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: Dataset,
    pub holdout: Dataset,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

/// Reserves `floor(percent/100 · n_c)` images of every class for evaluation.
pub fn stratified_holdout(dataset: &Dataset, percent: u32, seed: u64) -> Result<HoldoutSplit> {
    if percent >= 100 {
        return Err(Error::invalid(format!("holdout percent must be below 100, got {percent}")));
    }
    let mut train_indices = Vec::new();
    let mut holdout_indices = Vec::new();
    for class in 0..dataset.classes() {
        let mut idx = dataset.class_indices(class);
        if idx.is_empty() {
            return Err(Error::InsufficientData {
                class,
                required: 1,
                available: 0,
            });
        }
        idx.shuffle(&mut rng::stream(seed, Purpose::Holdout, &[class as u64]));
        let k = idx.len() * percent as usize / 100;
        holdout_indices.extend_from_slice(&idx[..k]);
        train_indices.extend_from_slice(&idx[k..]);
    }
    train_indices.sort_unstable();
    holdout_indices.sort_unstable();
    Ok(HoldoutSplit {
        train: dataset.subset(&train_indices),
        holdout: dataset.subset(&holdout_indices),
        train_indices,
        holdout_indices,
    })
}

/// Audit manifest: one `client_id,class,source_index` line per assigned image.
pub fn write_manifest(shards: &[ClientShard], mut out: impl Write) -> std::io::Result<()> {
    for shard in shards {
        for (&src, &label) in shard.source_indices.iter().zip(shard.dataset.labels()) {
            writeln!(out, "{},{},{}", shard.client_id, label, src)?;
        }
    }
    Ok(())
}
