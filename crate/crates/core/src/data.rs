//! Synthetic classification data, label-skewed client splits and an IDX
//! (MNIST byte layout) reader.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};
use crate::model::ExampleBatch;
use crate::seed;

/// Gaussian mixture with one component per class. Class `c` has mean
/// `separation / sqrt(2) * e_(c mod dim)`, so any two classes with distinct
/// basis directions sit exactly `separation` apart, and unit-variance
/// isotropic noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
}

/// Examples are emitted in a seeded shuffled order.
pub fn synth_dataset(spec: &MixtureSpec, seed: u64) -> Result<ExampleBatch> {
    if spec.classes == 0 || spec.dim == 0 || spec.per_class == 0 {
        return Err(HistError::InvalidInput("mixture counts must be >= 1".into()));
    }
    let mut rng = seed::rng_for(seed, &[seed::tag::DATA]);
    let scale = spec.separation / std::f64::consts::SQRT_2;
    let n = spec.classes * spec.per_class;
    let mut labels: Vec<usize> = (0..n).map(|i| i / spec.per_class).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * spec.dim);
    for &y in &labels {
        for k in 0..spec.dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if k == y % spec.dim { scale } else { 0.0 };
            features.push(mean + noise);
        }
    }
    ExampleBatch::classification(spec.dim, features, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRegime {
    /// Label-skewed across all clients, hence across cells too.
    FullyNoniid,
    /// Uniform random split across cells, label-skewed within each cell.
    CellIidClientNoniid,
}

/// Splits `data` into per-client shards, grouped by cell.
///
/// Sort-and-deal: examples are grouped by label (shuffled within a label) and
/// client `c` of a unit with `n` clients holds the `labels_per_unit`
/// consecutive labels starting at `floor(c * classes / n)`. Each label's
/// examples are divided into contiguous, near-equal blocks among its holders.
pub fn partition_noniid(
    data: &ExampleBatch,
    clients_per_cell: &[usize],
    regime: DataRegime,
    labels_per_unit: usize,
    seed: u64,
) -> Result<Vec<Vec<ExampleBatch>>> {
    let labels = data
        .labels()
        .ok_or_else(|| HistError::InvalidInput("label split needs class labels".into()))?;
    if clients_per_cell.is_empty() || clients_per_cell.contains(&0) {
        return Err(HistError::InfeasibleSplit("every cell needs at least one client".into()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = seed::rng_for(seed, &[seed::tag::DATA, 1]);

    let index_shards: Vec<Vec<Vec<usize>>> = match regime {
        DataRegime::FullyNoniid => {
            let all: Vec<usize> = (0..data.len()).collect();
            let total: usize = clients_per_cell.iter().sum();
            let flat = sort_and_deal(&all, labels, classes, total, labels_per_unit, &mut rng)?;
            let mut it = flat.into_iter();
            clients_per_cell
                .iter()
                .map(|&n| it.by_ref().take(n).collect())
                .collect()
        }
        DataRegime::CellIidClientNoniid => {
            let mut all: Vec<usize> = (0..data.len()).collect();
            all.shuffle(&mut rng);
            let cells = clients_per_cell.len();
            let per_cell: Vec<Vec<usize>> = (0..cells)
                .map(|j| all.iter().skip(j).step_by(cells).copied().collect())
                .collect();
            per_cell
                .iter()
                .zip(clients_per_cell)
                .map(|(idx, &n)| sort_and_deal(idx, labels, classes, n, labels_per_unit, &mut rng))
                .collect::<Result<_>>()?
        }
    };

    Ok(index_shards
        .iter()
        .map(|cell| cell.iter().map(|idx| data.select(idx)).collect())
        .collect())
}

fn sort_and_deal(
    indices: &[usize],
    labels: &[usize],
    classes: usize,
    clients: usize,
    labels_per_unit: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<usize>>> {
    if labels_per_unit == 0 || labels_per_unit > classes {
        return Err(HistError::InfeasibleSplit(format!(
            "labels_per_unit = {labels_per_unit} must be in 1..={classes}"
        )));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in indices {
        by_label[labels[i]].push(i);
    }
    for block in &mut by_label {
        block.shuffle(rng);
    }

    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for c in 0..clients {
        let start = c * classes / clients;
        for k in 0..labels_per_unit {
            holders[(start + k) % classes].push(c);
        }
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for (label, block) in by_label.iter().enumerate() {
        if block.is_empty() {
            continue;
        }
        let h = &holders[label];
        if h.is_empty() {
            return Err(HistError::InfeasibleSplit(format!(
                "label {label} is held by no client ({clients} clients x {labels_per_unit} labels < {classes} classes)"
            )));
        }
        if block.len() < h.len() {
            return Err(HistError::InfeasibleSplit(format!(
                "label {label} has {} examples for {} holders",
                block.len(),
                h.len()
            )));
        }
        let mut start = 0;
        for (q, &c) in h.iter().enumerate() {
            let end = (q + 1) * block.len() / h.len();
            shards[c].extend_from_slice(&block[start..end]);
            start = end;
        }
    }
    if let Some(c) = shards.iter().position(Vec::is_empty) {
        return Err(HistError::InfeasibleSplit(format!("client {c} receives no examples")));
    }
    Ok(shards)
}

fn read_be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| HistError::InvalidInput("truncated IDX header".into()))
}

/// Parses an IDX image file (magic 0x00000803) and label file (0x00000801)
/// into a batch with pixels scaled to [0, 1].
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<ExampleBatch> {
    if read_be_u32(images, 0)? != 0x0803 {
        return Err(HistError::InvalidInput("bad IDX image magic".into()));
    }
    if read_be_u32(labels, 0)? != 0x0801 {
        return Err(HistError::InvalidInput("bad IDX label magic".into()));
    }
    let n = read_be_u32(images, 4)? as usize;
    let rows = read_be_u32(images, 8)? as usize;
    let cols = read_be_u32(images, 12)? as usize;
    if read_be_u32(labels, 4)? as usize != n {
        return Err(HistError::InvalidInput("image and label counts differ".into()));
    }
    let dim = rows * cols;
    let pixels = images
        .get(16..16 + n * dim)
        .ok_or_else(|| HistError::InvalidInput("truncated IDX images".into()))?;
    let ys = labels
        .get(8..8 + n)
        .ok_or_else(|| HistError::InvalidInput("truncated IDX labels".into()))?;
    ExampleBatch::classification(
        dim,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        ys.iter().map(|&y| y as usize).collect(),
    )
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<ExampleBatch> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn spec(per_class: usize) -> MixtureSpec {
        MixtureSpec {
            classes: 10,
            dim: 12,
            per_class,
            separation: 4.0,
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_dataset(&spec(5), 3).unwrap();
        let b = synth_dataset(&spec(5), 3).unwrap();
        assert_eq!(
            a.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.labels(), b.labels());
        assert_ne!(synth_dataset(&spec(5), 4).unwrap(), a);
    }

    #[test]
    fn synth_rejects_zero_counts() {
        let mut s = spec(5);
        s.classes = 0;
        assert!(synth_dataset(&s, 0).is_err());
    }

    fn union_is_exact(data: &ExampleBatch, shards: &[Vec<ExampleBatch>]) {
        let key = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let mut want: Vec<_> = (0..data.len()).map(|i| key(data.row(i))).collect();
        let mut got: Vec<_> = shards
            .iter()
            .flatten()
            .flat_map(|s| (0..s.len()).map(|i| key(s.row(i))).collect::<Vec<_>>())
            .collect();
        want.sort();
        got.sort();
        assert_eq!(want, got);
    }

    #[test]
    fn fully_noniid_two_labels_per_client() {
        let data = synth_dataset(&spec(40), 1).unwrap();
        let shards = partition_noniid(&data, &[5, 5], DataRegime::FullyNoniid, 2, 9).unwrap();
        for shard in shards.iter().flatten() {
            let distinct: BTreeSet<_> = shard.labels().unwrap().iter().collect();
            assert!(distinct.len() <= 2);
        }
        union_is_exact(&data, &shards);
    }

    #[test]
    fn cells_differ_in_label_sets_when_fully_noniid() {
        let data = synth_dataset(&spec(40), 1).unwrap();
        let shards = partition_noniid(&data, &[5, 5, 5, 5], DataRegime::FullyNoniid, 2, 9).unwrap();
        let cell_labels: Vec<BTreeSet<usize>> = shards
            .iter()
            .map(|c| c.iter().flat_map(|s| s.labels().unwrap().to_vec()).collect())
            .collect();
        assert!(cell_labels.iter().all(|l| l.len() < 10));
    }

    #[test]
    fn all_labels_per_unit_is_iid() {
        let data = synth_dataset(&spec(40), 2).unwrap();
        let shards = partition_noniid(&data, &[4], DataRegime::FullyNoniid, 10, 1).unwrap();
        for shard in &shards[0] {
            let distinct: BTreeSet<_> = shard.labels().unwrap().iter().collect();
            assert_eq!(distinct.len(), 10);
        }
        union_is_exact(&data, &shards);
    }

    #[test]
    fn cell_iid_regime_union_exact() {
        let data = synth_dataset(&spec(30), 3).unwrap();
        let shards = partition_noniid(&data, &[3, 3], DataRegime::CellIidClientNoniid, 4, 2).unwrap();
        union_is_exact(&data, &shards);
    }

    #[test]
    fn infeasible_splits_rejected() {
        let data = synth_dataset(&spec(2), 3).unwrap();
        // 1 client x 1 label cannot hold 10 classes
        assert!(matches!(
            partition_noniid(&data, &[1], DataRegime::FullyNoniid, 1, 0),
            Err(HistError::InfeasibleSplit(_))
        ));
        assert!(partition_noniid(&data, &[2], DataRegime::FullyNoniid, 11, 0).is_err());
        assert!(partition_noniid(&data, &[2, 0], DataRegime::FullyNoniid, 2, 0).is_err());
        // 20 clients x 5 labels: each label held by 10 clients but only 2 examples
        assert!(partition_noniid(&data, &[20], DataRegime::FullyNoniid, 5, 0).is_err());
    }

    #[test]
    fn idx_round_trip() {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend([0, 255, 51, 102, 255, 0, 0, 0]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        let batch = parse_idx(&images, &labels).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.dim(), 4);
        assert_eq!(batch.labels().unwrap(), &[7, 3]);
        assert_eq!(batch.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert!(parse_idx(&images[..20], &labels).is_err());
        assert!(parse_idx(&labels, &labels).is_err());
    }
}
