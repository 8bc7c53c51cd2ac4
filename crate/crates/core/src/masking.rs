//! Disjoint-cover parameter masks.
//!
//! A round's masks `p_1..p_N` must satisfy `p_j ⊙ p_k = 0` for `j != k` and
//! `sum_j p_j = 1`. Plans serialize to a JSON document mapping each cell to
//! its sorted coordinate list.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};
use crate::model::{layer_offsets, LayerSpec};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    cell_id: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_bits(cell_id: usize, bits: Vec<bool>) -> Self {
        Self { cell_id, bits }
    }

    pub fn full(cell_id: usize, d: usize) -> Self {
        Self::from_bits(cell_id, vec![true; d])
    }

    pub fn empty(cell_id: usize, d: usize) -> Self {
        Self::from_bits(cell_id, vec![false; d])
    }

    pub fn from_coords(cell_id: usize, d: usize, coords: &[usize]) -> Result<Self> {
        let mut bits = vec![false; d];
        for &k in coords {
            if k >= d {
                return Err(HistError::InvalidPlan(format!("coordinate {k} out of range {d}")));
            }
            bits[k] = true;
        }
        Ok(Self::from_bits(cell_id, bits))
    }

    pub fn cell_id(&self) -> usize {
        self.cell_id
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// `||p||_1`.
    pub fn size(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn coords(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect()
    }

    /// `p ⊙ z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bits)
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect()
    }

    /// Zeroes every coordinate outside the mask.
    pub fn zero_outside(&self, z: &mut [f64]) {
        for (v, &b) in z.iter_mut().zip(&self.bits) {
            if !b {
                *v = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub round: usize,
    pub masks: Vec<Mask>,
    pub sizes: Vec<usize>,
    pub d_max: usize,
}

impl PartitionPlan {
    /// Builds a plan and fills in the size bookkeeping. Does not validate the
    /// cover; see [`verify_partition`].
    pub fn from_masks(round: usize, masks: Vec<Mask>) -> Self {
        let sizes: Vec<usize> = masks.iter().map(Mask::size).collect();
        let d_max = sizes.iter().copied().max().unwrap_or(0);
        Self {
            round,
            masks,
            sizes,
            d_max,
        }
    }

    /// Builds a plan from a coordinate-to-cell assignment.
    pub fn from_assignment(round: usize, cells: usize, owner: &[usize]) -> Self {
        let d = owner.len();
        let mut masks: Vec<Mask> = (0..cells).map(|j| Mask::empty(j, d)).collect();
        for (k, &j) in owner.iter().enumerate() {
            masks[j].bits[k] = true;
        }
        Self::from_masks(round, masks)
    }

    pub fn cells(&self) -> usize {
        self.masks.len()
    }

    pub fn d(&self) -> usize {
        self.masks.first().map_or(0, Mask::len)
    }

    pub fn with_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }

    pub fn to_document(&self) -> PlanDocument {
        PlanDocument {
            round: self.round,
            d: self.d(),
            cells: self
                .masks
                .iter()
                .map(|m| CellCoords {
                    cell: m.cell_id(),
                    coords: m.coords(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &PlanDocument) -> Result<Self> {
        let masks = doc
            .cells
            .iter()
            .map(|c| Mask::from_coords(c.cell, doc.d, &c.coords))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_masks(doc.round, masks))
    }
}

/// JSON shape of a plan: `{"round": t, "d": d, "cells": [{"cell": j, "coords": [...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub round: usize,
    pub d: usize,
    pub cells: Vec<CellCoords>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCoords {
    pub cell: usize,
    pub coords: Vec<usize>,
}

/// Assigns every coordinate to a cell independently and uniformly at random.
pub fn generate_uniform_partition(d: usize, cells: usize, seed: u64) -> Result<PartitionPlan> {
    if cells == 0 {
        return Err(HistError::InvalidInput("need at least one cell".into()));
    }
    let mut rng = seed::rng_for(seed, &[seed::tag::MASK, 0]);
    let owner: Vec<usize> = (0..d).map(|_| rng.random_range(0..cells)).collect();
    Ok(PartitionPlan::from_assignment(0, cells, &owner))
}

/// Random assignment with exactly the requested per-cell counts, by slicing a
/// shuffled index list.
pub fn generate_sized_partition(d: usize, sizes: &[usize], seed: u64) -> Result<PartitionPlan> {
    if sizes.is_empty() {
        return Err(HistError::InvalidInput("need at least one cell".into()));
    }
    let total: usize = sizes.iter().sum();
    if total != d {
        return Err(HistError::InvalidInput(format!("sizes sum to {total}, expected d = {d}")));
    }
    let mut rng = seed::rng_for(seed, &[seed::tag::MASK, 1]);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.shuffle(&mut rng);
    let mut owner = vec![0; d];
    let mut start = 0;
    for (j, &s) in sizes.iter().enumerate() {
        for &k in &idx[start..start + s] {
            owner[k] = j;
        }
        start += s;
    }
    Ok(PartitionPlan::from_assignment(0, sizes.len(), &owner))
}

/// Hidden-neuron partition. Hidden layers at even positions (every second
/// layer) are split: each owned neuron brings its incoming weight row, its
/// bias and its outgoing weight column. Neurons of the remaining layers,
/// including the output layer, go round-robin by index, together with their
/// bias and any incoming weights not already claimed.
pub fn generate_neuron_partition(layers: &[LayerSpec], cells: usize, seed: u64) -> Result<PartitionPlan> {
    if cells == 0 {
        return Err(HistError::InvalidInput("need at least one cell".into()));
    }
    if layers.len() < 2 {
        return Err(HistError::InvalidInput(
            "neuron partition needs at least one hidden layer".into(),
        ));
    }
    let mut rng = seed::rng_for(seed, &[seed::tag::MASK, 2]);
    let last = layers.len() - 1;
    let partitioned = |l: usize| l < last && l.is_multiple_of(2);

    let owners: Vec<Vec<usize>> = layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            if partitioned(l) {
                let mut order: Vec<usize> = (0..spec.output_dim).collect();
                order.shuffle(&mut rng);
                let mut owner = vec![0; spec.output_dim];
                for (q, &o) in order.iter().enumerate() {
                    owner[o] = q % cells;
                }
                owner
            } else {
                (0..spec.output_dim).map(|o| o % cells).collect()
            }
        })
        .collect();

    let d: usize = layers.iter().map(LayerSpec::param_count).sum();
    let mut owner = vec![0; d];
    for (l, spec) in layers.iter().enumerate() {
        let (w_off, b_off) = layer_offsets(layers, l);
        for o in 0..spec.output_dim {
            for k in 0..spec.input_dim {
                let cell = if partitioned(l) || l == 0 || !partitioned(l - 1) {
                    owners[l][o]
                } else {
                    owners[l - 1][k]
                };
                owner[w_off + o * spec.input_dim + k] = cell;
            }
            owner[b_off + o] = owners[l][o];
        }
    }
    Ok(PartitionPlan::from_assignment(0, cells, &owner))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    LengthMismatch { cell: usize, len: usize, d: usize },
    Overlap { coord: usize, first: usize, second: usize },
    Uncovered { coord: usize },
    SizeMismatch { cell: usize, recorded: usize, actual: usize },
    DmaxMismatch { recorded: usize, actual: usize },
    ProbeLength { len: usize, d: usize },
    IdentityMismatch { lhs: f64, rhs: f64 },
    NoCells,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeIdentity {
    /// `sum_j ||p_j ⊙ z||^2`
    pub masked_energy: f64,
    /// `||z||^2`
    pub energy: f64,
    /// `sum_j ||p_j ⊙ z - z||^2`
    pub lhs: f64,
    /// `(N - 1) ||z||^2`
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub violations: Vec<Violation>,
    pub probe: Option<ProbeIdentity>,
}

impl PartitionReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks disjointness, cover, size bookkeeping and, given a probe `z`, the
/// identity `sum_j ||p_j ⊙ z - z||^2 = (N - 1) ||z||^2`. Never panics.
pub fn verify_partition(plan: &PartitionPlan, probe: Option<&[f64]>) -> PartitionReport {
    let mut violations = Vec::new();
    if plan.masks.is_empty() {
        violations.push(Violation::NoCells);
        return PartitionReport {
            violations,
            probe: None,
        };
    }
    let d = plan.d();
    for (j, m) in plan.masks.iter().enumerate() {
        if m.len() != d {
            violations.push(Violation::LengthMismatch {
                cell: j,
                len: m.len(),
                d,
            });
        }
    }
    let mut owner: Vec<Option<usize>> = vec![None; d];
    for (j, m) in plan.masks.iter().enumerate() {
        for (k, &b) in m.bits().iter().enumerate().take(d) {
            if b {
                match owner[k] {
                    Some(first) => violations.push(Violation::Overlap {
                        coord: k,
                        first,
                        second: j,
                    }),
                    None => owner[k] = Some(j),
                }
            }
        }
    }
    violations.extend(
        owner
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_none())
            .map(|(coord, _)| Violation::Uncovered { coord }),
    );
    for (j, m) in plan.masks.iter().enumerate() {
        let actual = m.size();
        match plan.sizes.get(j) {
            Some(&recorded) if recorded == actual => {}
            recorded => violations.push(Violation::SizeMismatch {
                cell: j,
                recorded: recorded.copied().unwrap_or(usize::MAX),
                actual,
            }),
        }
    }
    let actual_max = plan.masks.iter().map(Mask::size).max().unwrap_or(0);
    if plan.d_max != actual_max {
        violations.push(Violation::DmaxMismatch {
            recorded: plan.d_max,
            actual: actual_max,
        });
    }

    let probe = probe.and_then(|z| {
        if z.len() != d {
            violations.push(Violation::ProbeLength { len: z.len(), d });
            return None;
        }
        let energy: f64 = z.iter().map(|v| v * v).sum();
        let mut masked_energy = 0.0;
        let mut lhs = 0.0;
        for m in &plan.masks {
            for (&v, &b) in z.iter().zip(m.bits()) {
                if b {
                    masked_energy += v * v;
                } else {
                    lhs += v * v;
                }
            }
        }
        let rhs = (plan.masks.len() as f64 - 1.0) * energy;
        if (lhs - rhs).abs() > 1e-12 * rhs.max(1.0) {
            violations.push(Violation::IdentityMismatch { lhs, rhs });
        }
        Some(ProbeIdentity {
            masked_energy,
            energy,
            lhs,
            rhs,
        })
    });

    PartitionReport { violations, probe }
}

/// Per-client per-global-round upload of a CNN whose convolutional layers are
/// shared and whose dense layers are split `N` ways, as a multiple of the full
/// model size: `(vol_c + vol_f / N) / (vol_c + vol_f) * E`.
pub fn cnn_comm_load_fraction(vol_c: usize, vol_f: usize, cells: usize, edge_rounds: usize) -> Result<f64> {
    if cells == 0 {
        return Err(HistError::InvalidInput("need at least one cell".into()));
    }
    let total = vol_c + vol_f;
    if total == 0 {
        return Err(HistError::InvalidInput("model has no parameters".into()));
    }
    Ok((vol_c as f64 + vol_f as f64 / cells as f64) / total as f64 * edge_rounds as f64)
}
