//! Mask-size allocation: minimize `max_j c_j w_j` subject to `sum_j w_j = d`
//! and `0 <= w_j <= cap`, over integers.
//!
//! `c_j` is the latency a cell adds per parameter it owns (already multiplied
//! by `E`), so the objective is the global-round latency. The cap comes from
//! bounding the mask-size term of the convergence bound:
//! `6 N w_j δ1² / d <= ε_th`, i.e. `w_j <= floor(d κ / N)` with
//! `κ = ε_th / (6 δ1²)`.

use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};
use crate::latency::ClientLink;
use crate::scenario::{ComputeConfig, RadioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionProblem {
    /// Seconds per unit of mask size, per cell.
    pub coeffs: Vec<f64>,
    pub d: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSolution {
    pub sizes: Vec<usize>,
    /// Makespan `max_j c_j w_j` in seconds.
    pub objective: f64,
}

/// `κ = ε_th / (6 δ1²)`; infinite when there is no cross-cell dissimilarity.
pub fn kappa_from_threshold(eps_th: f64, delta1_sq: f64) -> f64 {
    if delta1_sq > 0.0 {
        eps_th / (6.0 * delta1_sq)
    } else {
        f64::INFINITY
    }
}

/// `floor(d κ / N)`, clipped to `d`.
pub fn cap_from_kappa(d: usize, cells: usize, kappa: f64) -> usize {
    let raw = d as f64 * kappa / cells as f64;
    if !raw.is_finite() || raw >= d as f64 {
        d
    } else {
        raw.max(0.0).floor() as usize
    }
}

/// OMA: `c_j = E max_i (H V_0 / (F_i d) + n_j L_0 / (R_i d))`.
pub fn build_problem_oma(
    cells: &[Vec<ClientLink>],
    d: usize,
    local_steps: usize,
    edge_rounds: usize,
    compute: &ComputeConfig,
    kappa: f64,
) -> PartitionProblem {
    let (h, e, df) = (local_steps as f64, edge_rounds as f64, d as f64);
    let coeffs = cells
        .iter()
        .map(|clients| {
            let n = clients.len() as f64;
            e * clients
                .iter()
                .map(|c| h * compute.cycles_per_update_full / (c.cpu_hz * df) + n * compute.bits_full_model / (c.rate_bps * df))
                .fold(0.0, f64::max)
        })
        .collect();
    PartitionProblem {
        coeffs,
        d,
        cap: cap_from_kappa(d, cells.len(), kappa),
    }
}

/// AirComp: `c_j = E (max_i H V_0 / (F_i d) + Δf t_s / B)`.
pub fn build_problem_aircomp(
    cells: &[Vec<ClientLink>],
    d: usize,
    local_steps: usize,
    edge_rounds: usize,
    compute: &ComputeConfig,
    radio: &RadioConfig,
    kappa: f64,
) -> PartitionProblem {
    let (h, e, df) = (local_steps as f64, edge_rounds as f64, d as f64);
    let comm = radio.subcarrier_hz * radio.symbol_s / radio.bandwidth_hz;
    let coeffs = cells
        .iter()
        .map(|clients| {
            let slowest = clients.iter().map(|c| c.cpu_hz).fold(f64::INFINITY, f64::min);
            e * (h * compute.cycles_per_update_full / (slowest * df) + comm)
        })
        .collect();
    PartitionProblem {
        coeffs,
        d,
        cap: cap_from_kappa(d, cells.len(), kappa),
    }
}

impl PartitionProblem {
    fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(HistError::InvalidInput("no cells".into()));
        }
        if let Some(j) = self.coeffs.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(HistError::InvalidInput(format!(
                "cell {j} latency coefficient {} must be positive and finite",
                self.coeffs[j]
            )));
        }
        if self.cap.saturating_mul(self.coeffs.len()) < self.d {
            return Err(HistError::Infeasible {
                cap: self.cap,
                cells: self.coeffs.len(),
                d: self.d,
            });
        }
        Ok(())
    }

    pub fn objective(&self, sizes: &[usize]) -> f64 {
        self.coeffs
            .iter()
            .zip(sizes)
            .map(|(c, &w)| c * w as f64)
            .fold(0.0, f64::max)
    }

    /// Sizes differing by at most one, extra units to the lowest indices.
    pub fn uniform_sizes(&self) -> Vec<usize> {
        let n = self.coeffs.len();
        (0..n).map(|j| self.d / n + usize::from(j < self.d % n)).collect()
    }

    pub fn is_feasible(&self, sizes: &[usize]) -> bool {
        sizes.len() == self.coeffs.len() && sizes.iter().sum::<usize>() == self.d && sizes.iter().all(|&w| w <= self.cap)
    }
}

/// Exact integer optimum. The continuous relaxation is solved by bisection on
/// the makespan `t` in `sum_j min(cap, t / c_j) = d`; sizes are floored at the
/// lower bracket and the remaining units are added one at a time to the cell
/// whose resulting load is smallest (lowest index on ties).
pub fn solve_exact(problem: &PartitionProblem) -> Result<PartitionSolution> {
    problem.validate()?;
    let cap = problem.cap.min(problem.d);
    let d = problem.d as f64;
    let filled = |t: f64| -> f64 { problem.coeffs.iter().map(|c| (t / c).min(cap as f64)).sum() };

    let mut lo = 0.0;
    let mut hi = problem.coeffs.iter().fold(0.0, |m: f64, c| m.max(c * cap as f64));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if filled(mid) <= d {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut sizes: Vec<usize> = problem
        .coeffs
        .iter()
        .map(|c| ((lo / c).floor() as usize).min(cap))
        .collect();
    // lo satisfies filled(lo) <= d, so the floors never overshoot; guard anyway
    while sizes.iter().sum::<usize>() > problem.d {
        let j = (0..sizes.len())
            .filter(|&j| sizes[j] > 0)
            .max_by(|&a, &b| {
                (problem.coeffs[a] * sizes[a] as f64)
                    .total_cmp(&(problem.coeffs[b] * sizes[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("positive sum has a nonzero entry");
        sizes[j] -= 1;
    }
    let mut remaining = problem.d - sizes.iter().sum::<usize>();
    while remaining > 0 {
        let mut best: Option<(usize, f64)> = None;
        for (j, (&w, c)) in sizes.iter().zip(&problem.coeffs).enumerate() {
            if w >= cap {
                continue;
            }
            let load = c * (w + 1) as f64;
            if best.is_none_or(|(_, b)| load < b) {
                best = Some((j, load));
            }
        }
        let (j, _) = best.expect("feasibility guarantees spare capacity");
        sizes[j] += 1;
        remaining -= 1;
    }
    Ok(PartitionSolution {
        objective: problem.objective(&sizes),
        sizes,
    })
}

/// Exhaustive search over all integer compositions; validation oracle.
pub fn brute_force(problem: &PartitionProblem) -> Result<PartitionSolution> {
    let n = problem.coeffs.len();
    if n > 4 || problem.d > 40 {
        return Err(HistError::BruteForceGuard { cells: n, d: problem.d });
    }
    problem.validate()?;
    let cap = problem.cap.min(problem.d);
    let mut best: Option<PartitionSolution> = None;
    let mut sizes = vec![0; n];

    fn recurse(
        j: usize,
        remaining: usize,
        cap: usize,
        sizes: &mut Vec<usize>,
        problem: &PartitionProblem,
        best: &mut Option<PartitionSolution>,
    ) {
        if j + 1 == sizes.len() {
            if remaining > cap {
                return;
            }
            sizes[j] = remaining;
            let obj = problem.objective(sizes);
            if best.as_ref().is_none_or(|b| obj < b.objective) {
                *best = Some(PartitionSolution {
                    sizes: sizes.clone(),
                    objective: obj,
                });
            }
            return;
        }
        for w in 0..=remaining.min(cap) {
            sizes[j] = w;
            recurse(j + 1, remaining - w, cap, sizes, problem, best);
        }
    }

    recurse(0, problem.d, cap, &mut sizes, problem, &mut best);
    best.ok_or(HistError::Infeasible {
        cap: problem.cap,
        cells: n,
        d: problem.d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub cap: usize,
    pub total_capacity: usize,
    pub d: usize,
    pub uniform_sizes: Vec<usize>,
    pub uniform_objective: Option<f64>,
}

pub fn feasibility(problem: &PartitionProblem) -> FeasibilityReport {
    let uniform = problem.uniform_sizes();
    FeasibilityReport {
        feasible: problem.cap.saturating_mul(problem.coeffs.len()) >= problem.d,
        cap: problem.cap,
        total_capacity: problem.cap.saturating_mul(problem.coeffs.len()),
        d: problem.d,
        uniform_objective: problem.is_feasible(&uniform).then(|| problem.objective(&uniform)),
        uniform_sizes: uniform,
    }
}
