//! Per-edge-round and per-global-round latency under OMA (TDMA) and AirComp
//! uplinks. Downlink and server-side compute are free.

use serde::{Deserialize, Serialize};

use crate::scenario::{ComputeConfig, RadioConfig};

/// Resources of one client as seen by the latency model for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientLink {
    pub cpu_hz: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    pub compute_s: f64,
    pub comm_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Edge-round latency per cell.
    pub per_cell_s: Vec<f64>,
    /// E times the slowest cell.
    pub global_s: f64,
    /// Split of the global latency for the bottleneck cell's slowest client.
    pub breakdown: Breakdown,
}

fn fraction(size: usize, d: usize) -> f64 {
    size as f64 / d as f64
}

/// Slowest client of a TDMA cell: `max_i H w V_0 / (F_i d) + n_j w L_0 / (R_i d)`.
pub fn oma_cell_breakdown(size: usize, d: usize, clients: &[ClientLink], local_steps: usize, compute: &ComputeConfig) -> Breakdown {
    if size == 0 {
        return Breakdown::default();
    }
    let frac = fraction(size, d);
    let n = clients.len() as f64;
    clients
        .iter()
        .map(|c| Breakdown {
            compute_s: local_steps as f64 * frac * compute.cycles_per_update_full / c.cpu_hz,
            comm_s: n * frac * compute.bits_full_model / c.rate_bps,
        })
        .fold(Breakdown::default(), |best, b| {
            if b.compute_s + b.comm_s > best.compute_s + best.comm_s {
                b
            } else {
                best
            }
        })
}

pub fn oma_cell_latency(size: usize, d: usize, clients: &[ClientLink], local_steps: usize, compute: &ComputeConfig) -> f64 {
    let b = oma_cell_breakdown(size, d, clients, local_steps, compute);
    b.compute_s + b.comm_s
}

/// AirComp uplink time: one OFDM symbol per `B / Δf` elements.
pub fn aircomp_comm_latency(size: usize, radio: &RadioConfig) -> f64 {
    size as f64 * radio.subcarrier_hz * radio.symbol_s / radio.bandwidth_hz
}

/// `max_i H w V_0 / (F_i d) + w Δf t_s / B`; independent of the client count.
pub fn aircomp_cell_breakdown(
    size: usize,
    d: usize,
    clients: &[ClientLink],
    local_steps: usize,
    compute: &ComputeConfig,
    radio: &RadioConfig,
) -> Breakdown {
    if size == 0 {
        return Breakdown::default();
    }
    let frac = fraction(size, d);
    let slowest = clients.iter().map(|c| c.cpu_hz).fold(f64::INFINITY, f64::min);
    Breakdown {
        compute_s: local_steps as f64 * frac * compute.cycles_per_update_full / slowest,
        comm_s: aircomp_comm_latency(size, radio),
    }
}

pub fn aircomp_cell_latency(
    size: usize,
    d: usize,
    clients: &[ClientLink],
    local_steps: usize,
    compute: &ComputeConfig,
    radio: &RadioConfig,
) -> f64 {
    let b = aircomp_cell_breakdown(size, d, clients, local_steps, compute, radio);
    b.compute_s + b.comm_s
}

/// `E * max_j latency_j`.
pub fn global_round_latency(per_cell_s: &[f64], edge_rounds: usize) -> f64 {
    edge_rounds as f64 * per_cell_s.iter().copied().fold(0.0, f64::max)
}

pub fn report(breakdowns: &[Breakdown], edge_rounds: usize) -> LatencyReport {
    let per_cell_s: Vec<f64> = breakdowns.iter().map(|b| b.compute_s + b.comm_s).collect();
    let global_s = global_round_latency(&per_cell_s, edge_rounds);
    let e = edge_rounds as f64;
    let breakdown = breakdowns
        .iter()
        .zip(&per_cell_s)
        .fold((f64::NEG_INFINITY, Breakdown::default()), |(best, bb), (b, &l)| {
            if l > best {
                (l, *b)
            } else {
                (best, bb)
            }
        })
        .1;
    LatencyReport {
        per_cell_s,
        global_s,
        breakdown: Breakdown {
            compute_s: e * breakdown.compute_s,
            comm_s: e * breakdown.comm_s,
        },
    }
}
