//! Cloud / edge / client topology with per-client compute and radio
//! resources, channel draws and empirical heterogeneity estimates.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};
use crate::model::{cell_loss_and_gradient, population_loss_and_gradient, DenseNet, ExampleBatch};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientResource {
    /// CPU frequency F_i in cycles/s.
    pub cpu_hz: f64,
    /// Uplink rate R_i in bits/s for the first global round.
    pub rate_bps: f64,
    /// Transmit power budget P_j in watts.
    pub tx_power: f64,
    pub cell_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    pub subcarrier_hz: f64,
    pub symbol_s: f64,
    /// Per-cell SNR `P_j / sigma_0^2` in dB.
    pub snr_db: Vec<f64>,
    pub antennas: usize,
}

impl RadioConfig {
    /// 5G NR numerology: 15 kHz subcarriers, 14 symbols per 1 ms slot.
    pub const NR_SUBCARRIER_HZ: f64 = 15e3;
    pub const NR_SYMBOL_S: f64 = 1e-3 / 14.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.subcarrier_hz > 0.0) || self.bandwidth_hz < self.subcarrier_hz {
            return Err(HistError::InvalidInput(format!(
                "need bandwidth {} >= subcarrier spacing {} > 0",
                self.bandwidth_hz, self.subcarrier_hz
            )));
        }
        if !(self.symbol_s > 0.0) || self.antennas == 0 {
            return Err(HistError::InvalidInput("symbol duration and antenna count must be positive".into()));
        }
        Ok(())
    }

    pub fn snr_linear(&self, cell: usize) -> f64 {
        db_to_linear(self.snr_db[cell])
    }

    pub fn with_uniform_snr(mut self, snr_db: f64) -> Self {
        self.snr_db.iter_mut().for_each(|s| *s = snr_db);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeConfig {
    /// V_0: CPU cycles for one mini-batch update of the full model.
    pub cycles_per_update_full: f64,
    /// L_0: bits to upload the full model.
    pub bits_full_model: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeterogeneityEstimates {
    pub delta1_sq: f64,
    pub delta2_sq: f64,
    pub sigma_sq: f64,
    pub smoothness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// One SIMO channel per client.
    pub h: Vec<Vec<Complex64>>,
    /// sigma_0^2 per receive dimension.
    pub noise_var: f64,
    pub antennas: usize,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `B log2(1 + SNR * gain)` in bits/s.
pub fn shannon_rate(bandwidth_hz: f64, snr_linear: f64, gain: f64) -> f64 {
    bandwidth_hz * (1.0 + snr_linear * gain).log2()
}

/// Draws `h ~ CN(0, I_M)`.
pub fn draw_channel(rng: &mut impl Rng, antennas: usize) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..antennas)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

pub fn channel_gain(h: &[Complex64]) -> f64 {
    h.iter().map(|c| c.norm_sqr()).sum()
}

/// Ranges and constants from which a deployment is drawn. Cells in the first
/// half (`2j < N`) use the `low` ranges, the rest the `high` ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub cells: usize,
    pub clients_per_cell: usize,
    pub cpu_ghz_low: (f64, f64),
    pub cpu_ghz_high: (f64, f64),
    pub snr_db_low: f64,
    pub snr_db_high: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_hz: f64,
    pub symbol_s: f64,
    pub antennas: usize,
    pub tx_power_w: f64,
    pub v0_cycles: f64,
    pub l0_bits: f64,
}

impl Default for ScenarioTemplate {
    fn default() -> Self {
        Self {
            cells: 4,
            clients_per_cell: 5,
            cpu_ghz_low: (1.0, 2.0),
            cpu_ghz_high: (2.0, 4.0),
            snr_db_low: 30.0,
            snr_db_high: 40.0,
            bandwidth_hz: 9e6,
            subcarrier_hz: RadioConfig::NR_SUBCARRIER_HZ,
            symbol_s: RadioConfig::NR_SYMBOL_S,
            antennas: 10,
            tx_power_w: 1.0,
            v0_cycles: 1e6,
            l0_bits: 32.0 * 238_510.0,
        }
    }
}

impl ScenarioTemplate {
    fn first_half(&self, cell: usize) -> bool {
        2 * cell < self.cells
    }

    fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo;
        if self.cells == 0 || self.clients_per_cell == 0 {
            return Err(HistError::InvalidInput("need at least one cell and one client per cell".into()));
        }
        if !range_ok(self.cpu_ghz_low) || !range_ok(self.cpu_ghz_high) {
            return Err(HistError::InvalidInput("CPU ranges must be positive and ordered".into()));
        }
        if !(self.tx_power_w > 0.0 && self.v0_cycles > 0.0 && self.l0_bits > 0.0) {
            return Err(HistError::InvalidInput("power, V_0 and L_0 must be positive".into()));
        }
        Ok(())
    }
}

/// Drawn resources for every client plus the seed that keys later per-round
/// channel draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub clients: Vec<Vec<ClientResource>>,
    pub radio: RadioConfig,
    pub compute: ComputeConfig,
    pub seed: u64,
}

/// Draws CPU frequencies uniformly from each cell group's range and computes
/// first-round rates from a fresh channel draw at the group's SNR.
pub fn draw_resources(template: &ScenarioTemplate, seed: u64) -> Result<Deployment> {
    template.validate()?;
    let radio = RadioConfig {
        bandwidth_hz: template.bandwidth_hz,
        subcarrier_hz: template.subcarrier_hz,
        symbol_s: template.symbol_s,
        snr_db: (0..template.cells)
            .map(|j| if template.first_half(j) { template.snr_db_low } else { template.snr_db_high })
            .collect(),
        antennas: template.antennas,
    };
    radio.validate()?;
    let compute = ComputeConfig {
        cycles_per_update_full: template.v0_cycles,
        bits_full_model: template.l0_bits,
    };
    let mut deployment = Deployment {
        clients: Vec::with_capacity(template.cells),
        radio,
        compute,
        seed,
    };
    for j in 0..template.cells {
        let (lo, hi) = if template.first_half(j) { template.cpu_ghz_low } else { template.cpu_ghz_high };
        let cell = (0..template.clients_per_cell)
            .map(|i| {
                let mut rng = seed::rng_for(seed, &[seed::tag::CPU, j as u64, i as u64]);
                let ghz = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                ClientResource {
                    cpu_hz: ghz * 1e9,
                    rate_bps: 0.0,
                    tx_power: template.tx_power_w,
                    cell_id: j,
                }
            })
            .collect();
        deployment.clients.push(cell);
    }
    let rates = deployment.rates_for_round(0);
    for (cell, cell_rates) in deployment.clients.iter_mut().zip(rates) {
        for (c, r) in cell.iter_mut().zip(cell_rates) {
            c.rate_bps = r;
        }
    }
    Ok(deployment)
}

impl Deployment {
    pub fn cells(&self) -> usize {
        self.clients.len()
    }

    pub fn clients_per_cell(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    /// Uplink rates `R_i^t` for global round `t`, from the channel `h_i^t`.
    pub fn rates_for_round(&self, round: usize) -> Vec<Vec<f64>> {
        self.clients
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                let snr = self.radio.snr_linear(j);
                (0..cell.len())
                    .map(|i| {
                        let mut rng =
                            seed::rng_for(self.seed, &[seed::tag::CHANNEL, round as u64, j as u64, i as u64]);
                        let h = draw_channel(&mut rng, self.radio.antennas);
                        shannon_rate(self.radio.bandwidth_hz, snr, channel_gain(&h))
                    })
                    .collect()
            })
            .collect()
    }

    /// Channels `h_i^{t,e}` for the AirComp uplink of one cell.
    pub fn aircomp_channels(&self, round: usize, edge_round: usize, cell: usize) -> ChannelRealization {
        let h = (0..self.clients[cell].len())
            .map(|i| {
                let mut rng = seed::rng_for(
                    self.seed,
                    &[seed::tag::AIRCOMP_CHANNEL, round as u64, edge_round as u64, cell as u64, i as u64],
                );
                draw_channel(&mut rng, self.radio.antennas)
            })
            .collect();
        let tx_power = self.clients[cell].first().map_or(1.0, |c| c.tx_power);
        ChannelRealization {
            h,
            noise_var: tx_power / self.radio.snr_linear(cell),
            antennas: self.radio.antennas,
        }
    }
}

/// Everything a training run needs: resources, per-client shards and a
/// held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub deployment: Deployment,
    pub shards: Vec<Vec<ExampleBatch>>,
    pub test: ExampleBatch,
    pub het: Option<HeterogeneityEstimates>,
}

impl Scenario {
    pub fn new(deployment: Deployment, shards: Vec<Vec<ExampleBatch>>, test: ExampleBatch) -> Result<Self> {
        if shards.len() != deployment.cells() {
            return Err(HistError::InvalidInput(format!(
                "{} shard groups for {} cells",
                shards.len(),
                deployment.cells()
            )));
        }
        for (j, (cell, res)) in shards.iter().zip(&deployment.clients).enumerate() {
            if cell.is_empty() {
                return Err(HistError::InvalidInput(format!("cell {j} has no clients")));
            }
            if cell.len() != res.len() {
                return Err(HistError::InvalidInput(format!(
                    "cell {j}: {} shards for {} clients",
                    cell.len(),
                    res.len()
                )));
            }
            if let Some(i) = cell.iter().position(|s| s.is_empty() || s.dim() != test.dim()) {
                return Err(HistError::InvalidInput(format!("cell {j} client {i} shard is empty or mis-sized")));
            }
            if res.iter().any(|c| !(c.cpu_hz > 0.0 && c.rate_bps > 0.0 && c.tx_power > 0.0)) {
                return Err(HistError::InvalidInput(format!("cell {j} has a non-positive resource")));
            }
        }
        Ok(Self {
            deployment,
            shards,
            test,
            het: None,
        })
    }

    pub fn cells(&self) -> usize {
        self.shards.len()
    }

    pub fn clients_per_cell(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    pub fn total_clients(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    /// Union of all client shards, cell-major.
    pub fn training_union(&self) -> Result<ExampleBatch> {
        let mut it = self.shards.iter().flatten();
        let first = it.next().ok_or(HistError::EmptyDataset)?.clone();
        it.try_fold(first, |acc, s| acc.concat(s))
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Empirical stand-ins for the heterogeneity constants, maximized over probe
/// points. Probe 0 is `net`; probe `k` is `net` after `k` full-batch gradient
/// steps on the global loss.
///
/// * `delta1_sq`: `(1/N) sum_j ||grad f_j - grad f||^2`
/// * `delta2_sq`: `max_j (1/n_j) sum_i ||grad F_i - grad f_j||^2`
/// * `sigma_sq`: `max_i` mean over sampled minibatches of `||g - grad F_i||^2`
/// * `smoothness`: `||grad f(x) - grad f(y)|| / ||x - y||` for a small random `y - x`
pub fn estimate_heterogeneity(
    scenario: &Scenario,
    net: &DenseNet,
    probes: usize,
    batch_size: usize,
    seed: u64,
) -> Result<HeterogeneityEstimates> {
    if probes == 0 || batch_size == 0 {
        return Err(HistError::InvalidInput("probes and batch size must be >= 1".into()));
    }
    const PROBE_STEP: f64 = 0.1;
    const MINIBATCH_SAMPLES: usize = 4;
    let shards = &scenario.shards;
    let n_cells = shards.len() as f64;
    let mut est = HeterogeneityEstimates::default();
    let mut point = net.clone();
    for p in 0..probes {
        let mut rng = seed::rng_for(seed, &[seed::tag::PROBE, p as u64]);
        let (_, global) = population_loss_and_gradient(&point, shards)?;
        let mut d1 = 0.0;
        for cell in shards {
            let (_, gj) = cell_loss_and_gradient(&point, cell)?;
            d1 += dist_sq(&gj.values, &global.values) / n_cells;
            let mut d2 = 0.0;
            for shard in cell {
                let gi = point.backward(shard)?;
                d2 += dist_sq(&gi.values, &gj.values) / cell.len() as f64;
                let b = batch_size.min(shard.len());
                let mut var = 0.0;
                for _ in 0..MINIBATCH_SAMPLES {
                    let idx = rand::seq::index::sample(&mut rng, shard.len(), b).into_vec();
                    let g = point.backward(&shard.select(&idx))?;
                    var += dist_sq(&g.values, &gi.values) / MINIBATCH_SAMPLES as f64;
                }
                est.sigma_sq = est.sigma_sq.max(var);
            }
            est.delta2_sq = est.delta2_sq.max(d2);
        }
        est.delta1_sq = est.delta1_sq.max(d1);

        let scale = 1e-4 * (1.0 + point.params().iter().map(|v| v * v).sum::<f64>().sqrt());
        let shifted: Vec<f64> = point
            .params()
            .iter()
            .map(|&v| v + scale * rng.random_range(-1.0..1.0))
            .collect();
        let shifted = point.with_params(shifted)?;
        let (_, g_shift) = population_loss_and_gradient(&shifted, shards)?;
        let dx = dist_sq(shifted.params(), point.params()).sqrt();
        if dx > 0.0 {
            est.smoothness = est.smoothness.max(dist_sq(&g_shift.values, &global.values).sqrt() / dx);
        }

        let next: Vec<f64> = point
            .params()
            .iter()
            .zip(&global.values)
            .map(|(x, g)| x - PROBE_STEP * g)
            .collect();
        point = point.with_params(next)?;
    }
    Ok(est)
}
