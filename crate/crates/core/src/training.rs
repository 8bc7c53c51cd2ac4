//! Hierarchical training loops: independent submodel training (each cell owns
//! a disjoint slice of the model per global round, cloud sums the slices) and
//! the hierarchical FedAvg baseline (every cell trains the full model, cloud
//! averages).
//!
//! One global round: the cloud draws a partition, each edge server starts from
//! its masked slice of the global model, and for each of `E` edge rounds its
//! clients run `H` masked SGD steps from the edge model. The edge server then
//! steps along the client-average of the accumulated masked gradients, which
//! is algebraically the average of the client models. With AirComp that
//! average arrives over the air with receiver noise.
//!
//! Clients run in parallel; every reduction is in ascending cell / client
//! order and every random stream is keyed by `(seed, round, edge round,
//! entity)`, so results do not depend on scheduling.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aircomp::{self, Beamformer};
use crate::error::{HistError, Result};
use crate::latency::{self, Breakdown, ClientLink};
use crate::masking::{self, Mask, PartitionPlan};
use crate::model::{population_loss_and_gradient, DenseNet, ExampleBatch};
use crate::optimizer;
use crate::scenario::Scenario;
use crate::seed;
use crate::trace::{TraceRow, TrainingTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    /// H: local SGD steps per edge round.
    pub local_steps: usize,
    /// E: edge rounds per global round.
    pub edge_rounds: usize,
    /// T: global rounds.
    pub global_rounds: usize,
    pub batch_size: usize,
}

impl HyperParams {
    /// A zero step size is accepted so that conservation can be checked.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(HistError::InvalidInput(format!("step size must be finite and >= 0, got {}", self.gamma)));
        }
        if self.local_steps == 0 || self.edge_rounds == 0 || self.global_rounds == 0 || self.batch_size == 0 {
            return Err(HistError::InvalidInput("H, E, T and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hist,
    HFedAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionSource {
    /// Every coordinate goes to a uniformly random cell.
    Uniform,
    /// Hidden neurons are dealt evenly across cells.
    Neuron,
    /// Mask sizes minimize the round's latency under a per-cell cap of
    /// `floor(d κ / N)`; coordinates are then drawn at random.
    Optimized { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Exact client average over an OMA uplink.
    Ideal,
    /// Over-the-air average with an optimized receive beamformer.
    AirComp { restarts: usize, iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Keep the global model after every round and the plan of every round.
    pub keep_models: bool,
    /// Record the virtual global model after every edge round.
    pub virtual_diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualPoint {
    pub round: usize,
    pub edge_round: usize,
    pub grad_norm_sq: f64,
    pub params: Vec<f64>,
    pub edge_params: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: TrainingTrace,
    /// Global parameters at `t = 0 ..= T` when `keep_models` is set.
    pub global_models: Vec<Vec<f64>>,
    pub plans: Vec<PartitionPlan>,
    pub virtual_points: Vec<VirtualPoint>,
    pub final_model: DenseNet,
}

/// Identifies a client's random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientKey {
    pub cell: usize,
    pub client: usize,
    pub round: usize,
    pub edge_round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub model: DenseNet,
    /// Sum over local steps of the masked stochastic gradients.
    pub delta: Vec<f64>,
}

/// Mini-batch indices for a client's global step `step`, or `None` when the
/// batch covers the whole shard. Each client reads an endless stream built
/// from per-epoch permutations; step `s` takes positions `s B .. (s + 1) B`.
pub fn minibatch_indices(len: usize, batch_size: usize, seed: u64, cell: usize, client: usize, step: usize) -> Option<Vec<usize>> {
    if batch_size >= len {
        return None;
    }
    let start = step * batch_size;
    let mut out = Vec::with_capacity(batch_size);
    let mut perm: Option<(usize, Vec<usize>)> = None;
    for p in start..start + batch_size {
        let epoch = p / len;
        if perm.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut idx: Vec<usize> = (0..len).collect();
            let mut rng = seed::rng_for(seed, &[seed::tag::BATCH, cell as u64, client as u64, epoch as u64]);
            idx.shuffle(&mut rng);
            perm = Some((epoch, idx));
        }
        out.push(perm.as_ref().expect("set above").1[p % len]);
    }
    Some(out)
}

/// `H` masked SGD steps from the edge model.
pub fn local_update(edge: &DenseNet, mask: &Mask, shard: &ExampleBatch, hp: &HyperParams, seed: u64, key: ClientKey) -> Result<ClientUpdate> {
    if mask.len() != edge.d() {
        return Err(HistError::Dimension(format!("mask length {} for {} parameters", mask.len(), edge.d())));
    }
    let mut model = edge.clone();
    let mut delta = vec![0.0; edge.d()];
    for h in 0..hp.local_steps {
        let step = (key.round * hp.edge_rounds + key.edge_round) * hp.local_steps + h;
        let (_, g) = match minibatch_indices(shard.len(), hp.batch_size, seed, key.cell, key.client, step) {
            Some(idx) => model.loss_and_gradient(&shard.select(&idx))?,
            None => model.loss_and_gradient(shard)?,
        };
        let params = model.params_mut();
        for (k, &on) in mask.bits().iter().enumerate() {
            if on {
                params[k] -= hp.gamma * g.values[k];
                delta[k] += g.values[k];
            }
        }
    }
    Ok(ClientUpdate { model, delta })
}

/// Per-global-round uplink volumes in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommAccounting {
    /// Each client of cell `j`: `E (ω_j / d) L_0 / 8`.
    pub client_uplink_bytes: Vec<f64>,
    /// Edge server `j` to cloud: `(ω_j / d) L_0 / 8`.
    pub edge_to_cloud_bytes: Vec<f64>,
}

impl CommAccounting {
    /// Average over all clients.
    pub fn mean_client_bytes(&self, clients_per_cell: &[usize]) -> f64 {
        let total: usize = clients_per_cell.iter().sum();
        let sum: f64 = self
            .client_uplink_bytes
            .iter()
            .zip(clients_per_cell)
            .map(|(b, &n)| b * n as f64)
            .sum();
        sum / total as f64
    }
}

pub fn comm_accounting(sizes: &[usize], d: usize, bits_full_model: f64, edge_rounds: usize) -> CommAccounting {
    let per_mask = |s: usize| s as f64 / d as f64 * bits_full_model / 8.0;
    CommAccounting {
        client_uplink_bytes: sizes.iter().map(|&s| edge_rounds as f64 * per_mask(s)).collect(),
        edge_to_cloud_bytes: sizes.iter().map(|&s| per_mask(s)).collect(),
    }
}

/// Largest step size allowed by the convergence analysis:
/// `min{1/(45 sqrt(N) E H L), Ñ/(N H L), 1/(N H² L), 1/(N (N+1) E² H² L)}`
/// with `Ñ = sum_j 1/n_j`.
pub fn max_step_size(cells: usize, edge_rounds: usize, local_steps: usize, clients_per_cell: &[usize], smoothness: f64) -> f64 {
    let (n, e, h, l) = (cells as f64, edge_rounds as f64, local_steps as f64, smoothness);
    let n_tilde = harmonic_cells(clients_per_cell);
    [
        1.0 / (45.0 * n.sqrt() * e * h * l),
        n_tilde / (n * h * l),
        1.0 / (n * h * h * l),
        1.0 / (n * (n + 1.0) * e * e * h * h * l),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// `Ñ = sum_j 1/n_j`.
pub fn harmonic_cells(clients_per_cell: &[usize]) -> f64 {
    clients_per_cell.iter().map(|&n| 1.0 / n as f64).sum()
}

/// `(T E H Ñ)^{-1/2}`.
pub fn horizon_step_size(global_rounds: usize, edge_rounds: usize, local_steps: usize, clients_per_cell: &[usize]) -> f64 {
    (global_rounds as f64 * edge_rounds as f64 * local_steps as f64 * harmonic_cells(clients_per_cell)).powf(-0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeCheck {
    pub bound: f64,
    pub horizon: f64,
    /// Whether the horizon step satisfies the bound.
    pub feasible: bool,
}

pub fn check_step_size(cells: usize, hp: &HyperParams, clients_per_cell: &[usize], smoothness: f64) -> StepSizeCheck {
    let bound = max_step_size(cells, hp.edge_rounds, hp.local_steps, clients_per_cell, smoothness);
    let horizon = horizon_step_size(hp.global_rounds, hp.edge_rounds, hp.local_steps, clients_per_cell);
    StepSizeCheck {
        bound,
        horizon,
        feasible: horizon <= bound,
    }
}

pub fn run_hist(
    scenario: &Scenario,
    net0: &DenseNet,
    hp: &HyperParams,
    partition: PartitionSource,
    aggregation: Aggregation,
    seed: u64,
) -> Result<TrainingTrace> {
    run(Algorithm::Hist, scenario, net0, hp, partition, aggregation, seed, RunOptions::default()).map(|o| o.trace)
}

pub fn run_hfedavg(scenario: &Scenario, net0: &DenseNet, hp: &HyperParams, aggregation: Aggregation, seed: u64) -> Result<TrainingTrace> {
    run(
        Algorithm::HFedAvg,
        scenario,
        net0,
        hp,
        PartitionSource::Uniform,
        aggregation,
        seed,
        RunOptions::default(),
    )
    .map(|o| o.trace)
}

fn check_inputs(scenario: &Scenario, net0: &DenseNet, hp: &HyperParams) -> Result<()> {
    hp.validate()?;
    if scenario.test.dim() != net0.input_dim() {
        return Err(HistError::Dimension(format!(
            "data dimension {} but network input {}",
            scenario.test.dim(),
            net0.input_dim()
        )));
    }
    if let Some(s) = scenario.shards.iter().flatten().find(|s| s.dim() != net0.input_dim()) {
        return Err(HistError::Dimension(format!("shard dimension {} but network input {}", s.dim(), net0.input_dim())));
    }
    Ok(())
}

fn links_for_round(scenario: &Scenario, round: usize) -> Vec<Vec<ClientLink>> {
    let rates = scenario.deployment.rates_for_round(round);
    scenario
        .deployment
        .clients
        .iter()
        .zip(rates)
        .map(|(cell, r)| {
            cell.iter()
                .zip(r)
                .map(|(c, rate_bps)| ClientLink { cpu_hz: c.cpu_hz, rate_bps })
                .collect()
        })
        .collect()
}

/// The cells' masks for global round `round`.
#[allow(clippy::too_many_arguments)]
pub fn plan_for_round(
    algorithm: Algorithm,
    partition: PartitionSource,
    aggregation: Aggregation,
    scenario: &Scenario,
    net: &DenseNet,
    hp: &HyperParams,
    round: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    let (cells, d) = (scenario.cells(), net.d());
    let mask_seed = seed::derive_seed(seed, &[seed::tag::MASK, round as u64]);
    let plan = match (algorithm, partition) {
        (Algorithm::HFedAvg, _) => PartitionPlan::from_masks(round, (0..cells).map(|j| Mask::full(j, d)).collect()),
        (Algorithm::Hist, PartitionSource::Uniform) => masking::generate_uniform_partition(d, cells, mask_seed)?,
        (Algorithm::Hist, PartitionSource::Neuron) => masking::generate_neuron_partition(net.layers(), cells, mask_seed)?,
        (Algorithm::Hist, PartitionSource::Optimized { kappa }) => {
            let links = links_for_round(scenario, round);
            let dep = &scenario.deployment;
            let problem = match aggregation {
                Aggregation::Ideal => optimizer::build_problem_oma(&links, d, hp.local_steps, hp.edge_rounds, &dep.compute, kappa),
                Aggregation::AirComp { .. } => optimizer::build_problem_aircomp(
                    &links,
                    d,
                    hp.local_steps,
                    hp.edge_rounds,
                    &dep.compute,
                    &dep.radio,
                    kappa,
                ),
            };
            let sol = optimizer::solve_exact(&problem)?;
            masking::generate_sized_partition(d, &sol.sizes, mask_seed)?
        }
    };
    Ok(plan.with_round(round))
}

/// Cloud combination of edge models: the sum of their masked slices for
/// independent submodels, the plain average for FedAvg.
fn combine(algorithm: Algorithm, edges: &[Vec<f64>], masks: &[Mask]) -> Vec<f64> {
    let mut acc = edges[0].clone();
    masks[0].zero_outside(&mut acc);
    for (edge, mask) in edges[1..].iter().zip(&masks[1..]) {
        for ((a, v), &on) in acc.iter_mut().zip(edge).zip(mask.bits()) {
            if on {
                *a += v;
            }
        }
    }
    if algorithm == Algorithm::HFedAvg {
        let n = edges.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    acc
}

struct EdgeResult {
    params: Vec<f64>,
    mse: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn edge_round(
    scenario: &Scenario,
    hp: &HyperParams,
    aggregation: Aggregation,
    seed: u64,
    round: usize,
    e: usize,
    cell: usize,
    edge: &DenseNet,
    mask: &Mask,
) -> Result<EdgeResult> {
    if mask.size() == 0 {
        return Ok(EdgeResult {
            params: edge.params().to_vec(),
            mse: None,
        });
    }
    let deltas: Vec<Vec<f64>> = scenario.shards[cell]
        .par_iter()
        .enumerate()
        .map(|(client, shard)| {
            let key = ClientKey {
                cell,
                client,
                round,
                edge_round: e,
            };
            local_update(edge, mask, shard, hp, seed, key).map(|u| u.delta)
        })
        .collect::<Result<_>>()?;
    let (estimate, mse) = match aggregation {
        Aggregation::Ideal => (aircomp::client_mean(&deltas), None),
        Aggregation::AirComp { restarts, iters } => {
            let ch = scenario.deployment.aircomp_channels(round, e, cell);
            let path = [round as u64, e as u64, cell as u64];
            let bf_seed = seed::derive_seed(seed, &[seed::tag::BEAMFORM, path[0], path[1], path[2]]);
            let best = aircomp::optimize_beamformer(&ch.h, restarts, iters, bf_seed)?;
            let power = scenario.deployment.clients[cell][0].tx_power;
            let bf = Beamformer::new(&best.a, &ch.h, power)?;
            let mut rng = seed::rng_for(seed, &[seed::tag::AIRCOMP_NOISE, path[0], path[1], path[2]]);
            let (est, stats) = aircomp::aggregate_aircomp(&deltas, &ch.h, &bf, power, ch.noise_var, mask, &mut rng)?;
            (est, Some(stats.mse_per_element))
        }
    };
    Ok(EdgeResult {
        params: aircomp::edge_update_aircomp(edge.params(), &estimate, hp.gamma),
        mse,
    })
}

struct Evaluation {
    acc: f64,
    loss: f64,
    grad_norm_sq: f64,
    weight_norm_sq: f64,
}

fn evaluate(net: &DenseNet, scenario: &Scenario) -> Result<Evaluation> {
    let (loss, grad) = population_loss_and_gradient(net, &scenario.shards)?;
    Ok(Evaluation {
        // Regression tasks have no accuracy; the column stays at zero.
        acc: match scenario.test.labels() {
            Some(_) => net.accuracy(&scenario.test)?,
            None => 0.0,
        },
        loss,
        grad_norm_sq: grad.norm_sq(),
        weight_norm_sq: net.params().iter().map(|x| x * x).sum(),
    })
}

/// Runs either algorithm and returns the trace plus optional diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn run(
    algorithm: Algorithm,
    scenario: &Scenario,
    net0: &DenseNet,
    hp: &HyperParams,
    partition: PartitionSource,
    aggregation: Aggregation,
    seed: u64,
    opts: RunOptions,
) -> Result<RunOutput> {
    check_inputs(scenario, net0, hp)?;
    let cells = scenario.cells();
    let clients_per_cell = scenario.clients_per_cell();
    let dep = &scenario.deployment;
    let d = net0.d();

    let mut global = net0.clone();
    let mut trace = TrainingTrace::new(format!("{algorithm:?}").to_lowercase());
    let mut out = RunOutput {
        trace: TrainingTrace::new(""),
        global_models: Vec::new(),
        plans: Vec::new(),
        virtual_points: Vec::new(),
        final_model: net0.clone(),
    };
    let ev = evaluate(&global, scenario)?;
    trace.rows.push(TraceRow {
        t: 0,
        acc: ev.acc,
        loss: ev.loss,
        bytes_per_client: 0.0,
        cum_latency_s: 0.0,
        grad_norm_sq: ev.grad_norm_sq,
        weight_norm_sq: ev.weight_norm_sq,
        compute_s: 0.0,
        comm_s: 0.0,
        aircomp_mse: 0.0,
        sizes: vec![0; cells],
    });
    if opts.keep_models {
        out.global_models.push(global.params().to_vec());
    }
    let (mut bytes, mut latency_s, mut compute_s, mut comm_s) = (0.0, 0.0, 0.0, 0.0);

    for t in 0..hp.global_rounds {
        let plan = plan_for_round(algorithm, partition, aggregation, scenario, &global, hp, t, seed)?;
        if plan.cells() != cells || plan.d() != d {
            return Err(HistError::InvalidPlan(format!(
                "plan has {} cells over {} parameters, expected {cells} over {d}",
                plan.cells(),
                plan.d()
            )));
        }
        let mut edges: Vec<DenseNet> = plan
            .masks
            .iter()
            .map(|m| global.with_params(m.apply(global.params())))
            .collect::<Result<_>>()?;
        let (mut mse_sum, mut mse_count) = (0.0, 0usize);
        for e in 0..hp.edge_rounds {
            let results: Vec<EdgeResult> = (0..cells)
                .into_par_iter()
                .map(|j| edge_round(scenario, hp, aggregation, seed, t, e, j, &edges[j], &plan.masks[j]))
                .collect::<Result<_>>()?;
            for (edge, r) in edges.iter_mut().zip(results) {
                if let Some(m) = r.mse {
                    mse_sum += m;
                    mse_count += 1;
                }
                *edge = edge.with_params(r.params)?;
            }
            if opts.virtual_diagnostics {
                let edge_params: Vec<Vec<f64>> = edges.iter().map(|x| x.params().to_vec()).collect();
                let virt = global.with_params(combine(algorithm, &edge_params, &plan.masks))?;
                let (_, g) = population_loss_and_gradient(&virt, &scenario.shards)?;
                out.virtual_points.push(VirtualPoint {
                    round: t,
                    edge_round: e,
                    grad_norm_sq: g.norm_sq(),
                    params: virt.params().to_vec(),
                    edge_params,
                });
            }
        }
        let edge_params: Vec<Vec<f64>> = edges.iter().map(|x| x.params().to_vec()).collect();
        global = global.with_params(combine(algorithm, &edge_params, &plan.masks))?;

        let links = links_for_round(scenario, t);
        let breakdowns: Vec<Breakdown> = plan
            .sizes
            .iter()
            .zip(&links)
            .map(|(&s, l)| match aggregation {
                Aggregation::Ideal => latency::oma_cell_breakdown(s, d, l, hp.local_steps, &dep.compute),
                Aggregation::AirComp { .. } => {
                    latency::aircomp_cell_breakdown(s, d, l, hp.local_steps, &dep.compute, &dep.radio)
                }
            })
            .collect();
        let rep = latency::report(&breakdowns, hp.edge_rounds);
        latency_s += rep.global_s;
        compute_s += rep.breakdown.compute_s;
        comm_s += rep.breakdown.comm_s;
        bytes += comm_accounting(&plan.sizes, d, dep.compute.bits_full_model, hp.edge_rounds).mean_client_bytes(&clients_per_cell);

        let ev = evaluate(&global, scenario)?;
        trace.rows.push(TraceRow {
            t: t + 1,
            acc: ev.acc,
            loss: ev.loss,
            bytes_per_client: bytes,
            cum_latency_s: latency_s,
            grad_norm_sq: ev.grad_norm_sq,
            weight_norm_sq: ev.weight_norm_sq,
            compute_s,
            comm_s,
            aircomp_mse: if mse_count > 0 { mse_sum / mse_count as f64 } else { 0.0 },
            sizes: plan.sizes.clone(),
        });
        if opts.keep_models {
            out.global_models.push(global.params().to_vec());
            out.plans.push(plan);
        }
    }
    out.trace = trace;
    out.final_model = global;
    Ok(out)
}
