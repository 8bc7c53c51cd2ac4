//! Experiment configuration and the commands behind the `hist` binary.
//!
//! Configs are TOML. Every table and key is optional; defaults describe a
//! 4-cell, 20-client desk-scale experiment on a synthetic 10-class mixture.
//!
//! ```toml
//! seed = 7
//!
//! [scenario]
//! cells = 4
//! clients_per_cell = 5
//! cpu_ghz_low = [1.0, 2.0]     # first half of the cells
//! cpu_ghz_high = [2.0, 4.0]    # second half
//! snr_db_low = 30.0
//! snr_db_high = 40.0
//! bandwidth_mhz = 9.0
//! antennas = 10
//! tx_power_w = 1.0
//! v0_cycles = 1e6
//! # l0_bits defaults to 32 bits per parameter
//!
//! [data]
//! classes = 10
//! dim = 40
//! per_class = 400
//! test_per_class = 500
//! separation = 4.0
//! regime = "fully_noniid"      # or "cell_iid_client_noniid"
//! labels_per_unit = 2
//! # IDX files replace the synthetic mixture when all four are given:
//! # train_images, train_labels, test_images, test_labels
//!
//! [model]
//! hidden = [100]
//!
//! [training]
//! algorithm = "hist"           # or "hfedavg"
//! aggregation = "ideal"        # or "aircomp"
//! partition = "neuron"         # or "uniform", "optimized"
//! gamma = 0.02
//! local_steps = 5
//! edge_rounds = 2
//! global_rounds = 60
//! batch_size = 16
//! kappa = 1.5
//! beamform_restarts = 4
//! beamform_iters = 300
//! # snr_db = 10.0             # overrides every cell's SNR
//! # sweep_cells = [2, 4]       # one trace per cell count
//!
//! # [problem]                  # explicit instance for `optimize`
//! # coeffs = [7.0, 3.0]
//! # d = 10
//! # cap = 10
//! ```

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::aircomp::{self, BeamformingResult};
use crate::data::{self, DataRegime, MixtureSpec};
use crate::error::{HistError, Result};
use crate::latency::ClientLink;
use crate::model::{mlp_layers, DenseNet, ExampleBatch};
use crate::optimizer::{self, FeasibilityReport, PartitionProblem, PartitionSolution};
use crate::scenario::{self, RadioConfig, Scenario, ScenarioTemplate};
use crate::seed;
use crate::trace::{self, ReportRow, TrainingTrace};
use crate::training::{self, Aggregation, Algorithm, HyperParams, PartitionSource, RunOptions};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub problem: Option<PartitionProblem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub cells: usize,
    pub clients_per_cell: usize,
    pub cpu_ghz_low: (f64, f64),
    pub cpu_ghz_high: (f64, f64),
    pub snr_db_low: f64,
    pub snr_db_high: f64,
    pub bandwidth_mhz: f64,
    pub antennas: usize,
    pub tx_power_w: f64,
    pub v0_cycles: f64,
    pub l0_bits: Option<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let t = ScenarioTemplate::default();
        Self {
            cells: t.cells,
            clients_per_cell: t.clients_per_cell,
            cpu_ghz_low: t.cpu_ghz_low,
            cpu_ghz_high: t.cpu_ghz_high,
            snr_db_low: t.snr_db_low,
            snr_db_high: t.snr_db_high,
            bandwidth_mhz: t.bandwidth_hz / 1e6,
            antennas: t.antennas,
            tx_power_w: t.tx_power_w,
            v0_cycles: t.v0_cycles,
            l0_bits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub regime: DataRegime,
    pub labels_per_unit: usize,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 40,
            per_class: 400,
            test_per_class: 500,
            separation: 4.0,
            regime: DataRegime::FullyNoniid,
            labels_per_unit: 2,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![100] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    Ideal,
    AirComp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Uniform,
    Neuron,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub algorithm: Algorithm,
    pub aggregation: AggregationKind,
    pub partition: PartitionKind,
    pub gamma: f64,
    pub local_steps: usize,
    pub edge_rounds: usize,
    pub global_rounds: usize,
    pub batch_size: usize,
    pub kappa: f64,
    pub beamform_restarts: usize,
    pub beamform_iters: usize,
    pub snr_db: Option<f64>,
    pub sweep_cells: Option<Vec<usize>>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Hist,
            aggregation: AggregationKind::Ideal,
            partition: PartitionKind::Neuron,
            gamma: 0.02,
            local_steps: 5,
            edge_rounds: 2,
            global_rounds: 60,
            batch_size: 16,
            kappa: 1.5,
            beamform_restarts: 4,
            beamform_iters: 300,
            snr_db: None,
            sweep_cells: None,
        }
    }
}

impl TrainingSection {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            gamma: self.gamma,
            local_steps: self.local_steps,
            edge_rounds: self.edge_rounds,
            global_rounds: self.global_rounds,
            batch_size: self.batch_size,
        }
    }

    pub fn partition_source(&self) -> PartitionSource {
        match self.partition {
            PartitionKind::Uniform => PartitionSource::Uniform,
            PartitionKind::Neuron => PartitionSource::Neuron,
            PartitionKind::Optimized => PartitionSource::Optimized { kappa: self.kappa },
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.aggregation {
            AggregationKind::Ideal => Aggregation::Ideal,
            AggregationKind::AirComp => Aggregation::AirComp {
                restarts: self.beamform_restarts,
                iters: self.beamform_iters,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HistError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HistError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(HistError::Config(m));
        let d = &self.data;
        let idx = [&d.train_images, &d.train_labels, &d.test_images, &d.test_labels];
        let given = idx.iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 4 {
            return cfg("IDX data needs all of train_images, train_labels, test_images, test_labels".into());
        }
        for p in idx.into_iter().flatten() {
            if !p.exists() {
                return cfg(format!("data file {} does not exist", p.display()));
            }
        }
        if given == 0 && (d.classes == 0 || d.dim == 0 || d.per_class == 0 || d.test_per_class == 0) {
            return cfg("data counts must be positive".into());
        }
        if d.labels_per_unit == 0 {
            return cfg("labels_per_unit must be positive".into());
        }
        if self.model.hidden.contains(&0) {
            return cfg("hidden layer widths must be positive".into());
        }
        let s = &self.scenario;
        if s.cells == 0 || s.clients_per_cell == 0 || s.antennas == 0 || !(s.bandwidth_mhz > 0.0) {
            return cfg("cells, clients_per_cell, antennas and bandwidth must be positive".into());
        }
        let t = &self.training;
        t.hyper_params().validate().map_err(|e| HistError::Config(e.to_string()))?;
        if !(t.kappa > 0.0) {
            return cfg("kappa must be positive".into());
        }
        if t.aggregation == AggregationKind::AirComp && t.beamform_iters == 0 {
            return cfg("beamform_iters must be positive".into());
        }
        if let Some(cells) = &t.sweep_cells {
            if cells.is_empty() || cells.contains(&0) {
                return cfg("sweep_cells must list positive cell counts".into());
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cells(mut self, cells: usize) -> Self {
        self.scenario.cells = cells;
        self
    }
}

/// Training and test sets: the IDX files if given, else the synthetic mixture.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(ExampleBatch, ExampleBatch)> {
    let d = &cfg.data;
    if let (Some(ti), Some(tl), Some(vi), Some(vl)) = (&d.train_images, &d.train_labels, &d.test_images, &d.test_labels) {
        return Ok((data::load_idx(ti, tl)?, data::load_idx(vi, vl)?));
    }
    let spec = MixtureSpec {
        classes: d.classes,
        dim: d.dim,
        per_class: d.per_class,
        separation: d.separation,
    };
    let train = data::synth_dataset(&spec, seed::derive_seed(cfg.seed, &[seed::tag::DATA, 0]))?;
    let test = data::synth_dataset(
        &MixtureSpec {
            per_class: d.test_per_class,
            ..spec
        },
        seed::derive_seed(cfg.seed, &[seed::tag::DATA, 1]),
    )?;
    Ok((train, test))
}

/// Scenario and initial network described by a config.
pub fn build_experiment(cfg: &ExperimentConfig) -> Result<(Scenario, DenseNet)> {
    let (train, test) = load_data(cfg)?;
    let classes = train
        .labels()
        .and_then(|l| l.iter().max())
        .map_or(0, |m| m + 1)
        .max(test.labels().and_then(|l| l.iter().max()).map_or(0, |m| m + 1));
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(classes);
    let net = DenseNet::init(mlp_layers(&dims), seed::derive_seed(cfg.seed, &[seed::tag::INIT]))?;

    let s = &cfg.scenario;
    let template = ScenarioTemplate {
        cells: s.cells,
        clients_per_cell: s.clients_per_cell,
        cpu_ghz_low: s.cpu_ghz_low,
        cpu_ghz_high: s.cpu_ghz_high,
        snr_db_low: s.snr_db_low,
        snr_db_high: s.snr_db_high,
        bandwidth_hz: s.bandwidth_mhz * 1e6,
        subcarrier_hz: RadioConfig::NR_SUBCARRIER_HZ,
        symbol_s: RadioConfig::NR_SYMBOL_S,
        antennas: s.antennas,
        tx_power_w: s.tx_power_w,
        v0_cycles: s.v0_cycles,
        l0_bits: s.l0_bits.unwrap_or(32.0 * net.d() as f64),
    };
    let mut deployment = scenario::draw_resources(&template, seed::derive_seed(cfg.seed, &[seed::tag::CHANNEL]))?;
    if let Some(snr) = cfg.training.snr_db {
        deployment.radio = deployment.radio.with_uniform_snr(snr);
    }
    let shards = data::partition_noniid(
        &train,
        &deployment.clients_per_cell(),
        cfg.data.regime,
        cfg.data.labels_per_unit,
        seed::derive_seed(cfg.seed, &[seed::tag::DATA, 2]),
    )?;
    Ok((Scenario::new(deployment, shards, test)?, net))
}

/// Runs the configured algorithm once.
pub fn simulate_once(cfg: &ExperimentConfig) -> Result<TrainingTrace> {
    let (scenario, net) = build_experiment(cfg)?;
    let t = &cfg.training;
    let out = training::run(
        t.algorithm,
        &scenario,
        &net,
        &t.hyper_params(),
        t.partition_source(),
        t.aggregation(),
        cfg.seed,
        RunOptions::default(),
    )?;
    let mut trace = out.trace;
    trace.label = trace_stem(cfg);
    Ok(trace)
}

fn trace_stem(cfg: &ExperimentConfig) -> String {
    let t = &cfg.training;
    let alg = match t.algorithm {
        Algorithm::Hist => "hist",
        Algorithm::HFedAvg => "hfedavg",
    };
    let agg = match t.aggregation {
        AggregationKind::Ideal => "ideal",
        AggregationKind::AirComp => "aircomp",
    };
    format!("{alg}_{agg}_n{}", cfg.scenario.cells)
}

/// Runs the experiment (or one per entry of `sweep_cells`) and writes a CSV
/// and a JSON trace per run into `out`. Returns the written CSV paths.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let configs: Vec<ExperimentConfig> = match &cfg.training.sweep_cells {
        Some(cells) => cells.iter().map(|&n| cfg.clone().with_cells(n)).collect(),
        None => vec![cfg.clone()],
    };
    let mut written = Vec::with_capacity(configs.len());
    for c in &configs {
        let trace = simulate_once(c)?;
        let stem = trace_stem(c);
        trace.write_files(out, &stem)?;
        written.push(out.join(format!("{stem}.csv")));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutput {
    pub problem: PartitionProblem,
    pub solution: PartitionSolution,
    pub uniform_objective: f64,
    pub feasibility: FeasibilityReport,
}

/// Solves the `[problem]` instance if present, otherwise the first-round
/// latency problem of the configured scenario.
pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<OptimizeOutput> {
    let problem = match &cfg.problem {
        Some(p) => p.clone(),
        None => {
            let (scenario, net) = build_experiment(cfg)?;
            let dep = &scenario.deployment;
            let links: Vec<Vec<ClientLink>> = dep
                .clients
                .iter()
                .map(|cell| {
                    cell.iter()
                        .map(|c| ClientLink {
                            cpu_hz: c.cpu_hz,
                            rate_bps: c.rate_bps,
                        })
                        .collect()
                })
                .collect();
            let t = &cfg.training;
            match t.aggregation {
                AggregationKind::Ideal => {
                    optimizer::build_problem_oma(&links, net.d(), t.local_steps, t.edge_rounds, &dep.compute, t.kappa)
                }
                AggregationKind::AirComp => optimizer::build_problem_aircomp(
                    &links,
                    net.d(),
                    t.local_steps,
                    t.edge_rounds,
                    &dep.compute,
                    &dep.radio,
                    t.kappa,
                ),
            }
        }
    };
    let feasibility = optimizer::feasibility(&problem);
    let solution = optimizer::solve_exact(&problem)?;
    let uniform_objective = problem.objective(&problem.uniform_sizes());
    Ok(OptimizeOutput {
        problem,
        solution,
        uniform_objective,
        feasibility,
    })
}

/// Channel dump accepted by `beamform`: one `[re, im]` list per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDump {
    pub channels: Vec<Vec<[f64; 2]>>,
    #[serde(default = "one")]
    pub power: f64,
    #[serde(default)]
    pub noise_var: f64,
    #[serde(default = "one_usize")]
    pub mask_size: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformOutput {
    pub beamformer: Vec<[f64; 2]>,
    pub objective: f64,
    pub mse_per_element: f64,
    pub mse_total: f64,
    pub histories: Vec<Vec<f64>>,
}

pub fn cmd_beamform(dump: &ChannelDump, restarts: usize, iters: usize, seed: u64) -> Result<BeamformOutput> {
    let h: Vec<Vec<Complex64>> = dump
        .channels
        .iter()
        .map(|c| c.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
        .collect();
    let BeamformingResult { a, objective, histories } = aircomp::optimize_beamformer(&h, restarts, iters, seed)?;
    let stats = aircomp::mse_for_cell(dump.mask_size, &a, &h, dump.power, dump.noise_var);
    Ok(BeamformOutput {
        beamformer: a.iter().map(|c| [c.re, c.im]).collect(),
        objective,
        mse_per_element: stats.mse_per_element,
        mse_total: stats.mse_total,
        histories,
    })
}

pub fn cmd_report(paths: &[PathBuf], target: f64) -> Result<(Vec<ReportRow>, String)> {
    let traces: Vec<TrainingTrace> = paths.iter().map(|p| TrainingTrace::read_file(p)).collect::<Result<_>>()?;
    let rows = trace::report(&traces, target);
    let table = trace::format_report(&rows, target);
    Ok((rows, table))
}
