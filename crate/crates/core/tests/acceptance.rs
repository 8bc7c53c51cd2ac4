//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Reference values come from oracles
//! written here, independently of the library code paths they check.

use std::time::{Duration, Instant};

use hist_core::aircomp::{self, Beamformer};
use hist_core::harness::{self, AggregationKind, ExperimentConfig};
use hist_core::latency::{self, ClientLink};
use hist_core::masking::{self, PartitionPlan};
use hist_core::model::{Activation, DenseNet, ExampleBatch, LayerSpec};
use hist_core::optimizer::{self, PartitionProblem};
use hist_core::scenario::{self, draw_channel, RadioConfig, Scenario, ScenarioTemplate};
use hist_core::seed::rng_for;
use hist_core::trace::TrainingTrace;
use hist_core::training::{self, Aggregation, Algorithm, HyperParams, PartitionSource, RunOptions};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(n: u64) -> ChaCha8Rng {
    rng_for(0xAC_CE_97, &[n])
}

// ---------------------------------------------------------------- criterion 1

fn random_plan(r: &mut ChaCha8Rng, seed: u64) -> PartitionPlan {
    let cells = r.random_range(1..=8);
    match r.random_range(0..3) {
        0 => masking::generate_uniform_partition(r.random_range(1..=500), cells, seed).unwrap(),
        1 => {
            let d = r.random_range(1..=500);
            let mut cuts: Vec<usize> = (0..cells - 1).map(|_| r.random_range(0..=d)).collect();
            cuts.sort_unstable();
            let mut sizes = Vec::with_capacity(cells);
            let mut prev = 0;
            for c in cuts.into_iter().chain([d]) {
                sizes.push(c - prev);
                prev = c;
            }
            masking::generate_sized_partition(d, &sizes, seed).unwrap()
        }
        _ => loop {
            let depth = r.random_range(2..=3);
            let mut dims = vec![r.random_range(1..=12)];
            for _ in 0..depth {
                dims.push(r.random_range(1..=12));
            }
            let layers = hist_core::model::mlp_layers(&dims);
            if layers.iter().map(LayerSpec::param_count).sum::<usize>() <= 500 {
                break masking::generate_neuron_partition(&layers, cells, seed).unwrap();
            }
        },
    }
}

fn criterion_1() -> Outcome {
    let mut r = rng(1);
    for i in 0..1000 {
        let plan = random_plan(&mut r, i);
        let d = plan.d();
        let z: Vec<f64> = (0..d).map(|_| r.random_range(-9i32..=9) as f64).collect();
        let mut owners = vec![0usize; d];
        for m in &plan.masks {
            for (k, &b) in m.bits().iter().enumerate() {
                owners[k] += b as usize;
            }
        }
        if owners.iter().any(|&c| c != 1) {
            return outcome(false, format!("plan {i}: not a disjoint cover"));
        }
        let energy: f64 = z.iter().map(|v| v * v).sum();
        let masked: f64 = plan
            .masks
            .iter()
            .map(|m| z.iter().zip(m.bits()).filter(|(_, &b)| b).map(|(v, _)| v * v).sum::<f64>())
            .sum();
        let residual: f64 = plan
            .masks
            .iter()
            .map(|m| z.iter().zip(m.bits()).filter(|(_, &b)| !b).map(|(v, _)| v * v).sum::<f64>())
            .sum();
        let n = plan.cells() as f64;
        if masked != energy || residual != (n - 1.0) * energy {
            return outcome(false, format!("plan {i}: energy identities off ({masked} vs {energy}, {residual})"));
        }
        let report = masking::verify_partition(&plan, Some(&z));
        let probe = report.probe.as_ref();
        if !report.is_valid() || probe.is_none_or(|p| p.lhs != residual || p.masked_energy != masked) {
            return outcome(false, format!("plan {i}: library verifier disagrees: {report:?}"));
        }
    }
    outcome(true, "1000 plans, disjoint cover and both energy identities exact")
}

// ---------------------------------------------------------------- criterion 2

/// Reference loss with an explicit hidden-activation kink check.
fn oracle_loss(layers: &[LayerSpec], params: &[f64], batch: &OracleBatch) -> (f64, f64) {
    let mut loss = 0.0;
    let mut min_abs_pre = f64::INFINITY;
    for (i, x0) in batch.x.iter().enumerate() {
        let mut a = x0.clone();
        let mut off = 0;
        for spec in layers {
            let (n_in, n_out) = (spec.input_dim, spec.output_dim);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + (0..n_in).map(|k| w[o * n_in + k] * a[k]).sum::<f64>())
                .collect();
            if spec.activation == Activation::Relu {
                min_abs_pre = z.iter().fold(min_abs_pre, |m, v| m.min(v.abs()));
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        match &batch.y {
            OracleTargets::Classes(c) => {
                let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - a[c[i]];
            }
            OracleTargets::Values(y) => {
                loss += 0.5 * a.iter().zip(&y[i]).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
            }
        }
    }
    (loss / batch.x.len() as f64, min_abs_pre)
}

enum OracleTargets {
    Classes(Vec<usize>),
    Values(Vec<Vec<f64>>),
}

struct OracleBatch {
    x: Vec<Vec<f64>>,
    y: OracleTargets,
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let (h, floor) = (1e-5, 1e-4);
    let mut worst = 0.0f64;
    let mut instances = 0;
    let mut max_params = 0;
    while instances < 100 {
        let depth = r.random_range(1..=3);
        let mut dims = vec![r.random_range(1..=8)];
        for _ in 0..depth {
            dims.push(r.random_range(1..=10));
        }
        let classify = r.random_bool(0.5);
        let last = dims.len() - 2;
        let layers: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = match (l == last, classify) {
                    (true, true) => Activation::SoftmaxCrossEntropy,
                    (true, false) => Activation::Identity,
                    _ => Activation::Relu,
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        let d: usize = layers.iter().map(LayerSpec::param_count).sum();
        if d > 500 {
            continue;
        }
        let (n_in, n_out) = (dims[0], *dims.last().unwrap());
        let n = r.random_range(1..=6);
        let params: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..n_in).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        let (batch, oracle) = if classify {
            let c: Vec<usize> = (0..n).map(|_| r.random_range(0..n_out)).collect();
            (
                ExampleBatch::classification(n_in, flat, c.clone()).unwrap(),
                OracleBatch { x, y: OracleTargets::Classes(c) },
            )
        } else {
            let y: Vec<Vec<f64>> = (0..n).map(|_| (0..n_out).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            (
                ExampleBatch::regression(n_in, flat, n_out, y.iter().flatten().copied().collect()).unwrap(),
                OracleBatch { x, y: OracleTargets::Values(y) },
            )
        };
        if oracle_loss(&layers, &params, &oracle).1 < 1e-3 {
            continue;
        }
        let net = DenseNet::from_params(layers.clone(), params.clone()).unwrap();
        let (loss, grad) = net.loss_and_gradient(&batch).unwrap();
        let ref_loss = oracle_loss(&layers, &params, &oracle).0;
        if (loss - ref_loss).abs() > 1e-12 * ref_loss.abs().max(1.0) {
            return outcome(false, format!("loss mismatch {loss} vs {ref_loss}"));
        }
        let mut kinked = false;
        for k in 0..d {
            let mut p = params.clone();
            p[k] += h;
            let (up, m1) = oracle_loss(&layers, &p, &oracle);
            p[k] -= 2.0 * h;
            let (down, m2) = oracle_loss(&layers, &p, &oracle);
            if m1.min(m2) < 1e-4 {
                kinked = true;
                break;
            }
            let fd = (up - down) / (2.0 * h);
            let a = grad.values[k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
        }
        if kinked {
            continue;
        }
        max_params = max_params.max(d);
        instances += 1;
    }
    outcome(
        worst < 1e-5,
        format!("100 nets up to {max_params} params, max relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn tiny_scenario(cells: usize, clients_per_cell: usize, seed: u64) -> (Scenario, DenseNet) {
    let template = ScenarioTemplate {
        cells,
        clients_per_cell,
        ..ScenarioTemplate::default()
    };
    let deployment = scenario::draw_resources(&template, seed).unwrap();
    let mut r = rng(seed);
    let (dim, classes) = (5, 3);
    let make = |r: &mut ChaCha8Rng, n: usize| {
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let feats: Vec<f64> = labels
            .iter()
            .flat_map(|&c| (0..dim).map(move |k| if k == c { 2.0 } else { 0.0 }).collect::<Vec<_>>())
            .map(|v| v + r.random_range(-1.0..1.0))
            .collect();
        ExampleBatch::classification(dim, feats, labels).unwrap()
    };
    let shards = (0..cells)
        .map(|_| (0..clients_per_cell).map(|_| make(&mut r, 24)).collect())
        .collect();
    let test = make(&mut r, 30);
    let net = DenseNet::init(hist_core::model::mlp_layers(&[dim, 6, classes]), seed).unwrap();
    (Scenario::new(deployment, shards, test).unwrap(), net)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn criterion_3() -> Outcome {
    let opts = RunOptions {
        keep_models: true,
        ..RunOptions::default()
    };
    let (sc, net) = tiny_scenario(1, 1, 3);
    let hp = HyperParams {
        gamma: 0.1,
        local_steps: 1,
        edge_rounds: 1,
        global_rounds: 200,
        batch_size: 5,
    };
    let run = |alg| training::run(alg, &sc, &net, &hp, PartitionSource::Uniform, Aggregation::Ideal, 11, opts).unwrap();
    let (hist, fedavg) = (run(Algorithm::Hist), run(Algorithm::HFedAvg));

    let shard = &sc.shards[0][0];
    let mut x = net.clone();
    let mut sgd = vec![bits(x.params())];
    for t in 0..hp.global_rounds {
        let idx = training::minibatch_indices(shard.len(), hp.batch_size, 11, 0, 0, t).expect("batch smaller than shard");
        let (_, g) = x.loss_and_gradient(&shard.select(&idx)).unwrap();
        let p: Vec<f64> = x.params().iter().zip(&g.values).map(|(w, gk)| w - hp.gamma * gk).collect();
        x = x.with_params(p).unwrap();
        sgd.push(bits(x.params()));
    }
    let h_bits: Vec<Vec<u64>> = hist.global_models.iter().map(|m| bits(m)).collect();
    let f_bits: Vec<Vec<u64>> = fedavg.global_models.iter().map(|m| bits(m)).collect();
    let n1 = h_bits == f_bits && hist.trace.rows.iter().zip(&fedavg.trace.rows).all(|(a, b)| a.acc == b.acc);
    let plain = f_bits == sgd;

    // HIST(N=1) vs HFedAvg with several clients, H and E.
    let (sc, net) = tiny_scenario(1, 3, 4);
    let hp = HyperParams {
        gamma: 0.05,
        local_steps: 3,
        edge_rounds: 2,
        global_rounds: 30,
        batch_size: 4,
    };
    let run = |alg| training::run(alg, &sc, &net, &hp, PartitionSource::Neuron, Aggregation::Ideal, 5, opts).unwrap();
    let general = run(Algorithm::Hist).global_models == run(Algorithm::HFedAvg).global_models;
    outcome(
        n1 && plain && general,
        format!("200 iterations: HIST(N=1)=HFedAvg {n1}, HFedAvg=plain SGD {plain}; H=3,E=2,n=3 reduction {general}"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn first_reaching(trace: &TrainingTrace, target: f64) -> Option<(usize, f64)> {
    trace.rows.iter().find(|r| r.acc >= target).map(|r| (r.t, r.bytes_per_client))
}

fn criterion_4() -> Outcome {
    let base = ExperimentConfig::default();
    let mut fed = base.clone();
    fed.training.algorithm = Algorithm::HFedAvg;
    fed.training.global_rounds = 60;
    let fed_trace = harness::simulate_once(&fed).unwrap();
    let target = fed_trace.rows[60].acc;
    let (fed_round, fed_bytes) = first_reaching(&fed_trace, target).expect("row 60 reaches its own accuracy");

    // Running past 0.6 / (1/N) times HFedAvg's rounds cannot help HIST meet the bound.
    let mut hist = base.clone();
    hist.training.algorithm = Algorithm::Hist;
    hist.training.global_rounds = 60 * 6 * base.scenario.cells / 10;
    let hist_trace = harness::simulate_once(&hist).unwrap();
    let d = hist_trace.rows[1].sizes.iter().sum::<usize>();
    match first_reaching(&hist_trace, target) {
        Some((round, bytes)) => {
            let ratio = bytes / fed_bytes;
            outcome(
                ratio <= 0.6,
                format!(
                    "d={d}, target {target:.4} (HFedAvg first at round {fed_round}, {:.3} MB); HIST N=4 at round {round}, {:.3} MB, ratio {ratio:.3}",
                    fed_bytes / 1e6,
                    bytes / 1e6
                ),
            )
        }
        None => outcome(false, format!("HIST never reached target {target:.4}")),
    }
}

// ---------------------------------------------------------------- criterion 5

/// Exhaustive minimum of `max_j c_j w_j` over integer splits within the cap.
fn oracle_split(coeffs: &[f64], d: usize, cap: usize) -> Option<f64> {
    fn rec(coeffs: &[f64], left: usize, cap: usize, cur: f64, best: &mut Option<f64>) {
        if coeffs.len() == 1 {
            if left <= cap {
                let v = cur.max(coeffs[0] * left as f64);
                if best.is_none_or(|b| v < b) {
                    *best = Some(v);
                }
            }
            return;
        }
        for w in 0..=left.min(cap) {
            rec(&coeffs[1..], left - w, cap, cur.max(coeffs[0] * w as f64), best);
        }
    }
    let mut best = None;
    rec(coeffs, d, cap, 0.0, &mut best);
    best
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let mut infeasible = 0;
    for i in 0..1000 {
        let cells = r.random_range(1..=4);
        let d = r.random_range(1..=40);
        let coeffs: Vec<f64> = (0..cells)
            .map(|_| if r.random_bool(0.2) { r.random_range(1..=5) as f64 } else { r.random_range(0.1..10.0) })
            .collect();
        let cap = r.random_range(0..=d);
        let problem = PartitionProblem {
            coeffs: coeffs.clone(),
            d,
            cap,
        };
        match (optimizer::solve_exact(&problem), oracle_split(&coeffs, d, cap)) {
            (Ok(sol), Some(best)) => {
                if sol.objective != best || sol.sizes.iter().sum::<usize>() != d || sol.sizes.iter().any(|&s| s > cap) {
                    return outcome(false, format!("instance {i}: solver {:?} vs brute force {best}", sol));
                }
            }
            (Err(_), None) => infeasible += 1,
            (a, b) => return outcome(false, format!("instance {i}: feasibility disagrees: {a:?} vs {b:?}")),
        }
    }

    // Heterogeneous CPU groups, full FCNN size, E=5 and H=40.
    let d = 238_510;
    let (h, e) = (40, 5);
    let template = ScenarioTemplate::default();
    let dep = scenario::draw_resources(&template, 17).unwrap();
    let links: Vec<Vec<ClientLink>> = dep
        .clients
        .iter()
        .map(|c| c.iter().map(|x| ClientLink { cpu_hz: x.cpu_hz, rate_bps: x.rate_bps }).collect())
        .collect();
    let delta1_sq = 0.37;
    let kappa = optimizer::kappa_from_threshold(9.0 * delta1_sq, delta1_sq);
    let cap = (1.5 * d as f64 / template.cells as f64).floor() as usize;
    let mut lines = Vec::new();
    let mut ok = (kappa - 1.5).abs() < 1e-12;
    for aircomp in [false, true] {
        let problem = if aircomp {
            optimizer::build_problem_aircomp(&links, d, h, e, &dep.compute, &dep.radio, kappa)
        } else {
            optimizer::build_problem_oma(&links, d, h, e, &dep.compute, kappa)
        };
        let sol = optimizer::solve_exact(&problem).unwrap();
        let per_round = |sizes: &[usize]| {
            let cells: Vec<f64> = sizes
                .iter()
                .zip(&links)
                .map(|(&s, l)| {
                    if aircomp {
                        latency::aircomp_cell_latency(s, d, l, h, &dep.compute, &dep.radio)
                    } else {
                        latency::oma_cell_latency(s, d, l, h, &dep.compute)
                    }
                })
                .collect();
            latency::global_round_latency(&cells, e)
        };
        let uniform = vec![d / 4 + 1, d / 4 + 1, d / 4, d / 4];
        let (opt_s, uni_s) = (per_round(&sol.sizes), per_round(&uniform));
        ok &= problem.cap == cap && opt_s < uni_s && sol.sizes.iter().all(|&s| s <= cap);
        lines.push(format!(
            "{}: optimized {:.4} s < uniform {:.4} s, sizes {:?} <= cap {cap}",
            if aircomp { "AirComp" } else { "OMA" },
            opt_s,
            uni_s,
            sol.sizes
        ));
    }
    outcome(
        ok,
        format!("1000 instances match brute force ({infeasible} infeasible agreed); {}", lines.join("; ")),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let (n, m, d) = (5, 4, 12);
    let channels: Vec<Vec<Complex64>> = (0..n).map(|_| draw_channel(&mut r, m)).collect();
    let best = aircomp::optimize_beamformer(&channels, 4, 300, 1).unwrap();
    let (power, noise_var) = (2.0, 0.5);
    let bf = Beamformer::new(&best.a, &channels, power).unwrap();
    let bits_mask: Vec<bool> = (0..d).map(|k| k % 3 != 1).collect();
    let mask = hist_core::masking::Mask::from_bits(0, bits_mask.clone());
    let deltas: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|k| if bits_mask[k] { r.random_range(-3.0..3.0) } else { 0.0 }).collect())
        .collect();
    let mean: Vec<f64> = (0..d).map(|k| deltas.iter().map(|x| x[k]).sum::<f64>() / n as f64).collect();
    let gmin = channels
        .iter()
        .map(|h| h.iter().zip(&best.a).map(|(hk, ak)| ak.conj() * hk).sum::<Complex64>().norm_sqr())
        .fold(f64::INFINITY, f64::min);
    let mse = noise_var / (power * gmin);

    let draws = 100_000;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut bias_sum = vec![0.0; d];
    let mut noise_rng = rng(60);
    for i in 0..draws {
        let (est, stats) = aircomp::aggregate_aircomp(&deltas, &channels, &bf, power, noise_var, &mask, &mut noise_rng).unwrap();
        if (stats.mse_per_element - mse).abs() > 1e-12 * mse {
            return outcome(false, "reported MSE differs from the closed form");
        }
        for k in 0..d {
            let err = est[k] - mean[k];
            if i < 10_000 {
                bias_sum[k] += err;
            }
            sum[k] += err;
            sum_sq[k] += err * err;
        }
    }
    let sigma = mse.sqrt();
    let bias_bound = 4.0 * sigma / (10_000f64).sqrt();
    let mut worst_bias = 0.0f64;
    let mut worst_var = 0.0f64;
    for k in (0..d).filter(|&k| bits_mask[k]) {
        worst_bias = worst_bias.max((bias_sum[k] / 10_000.0).abs());
        let mu = sum[k] / draws as f64;
        let var = sum_sq[k] / draws as f64 - mu * mu;
        worst_var = worst_var.max((var / mse - 1.0).abs());
    }
    let off_mask_zero = (0..d).filter(|&k| !bits_mask[k]).all(|k| sum_sq[k] == mean[k] * mean[k] * draws as f64);

    // Noiseless AirComp inside full training runs equals ideal aggregation.
    let (mut sc, net) = tiny_scenario(2, 3, 6);
    sc.deployment.radio = sc.deployment.radio.clone().with_uniform_snr(f64::INFINITY);
    let hp = HyperParams {
        gamma: 0.05,
        local_steps: 2,
        edge_rounds: 3,
        global_rounds: 5,
        batch_size: 4,
    };
    let opts = RunOptions {
        keep_models: true,
        virtual_diagnostics: true,
    };
    let run = |agg| training::run(Algorithm::Hist, &sc, &net, &hp, PartitionSource::Neuron, agg, 3, opts).unwrap();
    let ideal = run(Aggregation::Ideal);
    let air = run(Aggregation::AirComp { restarts: 2, iters: 100 });
    let exact = ideal.global_models.iter().map(|m| bits(m)).eq(air.global_models.iter().map(|m| bits(m)))
        && ideal.virtual_points.iter().zip(&air.virtual_points).all(|(a, b)| bits(&a.params) == bits(&b.params));

    outcome(
        worst_bias < bias_bound && worst_var < 0.05 && off_mask_zero && exact,
        format!(
            "max |bias| {worst_bias:.2e} < {bias_bound:.2e}; max variance deviation {:.2}% at 1e5 draws; noiseless path bit-exact {exact}",
            worst_var * 100.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn oracle_objective(a: &[Complex64], channels: &[Vec<Complex64>]) -> f64 {
    let norm = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    channels
        .iter()
        .map(|h| (a.iter().zip(h).map(|(x, y)| x.conj() * y).sum::<Complex64>() / norm).norm_sqr())
        .fold(f64::INFINITY, f64::min)
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut worst_single = 0.0f64;
    for i in 0..20 {
        let h = draw_channel(&mut r, 4);
        let got = aircomp::optimize_beamformer(std::slice::from_ref(&h), 8, 500, i).unwrap();
        let norm_sq: f64 = h.iter().map(|c| c.norm_sqr()).sum();
        worst_single = worst_single.max((got.objective - norm_sq).abs());
    }
    let mut worst_margin = f64::INFINITY;
    for i in 0..50 {
        let channels: Vec<Vec<Complex64>> = (0..5).map(|_| draw_channel(&mut r, 4)).collect();
        let got = aircomp::optimize_beamformer(&channels, 8, 500, i).unwrap();
        if (oracle_objective(&got.a, &channels) - got.objective).abs() > 1e-12 {
            return outcome(false, format!("instance {i}: reported objective is not the true min gain"));
        }
        let random_best = (0..10_000)
            .map(|_| oracle_objective(&draw_channel(&mut r, 4), &channels))
            .fold(0.0, f64::max);
        worst_margin = worst_margin.min(got.objective - random_best);
    }
    outcome(
        worst_single < 1e-9 && worst_margin >= 0.0,
        format!("single-client gap {worst_single:.1e}; min margin over best of 1e4 random beams {worst_margin:.4}"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let compute = hist_core::scenario::ComputeConfig {
        cycles_per_update_full: 1e6,
        bits_full_model: 32.0 * 238_510.0,
    };
    let radio = RadioConfig {
        bandwidth_hz: 9e6,
        subcarrier_hz: RadioConfig::NR_SUBCARRIER_HZ,
        symbol_s: RadioConfig::NR_SYMBOL_S,
        snr_db: vec![30.0],
        antennas: 10,
    };
    let link = ClientLink { cpu_hz: 2e9, rate_bps: 5e7 };
    let (d, h) = (238_510, 40);
    let oma: Vec<f64> = (1..=30).map(|n| latency::oma_cell_latency(d / 2, d, &vec![link; n], h, &compute)).collect();
    let increasing = oma.windows(2).all(|w| w[1] > w[0]);
    let air: Vec<f64> = (1..=30)
        .map(|n| latency::aircomp_cell_breakdown(d / 2, d, &vec![link; n], h, &compute, &radio).comm_s)
        .collect();
    let constant = air.iter().all(|&v| v == air[0]);
    let mut linear = true;
    for w in [1usize, 7, 1000, 59_627] {
        for scale in [2usize, 4] {
            let clients = vec![link; 3];
            linear &= latency::oma_cell_latency(scale * w, d, &clients, h, &compute)
                == scale as f64 * latency::oma_cell_latency(w, d, &clients, h, &compute);
            linear &= latency::aircomp_cell_latency(scale * w, d, &clients, h, &compute, &radio)
                == scale as f64 * latency::aircomp_cell_latency(w, d, &clients, h, &compute, &radio);
        }
    }
    let spot_ms = 238_510.0 * 15e3 * (1e-3 / 14.0) / 9e6 * 1e3;
    let lib_ms = latency::aircomp_comm_latency(238_510, &radio) * 1e3;
    let spot = (lib_ms - 28.39).abs() <= 0.01 && (lib_ms - spot_ms).abs() < 1e-12;
    outcome(
        increasing && constant && linear && spot,
        format!("OMA increasing {increasing}, AirComp comm constant {constant}, exact linear scaling {linear}, spot {lib_ms:.4} ms"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let mut base = ExperimentConfig::default();
    base.training.local_steps = 40;
    base.training.edge_rounds = 5;
    base.training.global_rounds = 20;
    let final_acc = |agg: AggregationKind, snr: Option<f64>| {
        let mut cfg = base.clone();
        cfg.training.aggregation = agg;
        cfg.training.snr_db = snr;
        harness::simulate_once(&cfg).unwrap().final_row().unwrap().acc
    };
    let ideal = final_acc(AggregationKind::Ideal, None);
    let mut ok = true;
    let mut parts = vec![format!("ideal {ideal:.4}")];
    for snr in [0.0, 10.0, 30.0, -20.0] {
        let acc = final_acc(AggregationKind::AirComp, Some(snr));
        let within = (ideal - acc).abs() <= 0.02;
        ok &= if snr < -10.0 { !within } else { within };
        parts.push(format!("{snr} dB {acc:.4}"));
    }
    outcome(ok, parts.join(", "))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        ("mask algebra", criterion_1, Duration::from_secs(5)),
        ("gradient correctness", criterion_2, Duration::from_secs(30)),
        ("reduction property", criterion_3, Duration::from_secs(600)),
        ("communication savings", criterion_4, Duration::from_secs(300)),
        ("partition optimizer", criterion_5, Duration::from_secs(60)),
        ("AirComp fidelity", criterion_6, Duration::from_secs(120)),
        ("beamforming", criterion_7, Duration::from_secs(120)),
        ("latency laws", criterion_8, Duration::from_secs(1)),
        ("robust SNR", criterion_9, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| id.contains(p.as_str()) || name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took < *budget;
        failed += !pass as usize;
        println!(
            "{id} [{name}]: {} ({:.2} s, budget {} s) {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
