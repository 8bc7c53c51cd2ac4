//! Over-the-air aggregation within a cell.
//!
//! Clients precode with `α_i = (1/n_j) conj(m^H h_i) / |m^H h_i|^2`, the
//! edge server combines with `m = a / ν` where `a` is a unit beamformer and
//! `ν = sqrt(P_j) min_i |a^H h_i|`, so that the received superposition is the
//! client average plus `a^H z / ν`. Its per-element MSE is
//! `σ0² / (P_j min_i |a^H h_i|²)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};
use crate::masking::Mask;
use crate::seed;

/// `a^H h`.
pub fn inner(a: &[Complex64], h: &[Complex64]) -> Complex64 {
    a.iter().zip(h).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn normalized(a: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| a.iter().map(|c| c / n).collect())
}

/// `min_i |a^H h_i|^2`, the max-min beamforming objective.
pub fn min_gain_sq(a: &[Complex64], channels: &[Vec<Complex64>]) -> f64 {
    channels
        .iter()
        .map(|h| inner(a, h).norm_sqr())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beamformer {
    /// Unit-norm receive beamformer `a`.
    pub a: Vec<Complex64>,
    /// Power normalization `ν = sqrt(P) min_i |a^H h_i|`.
    pub nu: f64,
}

impl Beamformer {
    pub fn new(a: &[Complex64], channels: &[Vec<Complex64>], power: f64) -> Result<Self> {
        let a = normalized(a).ok_or(HistError::InvalidInput("beamformer must be nonzero".into()))?;
        if let Some(i) = channels.iter().position(|h| inner(&a, h).norm_sqr() == 0.0) {
            return Err(HistError::Unreachable { client: i });
        }
        let nu = power.sqrt() * min_gain_sq(&a, channels).sqrt();
        Ok(Self { a, nu })
    }

    /// Receive vector `m = a / ν`.
    pub fn receive_vector(&self) -> Vec<Complex64> {
        self.a.iter().map(|c| c / self.nu).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationStats {
    pub mse_per_element: f64,
    pub mse_total: f64,
}

/// `α_i = (1/n_j) conj(m^H h_i) / |m^H h_i|^2`, so that `m^H h_i α_i = 1/n_j`.
pub fn precoding_factor(h: &[Complex64], m: &[Complex64], clients: usize) -> Result<Complex64> {
    let g = inner(m, h);
    let mag = g.norm_sqr();
    if mag == 0.0 || !mag.is_finite() {
        return Err(HistError::Unreachable { client: 0 });
    }
    Ok(g.conj() / (mag * clients as f64))
}

/// Per-element and total MSE for a cell owning `mask_size` coordinates.
pub fn mse_for_cell(mask_size: usize, a: &[Complex64], channels: &[Vec<Complex64>], power: f64, noise_var: f64) -> AggregationStats {
    let per = noise_var / (power * min_gain_sq(a, channels));
    AggregationStats {
        mse_per_element: per,
        mse_total: mask_size as f64 * per,
    }
}

/// Plain client average `(1/n) sum_i δ_i`, summed in ascending client order.
pub fn client_mean(deltas: &[Vec<f64>]) -> Vec<f64> {
    let n = deltas.len() as f64;
    let mut mean = deltas[0].clone();
    for d in &deltas[1..] {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Over-the-air estimate of the client average on the mask support.
///
/// Each masked element `k` receives `(1/ν) a^H z_k` with `z_k ~ CN(0, σ0² I)`.
/// The real part of that scalar, scaled by `sqrt(2)`, is added to the real
/// average, so the estimate is unbiased with per-element variance equal to
/// the MSE. Off-mask elements are exactly zero.
pub fn aggregate_aircomp(
    deltas: &[Vec<f64>],
    channels: &[Vec<Complex64>],
    beamformer: &Beamformer,
    power: f64,
    noise_var: f64,
    mask: &Mask,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, AggregationStats)> {
    if deltas.is_empty() || deltas.len() != channels.len() {
        return Err(HistError::Dimension(format!(
            "{} client updates for {} channels",
            deltas.len(),
            channels.len()
        )));
    }
    if deltas.iter().any(|d| d.len() != mask.len()) {
        return Err(HistError::Dimension("update length differs from mask length".into()));
    }
    let m = beamformer.receive_vector();
    for (i, h) in channels.iter().enumerate() {
        precoding_factor(h, &m, deltas.len()).map_err(|_| HistError::Unreachable { client: i })?;
    }
    let stats = mse_for_cell(mask.size(), &beamformer.a, channels, power, noise_var);
    let mut estimate = client_mean(deltas);
    mask.zero_outside(&mut estimate);
    if noise_var > 0.0 {
        let comp_std = (noise_var / 2.0).sqrt();
        let scale = std::f64::consts::SQRT_2 / beamformer.nu;
        for (k, &on) in mask.bits().iter().enumerate() {
            if !on {
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for a in &beamformer.a {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                acc += a.conj() * Complex64::new(re * comp_std, im * comp_std);
            }
            estimate[k] += scale * acc.re;
        }
    }
    Ok((estimate, stats))
}

/// `x̄ <- x̄ - γ δ̂`.
pub fn edge_update_aircomp(edge: &[f64], estimate: &[f64], gamma: f64) -> Vec<f64> {
    edge.iter().zip(estimate).map(|(x, e)| x - gamma * e).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingResult {
    pub a: Vec<Complex64>,
    pub objective: f64,
    /// Objective after each accepted step, one sequence per start.
    pub histories: Vec<Vec<f64>>,
}

/// Max-min receive beamforming: `max_{||a|| = 1} min_i |a^H h_i|^2`.
///
/// Smoothed ascent on the soft-min `-τ log sum_i exp(-|a^H h_i|^2 / τ)`,
/// stepping along its gradient and renormalizing to the unit sphere. A step is
/// accepted only when it raises the true min; otherwise the step shrinks, and
/// once the step is negligible the temperature drops. Starts: each normalized
/// channel, their normalized sum, and `restarts` random unit vectors.
pub fn optimize_beamformer(channels: &[Vec<Complex64>], restarts: usize, iters: usize, seed: u64) -> Result<BeamformingResult> {
    let m = channels.first().map(Vec::len).unwrap_or(0);
    if m == 0 || channels.iter().any(|h| h.len() != m) {
        return Err(HistError::InvalidInput("channels must be nonempty with a common antenna count".into()));
    }
    let scale = channels.iter().map(|h| norm(h).powi(2)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(HistError::ZeroChannels);
    }

    let mut starts: Vec<Vec<Complex64>> = channels.iter().filter_map(|h| normalized(h)).collect();
    let sum: Vec<Complex64> = (0..m).map(|k| channels.iter().map(|h| h[k]).sum()).collect();
    starts.extend(normalized(&sum));
    let mut rng = seed::rng_for(seed, &[seed::tag::BEAMFORM]);
    for _ in 0..restarts {
        let v: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        starts.extend(normalized(&v));
    }

    let mut best: Option<(Vec<Complex64>, f64)> = None;
    let mut histories = Vec::with_capacity(starts.len());
    for start in starts {
        let (a, obj, history) = ascend(channels, start, iters, scale);
        histories.push(history);
        if best.as_ref().is_none_or(|(_, b)| obj > *b) {
            best = Some((a, obj));
        }
    }
    let (a, objective) = best.expect("at least one start");
    Ok(BeamformingResult { a, objective, histories })
}

fn ascend(channels: &[Vec<Complex64>], mut a: Vec<Complex64>, iters: usize, scale: f64) -> (Vec<Complex64>, f64, Vec<f64>) {
    let mut obj = min_gain_sq(&a, channels);
    let mut history = vec![obj];
    let mut tau = 0.1 * scale;
    let mut step = 1.0 / scale;
    let tau_floor = 1e-14 * scale;
    let mut proj = vec![Complex64::new(0.0, 0.0); channels.len()];

    for _ in 0..iters {
        if tau < tau_floor {
            break;
        }
        // Wirtinger gradient of the soft-min w.r.t. conj(a): sum_i w_i h_i (h_i^H a)
        for (p, h) in proj.iter_mut().zip(channels) {
            *p = inner(&a, h).conj();
        }
        let q: Vec<f64> = proj.iter().map(|p| p.norm_sqr()).collect();
        let qmin = q.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = q.iter().map(|&qi| (-(qi - qmin) / tau).exp()).collect();
        let wsum: f64 = w.iter().sum();
        let mut grad = vec![Complex64::new(0.0, 0.0); a.len()];
        for ((h, p), wi) in channels.iter().zip(&proj).zip(&w) {
            let coef = p * (wi / wsum);
            for (g, hk) in grad.iter_mut().zip(h) {
                *g += hk * coef;
            }
        }
        let candidate: Vec<Complex64> = a.iter().zip(&grad).map(|(x, g)| x + g * step).collect();
        match normalized(&candidate) {
            Some(c) => {
                let c_obj = min_gain_sq(&c, channels);
                if c_obj > obj {
                    a = c;
                    obj = c_obj;
                    history.push(obj);
                    step *= 1.5;
                } else {
                    step *= 0.5;
                }
            }
            None => step *= 0.5,
        }
        if step * scale < 1e-12 {
            tau *= 0.3;
            step = 1.0 / scale;
        }
    }
    (a, obj, history)
}
