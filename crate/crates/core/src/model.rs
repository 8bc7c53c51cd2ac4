//! Flat-parameter dense networks with exact backpropagation.
//!
//! Parameters are stored in one flat vector in the order
//! `(W_1, b_1, W_2, b_2, ...)`. Each `W_l` is `output_dim x input_dim`,
//! row-major, so row `o` holds the incoming weights of neuron `o` and column
//! `k` holds the outgoing weights of the previous layer's neuron `k`. Masks
//! index into this order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};
use crate::masking::Mask;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Builds `dims[0] -> dims[1] -> ... -> dims[last]` with ReLU hidden layers and
/// a softmax cross-entropy head.
pub fn mlp_layers(dims: &[usize]) -> Vec<LayerSpec> {
    let last = dims.len().saturating_sub(2);
    dims.windows(2)
        .enumerate()
        .map(|(l, w)| {
            let act = if l == last {
                Activation::SoftmaxCrossEntropy
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(HistError::InvalidInput("network needs at least one layer".into()));
    }
    for (l, spec) in layers.iter().enumerate() {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(HistError::InvalidInput(format!("layer {l} has a zero dimension")));
        }
        if l > 0 && layers[l - 1].output_dim != spec.input_dim {
            return Err(HistError::Dimension(format!(
                "layer {l} input {} != layer {} output {}",
                spec.input_dim,
                l - 1,
                layers[l - 1].output_dim
            )));
        }
        let is_last = l + 1 == layers.len();
        match spec.activation {
            Activation::SoftmaxCrossEntropy if !is_last => {
                return Err(HistError::InvalidInput(
                    "softmax head only allowed as the final layer".into(),
                ))
            }
            Activation::Relu if is_last => {
                return Err(HistError::InvalidInput(
                    "final layer must be a softmax head or identity (squared loss)".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Supervision attached to a batch: class labels for a softmax head, real
/// vectors for an identity head trained with squared loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(Vec<usize>),
    Values { dim: usize, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleBatch {
    dim: usize,
    features: Vec<f64>,
    targets: Targets,
}

impl ExampleBatch {
    pub fn classification(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(HistError::Dimension(format!(
                "{} features for {} examples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            targets: Targets::Classes(labels),
        })
    }

    pub fn regression(dim: usize, features: Vec<f64>, target_dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || target_dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(HistError::Dimension("ragged regression features".into()));
        }
        let n = features.len() / dim;
        if values.len() != n * target_dim {
            return Err(HistError::Dimension(format!(
                "{} target values for {n} examples of dim {target_dim}",
                values.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            targets: Targets::Values {
                dim: target_dim,
                values,
            },
        })
    }

    pub fn empty_like(&self) -> Self {
        let targets = match &self.targets {
            Targets::Classes(_) => Targets::Classes(Vec::new()),
            Targets::Values { dim, .. } => Targets::Values {
                dim: *dim,
                values: Vec::new(),
            },
        };
        Self {
            dim: self.dim,
            features: Vec::new(),
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(l) => Some(l),
            Targets::Values { .. } => None,
        }
    }

    /// Copies the listed examples, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Classes(l) => Targets::Classes(indices.iter().map(|&i| l[i]).collect()),
            Targets::Values { dim, values } => Targets::Values {
                dim: *dim,
                values: indices
                    .iter()
                    .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
            },
        };
        Self {
            dim: self.dim,
            features,
            targets,
        }
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &ExampleBatch) -> Result<Self> {
        if self.dim != other.dim {
            return Err(HistError::Dimension("feature dims differ".into()));
        }
        let targets = match (&self.targets, &other.targets) {
            (Targets::Classes(a), Targets::Classes(b)) => {
                Targets::Classes(a.iter().chain(b).copied().collect())
            }
            (Targets::Values { dim: da, values: a }, Targets::Values { dim: db, values: b }) if da == db => {
                Targets::Values {
                    dim: *da,
                    values: a.iter().chain(b).copied().collect(),
                }
            }
            _ => return Err(HistError::Dimension("target kinds differ".into())),
        };
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        Ok(Self {
            dim: self.dim,
            features,
            targets,
        })
    }
}

/// Row-major `rows x cols` matrix of network outputs (class probabilities for
/// a softmax head).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Predictions {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

struct Pass {
    /// Post-activation outputs per layer, `acts[0]` being the input.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    n: usize,
}

impl DenseNet {
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate_layers(&layers)?;
        let d = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self {
            layers,
            params: vec![0.0; d],
        })
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        if params.len() != net.params.len() {
            return Err(HistError::Dimension(format!(
                "expected {} params, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(HistError::InvalidInput("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut rng = seed::rng_for(seed, &[seed::tag::INIT]);
        for l in 0..net.layers.len() {
            let spec = net.layers[l];
            let bound = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            let (w, _) = net.layer_offsets(l);
            for v in &mut net.params[w..w + spec.input_dim * spec.output_dim] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_params(self.layers.clone(), params)
    }

    pub fn d(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    /// Offsets of `W_l` and `b_l` in the flat vector.
    pub fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        layer_offsets(&self.layers, layer)
    }

    fn check_batch(&self, batch: &ExampleBatch) -> Result<()> {
        if batch.dim() != self.input_dim() {
            return Err(HistError::Dimension(format!(
                "batch feature dim {} != network input dim {}",
                batch.dim(),
                self.input_dim()
            )));
        }
        let out = self.output_dim();
        match (self.layers.last().map(|l| l.activation), batch.targets()) {
            (Some(Activation::SoftmaxCrossEntropy), Targets::Classes(labels)) => {
                if let Some(&bad) = labels.iter().find(|&&y| y >= out) {
                    return Err(HistError::Dimension(format!("label {bad} >= {out} classes")));
                }
            }
            (Some(Activation::Identity), Targets::Values { dim, .. }) if *dim == out => {}
            _ => {
                return Err(HistError::Dimension(
                    "batch targets do not match the network head".into(),
                ))
            }
        }
        Ok(())
    }

    fn run(&self, batch: &ExampleBatch) -> Pass {
        let n = batch.len();
        let mut acts = vec![batch.features().to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..b_off];
            let b = &self.params[b_off..b_off + spec.output_dim];
            let input = &acts[l];
            let mut z = vec![0.0; n * spec.output_dim];
            for i in 0..n {
                let a = &input[i * spec.input_dim..(i + 1) * spec.input_dim];
                let zi = &mut z[i * spec.output_dim..(i + 1) * spec.output_dim];
                for (o, zo) in zi.iter_mut().enumerate() {
                    let row = &w[o * spec.input_dim..(o + 1) * spec.input_dim];
                    *zo = b[o] + row.iter().zip(a).map(|(wk, ak)| wk * ak).sum::<f64>();
                }
            }
            let out = match spec.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
                Activation::SoftmaxCrossEntropy => {
                    let mut p = z.clone();
                    for row in p.chunks_mut(spec.output_dim) {
                        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut s = 0.0;
                        for v in row.iter_mut() {
                            *v = (*v - m).exp();
                            s += *v;
                        }
                        for v in row.iter_mut() {
                            *v /= s;
                        }
                    }
                    p
                }
            };
            pre.push(z);
            acts.push(out);
        }
        Pass { acts, pre, n }
    }

    fn loss_of(&self, pass: &Pass, batch: &ExampleBatch) -> f64 {
        let n = pass.n as f64;
        let logits = pass.pre.last().expect("at least one layer");
        let out = self.output_dim();
        match batch.targets() {
            Targets::Classes(labels) => {
                let mut total = 0.0;
                for (i, &y) in labels.iter().enumerate() {
                    let row = &logits[i * out..(i + 1) * out];
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    total += lse - row[y];
                }
                total / n
            }
            Targets::Values { values, .. } => {
                0.5 * logits
                    .iter()
                    .zip(values)
                    .map(|(z, y)| (z - y) * (z - y))
                    .sum::<f64>()
                    / n
            }
        }
    }

    /// Mean loss over the batch and the output matrix.
    pub fn forward(&self, batch: &ExampleBatch) -> Result<(f64, Predictions)> {
        self.check_batch(batch)?;
        if batch.is_empty() {
            return Err(HistError::EmptyDataset);
        }
        let pass = self.run(batch);
        let loss = self.loss_of(&pass, batch);
        let values = pass.acts.last().cloned().unwrap_or_default();
        Ok((
            loss,
            Predictions {
                rows: pass.n,
                cols: self.output_dim(),
                values,
            },
        ))
    }

    pub fn loss(&self, batch: &ExampleBatch) -> Result<f64> {
        self.forward(batch).map(|(l, _)| l)
    }

    /// Fraction of examples whose arg-max output equals the label.
    pub fn accuracy(&self, batch: &ExampleBatch) -> Result<f64> {
        let (_, preds) = self.forward(batch)?;
        let labels = batch
            .labels()
            .ok_or_else(|| HistError::InvalidInput("accuracy needs class labels".into()))?;
        let hits = (0..preds.rows).filter(|&i| preds.argmax(i) == labels[i]).count();
        Ok(hits as f64 / preds.rows as f64)
    }

    /// Exact gradient of the mean batch loss.
    pub fn backward(&self, batch: &ExampleBatch) -> Result<Gradient> {
        self.loss_and_gradient(batch).map(|(_, g)| g)
    }

    pub fn loss_and_gradient(&self, batch: &ExampleBatch) -> Result<(f64, Gradient)> {
        self.check_batch(batch)?;
        if batch.is_empty() {
            return Err(HistError::EmptyDataset);
        }
        let pass = self.run(batch);
        let loss = self.loss_of(&pass, batch);
        let n = pass.n;
        let inv_n = 1.0 / n as f64;
        let mut grad = vec![0.0; self.d()];

        let last = self.layers.len() - 1;
        let out = self.output_dim();
        let mut dz: Vec<f64> = match batch.targets() {
            Targets::Classes(labels) => {
                let mut dz = pass.acts[last + 1].clone();
                for (i, &y) in labels.iter().enumerate() {
                    dz[i * out + y] -= 1.0;
                }
                dz.iter_mut().for_each(|v| *v *= inv_n);
                dz
            }
            Targets::Values { values, .. } => pass.pre[last]
                .iter()
                .zip(values)
                .map(|(z, y)| (z - y) * inv_n)
                .collect(),
        };

        for l in (0..self.layers.len()).rev() {
            let spec = self.layers[l];
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &pass.acts[l];
            {
                let (gw, gb) = grad[w_off..b_off + spec.output_dim].split_at_mut(b_off - w_off);
                for i in 0..n {
                    let a = &input[i * spec.input_dim..(i + 1) * spec.input_dim];
                    let dzi = &dz[i * spec.output_dim..(i + 1) * spec.output_dim];
                    for (o, &g) in dzi.iter().enumerate() {
                        gb[o] += g;
                        if g != 0.0 {
                            let row = &mut gw[o * spec.input_dim..(o + 1) * spec.input_dim];
                            for (r, ak) in row.iter_mut().zip(a) {
                                *r += g * ak;
                            }
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w_off..b_off];
            let mut da = vec![0.0; n * spec.input_dim];
            for i in 0..n {
                let dzi = &dz[i * spec.output_dim..(i + 1) * spec.output_dim];
                let dai = &mut da[i * spec.input_dim..(i + 1) * spec.input_dim];
                for (o, &g) in dzi.iter().enumerate() {
                    if g != 0.0 {
                        let row = &w[o * spec.input_dim..(o + 1) * spec.input_dim];
                        for (d, wk) in dai.iter_mut().zip(row) {
                            *d += g * wk;
                        }
                    }
                }
            }
            // previous layer is hidden: apply its activation derivative
            let prev_pre = &pass.pre[l - 1];
            match self.layers[l - 1].activation {
                Activation::Relu => {
                    for (d, &z) in da.iter_mut().zip(prev_pre) {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Identity => {}
                Activation::SoftmaxCrossEntropy => unreachable!("validated: softmax only last"),
            }
            dz = da;
        }
        Ok((loss, Gradient { values: grad }))
    }

    /// `x <- x - gamma * (mask ⊙ g)`.
    pub fn apply_masked_step(&self, g: &Gradient, mask: &Mask, gamma: f64) -> Result<DenseNet> {
        let mut next = self.clone();
        next.masked_step_in_place(g, mask, gamma)?;
        Ok(next)
    }

    pub fn masked_step_in_place(&mut self, g: &Gradient, mask: &Mask, gamma: f64) -> Result<()> {
        if g.values.len() != self.d() || mask.len() != self.d() {
            return Err(HistError::Dimension(format!(
                "params {}, gradient {}, mask {}",
                self.d(),
                g.values.len(),
                mask.len()
            )));
        }
        if !(gamma > 0.0) {
            return Err(HistError::InvalidInput(format!("step size must be positive, got {gamma}")));
        }
        for ((x, &gk), &on) in self.params.iter_mut().zip(&g.values).zip(mask.bits()) {
            if on {
                *x -= gamma * gk;
            }
        }
        Ok(())
    }
}

pub(crate) fn layer_offsets(layers: &[LayerSpec], layer: usize) -> (usize, usize) {
    let start: usize = layers[..layer].iter().map(LayerSpec::param_count).sum();
    let spec = layers[layer];
    (start, start + spec.input_dim * spec.output_dim)
}

/// Loss and gradient of `f = (1/N) sum_j f_j`, where `f_j` is the unweighted
/// mean of the client losses `F_i` (each a mean over the client's shard).
pub fn population_loss_and_gradient(net: &DenseNet, cells: &[Vec<ExampleBatch>]) -> Result<(f64, Gradient)> {
    if cells.is_empty() || cells.iter().any(|c| c.is_empty()) {
        return Err(HistError::EmptyDataset);
    }
    let n_cells = cells.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.d()];
    for cell in cells {
        let (cell_loss, cell_grad) = cell_loss_and_gradient(net, cell)?;
        loss += cell_loss / n_cells;
        for (acc, v) in grad.iter_mut().zip(&cell_grad.values) {
            *acc += v / n_cells;
        }
    }
    Ok((loss, Gradient { values: grad }))
}

/// Loss and gradient of `f_j = (1/n_j) sum_i F_i` for one cell.
pub fn cell_loss_and_gradient(net: &DenseNet, clients: &[ExampleBatch]) -> Result<(f64, Gradient)> {
    if clients.is_empty() {
        return Err(HistError::EmptyDataset);
    }
    let n = clients.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.d()];
    for shard in clients {
        let (l, g) = net.loss_and_gradient(shard)?;
        loss += l / n;
        for (acc, v) in grad.iter_mut().zip(&g.values) {
            *acc += v / n;
        }
    }
    Ok((loss, Gradient { values: grad }))
}

/// `||grad f(x)||^2` over the whole client population.
pub fn full_gradient_norm(net: &DenseNet, cells: &[Vec<ExampleBatch>]) -> Result<f64> {
    population_loss_and_gradient(net, cells).map(|(_, g)| g.norm_sq())
}
