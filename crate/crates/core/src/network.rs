//! Fully connected feed-forward networks: tanh hidden layers, linear output,
//! mean-squared-error loss, plain mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{schema_fingerprint, Table};
use crate::error::{precondition, Error, Result};
use crate::seed;

/// Loss above which training is aborted.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    /// `[n_in, hidden..., n_out]`.
    pub layer_sizes: Vec<usize>,
}

impl NetworkArch {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(precondition(format!(
                "a network needs input, at least one hidden and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(precondition(format!("layer sizes must be positive, got {layer_sizes:?}")));
        }
        Ok(NetworkArch { layer_sizes })
    }

    /// `n_in`, then `hidden` layers of `width`, then `n_out`.
    pub fn uniform(n_in: usize, hidden: usize, width: usize, n_out: usize) -> Result<Self> {
        let mut sizes = vec![n_in];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(n_out);
        Self::new(sizes)
    }

    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights are stored row-major, one `out x in` matrix per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: NetworkArch,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(net: &Network) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Flattened in the order of [`Network::parameters`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 1e-2,
            epochs: 300,
            batch_size: 32,
            seed: 0,
            init_scale: 3f64.sqrt(),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(precondition(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(precondition("epochs and batch_size must be at least 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(precondition("init_scale must be positive"));
        }
        Ok(())
    }
}

pub fn init_network(arch: &NetworkArch, seed: u64, init_scale: f64) -> Network {
    let mut rng = seed::rng(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = init_scale / (fan_in as f64).sqrt();
        weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)).collect());
        biases.push(vec![0.0; fan_out]);
    }
    Network {
        arch: arch.clone(),
        weights,
        biases,
    }
}

impl Network {
    fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Activations of every layer, input first and output last.
    pub fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.layers() {
            let n_in = self.arch.layer_sizes[l];
            let input = &acts[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
            }
            if l + 1 < self.layers() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("output layer")
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    fn check_shapes(&self, x: &Table, y: &Table) -> Result<()> {
        if x.cols() != self.arch.n_in() || y.cols() != self.arch.n_out() {
            return Err(Error::Schema(format!(
                "network maps {} -> {}, data has {} features and {} targets",
                self.arch.n_in(),
                self.arch.n_out(),
                x.cols(),
                y.cols()
            )));
        }
        if x.rows() != y.rows() {
            return Err(Error::Schema(format!("{} feature rows but {} target rows", x.rows(), y.rows())));
        }
        Ok(())
    }
}

/// Mean squared error over `rows`, averaged over samples and outputs.
pub fn loss(net: &Network, x: &Table, y: &Table, rows: &[usize]) -> Result<f64> {
    net.check_shapes(x, y)?;
    if rows.is_empty() {
        return Err(precondition("loss over an empty batch"));
    }
    let mut total = 0.0;
    for &r in rows {
        let out = net.forward(x.row(r));
        total += out.iter().zip(y.row(r)).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
    }
    Ok(total / (rows.len() * net.arch.n_out()) as f64)
}

/// Exact gradient of [`loss`] by backpropagation.
pub fn gradient(net: &Network, x: &Table, y: &Table, rows: &[usize]) -> Result<Gradients> {
    net.check_shapes(x, y)?;
    if rows.is_empty() {
        return Err(precondition("gradient over an empty batch"));
    }
    let mut grads = Gradients::zeros(net);
    let scale = 2.0 / (rows.len() * net.arch.n_out()) as f64;
    let layers = net.layers();
    for &r in rows {
        let acts = net.activations(x.row(r));
        let mut delta: Vec<f64> = acts[layers]
            .iter()
            .zip(y.row(r))
            .map(|(o, t)| scale * (o - t))
            .collect();
        for l in (0..layers).rev() {
            let n_in = net.arch.layer_sizes[l];
            let input = &acts[l];
            for (o, d) in delta.iter().enumerate() {
                grads.biases[l][o] += d;
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &net.weights[l][o * n_in..(o + 1) * n_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, a) in next.iter_mut().zip(input) {
                    *n *= 1.0 - a * a;
                }
                delta = next;
            }
        }
    }
    Ok(grads)
}

fn apply(net: &mut Network, grads: &Gradients, lr: f64) {
    for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
        w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
    }
    for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
        b.iter_mut().zip(g).for_each(|(b, g)| *b -= lr * g);
    }
}

/// Mini-batch gradient descent. Returns the trained network and the
/// full-data loss after every epoch.
pub fn train(net: &Network, x: &Table, y: &Table, hyper: &TrainHyper) -> Result<(Network, Vec<f64>)> {
    hyper.validate()?;
    net.check_shapes(x, y)?;
    if x.rows() == 0 {
        return Err(precondition("cannot train on an empty dataset"));
    }
    let mut net = net.clone();
    let mut rng = seed::rng(seed::derive_seed(hyper.seed, "shuffle"));
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let all: Vec<usize> = order.clone();
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let grads = gradient(&net, x, y, batch)?;
            apply(&mut net, &grads, hyper.learning_rate);
        }
        let l = loss(&net, x, y, &all)?;
        if !l.is_finite() || l > DIVERGENCE_LOSS {
            return Err(Error::Divergence { epoch, loss: l });
        }
        trace.push(l);
    }
    Ok((net, trace))
}

/// Per-column affine standardisation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(t: &Table) -> Self {
        let n = t.rows().max(1) as f64;
        let mut mean = vec![0.0; t.cols()];
        let mut scale = vec![1.0; t.cols()];
        for c in 0..t.cols() {
            let col = t.column(c);
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean[c] = m;
            if sd > 1e-12 * (1.0 + m.abs()) {
                scale[c] = sd;
            }
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform_table(&self, t: &Table) -> Table {
        let mut out = Table::new(t.cols());
        for row in t.iter_rows() {
            out.push(&self.transform(row)).expect("width preserved");
        }
        out
    }
}

/// A trained network together with its input/output scaling and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledNetwork {
    pub network: Network,
    pub input_scaling: Standardizer,
    pub output_scaling: Standardizer,
    pub schema_fingerprint: String,
    pub hyper: TrainHyper,
    pub init_seed: u64,
    pub final_loss: f64,
}

/// Standardises inputs and targets, initialises and trains a network with
/// `hidden` layers of `width` neurons.
pub fn fit_scaled(
    x: &Table,
    y: &Table,
    schema: &[String],
    hidden: usize,
    width: usize,
    hyper: &TrainHyper,
) -> Result<(ScaledNetwork, Vec<f64>)> {
    if schema.len() != x.cols() {
        return Err(Error::Schema(format!(
            "schema names {} columns, features have {}",
            schema.len(),
            x.cols()
        )));
    }
    let input_scaling = Standardizer::fit(x);
    let output_scaling = Standardizer::fit(y);
    let arch = NetworkArch::uniform(x.cols(), hidden, width, y.cols())?;
    let init_seed = seed::derive_seed(hyper.seed, "init");
    let net = init_network(&arch, init_seed, hyper.init_scale);
    let (network, trace) = train(
        &net,
        &input_scaling.transform_table(x),
        &output_scaling.transform_table(y),
        hyper,
    )?;
    Ok((
        ScaledNetwork {
            network,
            input_scaling,
            output_scaling,
            schema_fingerprint: schema_fingerprint(schema),
            hyper: hyper.clone(),
            init_seed,
            final_loss: *trace.last().expect("at least one epoch"),
        },
        trace,
    ))
}

impl ScaledNetwork {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.network.forward(&self.input_scaling.transform(x));
        self.output_scaling.inverse(&z)
    }

    pub fn check_schema(&self, schema: &[String]) -> Result<()> {
        if schema_fingerprint(schema) != self.schema_fingerprint {
            return Err(Error::Schema("feature schema differs from the one the network was trained on".into()));
        }
        Ok(())
    }
}
