//! Dense ReLU network with hand-written backpropagation, and the synthetic
//! 2-D classification datasets used for desk-scale training.
//!
//! Parameters live in one flat vector, layer by layer, each layer storing its
//! `out x in` weight matrix row-major followed by its bias. Optimizers work on
//! that vector directly. All reductions run in a fixed order so that a given
//! seed always reproduces the same floating-point results.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Row-major `rows x cols` matrix of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "batch of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    pub params: Vec<f64>,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpan {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: usize,
    pub bias: usize,
}

impl LayerSpan {
    pub fn end(&self) -> usize {
        self.bias + self.outputs
    }
}

impl MlpModel {
    /// Zero-initialised model with layer widths `dims` (input first).
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "network dims need at least two positive widths, got {dims:?}"
            )));
        }
        let count = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; count],
        })
    }

    pub fn with_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(dims)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "{dims:?} has {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn layers(&self) -> Vec<LayerSpan> {
        let mut offset = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    inputs: w[0],
                    outputs: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset = span.end();
                span
            })
            .collect()
    }

    /// Affine layers with ReLU between them and identity on the output.
    pub fn forward(&self, batch: &Batch) -> Result<(Vec<f64>, ForwardCache)> {
        if batch.cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols,
                self.input_dim()
            )));
        }
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut current = batch.data.clone();
        for (li, span) in layers.iter().enumerate() {
            let w = &self.params[span.weights..span.bias];
            let b = &self.params[span.bias..span.end()];
            let mut z = vec![0.0; batch.rows * span.outputs];
            for r in 0..batch.rows {
                let x = &current[r * span.inputs..(r + 1) * span.inputs];
                for o in 0..span.outputs {
                    let row = &w[o * span.inputs..(o + 1) * span.inputs];
                    let mut acc = b[o];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    z[r * span.outputs + o] = acc;
                }
            }
            let next = if li + 1 < layers.len() {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok((
            current,
            ForwardCache {
                dims: self.dims.clone(),
                rows: batch.rows,
                inputs,
                pre,
            },
        ))
    }

    /// Class predictions (first maximum on ties).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(batch)?;
        Ok(logits.chunks(self.output_dim()).map(argmax).collect())
    }

    pub fn accuracy(&self, batch: &Batch, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(batch)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-layer inputs (post-activation) and pre-activations from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    dims: Vec<usize>,
    rows: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Gradient of the loss, laid out like `MlpModel::params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub flat: Vec<f64>,
}

impl Gradients {
    pub fn weights<'a>(&'a self, span: &LayerSpan) -> &'a [f64] {
        &self.flat[span.weights..span.bias]
    }

    pub fn bias<'a>(&'a self, span: &LayerSpan) -> &'a [f64] {
        &self.flat[span.bias..span.end()]
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if classes == 0 || logits.len() != classes * labels.len() {
        return Err(Error::Shape(format!(
            "{} logits do not match {} labels of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    ensure_finite("logits", logits)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Shape(format!("label {bad} out of range for {classes} classes")));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (r, (row, &label)) in logits.chunks(classes).zip(labels).enumerate() {
        let top = argmax(row);
        let max = row[top];
        let mut rest = 0.0;
        for (i, &z) in row.iter().enumerate() {
            if i != top {
                rest += (z - max).exp();
            }
        }
        let log_partition = max + rest.ln_1p();
        loss += log_partition - row[label];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - log_partition).exp() / n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// Reverse-mode gradients of the loss whose logit gradient is `dlogits`.
pub fn backward(model: &MlpModel, cache: &ForwardCache, dlogits: &[f64]) -> Result<Gradients> {
    if cache.dims != model.dims {
        return Err(Error::Shape(format!(
            "cache was built for {:?}, model is {:?}",
            cache.dims, model.dims
        )));
    }
    if dlogits.len() != cache.rows * model.output_dim() {
        return Err(Error::Shape(format!(
            "dlogits has {} values, expected {}",
            dlogits.len(),
            cache.rows * model.output_dim()
        )));
    }
    let layers = model.layers();
    let mut grad = vec![0.0; model.num_params()];
    let mut delta = dlogits.to_vec();
    for li in (0..layers.len()).rev() {
        let span = layers[li];
        let input = &cache.inputs[li];
        for r in 0..cache.rows {
            let d = &delta[r * span.outputs..(r + 1) * span.outputs];
            let x = &input[r * span.inputs..(r + 1) * span.inputs];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let gw = &mut grad[span.weights + o * span.inputs..span.weights + (o + 1) * span.inputs];
                for (g, &xi) in gw.iter_mut().zip(x) {
                    *g += dv * xi;
                }
                grad[span.bias + o] += dv;
            }
        }
        if li == 0 {
            break;
        }
        let w = &model.params[span.weights..span.bias];
        let below = &cache.pre[li - 1];
        let mut next = vec![0.0; cache.rows * span.inputs];
        for r in 0..cache.rows {
            let d = &delta[r * span.outputs..(r + 1) * span.outputs];
            for (o, &dv) in d.iter().enumerate() {
                let row = &w[o * span.inputs..(o + 1) * span.inputs];
                for (i, &wi) in row.iter().enumerate() {
                    next[r * span.inputs + i] += dv * wi;
                }
            }
            // ReLU subgradient is 0 at 0
            for i in 0..span.inputs {
                if below[r * span.inputs + i] <= 0.0 {
                    next[r * span.inputs + i] = 0.0;
                }
            }
        }
        delta = next;
    }
    Ok(Gradients { flat: grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Four Gaussian clusters at `(+-1, +-1)`; class 1 where the signs differ.
    XorBlobs,
    /// Two interleaved half circles.
    TwoMoons,
    /// Three Gaussian clusters on a circle of radius 1.5.
    GaussianBlobs,
}

impl DatasetKind {
    pub fn classes(self) -> usize {
        match self {
            DatasetKind::XorBlobs | DatasetKind::TwoMoons => 2,
            DatasetKind::GaussianBlobs => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub dim: usize,
    pub classes: usize,
    /// `n x dim`, row-major.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gather the samples at `indices` into a batch with their labels.
    pub fn gather(&self, indices: &[usize]) -> (Batch, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * self.dim..(i + 1) * self.dim]);
            labels.push(self.labels[i]);
        }
        (
            Batch {
                rows: indices.len(),
                cols: self.dim,
                data,
            },
            labels,
        )
    }
}

/// Fraction of samples used for training; the rest is held out.
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn generate_dataset(kind: DatasetKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Config(format!("dataset needs n >= 10, got {n}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y, label) = match kind {
            DatasetKind::XorBlobs => {
                let cluster: u8 = rng.random_range(0..4);
                let cx = if cluster & 1 == 0 { -1.0 } else { 1.0 };
                let cy = if cluster & 2 == 0 { -1.0 } else { 1.0 };
                (cx, cy, usize::from(cx * cy < 0.0))
            }
            DatasetKind::TwoMoons => {
                let label = usize::from(rng.random_bool(0.5));
                let t = rng.random_range(0.0..std::f64::consts::PI);
                if label == 0 {
                    (t.cos(), t.sin(), 0)
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin(), 1)
                }
            }
            DatasetKind::GaussianBlobs => {
                let label = rng.random_range(0..3usize);
                let angle = 2.0 * std::f64::consts::PI * label as f64 / 3.0;
                (1.5 * angle.cos(), 1.5 * angle.sin(), label)
            }
        };
        let (dx, dy) = if noise > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        inputs.push(x + dx);
        inputs.push(y + dy);
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let cut = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let test = order.split_off(cut);
    Ok(Dataset {
        kind,
        seed,
        dim: 2,
        classes: kind.classes(),
        inputs,
        labels,
        train: order,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_at(model: &MlpModel, batch: &Batch, labels: &[usize]) -> f64 {
        let (logits, _) = model.forward(batch).unwrap();
        cross_entropy(&logits, model.output_dim(), labels).unwrap().0
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let model = MlpModel::new(&[2, 4, 3]).unwrap();
        let batch = Batch::new(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let (logits, _) = model.forward(&batch).unwrap();
        assert_eq!(logits, vec![0.0; 6]);
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let model = MlpModel::with_params(&[2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let batch = Batch::new(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(model.forward(&batch).unwrap().0, batch.data);
    }

    #[test]
    fn hand_computed_relu_layer() {
        // hidden = relu([[1, -1], [2, 0.5]] x + [0, -1]), out = [1, 1] hidden + 0.5
        let params = vec![1.0, -1.0, 2.0, 0.5, 0.0, -1.0, 1.0, 1.0, 0.5];
        let model = MlpModel::with_params(&[2, 2, 1], params).unwrap();
        let batch = Batch::new(1, 2, vec![1.0, 2.0]).unwrap();
        // z = (-1, 2 + 1 - 1 = 2) -> relu (0, 2) -> 0 + 2 + 0.5
        assert_eq!(model.forward(&batch).unwrap().0, vec![2.5]);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let model = MlpModel::new(&[2, 3, 2]).unwrap();
        let bad = Batch::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(model.forward(&bad), Err(Error::Shape(_))));
        let batch = Batch::new(1, 2, vec![0.0; 2]).unwrap();
        let (_, cache) = model.forward(&batch).unwrap();
        let other = MlpModel::new(&[2, 4, 2]).unwrap();
        assert!(matches!(backward(&other, &cache, &[0.0, 0.0]), Err(Error::Shape(_))));
        assert!(backward(&model, &cache, &[0.0]).is_err());
        assert!(MlpModel::new(&[2]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, _) = cross_entropy(&[0.0, 0.0], 2, &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (loss, _) = cross_entropy(&[50.0, 0.0], 2, &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-20);
        assert!(cross_entropy(&[0.0, 0.0], 2, &[2]).is_err());
        let (loss, _) = cross_entropy(&[1.0, 2.0, 3.0], 3, &[0]).unwrap();
        let direct = -(1f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((loss - direct).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.5];
        let labels = [2, 0];
        let (_, grad) = cross_entropy(&logits, 3, &labels).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (cross_entropy(&p, 3, &labels).unwrap().0 - cross_entropy(&m, 3, &labels).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_dlogits_give_zero_gradients() {
        let model = MlpModel::with_params(&[2, 3, 2], (0..17).map(|i| i as f64 * 0.1 - 0.8).collect()).unwrap();
        let batch = Batch::new(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let (_, cache) = model.forward(&batch).unwrap();
        let g = backward(&model, &cache, &[0.0; 4]).unwrap();
        assert!(g.flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_weight_gradient_is_outer_product() {
        let model = MlpModel::with_params(&[3, 2], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.0, 0.0]).unwrap();
        let batch = Batch::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap();
        let (_, cache) = model.forward(&batch).unwrap();
        let d = [0.5, -1.0, 2.0, 0.25];
        let g = backward(&model, &cache, &d).unwrap();
        let span = model.layers()[0];
        for o in 0..2 {
            for i in 0..3 {
                let expected = d[o] * batch.row(0)[i] + d[2 + o] * batch.row(1)[i];
                assert!((g.weights(&span)[o * 3 + i] - expected).abs() < 1e-15);
            }
            assert!((g.bias(&span)[o] - (d[o] + d[2 + o])).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [2, 4, 2];
            let n = MlpModel::new(&dims).unwrap().num_params();
            let params: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let model = MlpModel::with_params(&dims, params).unwrap();
            let data: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let batch = Batch::new(5, 2, data).unwrap();
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
            let (logits, cache) = model.forward(&batch).unwrap();
            let (_, dl) = cross_entropy(&logits, 2, &labels).unwrap();
            let g = backward(&model, &cache, &dl).unwrap();
            let h = 1e-5;
            for i in 0..n {
                let mut p = model.clone();
                let mut m = model.clone();
                p.params[i] += h;
                m.params[i] -= h;
                let fd = (loss_at(&p, &batch, &labels) - loss_at(&m, &batch, &labels)) / (2.0 * h);
                let err = (fd - g.flat[i]).abs() / fd.abs().max(g.flat[i].abs()).max(1e-4);
                assert!(err < 1e-5, "seed {seed} param {i}: fd {fd} vs {}", g.flat[i]);
            }
        }
    }

    #[test]
    fn datasets_are_deterministic_and_split() {
        let a = generate_dataset(DatasetKind::XorBlobs, 200, 0.25, 7).unwrap();
        let b = generate_dataset(DatasetKind::XorBlobs, 200, 0.25, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(DatasetKind::XorBlobs, 200, 0.25, 8).unwrap();
        assert_ne!(a.inputs, c.inputs);
        assert_eq!(a.train.len(), 160);
        assert_eq!(a.test.len(), 40);
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert!(generate_dataset(DatasetKind::TwoMoons, 5, 0.1, 1).is_err());
    }

    #[test]
    fn xor_labels_follow_quadrants_without_noise() {
        let d = generate_dataset(DatasetKind::XorBlobs, 100, 0.0, 1).unwrap();
        for i in 0..d.len() {
            let (x, y) = (d.inputs[2 * i], d.inputs[2 * i + 1]);
            assert_eq!(d.labels[i], usize::from(x * y < 0.0));
        }
    }

    #[test]
    fn label_balance() {
        let d = generate_dataset(DatasetKind::XorBlobs, 2000, 0.25, 7).unwrap();
        let ones = d.labels.iter().filter(|&&l| l == 1).count() as f64 / 2000.0;
        assert!((ones - 0.5).abs() < 0.05 * 0.5, "{ones}");
        let g = generate_dataset(DatasetKind::GaussianBlobs, 2000, 0.3, 7).unwrap();
        for class in 0..3 {
            let frac = g.labels.iter().filter(|&&l| l == class).count() as f64 / 2000.0;
            assert!((frac - 1.0 / 3.0).abs() < 0.05 / 3.0, "class {class}: {frac}");
        }
    }
}
