use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Output non-linearity applied after the last dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; activations are cached for [`Mlp::backward`].
    Train,
    /// Deterministic; nothing is cached.
    Eval,
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone)]
struct Cache {
    /// Input of every dense layer (post-activation, post-dropout of the previous one).
    inputs: Vec<Matrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<Matrix>,
    /// Inverted-dropout multipliers per hidden layer (`0` or `1 / keep`).
    masks: Vec<Option<Vec<f64>>>,
    output: Matrix,
}

/// Gradients produced by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the batch input.
    pub input: Matrix,
}

/// Feed-forward network: dense layers with ELU between them and a
/// configurable output head.
///
/// Parameters live in one flat buffer. For each layer `l` with shape
/// `out x in` the buffer holds the row-major weight matrix followed by the
/// `out` biases; layers follow in order. Serialized snapshots carry `dims`
/// (layer widths, input first), `head`, `dropout` and this buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    head: Head,
    dropout: Vec<f64>,
    params: Vec<f64>,
    #[serde(skip)]
    cache: Option<Cache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.head == other.head
            && self.dropout == other.dropout
            && self.params == other.params
    }
}

impl Mlp {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    ///
    /// `dims` lists layer widths starting with the input width; every
    /// interior entry is a hidden ELU layer with dropout probability `dropout`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        head: Head,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(dims, head)?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        mlp.dropout = vec![dropout; dims.len() - 2];
        let mut offset = 0;
        for l in 0..mlp.num_layers() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut mlp.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(mlp)
    }

    /// All-zero parameters and no dropout.
    pub fn zeros(dims: &[usize], head: Head) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("an Mlp needs at least input and output widths".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {dims:?}")));
        }
        if head == Head::Softmax && dims[dims.len() - 1] < 2 {
            return Err(Error::Config("softmax head needs at least two outputs".into()));
        }
        let n: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            head,
            dropout: vec![0.0; dims.len() - 2],
            params: vec![0.0; n],
            cache: None,
        })
    }

    pub fn with_dropout(mut self, dropout: Vec<f64>) -> Result<Self> {
        if dropout.len() != self.dims.len() - 2 {
            return Err(Error::Config(format!(
                "{} dropout rates for {} hidden layers",
                dropout.len(),
                self.dims.len() - 2
            )));
        }
        if dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("dropout probability outside [0, 1)".into()));
        }
        self.dropout = dropout;
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Offset of layer `l`'s weights in the flat parameter buffer.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.dims[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Sets layer `l` from a row-major `out x in` weight buffer and biases.
    pub fn set_layer(&mut self, l: usize, weights: &[f64], biases: &[f64]) -> Result<()> {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        if weights.len() != fan_in * fan_out || biases.len() != fan_out {
            return Err(Error::Shape(format!(
                "layer {l} expects {fan_out}x{fan_in} weights and {fan_out} biases"
            )));
        }
        let off = self.layer_offset(l);
        self.params[off..off + fan_in * fan_out].copy_from_slice(weights);
        self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]
            .copy_from_slice(biases);
        Ok(())
    }

    fn dense(&self, l: usize, input: &Matrix) -> Matrix {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let off = self.layer_offset(l);
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        let mut z = Matrix::zeros(input.rows(), fan_out);
        for i in 0..input.rows() {
            let x = input.row(i);
            let zr = z.row_mut(i);
            for (o, zo) in zr.iter_mut().enumerate() {
                let wr = &w[o * fan_in..(o + 1) * fan_in];
                *zo = b[o] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        z
    }

    fn apply_head(&self, mut z: Matrix) -> Matrix {
        match self.head {
            Head::Linear => {}
            Head::Sigmoid => z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Head::Softmax => {
                for i in 0..z.rows() {
                    softmax_in_place(z.row_mut(i));
                }
            }
        }
        z
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Batch forward pass. In [`Mode::Train`] dropout masks are drawn from
    /// `rng` and activations are cached for a subsequent [`Mlp::backward`];
    /// in [`Mode::Eval`] the cache is cleared and `rng` is not touched.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        input: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Matrix> {
        if mode == Mode::Eval {
            self.cache = None;
            return self.predict(input);
        }
        self.check_input(input)?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut masks = Vec::with_capacity(layers - 1);
        let mut x = input.clone();
        for l in 0..layers - 1 {
            let z = self.dense(l, &x);
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = elu(*v));
            let p = self.dropout[l];
            let mask = if p > 0.0 {
                let keep = 1.0 - p;
                let m: Vec<f64> = (0..a.as_slice().len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                a.as_mut_slice()
                    .iter_mut()
                    .zip(&m)
                    .for_each(|(v, k)| *v *= k);
                Some(m)
            } else {
                None
            };
            inputs.push(std::mem::replace(&mut x, a));
            pre.push(z);
            masks.push(mask);
        }
        let z = self.dense(layers - 1, &x);
        inputs.push(x);
        let out = self.apply_head(z);
        self.cache = Some(Cache {
            inputs,
            pre,
            masks,
            output: out.clone(),
        });
        Ok(out)
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let layers = self.num_layers();
        let mut x = input.clone();
        for l in 0..layers - 1 {
            let mut z = self.dense(l, &x);
            z.as_mut_slice().iter_mut().for_each(|v| *v = elu(*v));
            x = z;
        }
        Ok(self.apply_head(self.dense(layers - 1, &x)))
    }

    /// Forward pass of a single sample.
    pub fn forward_one<R: Rng + ?Sized>(
        &mut self,
        input: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward(&m, mode, rng)?.into_vec())
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.predict(&m)?.into_vec())
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with
    /// respect to the head output of the last train-mode forward pass.
    /// Reuses that pass's dropout masks.
    pub fn backward(&self, grad_output: &Matrix) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward called without a train-mode forward".into()))?;
        if grad_output.rows() != cache.output.rows() || grad_output.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, forward output was {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                cache.output.rows(),
                self.out_dim()
            )));
        }
        let batch = grad_output.rows();
        let mut dz = grad_output.clone();
        match self.head {
            Head::Linear => {}
            Head::Sigmoid => {
                for (g, &o) in dz.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
                    *g *= o * (1.0 - o);
                }
            }
            Head::Softmax => {
                for i in 0..batch {
                    let o = cache.output.row(i);
                    let g = dz.row_mut(i);
                    let dot: f64 = g.iter().zip(o).map(|(a, b)| a * b).sum();
                    for (gj, oj) in g.iter_mut().zip(o) {
                        *gj = oj * (*gj - dot);
                    }
                }
            }
        }

        let mut grads = vec![0.0; self.params.len()];
        let layers = self.num_layers();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let x = &cache.inputs[l];
            {
                let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for i in 0..batch {
                    let d = dz.row(i);
                    let xi = x.row(i);
                    for o in 0..fan_out {
                        let g = d[o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        row.iter_mut().zip(xi).for_each(|(w, xv)| *w += g * xv);
                    }
                }
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut dx = Matrix::zeros(batch, fan_in);
            for i in 0..batch {
                let d = dz.row(i);
                let dxi = dx.row_mut(i);
                for o in 0..fan_out {
                    let g = d[o];
                    if g == 0.0 {
                        continue;
                    }
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    dxi.iter_mut().zip(wr).for_each(|(a, b)| *a += g * b);
                }
            }
            if l == 0 {
                return Ok(Gradients {
                    params: grads,
                    input: dx,
                });
            }
            // back through dropout and ELU of hidden layer l-1
            let z = &cache.pre[l - 1];
            if let Some(mask) = &cache.masks[l - 1] {
                dx.as_mut_slice()
                    .iter_mut()
                    .zip(mask)
                    .for_each(|(g, m)| *g *= m);
            }
            dx.as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .for_each(|(g, &zv)| *g *= elu_derivative(zv));
            dz = dx;
        }
        unreachable!("loop returns at the input layer")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mlp: Mlp = serde_json::from_str(s)?;
        let expected = Self::zeros(&mlp.dims, mlp.head)?.params.len();
        if mlp.params.len() != expected || mlp.dropout.len() != mlp.dims.len() - 2 {
            return Err(Error::Shape(format!(
                "snapshot has {} parameters, dims {:?} need {expected}",
                mlp.params.len(),
                mlp.dims
            )));
        }
        Ok(mlp)
    }
}
