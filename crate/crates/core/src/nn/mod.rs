//! Minimal feed-forward engine: dense layers, ELU, linear/sigmoid/softmax
//! heads, inverted dropout, reverse-mode gradients and Adam.

mod adam;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{one_hot, Matrix};
pub use mlp::{elu, elu_derivative, sigmoid, Gradients, Head, Mlp, Mode};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and optimizer settings shared by every trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHyper {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for NetHyper {
    fn default() -> Self {
        Self {
            hidden: 10,
            hidden_layers: 2,
            dropout: 0.0,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 400,
        }
    }
}

impl NetHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden width and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive, weight decay non-negative".into()));
        }
        Ok(())
    }

    /// Layer widths `in -> hidden x hidden_layers -> out`.
    pub fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(input);
        dims.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        dims.push(output);
        dims
    }

    pub fn build<R: Rng + ?Sized>(&self, input: usize, output: usize, head: Head, rng: &mut R) -> Result<Mlp> {
        Mlp::new(&self.dims(input, output), head, self.dropout, rng)
    }

    pub fn adam(&self, num_params: usize) -> AdamState {
        AdamState::new(
            num_params,
            AdamConfig::new(self.learning_rate).with_weight_decay(self.weight_decay),
        )
    }
}

/// Shuffled minibatch partition of `0..n`. A batch size of at least `n`
/// yields a single full batch in natural order.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if batch_size >= n {
        return vec![idx];
    }
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
