use rand::RngCore;

use crate::feature_store::{FeatureMatrix, LabeledFeatureSet};
use crate::rng::unit_f64;

/// One-hidden-layer perceptron `input → tanh(hidden) → softmax(output)`.
///
/// Parameters live in one flat vector laid out as
/// `[W1 (hidden×input), b1 (hidden), W2 (output×hidden), b2 (output)]`,
/// row-major, which is also the layout of [`ToyModel::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

/// Activations kept for backpropagation.
pub(crate) struct Trace {
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ToyModel {
    pub const DEFAULT_HIDDEN: usize = 64;

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: RngCore + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        assert!(input > 0 && hidden > 0 && output > 1, "degenerate model shape");
        let mut params = vec![0.0; hidden * input + hidden + output * hidden + output];
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        for w in &mut params[..hidden * input] {
            *w = a1 * (2.0 * unit_f64(rng) - 1.0);
        }
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        let w2 = hidden * input + hidden;
        for w in &mut params[w2..w2 + output * hidden] {
            *w = a2 * (2.0 * unit_f64(rng) - 1.0);
        }
        Self {
            input,
            hidden,
            output,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input);
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &p[h * self.input..(h + 1) * self.input];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[b1 + h];
                z.tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.output)
            .map(|o| {
                let row = &p[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + p[b2 + o]
            })
            .collect();
        Trace {
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).probs
    }

    /// Adds the gradient of a loss to `grad`, given the loss gradient with
    /// respect to the logits.
    pub(crate) fn accumulate(&self, x: &[f64], trace: &Trace, d_logits: &[f64], grad: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let base = w2 + o * self.hidden;
            for h in 0..self.hidden {
                grad[base + h] += g * trace.hidden[h];
                d_hidden[h] += g * p[base + h];
            }
            grad[b2 + o] += g;
        }
        for h in 0..self.hidden {
            let dz = d_hidden[h] * (1.0 - trace.hidden[h] * trace.hidden[h]);
            if dz == 0.0 {
                continue;
            }
            let base = h * self.input;
            for (i, &v) in x.iter().enumerate() {
                grad[base + i] += dz * v;
            }
            grad[b1 + h] += dz;
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x))
    }

    pub fn predict_all(&self, features: &FeatureMatrix) -> Vec<usize> {
        features.rows().map(|r| self.predict(r)).collect()
    }

    /// Fraction of rows whose argmax prediction equals the label.
    pub fn accuracy(&self, set: &LabeledFeatureSet) -> f64 {
        let hits = set
            .features
            .rows()
            .zip(&set.labels)
            .filter(|(x, &y)| self.predict(x) == y as usize)
            .count();
        hits as f64 / set.n() as f64
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
