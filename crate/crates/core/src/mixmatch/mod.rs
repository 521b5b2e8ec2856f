//! MixMatch on feature vectors with a small perceptron.
//!
//! One optimizer step:
//! 1. jitter each labelled row once and each unlabelled row `k` times;
//! 2. average the model's softmax over an unlabelled row's views and sharpen
//!    it with temperature `temperature`; every view carries that pseudo-label;
//! 3. shuffle labelled and unlabelled views into one pool and MixUp each
//!    labelled view with the first pool entries, each unlabelled view with
//!    the rest;
//! 4. minimize cross-entropy on the mixed labelled part plus
//!    `min(t/rampup, 1)·gamma` times the mean Euclidean distance between
//!    pseudo-labels and predictions on the mixed unlabelled part.
//!
//! `t` counts optimizer steps. Pseudo-labels are constants for the gradient.

mod model;
mod optim;

use rand::RngCore;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use model::{argmax, softmax, ToyModel};
pub use optim::AdamW;

use crate::error::{Error, Result};
use crate::rng::{self, shuffle, SeededRng};
use crate::sandbox::RunData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixMatchConfig {
    /// Augmented views per unlabelled row.
    pub k: usize,
    /// Sharpening temperature.
    pub temperature: f64,
    /// Beta(alpha, alpha) parameter for MixUp.
    pub alpha: f64,
    /// Unsupervised loss weight.
    pub gamma: f64,
    /// Steps until the unsupervised weight reaches `gamma`.
    pub rampup: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Standard deviation of the additive Gaussian jitter.
    pub sigma_aug: f64,
    pub hidden: usize,
    /// Optimizer steps per epoch; `None` means one pass over the larger of
    /// the labelled and unlabelled sets.
    pub steps_per_epoch: Option<usize>,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        Self {
            k: 2,
            temperature: 0.5,
            alpha: 0.75,
            gamma: 25.0,
            rampup: 3000.0,
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.0002,
            weight_decay: 0.0001,
            sigma_aug: 0.1,
            hidden: ToyModel::DEFAULT_HIDDEN,
            steps_per_epoch: None,
        }
    }
}

impl MixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.rampup > 0.0) {
            return bad("rampup must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.sigma_aug >= 0.0) {
            return bad("learning_rate, weight_decay and sigma_aug must be non-negative");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive");
        }
        Ok(())
    }

    /// Weight of the unsupervised term at step `t`.
    pub fn unsupervised_weight(&self, t: usize) -> f64 {
        rampup(t, self.rampup) * self.gamma
    }
}

/// `min(t / rho, 1)`.
pub fn rampup(t: usize, rho: f64) -> f64 {
    (t as f64 / rho).min(1.0)
}

/// `k` views `x + N(0, sigma²)` per coordinate.
pub fn augment<R: RngCore + ?Sized>(x: &[f64], k: usize, sigma: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            x.iter()
                .map(|v| v + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

/// Mean of the model's softmax outputs over the views.
pub fn pseudo_label(model: &ToyModel, views: &[Vec<f64>]) -> Vec<f64> {
    assert!(!views.is_empty(), "pseudo_label needs at least one view");
    let mut acc = vec![0.0; model.output_dim()];
    for v in views {
        for (a, p) in acc.iter_mut().zip(model.forward(v)) {
            *a += p;
        }
    }
    acc.iter_mut().for_each(|a| *a /= views.len() as f64);
    acc
}

/// `y_i^(1/T) / Σ_k y_k^(1/T)`, evaluated in log space.
pub fn sharpen(y: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let logs: Vec<f64> = y.iter().map(|v| v.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return y.to_vec();
    }
    let powered: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = powered.iter().sum();
    powered.into_iter().map(|p| p / sum).collect()
}

/// `max(λ, 1 - λ)` for `λ ~ Beta(alpha, alpha)`.
pub fn folded_beta<R: RngCore + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let beta = Beta::new(alpha, alpha).expect("alpha validated positive");
    let lambda: f64 = beta.sample(rng);
    lambda.max(1.0 - lambda)
}

/// Interpolates two (input, label) pairs with `λ' = max(λ, 1 - λ)`.
pub fn mixup_with_lambda(a: (&[f64], &[f64]), b: (&[f64], &[f64]), lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let l = lambda.max(1.0 - lambda);
    let lerp = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| l * p + (1.0 - l) * q).collect() };
    (lerp(a.0, b.0), lerp(a.1, b.1))
}

/// MixUp with a fresh Beta draw; returns the mixed pair and the λ' used.
pub fn mixup<R: RngCore + ?Sized>(
    a: (&[f64], &[f64]),
    b: (&[f64], &[f64]),
    alpha: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>, f64) {
    let l = folded_beta(alpha, rng);
    let (x, y) = mixup_with_lambda(a, b, l);
    (x, y, l)
}

/// Inputs with soft targets, one entry per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>) {
        self.inputs.push(x);
        self.targets.push(y);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub grad: Vec<f64>,
}

/// Combined loss on already-mixed batches and its gradient.
///
/// The labelled batch must be non-empty. An empty unlabelled batch
/// contributes nothing, which is how supervised-only training runs.
pub fn mixmatch_loss(
    model: &ToyModel,
    labelled: &Batch,
    unlabelled: &Batch,
    t: usize,
    cfg: &MixMatchConfig,
) -> Result<LossAndGrad> {
    if labelled.is_empty() {
        return Err(Error::InvalidParameter("labelled batch is empty".into()));
    }
    let mut grad = model.zero_grad();
    let classes = model.output_dim();

    let scale_l = 1.0 / labelled.len() as f64;
    let mut supervised = 0.0;
    let mut d_logits = vec![0.0; classes];
    for (x, y) in labelled.inputs.iter().zip(&labelled.targets) {
        let tr = model.trace(x);
        let mass: f64 = y.iter().sum();
        for c in 0..classes {
            if y[c] > 0.0 {
                supervised -= y[c] * tr.probs[c].max(f64::MIN_POSITIVE).ln();
            }
            d_logits[c] = scale_l * (tr.probs[c] * mass - y[c]);
        }
        model.accumulate(x, &tr, &d_logits, &mut grad);
    }
    supervised *= scale_l;

    let weight = cfg.unsupervised_weight(t);
    let mut unsupervised = 0.0;
    if weight > 0.0 && !unlabelled.is_empty() {
        let scale_u = weight / unlabelled.len() as f64;
        let mut d_probs = vec![0.0; classes];
        for (x, y) in unlabelled.inputs.iter().zip(&unlabelled.targets) {
            let tr = model.trace(x);
            let dist = tr.probs.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            unsupervised += dist;
            if dist == 0.0 {
                continue;
            }
            for c in 0..classes {
                d_probs[c] = scale_u * (tr.probs[c] - y[c]) / dist;
            }
            // softmax Jacobian: dz_c = p_c (g_c - Σ_k g_k p_k)
            let dot: f64 = d_probs.iter().zip(&tr.probs).map(|(g, p)| g * p).sum();
            for c in 0..classes {
                d_logits[c] = tr.probs[c] * (d_probs[c] - dot);
            }
            model.accumulate(x, &tr, &d_logits, &mut grad);
        }
        unsupervised /= unlabelled.len() as f64;
    }

    let loss = supervised + weight * unsupervised;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(LossAndGrad {
        loss,
        supervised,
        unsupervised,
        grad,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Test accuracy after every epoch.
    pub epoch_accuracy: Vec<f64>,
    /// Test accuracy of the untrained model.
    pub initial_accuracy: f64,
    pub best_accuracy: f64,
    /// 1-based epoch of `best_accuracy`.
    pub best_epoch: usize,
    pub steps: usize,
    #[serde(skip)]
    pub model: Option<ToyModel>,
}

/// Cycles through a shuffled index list, reshuffling after each pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, rng: &mut SeededRng) -> usize {
        if self.pos == self.order.len() {
            shuffle(&mut self.order, rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn one_hot(class: u32, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[class as usize] = 1.0;
    v
}

/// Assembles the mixed labelled and unlabelled batches of one step.
fn mixed_batches(
    model: &ToyModel,
    run: &RunData,
    use_unlabelled: bool,
    labelled_order: &mut Cycler,
    unlabelled_order: &mut Option<Cycler>,
    cfg: &MixMatchConfig,
    rng: &mut SeededRng,
) -> (Batch, Batch) {
    let classes = model.output_dim();
    let mut x_hat = Batch::default();
    for _ in 0..cfg.batch_size {
        let i = labelled_order.next(rng);
        let view = augment(run.labelled.features.row(i), 1, cfg.sigma_aug, rng).remove(0);
        x_hat.push(view, one_hot(run.labelled.labels[i], classes));
    }
    let mut u_hat = Batch::default();
    if let (true, Some(order)) = (use_unlabelled, unlabelled_order.as_mut()) {
        for _ in 0..cfg.batch_size {
            let j = order.next(rng);
            let views = augment(run.unlabelled.row(j), cfg.k, cfg.sigma_aug, rng);
            let target = sharpen(&pseudo_label(model, &views), cfg.temperature);
            for v in views {
                u_hat.push(v, target.clone());
            }
        }
    }

    let mut pool: Vec<(bool, usize)> = (0..x_hat.len())
        .map(|i| (false, i))
        .chain((0..u_hat.len()).map(|i| (true, i)))
        .collect();
    shuffle(&mut pool, rng);
    let entry = |&(from_u, i): &(bool, usize)| {
        let b = if from_u { &u_hat } else { &x_hat };
        (b.inputs[i].as_slice(), b.targets[i].as_slice())
    };

    let mut x_mixed = Batch::default();
    for i in 0..x_hat.len() {
        let (x, y, _) = mixup((&x_hat.inputs[i], &x_hat.targets[i]), entry(&pool[i]), cfg.alpha, rng);
        x_mixed.push(x, y);
    }
    let mut u_mixed = Batch::default();
    for j in 0..u_hat.len() {
        let (x, y, _) = mixup(
            (&u_hat.inputs[j], &u_hat.targets[j]),
            entry(&pool[x_hat.len() + j]),
            cfg.alpha,
            rng,
        );
        u_mixed.push(x, y);
    }
    (x_mixed, u_mixed)
}

fn steps_per_epoch(run: &RunData, cfg: &MixMatchConfig) -> usize {
    cfg.steps_per_epoch.unwrap_or_else(|| {
        let n = run.labelled.n().max(run.unlabelled.n());
        n.div_ceil(cfg.batch_size)
    })
}

fn train_impl(run: &RunData, cfg: &MixMatchConfig, seed: u64, use_unlabelled: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = run.labelled.features.d();
    if run.unlabelled.d() != d || run.test.features.d() != d {
        return Err(Error::DimensionMismatch {
            left: d,
            right: if run.unlabelled.d() != d { run.unlabelled.d() } else { run.test.features.d() },
        });
    }
    let classes = run.labelled.num_classes;
    let mut model = ToyModel::new(d, cfg.hidden, classes, &mut rng::stream(seed, 0));
    let mut rng = rng::stream(seed, 1);
    let mut opt = AdamW::new(model.params().len(), cfg.learning_rate, cfg.weight_decay);

    let mut labelled_order = Cycler::new(run.labelled.n(), &mut rng);
    let mut unlabelled_order = use_unlabelled.then(|| Cycler::new(run.unlabelled.n(), &mut rng));
    let steps = steps_per_epoch(run, cfg);

    let initial_accuracy = model.accuracy(&run.test);
    let mut epoch_accuracy = Vec::with_capacity(cfg.epochs);
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..steps {
            let (xb, ub) = mixed_batches(
                &model,
                run,
                use_unlabelled,
                &mut labelled_order,
                &mut unlabelled_order,
                cfg,
                &mut rng,
            );
            let lg = mixmatch_loss(&model, &xb, &ub, t, cfg).map_err(|e| match e {
                Error::NonFiniteLoss => Error::Diverged { epoch },
                other => other,
            })?;
            opt.step(model.params_mut(), &lg.grad);
            t += 1;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        epoch_accuracy.push(model.accuracy(&run.test));
    }

    let (best_epoch, best_accuracy) = epoch_accuracy
        .iter()
        .enumerate()
        .fold((0, initial_accuracy), |(be, ba), (e, &a)| if a > ba { (e + 1, a) } else { (be, ba) });
    Ok(TrainOutcome {
        epoch_accuracy,
        initial_accuracy,
        best_accuracy,
        best_epoch,
        steps: t,
        model: Some(model),
    })
}

/// MixMatch training; best accuracy is the maximum test accuracy over epochs
/// (the untrained model counts as epoch 0).
pub fn train(run: &RunData, cfg: &MixMatchConfig, seed: u64) -> Result<TrainOutcome> {
    train_impl(run, cfg, seed, true)
}

/// Baseline on the labelled rows only: no pseudo-labels, MixUp within the
/// labelled batch, and the same number of optimizer steps as [`train`] on
/// the same run.
pub fn train_supervised(run: &RunData, cfg: &MixMatchConfig, seed: u64) -> Result<TrainOutcome> {
    let cfg = MixMatchConfig {
        gamma: 0.0,
        steps_per_epoch: Some(steps_per_epoch(run, cfg)),
        ..cfg.clone()
    };
    train_impl(run, &cfg, seed, false)
}
