//! Distributional regression networks and training.
//!
//! A dense feed-forward network maps features to the parameters of a
//! predictive distribution: a Gaussian via mean vector plus Cholesky factor,
//! a mixture of such Gaussians with softmax weights, or a flat set of
//! ensemble points. Three differentiable losses drive it: the closed-form
//! singleton-conditioning CRPS sum for (mixtures of) Gaussians, the
//! epsilon-smoothed Energy Score for ensembles, and the bivariate-marginal
//! negative log-likelihood.
//!
//! Inputs and targets are normalized per field with training-split mean and
//! standard deviation; predictions are de-normalized before any scoring.

use crate::autodiff::{self, Tape, Var};
use crate::distributions::{Distribution, EnsembleDist, MvGaussian, MvMixtureGaussian, LN_2PI};
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::mscores::{self, MeanScore};
use crate::rng::{self, Rng};
use crate::synthetic::{Dataset, DatasetSplits};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Softplus-floored diagonal keeps every predicted variance away from the
/// sigma -> 0 singularity of the H function.
pub const SIGMA_DIAG_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

/// Output head: how raw network outputs become distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// Mean vector plus Cholesky factor, diagonal through softplus.
    Gaussian { d: usize },
    /// m Gaussian components plus softmax weights.
    Mixture { d: usize, m: usize },
    /// m_points raw vectors forming an equally weighted ensemble.
    Ensemble { d: usize, m_points: usize },
}

impl HeadKind {
    pub fn target_dim(&self) -> usize {
        match *self {
            HeadKind::Gaussian { d } => d,
            HeadKind::Mixture { d, .. } => d,
            HeadKind::Ensemble { d, .. } => d,
        }
    }

    /// Raw network outputs the head consumes.
    pub fn raw_dim(&self) -> usize {
        let tri = |d: usize| d * (d + 1) / 2;
        match *self {
            HeadKind::Gaussian { d } => d + tri(d),
            HeadKind::Mixture { d, m } => m * (d + tri(d)) + m,
            HeadKind::Ensemble { d, m_points } => m_points * d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Singleton-conditioning CRPS sum (Gaussian or mixture heads).
    Ccrps,
    /// Smoothed-norm Energy Score (ensemble heads).
    Es,
    /// Bivariate-marginal negative log-likelihood (Gaussian or mixture).
    MleBiv,
}

fn default_version() -> u32 {
    1
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    40
}
fn default_es_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub head: HeadKind,
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Epsilon of the smoothed norm; only the Energy Score loss reads it.
    #[serde(default = "default_es_eps")]
    pub es_epsilon: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        match self.head {
            HeadKind::Gaussian { d } => {
                if d == 0 {
                    return Err(Error::Config("head dimension must be positive".into()));
                }
            }
            HeadKind::Mixture { d, m } => {
                if d == 0 || m == 0 {
                    return Err(Error::Config("mixture head needs d >= 1 and m >= 1".into()));
                }
            }
            HeadKind::Ensemble { d, m_points } => {
                if d == 0 || m_points == 0 {
                    return Err(Error::Config("ensemble head needs d >= 1 and points".into()));
                }
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and max epochs must be positive".into()));
        }
        if !(self.es_epsilon > 0.0) {
            return Err(Error::Config("es_epsilon must be positive".into()));
        }
        Ok(())
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.head.raw_dim());
        sizes
    }

    pub fn n_params(&self) -> usize {
        let sizes = self.layer_sizes();
        (1..sizes.len()).map(|i| sizes[i] * (sizes[i - 1] + 1)).sum()
    }
}

/// Per-field affine normalization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(p: usize, d: usize) -> Self {
        Self {
            x_mean: vec![0.0; p],
            x_std: vec![1.0; p],
            y_mean: vec![0.0; d],
            y_std: vec![1.0; d],
        }
    }

    pub fn fit(train: &Dataset) -> Self {
        let column_stats = |rows: &[Vec<f64>]| {
            let n = rows.len().max(1) as f64;
            let dim = rows.first().map_or(0, Vec::len);
            let mut mean = vec![0.0; dim];
            for row in rows {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            let mut std = vec![0.0; dim];
            for row in rows {
                for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in std.iter_mut() {
                *s = (*s / n).sqrt().max(1e-8);
            }
            (mean, std)
        };
        let (x_mean, x_std) = column_stats(&train.x);
        let (y_mean, y_std) = column_stats(&train.y);
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn norm_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn norm_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.y_mean.iter().zip(&self.y_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Tape-side head representations
// ---------------------------------------------------------------------------

/// A Gaussian mixture written in tape variables: log-weights, weights, mean
/// vectors and full covariance entries built from the Cholesky factor.
pub struct TapeMixture {
    pub log_weights: Vec<Var>,
    pub weights: Vec<Var>,
    pub means: Vec<Vec<Var>>,
    /// sigma[k][i][j] for the full symmetric matrix of each component.
    pub sigmas: Vec<Vec<Vec<Var>>>,
}

pub enum TapeHead {
    Mixture(TapeMixture),
    Ensemble { points: Vec<Vec<Var>> },
}

fn chol_to_sigma(lower: &[Vec<Var>]) -> Vec<Vec<Var>> {
    let d = lower.len();
    let mut sigma: Vec<Vec<Option<Var>>> = vec![vec![None; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let terms: Vec<Var> = (0..=j.min(i))
                .map(|r| &lower[i][r] * &lower[j][r])
                .collect();
            let v = autodiff::sum(&terms);
            sigma[j][i] = Some(v.clone());
            sigma[i][j] = Some(v);
        }
    }
    sigma
        .into_iter()
        .map(|row| row.into_iter().map(Option::unwrap).collect())
        .collect()
}

/// Split raw head outputs into distribution parameters on the tape. The
/// Cholesky diagonal goes through softplus plus a positive floor, so the
/// covariance is positive definite by construction; weights through softmax.
fn build_head(head: HeadKind, raw: &[Var], tape: &Tape) -> TapeHead {
    match head {
        HeadKind::Gaussian { d } => {
            let (means, sigmas) = build_components(d, 1, raw);
            TapeHead::Mixture(TapeMixture {
                log_weights: vec![tape.constant(0.0)],
                weights: vec![tape.constant(1.0)],
                means,
                sigmas,
            })
        }
        HeadKind::Mixture { d, m } => {
            let block = d + d * (d + 1) / 2;
            let (means, sigmas) = build_components(d, m, &raw[..m * block]);
            let logits = &raw[m * block..];
            let lse = autodiff::log_sum_exp(logits);
            let log_weights: Vec<Var> = logits.iter().map(|l| l - &lse).collect();
            let weights: Vec<Var> = log_weights.iter().map(Var::exp).collect();
            TapeHead::Mixture(TapeMixture {
                log_weights,
                weights,
                means,
                sigmas,
            })
        }
        HeadKind::Ensemble { d, m_points } => {
            let points = (0..m_points)
                .map(|l| raw[l * d..(l + 1) * d].to_vec())
                .collect();
            TapeHead::Ensemble { points }
        }
    }
}

fn build_components(d: usize, m: usize, raw: &[Var]) -> (Vec<Vec<Var>>, Vec<Vec<Vec<Var>>>) {
    let tri = d * (d + 1) / 2;
    let block = d + tri;
    let mut means = Vec::with_capacity(m);
    let mut sigmas = Vec::with_capacity(m);
    for k in 0..m {
        let base = k * block;
        means.push(raw[base..base + d].to_vec());
        let mut lower: Vec<Vec<Var>> = Vec::with_capacity(d);
        let mut idx = base + d;
        for i in 0..d {
            let mut row = Vec::with_capacity(i + 1);
            for j in 0..=i {
                let v = if i == j {
                    raw[idx].softplus() + SIGMA_DIAG_FLOOR
                } else {
                    raw[idx].clone()
                };
                row.push(v);
                idx += 1;
            }
            lower.push(row);
        }
        sigmas.push(chol_to_sigma(&lower));
    }
    (means, sigmas)
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Feed-forward network over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform initialization, deterministic in the config seed.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::from_seed(rng::substream(config.seed, "init"));
        let sizes = config.layer_sizes();
        let mut params = Vec::with_capacity(config.n_params());
        for i in 1..sizes.len() {
            let (n_in, n_out) = (sizes[i - 1], sizes[i]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(r.gen_range(-a..a));
            }
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Ok(Self { config, params })
    }

    fn apply_activation_scalar(&self, v: f64) -> f64 {
        match self.config.activation {
            Activation::Tanh => v.tanh(),
            Activation::Softplus => v.exp().ln_1p(),
        }
    }

    /// Plain f64 forward pass (prediction path).
    pub fn forward_scalar(&self, x_norm: &[f64]) -> Vec<f64> {
        let sizes = self.config.layer_sizes();
        let mut act = x_norm.to_vec();
        let mut off = 0usize;
        for li in 1..sizes.len() {
            let (n_in, n_out) = (sizes[li - 1], sizes[li]);
            let bias_off = off + n_in * n_out;
            let mut next = vec![0.0; n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = self.params[bias_off + o];
                let w = &self.params[off + o * n_in..off + (o + 1) * n_in];
                for (wv, xv) in w.iter().zip(&act) {
                    s += wv * xv;
                }
                *slot = if li + 1 < sizes.len() {
                    self.apply_activation_scalar(s)
                } else {
                    s
                };
            }
            act = next;
            off = bias_off + n_out;
        }
        act
    }

    /// Tape forward pass from pre-built parameter variables.
    pub fn forward_tape(&self, tape: &Tape, param_vars: &[Var], x_norm: &[f64]) -> Vec<Var> {
        let sizes = self.config.layer_sizes();
        let mut act: Vec<Var> = x_norm.iter().map(|&v| tape.constant(v)).collect();
        let mut off = 0usize;
        for li in 1..sizes.len() {
            let (n_in, n_out) = (sizes[li - 1], sizes[li]);
            let bias_off = off + n_in * n_out;
            let mut next = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let w = &param_vars[off + o * n_in..off + (o + 1) * n_in];
                let pre = autodiff::affine(&param_vars[bias_off + o], w, &act);
                next.push(if li + 1 < sizes.len() {
                    match self.config.activation {
                        Activation::Tanh => pre.tanh(),
                        Activation::Softplus => pre.softplus(),
                    }
                } else {
                    pre
                });
            }
            act = next;
            off = bias_off + n_out;
        }
        act
    }

    pub fn head_on_tape(&self, tape: &Tape, param_vars: &[Var], x_norm: &[f64]) -> TapeHead {
        let raw = self.forward_tape(tape, param_vars, x_norm);
        build_head(self.config.head, &raw, tape)
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Differentiable CRPS sum over the singleton-conditioning specification:
/// every marginal (i) plus every conditional (i given j), evaluated in
/// closed form through the H function and posterior component weights.
pub fn loss_ccrps_t0(head: &TapeMixture, y: &[f64]) -> Var {
    let d = y.len();
    let m = head.weights.len();
    let tape = head.weights[0].tape().clone();
    let mut terms: Vec<Var> = Vec::new();

    // marginal part
    for i in 0..d {
        let means: Vec<Var> = (0..m).map(|k| head.means[k][i].clone()).collect();
        let vars: Vec<Var> = (0..m).map(|k| head.sigmas[k][i][i].clone()).collect();
        terms.push(grimit_on_tape(&head.weights, &means, &vars, y[i]));
    }

    // conditional part, one variable at a time
    for j in 0..d {
        // posterior weights given y_j, in log space
        let mut log_post: Vec<Var> = Vec::with_capacity(m);
        for k in 0..m {
            let var_jj = &head.sigmas[k][j][j];
            let delta = -(&head.means[k][j]) + y[j];
            let quad = delta.square() / var_jj;
            let ll = (&quad + var_jj.ln() + LN_2PI) * (-0.5);
            log_post.push(&head.log_weights[k] + ll);
        }
        let lse = autodiff::log_sum_exp(&log_post);
        let post: Vec<Var> = log_post.iter().map(|lp| (lp - &lse).exp()).collect();

        for i in 0..d {
            if i == j {
                continue;
            }
            let mut means = Vec::with_capacity(m);
            let mut vars = Vec::with_capacity(m);
            for k in 0..m {
                let s_ij = &head.sigmas[k][i][j];
                let s_jj = &head.sigmas[k][j][j];
                let slope = s_ij / s_jj;
                let mean = &head.means[k][i] + &slope * (-(&head.means[k][j]) + y[j]);
                let var = &head.sigmas[k][i][i] - s_ij * &slope;
                means.push(mean);
                vars.push(var);
            }
            terms.push(grimit_on_tape(&post, &means, &vars, y[i]));
        }
    }
    let _ = tape;
    autodiff::sum(&terms)
}

/// sum_k w_k H(y - mu_k, var_k) - 1/2 sum_{k,l} w_k w_l H(mu_k - mu_l, var_k + var_l)
fn grimit_on_tape(weights: &[Var], means: &[Var], vars: &[Var], y: f64) -> Var {
    let m = weights.len();
    let mut parts: Vec<Var> = Vec::with_capacity(m + m * (m + 1) / 2);
    for k in 0..m {
        let mu = -(&means[k]) + y;
        parts.push(&weights[k] * autodiff::h_function(&mu, &vars[k]));
    }
    for k in 0..m {
        // symmetric pair sum: diagonal once, off-diagonal doubled
        let self_pair = &weights[k] * &weights[k]
            * autodiff::h_function(
                &(&means[k] - &means[k]),
                &(&vars[k] + &vars[k]),
            );
        parts.push(self_pair * (-0.5));
        for l in (k + 1)..m {
            let pair = &weights[k] * &weights[l]
                * autodiff::h_function(&(&means[k] - &means[l]), &(&vars[k] + &vars[l]));
            parts.push(pair * (-1.0));
        }
    }
    autodiff::sum(&parts)
}

/// Smoothed-norm Energy Score of an ensemble head against one observation:
/// (1/m) sum_l ||y_hat_l - y||_eps - 1/(2 m^2) sum_{k,l} ||y_hat_k - y_hat_l||_eps,
/// with the k = l terms contributing sqrt(eps) each, exactly as the
/// approximation is written.
pub fn loss_es_ensemble(points: &[Vec<Var>], y: &[f64], eps: f64) -> Var {
    let m = points.len();
    assert!(m >= 1, "ensemble head needs at least one point");
    let mf = m as f64;
    let mut first = Vec::with_capacity(m);
    for p in points {
        let diff: Vec<Var> = p.iter().zip(y).map(|(v, &t)| v - t).collect();
        first.push(autodiff::smoothed_norm(&diff, eps));
    }
    let term1 = autodiff::sum(&first) / mf;
    let mut pair_terms = Vec::with_capacity(m * (m - 1) / 2);
    for k in 0..m {
        for l in (k + 1)..m {
            let diff: Vec<Var> = points[k]
                .iter()
                .zip(&points[l])
                .map(|(a, b)| a - b)
                .collect();
            pair_terms.push(autodiff::smoothed_norm(&diff, eps));
        }
    }
    // diagonal of the double sum: m copies of sqrt(eps)
    let diag = mf * eps.sqrt();
    let second = if pair_terms.is_empty() {
        diag
    } else {
        0.0 + diag
    };
    let double_sum = if pair_terms.is_empty() {
        points[0][0].tape().constant(second)
    } else {
        autodiff::sum(&pair_terms) * 2.0 + second
    };
    term1 - double_sum / (2.0 * mf * mf)
}

/// Bivariate-marginal negative log-likelihood over ordered coordinate pairs,
/// in log-sum-exp form over mixture components.
pub fn loss_mle_biv(head: &TapeMixture, y: &[f64]) -> Var {
    let d = y.len();
    assert!(d >= 2, "mle_biv needs target dimension >= 2");
    let m = head.weights.len();
    let mut terms: Vec<Var> = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let mut comp_ll: Vec<Var> = Vec::with_capacity(m);
            for k in 0..m {
                let s_ii = &head.sigmas[k][i][i];
                let s_jj = &head.sigmas[k][j][j];
                let s_ij = &head.sigmas[k][i][j];
                let det = s_ii * s_jj - s_ij * s_ij;
                let di = -(&head.means[k][i]) + y[i];
                let dj = -(&head.means[k][j]) + y[j];
                let quad =
                    (s_jj * di.square() - s_ij * &di * &dj * 2.0 + s_ii * dj.square()) / &det;
                let ll = (&quad + det.ln()) * (-0.5) - LN_2PI;
                comp_ll.push(&head.log_weights[k] + ll);
            }
            let log_f = autodiff::log_sum_exp(&comp_ll);
            // both orderings (i,j) and (j,i) contribute the same density
            terms.push(log_f * (-2.0));
        }
    }
    autodiff::sum(&terms)
}

/// Per-sample loss dispatch.
pub fn sample_loss(head: &TapeHead, loss: LossKind, y_norm: &[f64], es_eps: f64) -> Result<Var> {
    match (loss, head) {
        (LossKind::Ccrps, TapeHead::Mixture(m)) => Ok(loss_ccrps_t0(m, y_norm)),
        (LossKind::MleBiv, TapeHead::Mixture(m)) => {
            if y_norm.len() < 2 {
                return Err(Error::Config("mle_biv needs target dimension >= 2".into()));
            }
            Ok(loss_mle_biv(m, y_norm))
        }
        (LossKind::Es, TapeHead::Ensemble { points }) => {
            Ok(loss_es_ensemble(points, y_norm, es_eps))
        }
        (LossKind::Es, _) => Err(Error::Config(
            "energy score loss requires an ensemble head".into(),
        )),
        (_, TapeHead::Ensemble { .. }) => Err(Error::Config(
            "ccrps and mle_biv losses require a gaussian or mixture head".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Index of the first epoch whose validation loss exceeds the previous
/// epoch's, if any. Training stops there and keeps the previous epoch's
/// parameters.
pub fn first_validation_increase(val_losses: &[f64]) -> Option<usize> {
    (1..val_losses.len()).find(|&e| val_losses[e] > val_losses[e - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    #[serde(default = "default_version")]
    pub version: u32,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch at which training stopped (equals the number of epochs
    /// actually run).
    pub stop_epoch: usize,
    pub seed: u64,
}

/// A trained network with its normalization, serializable as a versioned
/// JSON document with flat parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(default = "default_version")]
    pub version: u32,
    pub config: NetworkConfig,
    pub loss: LossKind,
    pub normalization: Normalization,
    pub params: Vec<f64>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        model.config.validate()?;
        if model.params.len() != model.config.n_params() {
            return Err(Error::Config(format!(
                "model has {} parameters, config expects {}",
                model.params.len(),
                model.config.n_params()
            )));
        }
        Ok(model)
    }

    fn network(&self) -> Network {
        Network {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    /// Predicted distribution for one feature vector, de-normalized to the
    /// original target units.
    pub fn predict_distribution(&self, x: &[f64]) -> Result<Distribution> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has length {}, expected {}",
                x.len(),
                self.config.input_dim
            )));
        }
        let net = self.network();
        let raw = net.forward_scalar(&self.normalization.norm_x(x));
        scalar_head_to_distribution(self.config.head, &raw, &self.normalization)
    }
}

fn scalar_head_to_distribution(
    head: HeadKind,
    raw: &[f64],
    norm: &Normalization,
) -> Result<Distribution> {
    let softplus = |v: f64| {
        if v > 30.0 {
            v
        } else if v < -30.0 {
            v.exp()
        } else {
            v.exp().ln_1p()
        }
    };
    let build_gaussian = |block: &[f64], d: usize| -> Result<MvGaussian> {
        let mu_norm = &block[..d];
        let mut lower = vec![vec![0.0; d]; d];
        let mut idx = d;
        for i in 0..d {
            for j in 0..=i {
                let v = block[idx];
                idx += 1;
                // de-normalized factor: diag(y_std) . L
                lower[i][j] = norm.y_std[i]
                    * if i == j {
                        softplus(v) + SIGMA_DIAG_FLOOR
                    } else {
                        v
                    };
            }
        }
        let mu: Vec<f64> = mu_norm
            .iter()
            .zip(norm.y_mean.iter().zip(&norm.y_std))
            .map(|(m, (ym, ys))| ym + ys * m)
            .collect();
        let mut rows = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = 0.0;
                for r in 0..=j.min(i) {
                    s += lower[i][r] * lower[j][r];
                }
                rows[i][j] = s;
                rows[j][i] = s;
            }
        }
        MvGaussian::new(mu, SymMatrix::from_rows(&rows)?)
    };
    match head {
        HeadKind::Gaussian { d } => Ok(Distribution::MvGaussian(build_gaussian(raw, d)?)),
        HeadKind::Mixture { d, m } => {
            let block = d + d * (d + 1) / 2;
            let comps: Result<Vec<MvGaussian>> = (0..m)
                .map(|k| build_gaussian(&raw[k * block..(k + 1) * block], d))
                .collect();
            let logits = &raw[m * block..];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
            Ok(Distribution::MvMixtureGaussian(MvMixtureGaussian::new(
                weights, comps?,
            )?))
        }
        HeadKind::Ensemble { d, m_points } => {
            let points: Vec<Vec<f64>> = (0..m_points)
                .map(|l| {
                    raw[l * d..(l + 1) * d]
                        .iter()
                        .zip(norm.y_mean.iter().zip(&norm.y_std))
                        .map(|(v, (ym, ys))| ym + ys * v)
                        .collect()
                })
                .collect();
            Ok(Distribution::Ensemble(EnsembleDist::equally_weighted(
                points,
            )?))
        }
    }
}

/// Mean loss of the current parameters over a dataset (no gradients).
fn dataset_loss(net: &Network, loss: LossKind, norm: &Normalization, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    let chunk = 256;
    let mut i = 0;
    while i < data.len() {
        let end = (i + chunk).min(data.len());
        let tape = Tape::new();
        let param_vars: Vec<Var> = net.params.iter().map(|&p| tape.var(p)).collect();
        for row in i..end {
            let head = net.head_on_tape(&tape, &param_vars, &norm.norm_x(&data.x[row]));
            let l = sample_loss(&head, loss, &norm.norm_y(&data.y[row]), net.config.es_epsilon)?;
            total += l.value();
        }
        if let Some(p) = tape.poisoned() {
            return Err(Error::Numeric(format!("loss evaluation poisoned: {p}")));
        }
        i = end;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch Adam with one-epoch-patience early stopping on the validation
/// loss: the first epoch whose validation loss exceeds the previous epoch's
/// ends training, and the previous epoch's parameters are returned.
/// Deterministic in the config seed.
pub fn train(
    config: &NetworkConfig,
    loss: LossKind,
    data: &DatasetSplits,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    if data.train.input_dim() != config.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset has input_dim {}, config says {}",
            data.train.input_dim(),
            config.input_dim
        )));
    }
    if data.train.target_dim() != config.head.target_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has target_dim {}, head says {}",
            data.train.target_dim(),
            config.head.target_dim()
        )));
    }
    // reject incompatible head/loss up front
    match (loss, config.head) {
        (LossKind::Es, HeadKind::Ensemble { .. }) => {}
        (LossKind::Es, _) => {
            return Err(Error::Config("energy score loss requires an ensemble head".into()))
        }
        (_, HeadKind::Ensemble { .. }) => {
            return Err(Error::Config(
                "ccrps and mle_biv losses require a gaussian or mixture head".into(),
            ))
        }
        (LossKind::MleBiv, h) if h.target_dim() < 2 => {
            return Err(Error::Config("mle_biv needs target dimension >= 2".into()))
        }
        _ => {}
    }

    let norm = Normalization::fit(&data.train);
    let mut net = Network::init(config.clone())?;
    let n_params = net.params.len();
    let mut adam = Adam::new(n_params, config.learning_rate);
    let mut shuffle_rng = rng::from_seed(rng::substream(config.seed, "shuffle"));

    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut prev_params = net.params.clone();
    let mut stop_epoch = config.max_epochs;

    let mut indices: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=config.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in indices.chunks(config.batch_size).enumerate() {
            let tape = Tape::new();
            let param_vars: Vec<Var> = net.params.iter().map(|&p| tape.var(p)).collect();
            let mut sample_losses = Vec::with_capacity(batch.len());
            for &row in batch {
                let head = net.head_on_tape(&tape, &param_vars, &norm.norm_x(&data.train.x[row]));
                sample_losses.push(sample_loss(
                    &head,
                    loss,
                    &norm.norm_y(&data.train.y[row]),
                    config.es_epsilon,
                )?);
            }
            let batch_loss = autodiff::sum(&sample_losses) / batch.len() as f64;
            if let Some(p) = tape.poisoned() {
                let pnorm = net.params.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Err(Error::Numeric(format!(
                    "training aborted at epoch {epoch}, batch {batch_no}: {p} (parameter norm {pnorm:.3e})"
                )));
            }
            epoch_loss += batch_loss.value() * batch.len() as f64;
            let grads = batch_loss.backward()?;
            let gvec: Vec<f64> = param_vars.iter().map(|p| grads.get(p)).collect();
            adam.step(&mut net.params, &gvec);
        }
        train_losses.push(epoch_loss / data.train.len() as f64);
        val_losses.push(dataset_loss(&net, loss, &norm, &data.val)?);

        if let Some(e) = first_validation_increase(&val_losses) {
            debug_assert_eq!(e + 1, epoch);
            net.params = prev_params;
            stop_epoch = epoch;
            break;
        }
        prev_params = net.params.clone();
    }

    let model = TrainedModel {
        version: 1,
        config: config.clone(),
        loss,
        normalization: norm,
        params: net.params,
    };
    let report = TrainReport {
        version: 1,
        train_loss: train_losses,
        val_loss: val_losses,
        stop_epoch,
        seed: config.seed,
    };
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub rule: String,
    pub value: f64,
    pub std_err: f64,
}

/// The evaluation metric battery: Energy Score at beta = 1 and Variogram
/// Scores of order 0.5, 1, 2. Mixture heads take the analytic variogram
/// path; ensembles the exact formulas; the Energy Score of analytic heads is
/// seeded Monte-Carlo with a per-observation substream.
pub fn evaluate_distributions(
    dists: &[Distribution],
    targets: &[Vec<f64>],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    if dists.len() != targets.len() || dists.is_empty() {
        return Err(Error::Config(format!(
            "{} predictions for {} targets",
            dists.len(),
            targets.len()
        )));
    }
    let es = mscores::mean_score(
        |i, y| {
            let mut r = rng::from_seed(rng::substream_indexed(seed, "mc-eval", i as u64));
            mscores::energy_score(&dists[i], y, 1.0, n_mc, &mut r)
        },
        targets,
    )?;
    let mut rows = vec![MetricRow {
        rule: "es".into(),
        value: es.mean,
        std_err: es.std_err,
    }];
    for p in [0.5, 1.0, 2.0] {
        let vs = mscores::mean_score(
            |i, y| {
                let mut r =
                    rng::from_seed(rng::substream_indexed(seed, "mc-eval-vs", i as u64));
                mscores::variogram_score(&dists[i], y, p, n_mc, &mut r)
            },
            targets,
        )?;
        rows.push(MetricRow {
            rule: format!("vs_{p}"),
            value: vs.mean,
            std_err: vs.std_err,
        });
    }
    Ok(rows)
}

pub fn evaluate(
    model: &TrainedModel,
    test: &Dataset,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let dists: Result<Vec<Distribution>> = test
        .x
        .par_iter()
        .map(|x| model.predict_distribution(x))
        .collect();
    evaluate_distributions(&dists?, &test.y, n_mc, seed)
}

/// Mean test Energy Score alone (the headline comparison number).
pub fn mean_energy_score(
    model: &TrainedModel,
    test: &Dataset,
    n_mc: usize,
    seed: u64,
) -> Result<MeanScore> {
    let dists: Result<Vec<Distribution>> = test
        .x
        .par_iter()
        .map(|x| model.predict_distribution(x))
        .collect();
    let dists = dists?;
    mscores::mean_score(
        |i, y| {
            let mut r = rng::from_seed(rng::substream_indexed(seed, "mc-eval", i as u64));
            mscores::energy_score(&dists[i], y, 1.0, n_mc, &mut r)
        },
        &test.y,
    )
}

/// The climatological reference: an unconditional Gaussian fitted to the
/// training targets, ignoring features.
pub fn climatological_baseline(train: &Dataset) -> Result<MvGaussian> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Config("baseline needs at least two targets".into()));
    }
    let d = train.target_dim();
    let mut mean = vec![0.0; d];
    for y in &train.y {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for y in &train.y {
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] += (y[i] - mean[i]) * (y[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    let mut rows = vec![vec![0.0; d]; d];
    let trace: f64 = (0..d).map(|i| cov[i][i] / denom).sum();
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i][j] / denom + if i == j { 1e-9 * (trace / d as f64 + 1.0) } else { 0.0 };
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    MvGaussian::new(mean, SymMatrix::from_rows(&rows)?)
}
