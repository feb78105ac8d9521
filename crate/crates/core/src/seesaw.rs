//! Seesaw classification loss for a single sample.
//!
//! For true class `i` the negative logits are reweighted by
//! `S_ij = M_ij * C_ij`:
//!
//! - mitigation `M_ij = min(1, (N_j / N_i)^p)` with counts floored at `eps`,
//!   which shrinks the penalty a head-class sample puts on tail classes;
//! - compensation `C_ij = max(1, (sigma_j / sigma_i)^q)` with `sigma` the
//!   softmax of the logits, which restores the penalty on classes the sample
//!   is being confused with.
//!
//! `loss = log(exp(z_i) + sum_{j != i} S_ij exp(z_j)) - z_i`.
//!
//! **Gradient convention:** both factors are constants under differentiation.
//! `C_ij` depends on the logits through `sigma`, but it is evaluated once at
//! the current logits and held fixed (stop-gradient). A finite-difference
//! check must therefore hold `S` fixed while perturbing the logits. With that
//! convention `dloss/dz_k = w_k exp(z_k) / sum_j w_j exp(z_j) - [k == i]`
//! where `w_i = 1` and `w_j = S_ij`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SeesawError {
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("label {label} out of range for {classes} classes")]
    Index { label: usize, classes: usize },
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeesawConfig {
    pub p: f64,
    pub q: f64,
    /// Cumulative positive samples seen per class.
    pub class_counts: Vec<u64>,
    pub eps: f64,
}

impl SeesawConfig {
    pub const DEFAULT_P: f64 = 0.8;
    pub const DEFAULT_Q: f64 = 2.0;
    pub const DEFAULT_EPS: f64 = 1.0;

    /// Default exponents with zeroed counts.
    pub fn new(num_classes: usize) -> Self {
        Self {
            p: Self::DEFAULT_P,
            q: Self::DEFAULT_Q,
            class_counts: vec![0; num_classes],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn validate(&self) -> Result<(), SeesawError> {
        if !(self.p.is_finite() && self.p >= 0.0 && self.q.is_finite() && self.q >= 0.0) {
            return Err(SeesawError::Config(format!(
                "p and q must be finite and non-negative (p = {}, q = {})",
                self.p, self.q
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(SeesawError::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    fn smoothed_count(&self, class: usize) -> f64 {
        (self.class_counts[class] as f64).max(self.eps)
    }

    pub fn mitigation(&self, label: usize, other: usize) -> f64 {
        if self.p == 0.0 {
            return 1.0;
        }
        let ratio = self.smoothed_count(other) / self.smoothed_count(label);
        if ratio < 1.0 {
            ratio.powf(self.p)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeesawEval {
    pub loss: f64,
    /// Per-class derivative of the loss with respect to the logits.
    pub grad: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Negative-class weights `S_ij` (with `S_ii = 1`) at the given logits.
pub fn seesaw_weights(logits: &[f64], label: usize, cfg: &SeesawConfig) -> Vec<f64> {
    let sigma = (cfg.q != 0.0).then(|| softmax(logits));
    (0..logits.len())
        .map(|j| {
            if j == label {
                return 1.0;
            }
            let mut s = cfg.mitigation(label, j);
            if let Some(sigma) = &sigma {
                let ratio = sigma[j] / sigma[label];
                if ratio > 1.0 {
                    s *= ratio.powf(cfg.q);
                }
            }
            s
        })
        .collect()
}

fn check_inputs(logits: &[f64], label: usize, cfg: &SeesawConfig) -> Result<(), SeesawError> {
    cfg.validate()?;
    if logits.len() != cfg.num_classes() {
        return Err(SeesawError::Config(format!(
            "{} logits for {} classes",
            logits.len(),
            cfg.num_classes()
        )));
    }
    if label >= logits.len() {
        return Err(SeesawError::Index {
            label,
            classes: logits.len(),
        });
    }
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(SeesawError::Numeric(format!("non-finite logit {z}")));
    }
    Ok(())
}

/// Loss and gradient given explicit negative-class weights.
fn weighted_cross_entropy(logits: &[f64], label: usize, weights: &[f64]) -> SeesawEval {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let terms: Vec<f64> = logits
        .iter()
        .zip(weights)
        .map(|(&z, &w)| w * (z - max).exp())
        .collect();
    let denom: f64 = terms.iter().sum();
    let loss = max + denom.ln() - logits[label];
    let grad = terms
        .iter()
        .enumerate()
        .map(|(k, &t)| t / denom - if k == label { 1.0 } else { 0.0 })
        .collect();
    SeesawEval { loss, grad }
}

pub fn seesaw_loss(
    logits: &[f64],
    label: usize,
    cfg: &SeesawConfig,
) -> Result<SeesawEval, SeesawError> {
    check_inputs(logits, label, cfg)?;
    let weights = seesaw_weights(logits, label, cfg);
    let eval = weighted_cross_entropy(logits, label, &weights);
    if !eval.loss.is_finite() {
        return Err(SeesawError::Numeric(format!(
            "loss evaluated to {}",
            eval.loss
        )));
    }
    Ok(eval)
}

/// Largest deviation of the analytic gradient from a central finite
/// difference with step `h`, relative to the largest finite-difference
/// component. The weights are frozen at the unperturbed logits.
pub fn gradient_check(
    logits: &[f64],
    label: usize,
    cfg: &SeesawConfig,
    h: f64,
) -> Result<f64, SeesawError> {
    let eval = seesaw_loss(logits, label, cfg)?;
    let weights = seesaw_weights(logits, label, cfg);
    let mut z = logits.to_vec();
    let mut fd = Vec::with_capacity(z.len());
    for k in 0..z.len() {
        z[k] = logits[k] + h;
        let up = weighted_cross_entropy(&z, label, &weights).loss;
        z[k] = logits[k] - h;
        let down = weighted_cross_entropy(&z, label, &weights).loss;
        z[k] = logits[k];
        fd.push((up - down) / (2.0 * h));
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let err = eval
        .grad
        .iter()
        .zip(&fd)
        .fold(0.0f64, |m, (g, f)| m.max((g - f).abs()));
    Ok(err / scale)
}

/// Adds one positive sample per label to the cumulative counts.
pub fn update_counts(
    cfg: &SeesawConfig,
    batch_labels: &[usize],
) -> Result<SeesawConfig, SeesawError> {
    let mut next = cfg.clone();
    for &label in batch_labels {
        let classes = next.num_classes();
        let slot = next
            .class_counts
            .get_mut(label)
            .ok_or(SeesawError::Index { label, classes })?;
        *slot += 1;
    }
    Ok(next)
}
