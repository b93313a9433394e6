//! Debiasing objectives.
//!
//! The per-example functions work on probability vectors and clamp at
//! [`PROB_FLOOR`] before taking logs. The `*_grad` functions work on logits,
//! return the batch-mean loss, and give dLoss/dlogits for every row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use super::LabError;
use crate::mdl::log_softmax;

pub const PROB_FLOOR: f64 = 1e-12;

/// A loss value; `clamped` is set when a probability was raised to the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub clamped: bool,
}

fn neg_ln(p: f64) -> Loss {
    let clamped = p < PROB_FLOOR;
    Loss {
        value: -p.max(PROB_FLOOR).ln(),
        clamped,
    }
}

/// `−ln p_m[y]`
pub fn loss_ce(probs_m: ArrayView1<f64>, y: usize) -> Loss {
    neg_ln(probs_m[y])
}

/// `(1 − p_b[y])^γ · (−ln p_m[y])`
pub fn loss_dfl(probs_m: ArrayView1<f64>, probs_b: ArrayView1<f64>, y: usize, gamma: f64) -> Loss {
    let ce = neg_ln(probs_m[y]);
    Loss {
        value: dfl_weight(probs_b[y], gamma) * ce.value,
        clamped: ce.clamped,
    }
}

/// `(1 − p)^γ`, with `0^0 = 1`.
pub fn dfl_weight(p_gold: f64, gamma: f64) -> f64 {
    (1.0 - p_gold).max(0.0).powf(gamma)
}

/// `−ln softmax(log p_b + log p_m)[y]`
pub fn loss_poe(
    logprobs_m: ArrayView1<f64>,
    logprobs_b: ArrayView1<f64>,
    y: usize,
) -> Result<f64, LabError> {
    if logprobs_m
        .iter()
        .chain(logprobs_b.iter())
        .any(|v| v.is_nan())
    {
        return Err(LabError::Numeric(
            "NaN log-probability in product of experts".into(),
        ));
    }
    let combined = &logprobs_m + &logprobs_b;
    Ok(-log_softmax(combined.view())[y])
}

/// Teacher distribution raised to `1 − p_weak(gold)` and renormalized: a weak
/// model that is certain of the gold label flattens the target to uniform.
pub fn confreg_scale(teacher_probs: ArrayView1<f64>, weak_gold_prob: f64) -> Array1<f64> {
    confreg_scale_with(teacher_probs, weak_gold_prob, ScaleExponent::OneMinusWeak)
}

/// How the weak model's gold probability becomes the smoothing exponent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleExponent {
    /// `1 − p`
    OneMinusWeak,
    /// `(1 − p)^power`
    Power(f64),
}

impl ScaleExponent {
    pub fn exponent(self, weak_gold_prob: f64) -> f64 {
        let base = (1.0 - weak_gold_prob).clamp(0.0, 1.0);
        match self {
            ScaleExponent::OneMinusWeak => base,
            ScaleExponent::Power(p) => base.powf(p),
        }
    }
}

pub fn confreg_scale_with(
    teacher_probs: ArrayView1<f64>,
    weak_gold_prob: f64,
    exponent: ScaleExponent,
) -> Array1<f64> {
    let e = exponent.exponent(weak_gold_prob);
    let powered = teacher_probs.mapv(|p| if e == 0.0 { 1.0 } else { p.max(0.0).powf(e) });
    let total = powered.sum();
    powered / total
}

/// `−Σ_j target[j] · ln p_m[j]`
pub fn loss_confreg(probs_m: ArrayView1<f64>, scaled_teacher: ArrayView1<f64>) -> Loss {
    let mut value = 0.0;
    let mut clamped = false;
    for (&p, &t) in probs_m.iter().zip(scaled_teacher) {
        if t == 0.0 {
            continue;
        }
        let l = neg_ln(p);
        clamped |= l.clamped;
        value += t * l.value;
    }
    Loss { value, clamped }
}

fn rows_softmax(logits: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut logp = logits.to_owned();
    for mut row in logp.outer_iter_mut() {
        let l = log_softmax(row.view());
        row.assign(&l);
    }
    let p = logp.mapv(f64::exp);
    (logp, p)
}

/// Batch cross-entropy.
pub fn ce_grad(logits: ArrayView2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let (logp, mut grad) = rows_softmax(logits);
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        loss -= logp[[i, label]];
        grad[[i, label]] -= 1.0;
    }
    grad /= n;
    (loss / n, grad)
}

/// Batch DFL. The bias-side gradient is only produced when `through_weight`
/// is set; otherwise the weight `(1 − p_b)^γ` is a constant coefficient.
pub fn dfl_grad(
    logits_m: ArrayView2<f64>,
    logits_b: ArrayView2<f64>,
    y: &[usize],
    gamma: f64,
    through_weight: bool,
) -> (f64, Array2<f64>, Option<Array2<f64>>) {
    let n = y.len() as f64;
    let (logp_m, mut grad_m) = rows_softmax(logits_m);
    let (_, p_b) = rows_softmax(logits_b);
    let mut grad_b = through_weight.then(|| Array2::zeros(logits_b.raw_dim()));
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let pb = p_b[[i, label]];
        let w = dfl_weight(pb, gamma);
        let ce = -logp_m[[i, label]];
        loss += w * ce;
        let mut row = grad_m.row_mut(i);
        row[label] -= 1.0;
        row *= w / n;
        if let Some(gb) = grad_b.as_mut() {
            // d/dz_b (1 − p_y)^γ = −γ (1 − p_y)^(γ−1) · p_y (e_y − p)
            let dw_dpy = if gamma == 0.0 {
                0.0
            } else {
                -gamma * (1.0 - pb).max(PROB_FLOOR).powf(gamma - 1.0)
            };
            for j in 0..p_b.ncols() {
                let dpy_dzj = pb * ((j == label) as u8 as f64 - p_b[[i, j]]);
                gb[[i, j]] = ce * dw_dpy * dpy_dzj / n;
            }
        }
    }
    (loss / n, grad_m, grad_b)
}

/// Batch product of experts; the combined logits are `z_m + z_b` up to
/// per-row constants, so both experts receive the same logit gradient.
pub fn poe_grad(
    logits_m: ArrayView2<f64>,
    logits_b: ArrayView2<f64>,
    y: &[usize],
) -> (f64, Array2<f64>, Array2<f64>) {
    let (logp_m, _) = rows_softmax(logits_m);
    let (logp_b, _) = rows_softmax(logits_b);
    let (loss, grad) = ce_grad((&logp_m + &logp_b).view(), y);
    (loss, grad.clone(), grad)
}

/// Batch cross-entropy against soft targets (one target row per example).
pub fn distill_grad(logits_m: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = logits_m.nrows() as f64;
    let (logp, p) = rows_softmax(logits_m);
    let loss = -Zip::from(&logp)
        .and(&targets)
        .fold(0.0, |acc, &l, &t| acc + t * l)
        / n;
    let grad = (&p - &targets) / n;
    (loss, grad)
}
