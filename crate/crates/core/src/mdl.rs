//! Linear probes and online-code description length.
//!
//! The online code transmits the training labels in blocks. The first block
//! is sent with the uniform code; every later block is coded by a probe
//! trained on everything transmitted before it. Compression is the ratio of
//! the uniform codelength to the online codelength.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repr::ProbeInput;

#[derive(Debug, Error, PartialEq)]
pub enum MdlError {
    #[error("no training examples")]
    EmptyData,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Multinomial logistic regression: softmax(W x + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// k×d
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearProbe {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: Array2::zeros((k, d)),
            bias: Array1::zeros(k),
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&x) + &self.bias
    }

    /// Row-wise logits for an n×d batch.
    pub fn batch_logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> usize {
        argmax(self.logits(x).view())
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let logits = self.batch_logits(x);
        let correct = logits
            .outer_iter()
            .zip(y)
            .filter(|(row, &label)| argmax(*row) == label)
            .count();
        correct as f64 / y.len() as f64
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &value) in v.iter().enumerate() {
        if value > v[best] {
            best = i;
        }
    }
    best
}

/// Natural-log softmax with log-sum-exp stabilization.
pub(crate) fn log_softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.mapv(|v| v - lse)
}

pub(crate) fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    log_softmax(z).mapv(f64::exp)
}

/// log2 p(y | x) under the probe.
pub fn probe_logprob(probe: &LinearProbe, x: ArrayView1<f64>, y: usize) -> Result<f64, MdlError> {
    if x.len() != probe.d() {
        return Err(MdlError::Shape(format!(
            "input has {} dims, probe expects {}",
            x.len(),
            probe.d()
        )));
    }
    if y >= probe.k() {
        return Err(MdlError::Shape(format!(
            "label {y} out of range for k={}",
            probe.k()
        )));
    }
    Ok(log_softmax(probe.logits(x).view())[y] / std::f64::consts::LN_2)
}

/// Mean cross-entropy (nats) of the probe on a batch, plus `weight_decay/2·‖W‖²`,
/// with its gradient with respect to W and b.
pub fn probe_loss_and_grad(
    probe: &LinearProbe,
    x: ArrayView2<f64>,
    y: &[usize],
    weight_decay: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut delta = probe.batch_logits(x);
    let mut loss = 0.0;
    for (mut row, &label) in delta.outer_iter_mut().zip(y) {
        let logp = log_softmax(row.view());
        loss -= logp[label];
        row.assign(&logp.mapv(f64::exp));
        row[label] -= 1.0;
    }
    delta /= n;
    let mut grad_w = delta.t().dot(&x);
    let grad_b = delta.sum_axis(Axis(0));
    loss /= n;
    if weight_decay > 0.0 {
        loss += 0.5 * weight_decay * probe.weights.iter().map(|w| w * w).sum::<f64>();
        grad_w.scaled_add(weight_decay, &probe.weights);
    }
    (loss, grad_w, grad_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Minimum validation-accuracy gain that counts as an improvement.
    pub tolerance: f64,
    pub weight_decay: f64,
    /// Train the intercept. Disabling it makes training scale-equivariant.
    pub fit_bias: bool,
    /// Fraction of the training rows held out when no validation set is given.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 50,
            patience: 4,
            tolerance: 1e-3,
            weight_decay: 0.0,
            fit_bias: true,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Rows used for early stopping.
#[derive(Debug, Clone, Copy)]
pub enum Validation<'a> {
    /// An explicit validation set.
    Given(ArrayView2<'a, f64>, &'a [usize]),
    /// A seeded holdout carved out of the training rows.
    Holdout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_accuracy: f64,
}

const SHUFFLE_STREAM: u64 = 1;
const HOLDOUT_STREAM: u64 = 2;
const ORDER_STREAM: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fits a linear probe by mini-batch gradient descent with early stopping on
/// validation accuracy; returns the parameters of the best epoch.
pub fn train_probe(
    x: ArrayView2<f64>,
    y: &[usize],
    k: usize,
    validation: Validation<'_>,
    cfg: &ProbeTrainConfig,
) -> Result<ProbeFit, MdlError> {
    let n = x.nrows();
    if n == 0 {
        return Err(MdlError::EmptyData);
    }
    if y.len() != n {
        return Err(MdlError::Shape(format!("{n} rows but {} labels", y.len())));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= k) {
        return Err(MdlError::Shape(format!(
            "label {label} out of range for k={k}"
        )));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(MdlError::Config(
            "batch_size and learning_rate must be positive".into(),
        ));
    }

    let (train_rows, val_x, val_y): (Vec<usize>, Array2<f64>, Vec<usize>) = match validation {
        Validation::Given(vx, vy) => {
            if vx.nrows() != vy.len() || (vx.nrows() > 0 && vx.ncols() != x.ncols()) {
                return Err(MdlError::Shape("validation set shape mismatch".into()));
            }
            ((0..n).collect(), vx.to_owned(), vy.to_vec())
        }
        Validation::Holdout => {
            let mut rows: Vec<usize> = (0..n).collect();
            let held = ((n as f64 * cfg.holdout_fraction).floor() as usize).max(1);
            if n < 2 {
                (rows.clone(), x.select(Axis(0), &rows), y.to_vec())
            } else {
                rows.shuffle(&mut rng(cfg.seed, HOLDOUT_STREAM));
                let (held_rows, kept) = rows.split_at(held.min(n - 1));
                let mut kept = kept.to_vec();
                kept.sort_unstable();
                let mut held_rows = held_rows.to_vec();
                held_rows.sort_unstable();
                let vy = held_rows.iter().map(|&r| y[r]).collect();
                (kept, x.select(Axis(0), &held_rows), vy)
            }
        }
    };
    // Fall back to the training rows when an explicit validation set is empty.
    let (val_x, val_y) = if val_y.is_empty() {
        (
            x.select(Axis(0), &train_rows),
            train_rows.iter().map(|&r| y[r]).collect(),
        )
    } else {
        (val_x, val_y)
    };

    let mut probe = LinearProbe::zeros(k, x.ncols());
    let mut best = probe.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut order = train_rows;
    let mut shuffle_rng = rng(cfg.seed, SHUFFLE_STREAM);
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&r| y[r]).collect();
            let (_, grad_w, grad_b) = probe_loss_and_grad(&probe, bx.view(), &by, cfg.weight_decay);
            probe.weights.scaled_add(-cfg.learning_rate, &grad_w);
            if cfg.fit_bias {
                probe.bias.scaled_add(-cfg.learning_rate, &grad_b);
            }
        }
        epochs_run = epoch;
        if !probe.is_finite() {
            break;
        }
        let acc = probe.accuracy(val_x.view(), &val_y);
        if acc > best_acc + cfg.tolerance || best_acc == f64::NEG_INFINITY {
            best_acc = acc;
            best = probe.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(ProbeFit {
        probe: best,
        best_epoch,
        epochs_run,
        best_val_accuracy: best_acc.max(0.0),
    })
}

/// Description length: uniform codelength over online codelength.
pub fn compression(online_bits: f64, n: usize, k: usize) -> Result<f64, MdlError> {
    if !(online_bits > 0.0) {
        return Err(MdlError::Domain(format!(
            "online codelength must be positive, got {online_bits}"
        )));
    }
    Ok(uniform_codelength(n, k) / online_bits)
}

pub fn uniform_codelength(n: usize, k: usize) -> f64 {
    n as f64 * (k as f64).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineCodeConfig {
    /// Ascending percentages of the training set; the last must be 100.
    pub timestamps: Vec<f64>,
    pub patience: usize,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub fit_bias: bool,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Replace every probe with the zero probe (uniform predictions).
    pub diagnostic_uniform: bool,
}

impl Default for OnlineCodeConfig {
    fn default() -> Self {
        let probe = ProbeTrainConfig::default();
        Self {
            timestamps: vec![2.0, 3.0, 4.4, 6.5, 9.5, 14.0, 21.0, 31.0, 45.7, 67.6, 100.0],
            patience: probe.patience,
            tolerance: probe.tolerance,
            max_epochs: probe.max_epochs,
            learning_rate: probe.learning_rate,
            batch_size: probe.batch_size,
            weight_decay: probe.weight_decay,
            fit_bias: probe.fit_bias,
            holdout_fraction: probe.holdout_fraction,
            seed: probe.seed,
            diagnostic_uniform: false,
        }
    }
}

impl OnlineCodeConfig {
    pub fn validate(&self) -> Result<(), MdlError> {
        let t = &self.timestamps;
        if t.is_empty() {
            return Err(MdlError::Config("no timestamps".into()));
        }
        if !(t[0] > 0.0) {
            return Err(MdlError::Config(format!(
                "first timestamp {} must be > 0",
                t[0]
            )));
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MdlError::Config(
                "timestamps must be strictly ascending".into(),
            ));
        }
        if *t.last().unwrap() != 100.0 {
            return Err(MdlError::Config("last timestamp must be 100".into()));
        }
        Ok(())
    }

    pub fn probe_config(&self) -> ProbeTrainConfig {
        ProbeTrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            tolerance: self.tolerance,
            weight_decay: self.weight_decay,
            fit_bias: self.fit_bias,
            holdout_fraction: self.holdout_fraction,
            seed: self.seed,
        }
    }

    /// Block end positions `floor(t/100 · n)`. Timestamps are read at
    /// 1e-6-percent resolution so decimal values such as 67.6 floor exactly.
    pub fn block_ends(&self, n: usize) -> Result<Vec<usize>, MdlError> {
        self.validate()?;
        let ends: Vec<usize> = self
            .timestamps
            .iter()
            .map(|&t| {
                let micro = (t * 1e6).round() as u128;
                (micro * n as u128 / 100_000_000) as usize
            })
            .collect();
        if ends[0] == 0 {
            return Err(MdlError::Config(format!(
                "first timestamp {}% of {n} examples floors to an empty block",
                self.timestamps[0]
            )));
        }
        if let Some(w) = ends.windows(2).find(|w| w[0] == w[1]) {
            return Err(MdlError::Config(format!(
                "timestamps collapse to the same prefix length {} for n={n}",
                w[0]
            )));
        }
        Ok(ends)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Online codelength in bits.
    pub l_online: f64,
    /// `n_train · log2 k` bits.
    pub l_uniform: f64,
    pub compression: f64,
    /// Bits per block, the first block coded uniformly.
    pub block_codelengths: Vec<f64>,
    pub block_sizes: Vec<usize>,
    pub test_accuracy: f64,
    /// Span on which `test_accuracy` was measured.
    pub accuracy_split: String,
    pub n_train: usize,
    pub k: usize,
    pub diagnostic_uniform: bool,
}

/// Everything an independent re-computation of the codelength needs.
#[derive(Debug, Clone)]
pub struct OnlineCodeTrace {
    pub report: ProbeReport,
    /// Training rows (absolute indices into the input) in transmission order.
    pub order: Vec<usize>,
    pub block_ends: Vec<usize>,
    /// `probes[i]` was trained on the first `block_ends[i]` rows of `order`
    /// and codes rows `block_ends[i]..block_ends[i+1]`.
    pub block_probes: Vec<LinearProbe>,
    pub final_probe: LinearProbe,
}

pub fn online_code(input: &ProbeInput, cfg: &OnlineCodeConfig) -> Result<ProbeReport, MdlError> {
    online_code_traced(input, cfg).map(|t| t.report)
}

pub fn online_code_traced(
    input: &ProbeInput,
    cfg: &OnlineCodeConfig,
) -> Result<OnlineCodeTrace, MdlError> {
    let n = input.train.len();
    if n < 10 {
        return Err(MdlError::Config(format!(
            "train span has {n} examples, need at least 10"
        )));
    }
    let k = input.k;
    let ends = cfg.block_ends(n)?;
    let probe_cfg = cfg.probe_config();

    let mut order: Vec<usize> = input.train.clone().collect();
    order.shuffle(&mut rng(cfg.seed, ORDER_STREAM));
    let ordered_x = input.features.select(Axis(0), &order);
    let ordered_y: Vec<usize> = order.iter().map(|&r| input.labels[r]).collect();

    let valid_x = input.features.slice(s![input.valid.clone(), ..]);
    let valid_y = &input.labels[input.valid.clone()];
    let validation = if input.valid.is_empty() {
        Validation::Holdout
    } else {
        Validation::Given(valid_x, valid_y)
    };
    let fit = |rows: Range<usize>| -> Result<LinearProbe, MdlError> {
        if cfg.diagnostic_uniform {
            return Ok(LinearProbe::zeros(k, input.d()));
        }
        let fit = train_probe(
            ordered_x.slice(s![rows.clone(), ..]),
            &ordered_y[rows],
            k,
            validation,
            &probe_cfg,
        )?;
        Ok(fit.probe)
    };

    let uniform_bits = (k as f64).log2();
    let mut block_codelengths = vec![ends[0] as f64 * uniform_bits];
    let mut block_sizes = vec![ends[0]];
    let mut block_probes = Vec::with_capacity(ends.len() - 1);
    for w in ends.windows(2) {
        let probe = fit(0..w[0])?;
        let mut bits = 0.0;
        for (j, &y) in ordered_y.iter().enumerate().take(w[1]).skip(w[0]) {
            bits -= probe_logprob(&probe, ordered_x.row(j), y)?;
        }
        log::debug!("block {}..{}: {bits:.1} bits", w[0], w[1]);
        block_codelengths.push(bits);
        block_sizes.push(w[1] - w[0]);
        block_probes.push(probe);
    }
    let l_online: f64 = block_codelengths.iter().sum();

    let final_probe = fit(0..n)?;
    let (accuracy_split, span) = if !input.test.is_empty() {
        ("test", input.test.clone())
    } else if !input.valid.is_empty() {
        ("valid", input.valid.clone())
    } else {
        ("train", input.train.clone())
    };
    let test_accuracy = final_probe.accuracy(
        input.features.slice(s![span.clone(), ..]),
        &input.labels[span],
    );

    let l_uniform = uniform_codelength(n, k);
    Ok(OnlineCodeTrace {
        report: ProbeReport {
            l_online,
            l_uniform,
            compression: compression(l_online, n, k)?,
            block_codelengths,
            block_sizes,
            test_accuracy,
            accuracy_split: accuracy_split.to_string(),
            n_train: n,
            k,
            diagnostic_uniform: cfg.diagnostic_uniform,
        },
        order,
        block_ends: ends,
        block_probes,
        final_probe,
    })
}
