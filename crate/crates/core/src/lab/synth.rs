//! Synthetic classification data with a controllable shortcut feature.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBiasConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub d_signal: usize,
    pub d_bias: usize,
    pub k: usize,
    /// Probability that the bias feature names the true label (train, iid_test).
    pub bias_strength: f64,
    /// Standard deviation of the noise around each class's signal center.
    pub signal_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticBiasConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 1000,
            d_signal: 8,
            d_bias: 3,
            k: 3,
            bias_strength: 0.9,
            signal_noise: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticBiasConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return Err(LabError::Config(format!(
                "bias_strength {} outside [0, 1]",
                self.bias_strength
            )));
        }
        if self.k < 2 {
            return Err(LabError::Config("k must be at least 2".into()));
        }
        if self.d_signal == 0 || self.d_bias == 0 {
            return Err(LabError::Config(
                "feature dimensions must be at least 1".into(),
            ));
        }
        if !(self.signal_noise >= 0.0) {
            return Err(LabError::Config("signal_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d_signal + self.d_bias
    }
}

/// Rows are `[signal features | bias features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplit {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    /// The class named by each row's bias feature.
    pub bias_class: Vec<usize>,
    pub d_signal: usize,
}

impl SyntheticSplit {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn bias_columns(&self) -> Range<usize> {
        self.d_signal..self.x.ncols()
    }

    pub fn bias_features(&self) -> ArrayView2<'_, f64> {
        self.x.slice(s![.., self.bias_columns()])
    }

    pub fn agreement_rate(&self) -> f64 {
        let agree = self
            .y
            .iter()
            .zip(&self.bias_class)
            .filter(|(a, b)| a == b)
            .count();
        agree as f64 / self.len().max(1) as f64
    }

    pub fn select(&self, rows: &[usize]) -> SyntheticSplit {
        SyntheticSplit {
            x: self.x.select(ndarray::Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            bias_class: rows.iter().map(|&r| self.bias_class[r]).collect(),
            d_signal: self.d_signal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: SyntheticSplit,
    pub iid_test: SyntheticSplit,
    /// The bias feature always names a wrong label.
    pub anti_test: SyntheticSplit,
}

/// Bias code for class `c`: one-hot over the first `k` bias dimensions when
/// there is room, otherwise a centred ordinal value in the first dimension.
fn bias_code(c: usize, k: usize, d_bias: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if d_bias >= k {
        out[c] = 1.0;
    } else {
        out[0] = c as f64 - (k - 1) as f64 / 2.0;
    }
}

pub fn gen_synthetic(cfg: &SyntheticBiasConfig) -> Result<SyntheticData, LabError> {
    Ok(SyntheticData {
        train: gen_split(cfg, cfg.n_train, 1, false)?,
        iid_test: gen_split(cfg, cfg.n_test, 2, false)?,
        anti_test: gen_split(cfg, cfg.n_test, 3, true)?,
    })
}

/// Draws `n` rows from the distribution fixed by `cfg.seed`. Each `stream`
/// gives an independent sample sharing the same class centers. With `anti`
/// set, the bias feature always names a wrong label.
pub fn gen_split(
    cfg: &SyntheticBiasConfig,
    n: usize,
    stream: u64,
    anti: bool,
) -> Result<SyntheticSplit, LabError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Array2<f64> =
        Array2::from_shape_simple_fn((cfg.k, cfg.d_signal), || rng.sample(StandardNormal));
    rng.set_stream(stream);
    let mut x = Array2::zeros((n, cfg.input_dim()));
    let mut y = Vec::with_capacity(n);
    let mut bias_class = Vec::with_capacity(n);
    for mut row in x.outer_iter_mut() {
        let label = rng.random_range(0..cfg.k);
        let agrees = !anti && rng.random::<f64>() < cfg.bias_strength;
        let named = if agrees {
            label
        } else {
            // A uniformly chosen label other than the true one.
            let other = rng.random_range(0..cfg.k - 1);
            if other >= label {
                other + 1
            } else {
                other
            }
        };
        for j in 0..cfg.d_signal {
            let noise: f64 = StandardNormal.sample(&mut rng);
            row[j] = centers[[label, j]] + cfg.signal_noise * noise;
        }
        let bias = row.slice_mut(s![cfg.d_signal..]);
        bias_code(
            named,
            cfg.k,
            cfg.d_bias,
            bias.into_slice().expect("row-major"),
        );
        y.push(label);
        bias_class.push(named);
    }
    Ok(SyntheticSplit {
        x,
        y,
        bias_class,
        d_signal: cfg.d_signal,
    })
}
