//! Training main and bias models under CE, DFL, PoE and ConfReg.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ce_grad, confreg_scale_with, dfl_grad, distill_grad, poe_grad, ScaleExponent};
use super::model::ToyModel;
use super::synth::SyntheticSplit;
use super::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DebiasObjective {
    Ce,
    Dfl { gamma: f64 },
    Poe,
    ConfReg,
}

impl DebiasObjective {
    pub fn name(&self) -> &'static str {
        match self {
            DebiasObjective::Ce => "ce",
            DebiasObjective::Dfl { .. } => "dfl",
            DebiasObjective::Poe => "poe",
            DebiasObjective::ConfReg => "confreg",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            DebiasObjective::Dfl { gamma } => Some(*gamma),
            _ => None,
        }
    }

    pub fn needs_bias_model(&self) -> bool {
        !matches!(self, DebiasObjective::Ce)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if let DebiasObjective::Dfl { gamma } = self {
            if !gamma.is_finite() || *gamma < 0.0 {
                return Err(LabError::Config(format!(
                    "gamma must be finite and >= 0, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    /// Parses `ce`, `poe`, `confreg` or `dfl` (the latter with `gamma`).
    pub fn parse(name: &str, gamma: Option<f64>) -> Result<Self, LabError> {
        let objective = match name.to_ascii_lowercase().as_str() {
            "ce" => DebiasObjective::Ce,
            "dfl" => DebiasObjective::Dfl {
                gamma: gamma.unwrap_or(2.0),
            },
            "poe" => DebiasObjective::Poe,
            "confreg" => DebiasObjective::ConfReg,
            other => return Err(LabError::Config(format!("unknown objective {other:?}"))),
        };
        if gamma.is_some() && objective.gamma().is_none() {
            return Err(LabError::Config(format!(
                "gamma only applies to dfl, not {name}"
            )));
        }
        objective.validate()?;
        Ok(objective)
    }
}

impl fmt::Display for DebiasObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DebiasObjective::Dfl { gamma } => write!(f, "dfl(gamma={gamma})"),
            other => f.write_str(other.name()),
        }
    }
}

/// How the weak learner sees the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasModelKind {
    /// A linear model over the bias features only.
    Explicit,
    /// A low-capacity network over the full input.
    Weak,
    /// A main-sized network trained on a small subsample.
    Subset,
}

impl FromStr for BiasModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "explicit" => Ok(BiasModelKind::Explicit),
            "weak" => Ok(BiasModelKind::Weak),
            "subset" => Ok(BiasModelKind::Subset),
            other => Err(format!(
                "unknown bias model {other:?} (explicit, weak or subset)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train the bias model first and freeze it; otherwise train jointly.
    pub pipeline: bool,
    /// Hidden widths of the main model.
    pub hidden: Vec<usize>,
    /// Hidden width of the `weak` bias model.
    pub weak_hidden: usize,
    /// Fraction of training rows seen by the `subset` bias model.
    pub subset_fraction: f64,
    pub bias_model: BiasModelKind,
    /// End-to-end DFL: let gradients flow through the `(1 − p_b)^γ` weight.
    pub dfl_weight_grad: bool,
    /// End-to-end PoE: let the combined loss update the bias model.
    pub poe_bias_grad: bool,
    /// Weight of the bias model's own cross-entropy in end-to-end training.
    pub bias_loss_weight: f64,
    pub confreg_exponent: ScaleExponent,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            pipeline: true,
            hidden: vec![64],
            weak_hidden: 4,
            subset_fraction: 0.05,
            bias_model: BiasModelKind::Explicit,
            dfl_weight_grad: false,
            poe_bias_grad: true,
            bias_loss_weight: 1.0,
            confreg_exponent: ScaleExponent::OneMinusWeak,
        }
    }
}

/// A bias model together with the input columns it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLearner {
    pub model: ToyModel,
    pub columns: Range<usize>,
}

impl BiasLearner {
    pub fn view<'a>(&self, x: ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        x.slice_move(s![.., self.columns.clone()])
    }

    pub fn probs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, LabError> {
        self.model.probs_batch(self.view(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedToy {
    pub main: ToyModel,
    pub bias: Option<BiasLearner>,
    /// ConfReg's teacher.
    pub teacher: Option<ToyModel>,
}

const MAIN_INIT: u64 = 11;
const BIAS_INIT: u64 = 12;
const TEACHER_INIT: u64 = 13;
const MAIN_ORDER: u64 = 21;
const BIAS_ORDER: u64 = 22;
const TEACHER_ORDER: u64 = 23;
const SUBSET_PICK: u64 = 24;

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream)
}

fn main_dims(input: usize, hidden: &[usize], k: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(k);
    dims
}

/// Initial main and (when the objective needs one) bias models.
pub fn init_models(
    input_dim: usize,
    bias_columns: Range<usize>,
    k: usize,
    objective: &DebiasObjective,
    hyper: &TrainHyper,
) -> Result<(ToyModel, Option<BiasLearner>), LabError> {
    let main = ToyModel::new(
        &main_dims(input_dim, &hyper.hidden, k),
        stream_seed(hyper.seed, MAIN_INIT),
    )?;
    if !objective.needs_bias_model() {
        return Ok((main, None));
    }
    let bias_seed = stream_seed(hyper.seed, BIAS_INIT);
    let learner = match hyper.bias_model {
        BiasModelKind::Explicit => BiasLearner {
            model: ToyModel::new(&[bias_columns.len(), k], bias_seed)?,
            columns: bias_columns,
        },
        BiasModelKind::Weak => BiasLearner {
            model: ToyModel::new(&[input_dim, hyper.weak_hidden, k], bias_seed)?,
            columns: 0..input_dim,
        },
        BiasModelKind::Subset => BiasLearner {
            model: ToyModel::new(&main_dims(input_dim, &hyper.hidden, k), bias_seed)?,
            columns: 0..input_dim,
        },
    };
    Ok((main, Some(learner)))
}

/// Runs `epochs` passes of shuffled mini-batches over `rows`.
fn sgd_epochs(
    rows: &[usize],
    hyper: &TrainHyper,
    stream: u64,
    mut step: impl FnMut(&[usize]) -> Result<(), LabError>,
) -> Result<(), LabError> {
    let mut order = rows.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(hyper.seed, stream));
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            step(batch)?;
        }
    }
    Ok(())
}

fn train_ce(
    model: &mut ToyModel,
    x: ArrayView2<f64>,
    y: &[usize],
    rows: &[usize],
    hyper: &TrainHyper,
    stream: u64,
) -> Result<(), LabError> {
    sgd_epochs(rows, hyper, stream, |batch| {
        let bx = x.select(Axis(0), batch);
        let by: Vec<usize> = batch.iter().map(|&r| y[r]).collect();
        let cache = model.forward_batch(bx.view())?;
        let (_, d) = ce_grad(cache.logits.view(), &by);
        let grads = model.backward(&cache, d.view());
        model.apply(&grads, hyper.learning_rate);
        Ok(())
    })?;
    check_finite(model)
}

fn check_finite(model: &ToyModel) -> Result<(), LabError> {
    if model.is_finite() {
        Ok(())
    } else {
        Err(LabError::Numeric(
            "training diverged to non-finite parameters".into(),
        ))
    }
}

fn train_bias_pipeline(
    bias: &mut BiasLearner,
    data: &SyntheticSplit,
    hyper: &TrainHyper,
) -> Result<(), LabError> {
    let all: Vec<usize> = (0..data.len()).collect();
    let rows = if hyper.bias_model == BiasModelKind::Subset {
        let take =
            ((data.len() as f64 * hyper.subset_fraction).round() as usize).clamp(1, data.len());
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(hyper.seed, SUBSET_PICK));
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, data.len(), take).into_vec();
        picked.sort_unstable();
        picked
    } else {
        all
    };
    let view = bias.view(data.x.view());
    train_ce(&mut bias.model, view, &data.y, &rows, hyper, BIAS_ORDER)
}

pub fn train_toy(
    mut main: ToyModel,
    mut bias: Option<BiasLearner>,
    objective: &DebiasObjective,
    data: &SyntheticSplit,
    hyper: &TrainHyper,
) -> Result<TrainedToy, LabError> {
    objective.validate()?;
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(LabError::Config(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    if main.input_dim() != data.x.ncols() {
        return Err(LabError::Shape(format!(
            "main model expects {} inputs, data has {}",
            main.input_dim(),
            data.x.ncols()
        )));
    }
    if matches!(objective, DebiasObjective::ConfReg) && !hyper.pipeline {
        return Err(LabError::Config(
            "confreg needs a trained teacher and can only run as a pipeline".into(),
        ));
    }
    if hyper.bias_model == BiasModelKind::Subset && !hyper.pipeline && objective.needs_bias_model()
    {
        return Err(LabError::Config(
            "the subset bias model can only be trained as a pipeline".into(),
        ));
    }
    if objective.needs_bias_model() && bias.is_none() {
        return Err(LabError::Config(format!(
            "{objective} requires a bias model"
        )));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let x = data.x.view();
    let y = &data.y;

    if let DebiasObjective::Ce = objective {
        train_ce(&mut main, x, y, &rows, hyper, MAIN_ORDER)?;
        return Ok(TrainedToy {
            main,
            bias,
            teacher: None,
        });
    }

    let learner = bias.as_mut().expect("checked above");
    if hyper.pipeline {
        train_bias_pipeline(learner, data, hyper)?;
    }

    match *objective {
        DebiasObjective::Ce => unreachable!(),
        DebiasObjective::ConfReg => {
            let mut teacher =
                ToyModel::new(&main.layer_dims(), stream_seed(hyper.seed, TEACHER_INIT))?;
            train_ce(&mut teacher, x, y, &rows, hyper, TEACHER_ORDER)?;
            let teacher_probs = teacher.probs_batch(x)?;
            let weak_probs = learner.probs(x)?;
            let mut targets = teacher_probs.clone();
            for (i, mut row) in targets.outer_iter_mut().enumerate() {
                let scaled = confreg_scale_with(
                    teacher_probs.row(i),
                    weak_probs[[i, y[i]]],
                    hyper.confreg_exponent,
                );
                row.assign(&scaled);
            }
            sgd_epochs(&rows, hyper, MAIN_ORDER, |batch| {
                let cache = main.forward_batch(x.select(Axis(0), batch).view())?;
                let (_, d) =
                    distill_grad(cache.logits.view(), targets.select(Axis(0), batch).view());
                let grads = main.backward(&cache, d.view());
                main.apply(&grads, hyper.learning_rate);
                Ok(())
            })?;
            check_finite(&main)?;
            Ok(TrainedToy {
                main,
                bias,
                teacher: Some(teacher),
            })
        }
        DebiasObjective::Dfl { .. } | DebiasObjective::Poe => {
            let joint = !hyper.pipeline;
            sgd_epochs(&rows, hyper, MAIN_ORDER, |batch| {
                let bx = x.select(Axis(0), batch);
                let by: Vec<usize> = batch.iter().map(|&r| y[r]).collect();
                let main_cache = main.forward_batch(bx.view())?;
                let bias_cache = learner.model.forward_batch(learner.view(bx.view()))?;
                let (d_main, d_bias) = match *objective {
                    DebiasObjective::Dfl { gamma } => {
                        let (_, dm, db) = dfl_grad(
                            main_cache.logits.view(),
                            bias_cache.logits.view(),
                            &by,
                            gamma,
                            joint && hyper.dfl_weight_grad,
                        );
                        (dm, db)
                    }
                    _ => {
                        let (_, dm, db) =
                            poe_grad(main_cache.logits.view(), bias_cache.logits.view(), &by);
                        (dm, (joint && hyper.poe_bias_grad).then_some(db))
                    }
                };
                let grads = main.backward(&main_cache, d_main.view());
                if joint {
                    let (_, own) = ce_grad(bias_cache.logits.view(), &by);
                    let mut d = own * hyper.bias_loss_weight;
                    if let Some(db) = d_bias {
                        d += &db;
                    }
                    let bias_grads = learner.model.backward(&bias_cache, d.view());
                    learner.model.apply(&bias_grads, hyper.learning_rate);
                }
                main.apply(&grads, hyper.learning_rate);
                Ok(())
            })?;
            check_finite(&main)?;
            check_finite(&learner.model)?;
            Ok(TrainedToy {
                main,
                bias,
                teacher: None,
            })
        }
    }
}

/// Builds the default models for `data` and trains them.
pub fn train_toy_default(
    data: &SyntheticSplit,
    k: usize,
    objective: &DebiasObjective,
    hyper: &TrainHyper,
) -> Result<TrainedToy, LabError> {
    let (main, bias) = init_models(data.x.ncols(), data.bias_columns(), k, objective, hyper)?;
    train_toy(main, bias, objective, data, hyper)
}
