//! One toy run end to end: generate data, train under an objective, export
//! the representation of a balanced bias-probing set, and measure its
//! online-code compression.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{gen_split, gen_synthetic, SyntheticBiasConfig, SyntheticData, SyntheticSplit};
use super::train::{train_toy_default, DebiasObjective, TrainHyper, TrainedToy};
use super::{extract_reprs, LabError};
use crate::analysis::ModelRecord;
use crate::mdl::{online_code, OnlineCodeConfig, ProbeReport};
use crate::probing::{balanced_subsample, ProbingExample};
use crate::repr::{join, ReprMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyRunConfig {
    pub synthetic: SyntheticBiasConfig,
    pub hyper: TrainHyper,
    pub probe: OnlineCodeConfig,
    /// Rows generated for the bias-probing set before balancing.
    pub n_probe: usize,
    /// Class whose presence in the bias feature is the probed property.
    pub probe_class: usize,
    /// Fractions of the balanced probing set used for validation and test.
    pub probe_valid_fraction: f64,
    pub probe_test_fraction: f64,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticBiasConfig::default(),
            hyper: TrainHyper::default(),
            probe: OnlineCodeConfig::default(),
            n_probe: 3000,
            probe_class: 0,
            probe_valid_fraction: 0.1,
            probe_test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub iid_test: f64,
    pub anti_test: f64,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub objective: DebiasObjective,
    pub seed: u64,
    pub accuracies: Accuracies,
    pub probe: ProbeReport,
    pub reprs: ReprMatrix,
    pub models: TrainedToy,
}

/// Probe examples split into train/valid/test.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSplits {
    pub rows: SyntheticSplit,
    pub prop_labels: Vec<u32>,
    pub train: Vec<ProbingExample>,
    pub valid: Vec<ProbingExample>,
    pub test: Vec<ProbingExample>,
}

const PROBE_STREAM: u64 = 4;

/// A balanced probing set for "the bias feature names `probe_class`", drawn
/// from the training distribution.
pub fn bias_probe_splits(cfg: &ToyRunConfig) -> Result<ProbeSplits, LabError> {
    let rows = gen_split(&cfg.synthetic, cfg.n_probe, PROBE_STREAM, false)?;
    let labels: Vec<u8> = rows
        .bias_class
        .iter()
        .map(|&c| (c == cfg.probe_class) as u8)
        .collect();
    let keep = balanced_subsample(&labels, cfg.synthetic.seed)
        .ok_or_else(|| LabError::Config("bias probing property is degenerate".into()))?;
    let rows = rows.select(&keep);
    let prop_labels: Vec<u32> = keep.iter().map(|&i| labels[i] as u32).collect();

    let mut order: Vec<usize> = (0..keep.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.synthetic.seed);
    rng.set_stream(PROBE_STREAM);
    order.shuffle(&mut rng);
    let n = order.len();
    let n_test = (n as f64 * cfg.probe_test_fraction).round() as usize;
    let n_valid = (n as f64 * cfg.probe_valid_fraction).round() as usize;
    let example = |&i: &usize| ProbingExample {
        source_id: i as u64,
        prop_label: prop_labels[i] as u8,
    };
    let test = order[..n_test].iter().map(example).collect();
    let valid = order[n_test..n_test + n_valid]
        .iter()
        .map(example)
        .collect();
    let train = order[n_test + n_valid..].iter().map(example).collect();
    Ok(ProbeSplits {
        rows,
        prop_labels,
        train,
        valid,
        test,
    })
}

pub fn run_toy(
    objective: &DebiasObjective,
    seed: u64,
    cfg: &ToyRunConfig,
) -> Result<ToyRun, LabError> {
    let data: SyntheticData = gen_synthetic(&cfg.synthetic)?;
    let hyper = TrainHyper {
        seed,
        ..cfg.hyper.clone()
    };
    let models = train_toy_default(&data.train, cfg.synthetic.k, objective, &hyper)?;
    let accuracies = Accuracies {
        train: models.main.accuracy(data.train.x.view(), &data.train.y)?,
        iid_test: models
            .main
            .accuracy(data.iid_test.x.view(), &data.iid_test.y)?,
        anti_test: models
            .main
            .accuracy(data.anti_test.x.view(), &data.anti_test.y)?,
    };
    let splits = bias_probe_splits(cfg)?;
    let ids: Vec<u64> = (0..splits.rows.len() as u64).collect();
    let reprs = extract_reprs(
        &models.main,
        splits.rows.x.view(),
        &ids,
        &splits.prop_labels,
        2,
    )?;
    let input = join(&splits.train, &splits.valid, &splits.test, &reprs)?;
    let probe_cfg = OnlineCodeConfig {
        seed,
        ..cfg.probe.clone()
    };
    let probe = online_code(&input, &probe_cfg)?;
    Ok(ToyRun {
        objective: *objective,
        seed,
        accuracies,
        probe,
        reprs,
        models,
    })
}

/// Runs every objective under every seed in parallel. Results are ordered
/// objective-major, seeds in the given order.
pub fn run_grid(
    objectives: &[DebiasObjective],
    seeds: &[u64],
    cfg: &ToyRunConfig,
) -> Result<Vec<ToyRun>, LabError> {
    let jobs: Vec<(&DebiasObjective, u64)> = objectives
        .iter()
        .flat_map(|o| seeds.iter().map(move |&s| (o, s)))
        .collect();
    jobs.par_iter().map(|&(o, s)| run_toy(o, s, cfg)).collect()
}

/// Short stable name for an objective, e.g. `dfl-g2`.
pub fn model_name(objective: &DebiasObjective) -> String {
    match objective.gamma() {
        Some(g) => format!("{}-g{g}", objective.name()),
        None => objective.name().to_string(),
    }
}

/// One record per run. Anti-test accuracy is the o.o.d accuracy and the
/// baseline is the CE run trained with the same seed.
pub fn toy_records(runs: &[ToyRun], baselines: &[ToyRun]) -> Result<Vec<ModelRecord>, LabError> {
    runs.iter()
        .map(|run| {
            let base = baselines
                .iter()
                .find(|b| b.seed == run.seed && b.objective == DebiasObjective::Ce)
                .ok_or_else(|| {
                    LabError::Config(format!("no CE baseline run for seed {}", run.seed))
                })?;
            Ok(ModelRecord {
                model_name: model_name(&run.objective),
                bias: "synthetic".into(),
                dataset: "toy".into(),
                objective: run.objective.name().into(),
                gamma: run.objective.gamma(),
                seed: Some(run.seed),
                ood_accuracy: run.accuracies.anti_test,
                baseline_ood_accuracy: base.accuracies.anti_test,
                compression: run.probe.compression,
                probe_accuracy: run.probe.test_accuracy,
            })
        })
        .collect()
}
