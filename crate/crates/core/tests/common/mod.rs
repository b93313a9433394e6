#![allow(dead_code)]

use ndarray::{Array1, Array2};
use probekit::lab::loss::{ce_grad, confreg_scale, dfl_grad, distill_grad, poe_grad};
use probekit::lab::model::{flatten, Gradients};
use probekit::lab::ToyModel;
use probekit::mdl::{online_code_traced, probe_loss_and_grad, OnlineCodeConfig};
use probekit::{LinearProbe, ProbeInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_MIN_INSTANCES: usize = 20;
/// Denominator floor for relative error, so entries that are zero up to
/// round-off compare absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub instances: usize,
    pub max_rel: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.instances >= FD_MIN_INSTANCES && self.max_rel <= FD_REL_TOL
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

const SHAPES: [&[usize]; 4] = [&[5, 3], &[4, 6, 3], &[6, 5, 4, 2], &[3, 7, 4]];

pub struct Instance {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub main: ToyModel,
    pub other: ToyModel,
    pub rng: ChaCha8Rng,
}

/// A random batch with a main model and a second model of matching `k`.
pub fn instance(i: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
    let dims = SHAPES[i % SHAPES.len()];
    let k = *dims.last().unwrap();
    let rows = rng.random_range(1..=6);
    let x = Array2::from_shape_simple_fn((rows, dims[0]), || rng.sample(StandardNormal));
    let y = (0..rows).map(|_| rng.random_range(0..k)).collect();
    let mut main = ToyModel::new(dims, rng.random()).unwrap();
    main.params_mut()
        .for_each(|p| *p += 0.3 * rng.sample::<f64, _>(StandardNormal));
    let mut other = ToyModel::new(&[dims[0], 3, k], rng.random()).unwrap();
    other
        .params_mut()
        .for_each(|p| *p += 0.3 * rng.sample::<f64, _>(StandardNormal));
    Instance {
        x,
        y,
        main,
        other,
        rng,
    }
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter of `model`.
pub fn fd_max_rel(model: &ToyModel, analytic: &Gradients, loss: impl Fn(&ToyModel) -> f64) -> f64 {
    let analytic = flatten(analytic);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = original + FD_STEP;
        let up = loss(&probe);
        *probe.params_mut().nth(i).unwrap() = original - FD_STEP;
        let down = loss(&probe);
        *probe.params_mut().nth(i).unwrap() = original;
        worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn logits(m: &ToyModel, x: &Array2<f64>) -> Array2<f64> {
    m.forward_batch(x.view()).unwrap().logits
}

fn run(name: &str, instances: usize, mut one: impl FnMut(usize) -> f64) -> GradCheck {
    let max_rel = (0..instances).map(&mut one).fold(0.0, f64::max);
    GradCheck {
        name: name.to_string(),
        instances,
        max_rel,
    }
}

pub fn check_ce(instances: usize) -> GradCheck {
    run("ce", instances, |i| {
        let inst = instance(i);
        let cache = inst.main.forward_batch(inst.x.view()).unwrap();
        let (_, d) = ce_grad(cache.logits.view(), &inst.y);
        let grads = inst.main.backward(&cache, d.view());
        fd_max_rel(&inst.main, &grads, |m| {
            ce_grad(logits(m, &inst.x).view(), &inst.y).0
        })
    })
}

/// DFL with the bias model's probabilities as fixed coefficients (main
/// model gradients), and with gradients through the weight (bias model).
pub fn check_dfl(gamma: f64, instances: usize) -> GradCheck {
    run(&format!("dfl(gamma={gamma})"), instances, |i| {
        let inst = instance(i);
        let lb = logits(&inst.other, &inst.x);
        let cache = inst.main.forward_batch(inst.x.view()).unwrap();
        let (_, dm, _) = dfl_grad(cache.logits.view(), lb.view(), &inst.y, gamma, false);
        let grads = inst.main.backward(&cache, dm.view());
        let main_err = fd_max_rel(&inst.main, &grads, |m| {
            dfl_grad(logits(m, &inst.x).view(), lb.view(), &inst.y, gamma, false).0
        });

        let lm = cache.logits;
        let bias_cache = inst.other.forward_batch(inst.x.view()).unwrap();
        let (_, _, db) = dfl_grad(lm.view(), bias_cache.logits.view(), &inst.y, gamma, true);
        let bias_grads = inst.other.backward(&bias_cache, db.unwrap().view());
        let bias_err = fd_max_rel(&inst.other, &bias_grads, |b| {
            dfl_grad(lm.view(), logits(b, &inst.x).view(), &inst.y, gamma, true).0
        });
        main_err.max(bias_err)
    })
}

/// End-to-end PoE: the combined loss plus the bias model's own
/// cross-entropy, differentiated with respect to both models.
pub fn check_poe_end_to_end(instances: usize) -> GradCheck {
    const BIAS_WEIGHT: f64 = 1.0;
    run("poe end-to-end", instances, |i| {
        let inst = instance(i);
        let total = |m: &ToyModel, b: &ToyModel| {
            let (lm, lb) = (logits(m, &inst.x), logits(b, &inst.x));
            poe_grad(lm.view(), lb.view(), &inst.y).0 + BIAS_WEIGHT * ce_grad(lb.view(), &inst.y).0
        };
        let mc = inst.main.forward_batch(inst.x.view()).unwrap();
        let bc = inst.other.forward_batch(inst.x.view()).unwrap();
        let (_, dm, db) = poe_grad(mc.logits.view(), bc.logits.view(), &inst.y);
        let (_, own) = ce_grad(bc.logits.view(), &inst.y);
        let db = db + own * BIAS_WEIGHT;
        let main_grads = inst.main.backward(&mc, dm.view());
        let bias_grads = inst.other.backward(&bc, db.view());
        let main_err = fd_max_rel(&inst.main, &main_grads, |m| total(m, &inst.other));
        let bias_err = fd_max_rel(&inst.other, &bias_grads, |b| total(&inst.main, b));
        main_err.max(bias_err)
    })
}

/// Distillation towards teacher distributions smoothed by random weak-model
/// confidences.
pub fn check_confreg(instances: usize) -> GradCheck {
    run("confreg distillation", instances, |i| {
        let mut inst = instance(i);
        let k = inst.main.k();
        let mut targets = Array2::zeros((inst.y.len(), k));
        for mut row in targets.outer_iter_mut() {
            let raw = Array1::from_shape_simple_fn(k, || inst.rng.random::<f64>() + 0.01);
            let teacher = &raw / raw.sum();
            let weak: f64 = inst.rng.random();
            row.assign(&confreg_scale(teacher.view(), weak));
        }
        let cache = inst.main.forward_batch(inst.x.view()).unwrap();
        let (_, d) = distill_grad(cache.logits.view(), targets.view());
        let grads = inst.main.backward(&cache, d.view());
        fd_max_rel(&inst.main, &grads, |m| {
            distill_grad(logits(m, &inst.x).view(), targets.view()).0
        })
    })
}

/// Linear probe cross-entropy, with and without weight decay.
pub fn check_probe(instances: usize) -> GradCheck {
    run("probe ce", instances, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
        let (k, d, n) = (
            rng.random_range(2..5),
            rng.random_range(1..8),
            rng.random_range(1..10),
        );
        let x = Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut probe = LinearProbe::zeros(k, d);
        probe.weights.mapv_inplace(|_| rng.sample(StandardNormal));
        probe.bias.mapv_inplace(|_| rng.sample(StandardNormal));
        let decay = if i % 2 == 0 { 0.0 } else { 0.01 };
        let (_, gw, gb) = probe_loss_and_grad(&probe, x.view(), &y, decay);
        let loss = |p: &LinearProbe| probe_loss_and_grad(p, x.view(), &y, decay).0;
        let mut worst: f64 = 0.0;
        let mut p = probe.clone();
        for idx in 0..k * d {
            let (r, c) = (idx / d, idx % d);
            let orig = p.weights[[r, c]];
            p.weights[[r, c]] = orig + FD_STEP;
            let up = loss(&p);
            p.weights[[r, c]] = orig - FD_STEP;
            let down = loss(&p);
            p.weights[[r, c]] = orig;
            worst = worst.max(rel_err(gw[[r, c]], (up - down) / (2.0 * FD_STEP)));
        }
        for r in 0..k {
            let orig = p.bias[r];
            p.bias[r] = orig + FD_STEP;
            let up = loss(&p);
            p.bias[r] = orig - FD_STEP;
            let down = loss(&p);
            p.bias[r] = orig;
            worst = worst.max(rel_err(gb[r], (up - down) / (2.0 * FD_STEP)));
        }
        worst
    })
}

/// Two overlapping Gaussian blobs with `k = 2`; rows are split
/// train/valid/test in the given sizes.
pub fn blob_input(sizes: [usize; 3], d: usize, separation: f64, seed: u64) -> ProbeInput {
    let n: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let mut features = Array2::<f64>::zeros((n, d));
    for (mut row, &label) in features.outer_iter_mut().zip(&labels) {
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        row[0] += if label == 1 { separation } else { -separation };
    }
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    ProbeInput::new(features, labels, 2, 0..a, a..b, b..n).unwrap()
}

/// `−log2 p(y | x)` written out directly from the probe's parameters.
fn naive_bits(probe: &LinearProbe, x: &[f64], y: usize) -> f64 {
    let k = probe.weights.nrows();
    let scores: Vec<f64> = (0..k)
        .map(|c| {
            probe.bias[c]
                + (0..x.len())
                    .map(|j| probe.weights[[c, j]] * x[j])
                    .sum::<f64>()
        })
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = scores.iter().map(|s| (s - top).exp()).sum();
    let p = (scores[y] - top).exp() / norm;
    -p.log2()
}

pub struct OracleComparison {
    pub l_online: f64,
    pub brute_force: f64,
    pub rel: f64,
}

/// Re-derives the online codelength from the frozen per-block probes by
/// enumerating every transmitted example.
pub fn online_code_oracle(input: &ProbeInput, cfg: &OnlineCodeConfig) -> OracleComparison {
    let trace = online_code_traced(input, cfg).unwrap();
    let k = input.k as f64;
    let mut total = trace.block_ends[0] as f64 * k.log2();
    for (i, probe) in trace.block_probes.iter().enumerate() {
        for pos in trace.block_ends[i]..trace.block_ends[i + 1] {
            let row = trace.order[pos];
            let x: Vec<f64> = input.features.row(row).to_vec();
            total += naive_bits(probe, &x, input.labels[row]);
        }
    }
    let l_online = trace.report.l_online;
    OracleComparison {
        l_online,
        brute_force: total,
        rel: (l_online - total).abs() / total.abs(),
    }
}
