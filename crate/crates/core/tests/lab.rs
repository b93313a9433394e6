use probekit::analysis::median;
use probekit::lab::experiment::{run_grid, run_toy, toy_records, ToyRunConfig};
use probekit::lab::train::train_toy_default;
use probekit::lab::{gen_synthetic, DebiasObjective, LabError, SyntheticBiasConfig, TrainHyper};
use probekit::mdl::{train_probe, ProbeTrainConfig, Validation};

#[test]
fn agreement_rate_tracks_bias_strength() {
    for (seed, strength) in [(0, 0.9), (1, 0.5), (2, 0.75), (3, 0.2)] {
        let cfg = SyntheticBiasConfig {
            n_train: 20_000,
            seed,
            bias_strength: strength,
            ..Default::default()
        };
        let train = gen_synthetic(&cfg).unwrap().train;
        let sigma = (strength * (1.0 - strength) / train.len() as f64).sqrt();
        assert!(
            (train.agreement_rate() - strength).abs() <= 3.0 * sigma,
            "seed {seed}"
        );
    }
}

/// Plug-in mutual information in bits between two discrete variables.
fn mutual_information(a: &[usize], b: &[usize], k: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![vec![0.0; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1.0 / n;
    }
    let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let pb: Vec<f64> = (0..k).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for i in 0..k {
        for j in 0..k {
            if joint[i][j] > 0.0 {
                mi += joint[i][j] * (joint[i][j] / (pa[i] * pb[j])).log2();
            }
        }
    }
    mi
}

#[test]
fn chance_level_bias_carries_no_information() {
    let cfg = SyntheticBiasConfig {
        n_train: 30_000,
        bias_strength: 1.0 / 3.0,
        ..Default::default()
    };
    let train = gen_synthetic(&cfg).unwrap().train;
    assert!(mutual_information(&train.y, &train.bias_class, 3) < 5e-3);
    let informative = gen_synthetic(&SyntheticBiasConfig {
        n_train: 30_000,
        ..Default::default()
    })
    .unwrap()
    .train;
    assert!(mutual_information(&informative.y, &informative.bias_class, 3) > 0.5);
}

#[test]
fn full_strength_bias_alone_separates_train_and_fails_anti_test() {
    let data = gen_synthetic(&SyntheticBiasConfig {
        bias_strength: 1.0,
        ..Default::default()
    })
    .unwrap();
    let x = data.train.bias_features().to_owned();
    let fit = train_probe(
        x.view(),
        &data.train.y,
        3,
        Validation::Holdout,
        &ProbeTrainConfig::default(),
    )
    .unwrap();
    assert_eq!(fit.probe.accuracy(x.view(), &data.train.y), 1.0);
    let anti = data.anti_test.bias_features().to_owned();
    assert_eq!(fit.probe.accuracy(anti.view(), &data.anti_test.y), 0.0);
}

#[test]
fn ce_exploits_a_perfect_bias() {
    let cfg = SyntheticBiasConfig {
        bias_strength: 1.0,
        ..Default::default()
    };
    let data = gen_synthetic(&cfg).unwrap();
    let trained =
        train_toy_default(&data.train, 3, &DebiasObjective::Ce, &TrainHyper::default()).unwrap();
    let anti = trained
        .main
        .accuracy(data.anti_test.x.view(), &data.anti_test.y)
        .unwrap();
    assert!(anti < 1.0 / 3.0 + 0.05, "{anti}");
}

#[test]
fn dfl_improves_anti_test_accuracy_over_ce() {
    let cfg = ToyRunConfig::default();
    let seeds = [0, 1, 2, 3, 4];
    let runs = run_grid(
        &[DebiasObjective::Ce, DebiasObjective::Dfl { gamma: 2.0 }],
        &seeds,
        &cfg,
    )
    .unwrap();
    let anti = |name: &str| {
        median(
            &runs
                .iter()
                .filter(|r| r.objective.name() == name)
                .map(|r| r.accuracies.anti_test)
                .collect::<Vec<_>>(),
        )
    };
    assert!(
        anti("dfl") > anti("ce"),
        "dfl {} vs ce {}",
        anti("dfl"),
        anti("ce")
    );
}

#[test]
fn runs_are_deterministic() {
    let cfg = ToyRunConfig {
        synthetic: SyntheticBiasConfig {
            n_train: 300,
            n_test: 100,
            ..Default::default()
        },
        hyper: TrainHyper {
            epochs: 3,
            ..Default::default()
        },
        n_probe: 600,
        ..Default::default()
    };
    for objective in [DebiasObjective::Poe, DebiasObjective::ConfReg] {
        let a = run_toy(&objective, 5, &cfg).unwrap();
        let b = run_toy(&objective, 5, &cfg).unwrap();
        assert_eq!(a.models, b.models);
        assert_eq!(a.reprs, b.reprs);
        assert_eq!(a.probe, b.probe);
    }
}

#[test]
fn end_to_end_confreg_is_rejected() {
    let data = gen_synthetic(&SyntheticBiasConfig {
        n_train: 50,
        ..Default::default()
    })
    .unwrap();
    let hyper = TrainHyper {
        pipeline: false,
        ..Default::default()
    };
    let err = train_toy_default(&data.train, 3, &DebiasObjective::ConfReg, &hyper).unwrap_err();
    assert!(matches!(err, LabError::Config(_)));
}

#[test]
fn records_use_the_same_seed_ce_run_as_baseline() {
    let cfg = ToyRunConfig {
        synthetic: SyntheticBiasConfig {
            n_train: 300,
            n_test: 200,
            ..Default::default()
        },
        hyper: TrainHyper {
            epochs: 2,
            ..Default::default()
        },
        n_probe: 600,
        ..Default::default()
    };
    let base = run_grid(&[DebiasObjective::Ce], &[0, 1], &cfg).unwrap();
    let runs = run_grid(&[DebiasObjective::Dfl { gamma: 1.0 }], &[0, 1], &cfg).unwrap();
    let recs = toy_records(&runs, &base).unwrap();
    assert_eq!(recs.len(), 2);
    for (rec, (run, b)) in recs.iter().zip(runs.iter().zip(&base)) {
        assert_eq!(rec.model_name, "dfl-g1");
        assert_eq!(rec.gamma, Some(1.0));
        assert_eq!(rec.ood_accuracy, run.accuracies.anti_test);
        assert_eq!(rec.baseline_ood_accuracy, b.accuracies.anti_test);
        assert_eq!(rec.compression, run.probe.compression);
    }
    assert!(toy_records(&runs, &base[..1]).is_err());
}
