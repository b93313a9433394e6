use ndarray::Array1;
use probekit::analysis::{
    correlation_report, pearson, robustness_delta, Aggregation, GroupKey, ModelRecord,
};
use probekit::lab::loss::{loss_dfl, loss_poe};
use probekit::probing::{
    balanced_subsample, eval_negwords, eval_overlap, eval_subsequence, NegWordList,
};
use probekit::repr::ReprMatrix;
use probekit::SentencePair;
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec![
            "a", "dog", "The", "runs", "not", "isn't", "park,", "no", "cat.",
        ]),
        0..8,
    )
    .prop_map(|w| w.join(" "))
}

fn pair(premise: String, hypothesis: String) -> SentencePair {
    SentencePair {
        id: 0,
        premise,
        hypothesis,
        label: 0,
        pair_id: None,
    }
}

fn record(name: String, seed: u64, ood: f64, base: f64, compression: f64) -> ModelRecord {
    ModelRecord {
        model_name: name,
        bias: "b".into(),
        dataset: "d".into(),
        objective: "ce".into(),
        gamma: None,
        seed: Some(seed),
        ood_accuracy: ood,
        baseline_ood_accuracy: base,
        compression,
        probe_accuracy: 0.5,
    }
}

proptest! {
    #[test]
    fn subsequence_implies_overlap(p in sentence(), h in sentence()) {
        let pr = pair(p, h);
        prop_assert!(eval_subsequence(&pr) <= eval_overlap(&pr));
    }

    #[test]
    fn negwords_ignores_the_premise(p1 in sentence(), p2 in sentence(), h in sentence()) {
        let list = NegWordList::default();
        prop_assert_eq!(eval_negwords(&pair(p1, h.clone()), &list), eval_negwords(&pair(p2, h), &list));
    }

    #[test]
    fn balanced_subsample_is_balanced(labels in prop::collection::vec(0u8..2, 0..200), seed: u64) {
        let pos = labels.iter().filter(|&&l| l == 1).count();
        let neg = labels.len() - pos;
        match balanced_subsample(&labels, seed) {
            None => prop_assert!(pos == 0 || neg == 0),
            Some(keep) => {
                prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
                let kept_pos = keep.iter().filter(|&&i| labels[i] == 1).count();
                prop_assert_eq!(kept_pos, pos.min(neg));
                prop_assert_eq!(keep.len() - kept_pos, pos.min(neg));
                prop_assert_eq!(balanced_subsample(&labels, seed), Some(keep));
            }
        }
    }

    #[test]
    fn rprb_round_trips(n in 0usize..20, d in 1usize..12, k in 2u32..5, seed: u64) {
        let ids: Vec<u64> = (0..n as u64).map(|i| i.wrapping_mul(seed | 1)).collect();
        let labels = (0..n as u32).map(|i| i % k).collect();
        let data = (0..n * d).map(|i| (i as f32).sin() * 1e3).collect();
        let m = ReprMatrix::new(ids, labels, k, d, data).unwrap();
        let bytes = m.to_bytes();
        prop_assert_eq!(bytes.len(), m.byte_len());
        let back = ReprMatrix::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn rprb_decoding_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = ReprMatrix::from_bytes(&bytes);
        let mut framed = b"RPRB\x01\0\0\0".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = ReprMatrix::from_bytes(&framed);
    }

    #[test]
    fn pearson_is_symmetric(xs in prop::collection::vec(-1e3f64..1e3, 3..40), shift in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + shift * i as f64).collect();
        if let (Ok(a), Ok(b)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn pearson_of_affine_maps_is_unit(xs in prop::collection::vec(-100.0f64..100.0, 3..40), a in 0.01f64..50.0, b in -100.0f64..100.0) {
        prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
        let up: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let down: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
        prop_assert!((pearson(&xs, &up).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((pearson(&xs, &down).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn robustness_delta_is_antisymmetric(ood in 0.0f64..=1.0, base in 0.0f64..=1.0) {
        let r = record("m".into(), 0, ood, base, 1.0);
        let swapped = record("m".into(), 0, base, ood, 1.0);
        prop_assert_eq!(robustness_delta(&r), -robustness_delta(&swapped));
    }

    #[test]
    fn correlation_report_ignores_record_order(
        rows in prop::collection::vec((0usize..5, 0u64..4, 0.0f64..1.0, 0.1f64..10.0), 1..30),
        rotate in 0usize..30,
    ) {
        let recs: Vec<ModelRecord> = rows
            .iter()
            .map(|&(m, s, ood, c)| record(format!("m{m}"), s, ood, 0.5, c))
            .collect();
        let mut shuffled = recs.clone();
        shuffled.reverse();
        let len = shuffled.len();
        shuffled.rotate_left(rotate % len);
        for agg in [Aggregation::Median, Aggregation::Mean, Aggregation::PerSeed] {
            let a = correlation_report(&recs, &[GroupKey::Bias, GroupKey::Dataset], agg);
            let b = correlation_report(&shuffled, &[GroupKey::Bias, GroupKey::Dataset], agg);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn dfl_is_non_increasing_in_bias_probability(pm in 0.01f64..1.0, p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, gamma in 0.01f64..5.0) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let probs_m = Array1::from(vec![pm, 1.0 - pm]);
        let at = |pb: f64| loss_dfl(probs_m.view(), Array1::from(vec![pb, 1.0 - pb]).view(), 0, gamma).value;
        prop_assert!(at(hi) <= at(lo));
    }

    #[test]
    fn poe_with_uniform_bias_is_ce(logits in prop::collection::vec(-10.0f64..10.0, 2..6), y in 0usize..6) {
        let k = logits.len();
        let y = y % k;
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        let logprobs = Array1::from_iter(logits.iter().map(|v| v - lse));
        let uniform = Array1::from_elem(k, -(k as f64).ln());
        let poe = loss_poe(logprobs.view(), uniform.view(), y).unwrap();
        prop_assert!((poe + logprobs[y]).abs() <= 1e-9);
    }
}
