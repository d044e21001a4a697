use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{Binomial, Discrete, DiscreteCDF};

use spitzkit::metrics::{
    auroc_binary, binomial_test, bootstrap_metric, mcnemar_exact, BootstrapConfig, EvalSet, Metric,
};
use spitzkit::rng::stream;

/// Fraction of (positive, negative) pairs ranked correctly, ties counted half.
fn auroc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

/// Distinct scores with at least one case of each class.
fn scored_cases() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::btree_set(-1_000_000i64..1_000_000, n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| {
                l.iter().any(|b| *b) && l.iter().any(|b| !*b)
            })
            .prop_map(|(s, l)| (s.into_iter().map(|v| v as f64 / 1000.0).collect(), l))
    })
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting(scores in prop::collection::vec(0u8..6, 2..40), labels in prop::collection::vec(any::<bool>(), 40)) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.iter().any(|b| *b) && labels.iter().any(|b| !*b));
        let s: Vec<f64> = scores.iter().map(|v| *v as f64).collect();
        let got = auroc_binary(&s, labels).unwrap();
        prop_assert!((got - auroc_pairs(&s, labels)).abs() < 1e-12);
    }

    #[test]
    fn negated_scores_complement_auroc((s, l) in scored_cases()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let sum = auroc_binary(&s, &l).unwrap() + auroc_binary(&neg, &l).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_transforms_keep_auroc((s, l) in scored_cases()) {
        let base = auroc_binary(&s, &l).unwrap();
        let t: Vec<f64> = s.iter().map(|v| (v / 100.0).atan() * 3.0 + 7.0).collect();
        prop_assert_eq!(auroc_binary(&t, &l).unwrap(), base);
    }

    #[test]
    fn mcnemar_is_symmetric(b in 0u64..300, c in 0u64..300) {
        prop_assert_eq!(mcnemar_exact(b, c), mcnemar_exact(c, b));
        let p = mcnemar_exact(b, c);
        prop_assert!(p > 0.0 && p <= 1.0);
    }
}

#[test]
fn mcnemar_matches_binomial_tail() {
    for b in 0..40u64 {
        for c in 0..40u64 {
            let n = b + c;
            let want = if n == 0 {
                1.0
            } else {
                let d = Binomial::new(0.5, n).unwrap();
                (2.0 * d.cdf(b.min(c))).min(1.0)
            };
            let got = mcnemar_exact(b, c);
            assert!((got - want).abs() < 1e-10, "b={b} c={c}: {got} vs {want}");
        }
    }
}

#[test]
fn binomial_matches_likelihood_ordering_oracle() {
    for &(n, p0) in &[(20u64, 0.25), (37, 0.5), (100, 0.1), (60, 0.7)] {
        let d = Binomial::new(p0, n).unwrap();
        for k in 0..=n {
            let pk = d.pmf(k);
            let want: f64 = (0..=n)
                .map(|i| d.pmf(i))
                .filter(|q| *q <= pk * (1.0 + 1e-7))
                .sum::<f64>()
                .min(1.0);
            let got = binomial_test(k, n, p0).unwrap();
            assert!(
                (got - want).abs() < 1e-8,
                "n={n} p0={p0} k={k}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn binomial_test_is_conservative_under_the_null() {
    let mut rng = stream(99);
    for &(n, p0) in &[(50u64, 0.25), (120, 0.5), (200, 0.33)] {
        let rejections = (0..2_000)
            .filter(|_| {
                let k = (0..n).filter(|_| rng.random::<f64>() < p0).count() as u64;
                binomial_test(k, n, p0).unwrap() <= 0.05
            })
            .count();
        let rate = rejections as f64 / 2_000.0;
        assert!(rate <= 0.07, "n={n} p0={p0}: rejection rate {rate}");
    }
}

fn noisy_set(n: usize, seed: u64) -> EvalSet {
    let mut rng = stream(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let probs: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let p1 = (0.5f64 + if l == 1 { 0.2 } else { -0.2 } + rng.random_range(-0.45f64..0.45))
                .clamp(0.0, 1.0);
            vec![1.0 - p1, p1]
        })
        .collect();
    EvalSet::from_probs((0..n).map(|i| format!("C{i}")).collect(), labels, probs).unwrap()
}

#[test]
fn bootstrap_is_deterministic_and_centered_on_the_point_estimate() {
    let set = noisy_set(80, 4);
    let cfg = BootstrapConfig {
        resamples: 500,
        seed: 21,
        ..BootstrapConfig::default()
    };
    for metric in [Metric::Accuracy, Metric::Auroc(1)] {
        let a = bootstrap_metric(&set, metric, &cfg).unwrap();
        let b = bootstrap_metric(&set, metric, &cfg).unwrap();
        assert_eq!(a, b);
        let all: Vec<usize> = (0..set.len()).collect();
        assert_eq!(a.point, metric.evaluate(&set, &all).unwrap());
        assert!(
            a.lower <= a.point && a.point <= a.upper,
            "{metric:?}: {a:?}"
        );
    }
}
