use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segkit::metrics::{confusion, evaluate_pairs, f1, jaccard, kappa, ConfusionMatrix, MetricsReport};
use segkit::BinaryMap;

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMap {
    BinaryMap::from_fn(h, w, |_, _| rng.gen_bool(p))
}

/// Per-pixel tally, then the textbook formulas in f64.
fn oracle(pairs: &[(BinaryMap, BinaryMap)]) -> ([u64; 4], [f64; 6]) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (p, g) in pairs {
        for r in 0..p.height() {
            for c in 0..p.width() {
                match (p.get(r, c), g.get(r, c)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    let (a, b, c, d) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    let n = a + b + c + d;
    let div = |x: f64, y: f64| if y == 0.0 { 0.0 } else { x / y };
    let precision = div(a, a + b);
    let recall = div(a, a + c);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let po = (a + d) / n;
    let pe = ((a + b) * (a + c) + (c + d) * (b + d)) / (n * n);
    let kappa = if pe == 1.0 { 0.0 } else { (po - pe) / (1.0 - pe) };
    ([tp, fp, fn_, tn], [precision, recall, po, f1, div(a, a + b + c), kappa])
}

fn assert_matches(report: &MetricsReport<f64>, pairs: &[(BinaryMap, BinaryMap)]) {
    let (counts, values) = oracle(pairs);
    let cm = report.confusion;
    assert_eq!([cm.tp, cm.fp, cm.fn_, cm.tn], counts);
    for (got, want) in report.values().iter().zip(values) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn random_pairs_match_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let density = rng.gen_range(0.0..1.0);
        let pair = (random_map(&mut rng, 32, 32, density), random_map(&mut rng, 32, 32, 0.3));
        let report = evaluate_pairs::<f64, _>([(&pair.0, &pair.1)]).unwrap();
        assert_matches(&report, std::slice::from_ref(&pair));
    }
}

#[test]
fn micro_average_over_many_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<_> = (0..100)
        .map(|_| (random_map(&mut rng, 16, 16, 0.4), random_map(&mut rng, 16, 16, 0.2)))
        .collect();
    let report = evaluate_pairs::<f64, _>(pairs.iter().map(|(p, g)| (p, g))).unwrap();
    assert_matches(&report, &pairs);

    let (left, right) = pairs.split_at(37);
    let sum: ConfusionMatrix = [left, right]
        .iter()
        .map(|half| {
            evaluate_pairs::<f64, _>(half.iter().map(|(p, g)| (p, g)))
                .unwrap()
                .confusion
        })
        .sum();
    assert_eq!(MetricsReport::<f64>::from_confusion(&sum).unwrap(), report);

    let mut shuffled = pairs.clone();
    shuffled.reverse();
    shuffled.swap(3, 50);
    let again = evaluate_pairs::<f64, _>(shuffled.iter().map(|(p, g)| (p, g))).unwrap();
    assert_eq!(again, report);
}

#[test]
fn hand_case_kappa() {
    let r = MetricsReport::<f64>::from_confusion(&ConfusionMatrix::new(6, 2, 3, 5)).unwrap();
    assert!((r.kappa - 0.375).abs() < 1e-9);
    assert!((r.precision - 0.75).abs() < 1e-12);
    assert!((r.overall_accuracy - 0.6875).abs() < 1e-12);
    assert!((r.f1 - 12.0 / 17.0).abs() < 1e-12);
    assert!((r.jaccard - 6.0 / 11.0).abs() < 1e-12);
}

#[test]
fn confusion_of_single_pair() {
    let ones = BinaryMap::ones(4, 4);
    assert_eq!(confusion(&ones, &ones).unwrap(), ConfusionMatrix::new(16, 0, 0, 0));
}

fn any_cm() -> impl Strategy<Value = ConfusionMatrix> {
    (0u64..5000, 0u64..5000, 0u64..5000, 0u64..5000)
        .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
        .prop_map(|(a, b, c, d)| ConfusionMatrix::new(a, b, c, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn metric_ranges(cm in any_cm()) {
        let r = MetricsReport::<f64>::from_confusion(&cm).unwrap();
        for v in &r.values()[..5] {
            prop_assert!((0.0..=1.0).contains(v));
        }
        prop_assert!((-1.0..=1.0).contains(&r.kappa));
        prop_assert!(r.values().iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #[test]
    fn f1_and_jaccard_agree(cm in any_cm()) {
        let f = f1::<f64>(&cm).unwrap().value;
        let j = jaccard::<f64>(&cm).unwrap().value;
        prop_assert!(j <= f && f <= 1.0);
        prop_assert!((f - 2.0 * j / (1.0 + j)).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn independent_marginals_give_zero_kappa(a in 1u64..200, b in 1u64..200, k in 1u64..20, m in 1u64..20) {
        // tp * tn = fp * fn by construction.
        let cm = ConfusionMatrix::new(a * k, a * m, b * k, b * m);
        prop_assert!(kappa::<f64>(&cm).unwrap().value.abs() <= 1e-12);
    }

    #[test]
    fn counts_sum_to_pixels(h in 1usize..20, w in 1usize..20, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_map(&mut rng, h, w, 0.5);
        let g = random_map(&mut rng, h, w, 0.5);
        prop_assert_eq!(confusion(&p, &g).unwrap().total(), (h * w) as u64);
    }
}
