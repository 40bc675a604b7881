//! OA, AA and kappa against their direct definitions.

use acss_gcn::metrics::{aa, confusion, kappa, oa, ConfusionMatrix, MetricsReport};
use acss_gcn::ndmath::Rng;
use proptest::prelude::*;

/// Direct recomputation from the counts, without any helper from the crate.
fn direct(counts: &[Vec<u64>]) -> (f64, f64, f64) {
    let c = counts.len();
    let total: f64 = counts.iter().flatten().map(|&v| v as f64).sum();
    let diag: f64 = (0..c).map(|i| counts[i][i] as f64).sum();
    let p_o = diag / total;
    let recall: Vec<f64> = (0..c)
        .map(|i| counts[i][i] as f64 / counts[i].iter().map(|&v| v as f64).sum::<f64>())
        .collect();
    let avg = recall.iter().sum::<f64>() / c as f64;
    let p_e: f64 = (0..c)
        .map(|i| {
            let row: f64 = counts[i].iter().map(|&v| v as f64).sum();
            let col: f64 = counts.iter().map(|r| r[i] as f64).sum();
            row * col
        })
        .sum::<f64>()
        / (total * total);
    let k = if p_e == 1.0 { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };
    (p_o, avg, k)
}

/// Random confusion matrix whose every row has at least one sample.
fn random_counts(rng: &mut Rng) -> Vec<Vec<u64>> {
    let c = 2 + rng.below(9);
    let scale = 1 + rng.below(200);
    (0..c)
        .map(|i| {
            let mut row: Vec<u64> = (0..c).map(|_| rng.below(scale) as u64).collect();
            row[i] += 1 + rng.below(3 * scale) as u64;
            row
        })
        .collect()
}

#[test]
fn thousand_random_matrices_match_the_definitions() {
    let mut rng = Rng::new(42);
    for trial in 0..1000 {
        let counts = random_counts(&mut rng);
        let cm = ConfusionMatrix::from_counts(counts.clone()).unwrap();
        let (e_oa, e_aa, e_k) = direct(&counts);
        assert!((oa(&cm).unwrap() - e_oa).abs() <= 1e-12, "trial {trial}");
        assert!((aa(&cm).unwrap() - e_aa).abs() <= 1e-12, "trial {trial}");
        assert!((kappa(&cm).unwrap() - e_k).abs() <= 1e-12, "trial {trial}");
    }
}

#[test]
fn hand_cases() {
    let cm = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![1, 1]]).unwrap();
    assert_eq!((oa(&cm).unwrap(), aa(&cm).unwrap(), kappa(&cm).unwrap()), (0.5, 0.5, 0.0));
    let perfect = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
    assert_eq!((oa(&perfect).unwrap(), aa(&perfect).unwrap(), kappa(&perfect).unwrap()), (1.0, 1.0, 1.0));
    // Single populated class: chance agreement is 1.
    let single = ConfusionMatrix::from_counts(vec![vec![4, 0], vec![0, 0]]).unwrap();
    assert_eq!(kappa(&single).unwrap(), 1.0);
    assert!(ConfusionMatrix::from_counts(vec![vec![0, 0], vec![0, 0]]).and_then(|cm| oa(&cm)).is_err());
}

#[test]
fn empty_class_row_is_a_metric_error_naming_the_class() {
    let cm = ConfusionMatrix::from_counts(vec![vec![2, 1], vec![0, 0]]).unwrap();
    let err = aa(&cm).unwrap_err();
    assert!(err.to_string().contains("class 2"), "{err}");
}

#[test]
fn confusion_counts_pairs() {
    let cm = confusion(&[1, 2, 2, 3], &[1, 2, 3, 3], 3).unwrap();
    assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1]]);
    assert!(confusion(&[1, 4], &[1, 1], 3).is_err());
    assert!(confusion(&[1], &[1, 2], 3).is_err());
}

#[test]
fn report_summary_prints_percentages() {
    let cm = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![1, 1]]).unwrap();
    let report = MetricsReport::from_confusion(&cm).unwrap();
    assert_eq!(report.per_class_recall, vec![0.5, 0.5]);
    assert!(report.summary().contains("50.00"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bounds_and_kappa_below_oa(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let cm = ConfusionMatrix::from_counts(random_counts(&mut rng)).unwrap();
        let (o, a, k) = (oa(&cm).unwrap(), aa(&cm).unwrap(), kappa(&cm).unwrap());
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(k <= 1.0 + 1e-12);
        prop_assert!(k <= o + 1e-12);
    }

    #[test]
    fn invariant_under_joint_class_relabeling(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let counts = random_counts(&mut rng);
        let c = counts.len();
        let mut perm: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut perm);
        let permuted: Vec<Vec<u64>> = (0..c).map(|i| (0..c).map(|j| counts[perm[i]][perm[j]]).collect()).collect();
        let a = ConfusionMatrix::from_counts(counts).unwrap();
        let b = ConfusionMatrix::from_counts(permuted).unwrap();
        prop_assert!((oa(&a).unwrap() - oa(&b).unwrap()).abs() <= 1e-12);
        prop_assert!((aa(&a).unwrap() - aa(&b).unwrap()).abs() <= 1e-12);
        prop_assert!((kappa(&a).unwrap() - kappa(&b).unwrap()).abs() <= 1e-12);
    }
}
