//! Oracle checks for the statistical primitives.
//!
//! The z-test is compared against `tests/data/ztest_oracle.csv`, a grid of
//! 1,000 count triples whose p-values were evaluated with arbitrary-
//! precision erfc arithmetic (see `tests/data/gen_oracle.py`). The
//! Holm-Bonferroni procedure is compared against a direct enumeration of
//! its definition on 10,000 random families.

use provtest::seed::substream;
use provtest::stats::{
    bai_confidence_radius, holm_bonferroni, z_test_one_sided, PValueRecord, ProportionPair,
};
use rand::Rng;

fn oracle_rows() -> Vec<(u64, u64, u64, f64)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ztest_oracle.csv");
    let text = std::fs::read_to_string(path).expect("oracle csv present");
    text.lines()
        .skip(1)
        .map(|line| {
            let mut fields = line.split(',');
            let hits_a = fields.next().unwrap().parse().unwrap();
            let hits_b = fields.next().unwrap().parse().unwrap();
            let n = fields.next().unwrap().parse().unwrap();
            let p = fields.next().unwrap().parse().unwrap();
            (hits_a, hits_b, n, p)
        })
        .collect()
}

#[test]
fn z_test_matches_high_precision_oracle() {
    let rows = oracle_rows();
    assert_eq!(rows.len(), 1000, "full oracle grid");
    let mut worst = 0.0f64;
    for (hits_a, hits_b, n, expected) in rows {
        let pair = ProportionPair::from_counts(hits_a, hits_b, n).unwrap();
        let p = z_test_one_sided(&pair).unwrap();
        let err = (p - expected).abs();
        worst = worst.max(err);
        assert!(
            err <= 1e-10,
            "({hits_a}, {hits_b}, {n}): |{p} - {expected}| = {err:e}"
        );
    }
    // The CDF itself is held to 1e-12 absolute on moderate z; the grid's
    // dense moderate-z section enforces that with headroom.
    assert!(worst < 1e-12, "worst absolute error {worst:e}");
}

/// Direct enumeration of the Holm definition: sort ascending and check
/// every prefix against alpha / (n - k + 1).
fn holm_brute_force(pvalues: &[f64], alpha: f64) -> bool {
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    (0..n).all(|k| sorted[k] <= alpha / (n - k) as f64)
}

#[test]
fn holm_matches_brute_force_on_random_families() {
    let mut rng = substream(20240811, "holm-oracle");
    let mut rejected = 0u32;
    for trial in 0..10_000 {
        let len = rng.gen_range(1..=8usize);
        let alpha = [0.01, 0.05, 0.1][rng.gen_range(0..3)];
        let pvalues: Vec<f64> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..1.0)
                } else {
                    // Cluster near the thresholds to exercise boundaries.
                    let k = rng.gen_range(0..len);
                    let threshold: f64 = alpha / (len - k) as f64;
                    (threshold * rng.gen_range(0.5..1.5)).min(1.0)
                }
            })
            .collect();
        let records: Vec<PValueRecord> = pvalues
            .iter()
            .enumerate()
            .map(|(i, &p)| PValueRecord::new(format!("m{i}"), p))
            .collect();
        let outcome = holm_bonferroni(records, alpha).unwrap();
        let expected = holm_brute_force(&pvalues, alpha);
        assert_eq!(
            outcome.all_rejected, expected,
            "trial {trial}: family {pvalues:?} at alpha {alpha}"
        );
        if expected {
            rejected += 1;
        }
    }
    assert!(rejected > 100, "oracle grid should contain both outcomes: {rejected}");
}

#[test]
fn holm_thresholds_follow_sorted_ranks() {
    let mut rng = substream(7, "holm-thresholds");
    for _ in 0..200 {
        let len = rng.gen_range(1..=8usize);
        let records: Vec<PValueRecord> = (0..len)
            .map(|i| PValueRecord::new(format!("m{i}"), rng.gen_range(0.0..1.0)))
            .collect();
        let outcome = holm_bonferroni(records, 0.05).unwrap();
        let mut sorted = outcome.records.clone();
        sorted.sort_by(|a, b| a.p.partial_cmp(&b.p).unwrap());
        for (k, rec) in sorted.iter().enumerate() {
            assert!((rec.threshold - 0.05 / (len - k) as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn radius_matches_formula_across_grid() {
    for t in [1u64, 2, 3, 10, 100, 10_000] {
        for alpha in [0.01, 0.05, 0.25, 0.75] {
            let expected = ((4.0 * (t * t) as f64 / alpha).ln() / (2.0 * t as f64)).sqrt();
            let u = bai_confidence_radius(t, alpha).unwrap();
            assert!((u - expected).abs() < 1e-15);
        }
    }
}
