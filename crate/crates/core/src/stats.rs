//! Statistical primitives: one-sided two-proportion z-test, Holm-Bonferroni
//! step-down correction, and the confidence radius used by the
//! successive-elimination tester.
//!
//! All functions are pure and safe to call concurrently.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A pair of agreement ratios measured over the same `n` prompts.
///
/// Both ratios must be count ratios: `mu * n` is an integer up to floating
/// point noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionPair {
    pub mu_a: f64,
    pub mu_b: f64,
    pub n: u64,
}

impl ProportionPair {
    pub fn new(mu_a: f64, mu_b: f64, n: u64) -> Result<Self> {
        let pair = ProportionPair { mu_a, mu_b, n };
        pair.validate()?;
        Ok(pair)
    }

    /// Builds the pair from raw agreement counts.
    pub fn from_counts(hits_a: u64, hits_b: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("proportion pair requires n >= 1"));
        }
        if hits_a > n || hits_b > n {
            return Err(Error::invalid(format!(
                "agreement counts ({hits_a}, {hits_b}) exceed n = {n}"
            )));
        }
        Ok(ProportionPair {
            mu_a: hits_a as f64 / n as f64,
            mu_b: hits_b as f64 / n as f64,
            n,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("proportion pair requires n >= 1"));
        }
        for (name, mu) in [("mu_a", self.mu_a), ("mu_b", self.mu_b)] {
            if !(0.0..=1.0).contains(&mu) || !mu.is_finite() {
                return Err(Error::invalid(format!("{name} = {mu} outside [0, 1]")));
            }
            let scaled = mu * self.n as f64;
            if (scaled - scaled.round()).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "{name} = {mu} is not a count ratio over n = {}",
                    self.n
                )));
            }
        }
        Ok(())
    }
}

/// One hypothesis-test result within a multiple-testing family.
///
/// `threshold` is the Holm-adjusted level assigned by the correction step;
/// it is zero until [`holm_bonferroni`] fills it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRecord {
    /// Identifier of the model this comparison was made against.
    pub model_id: String,
    pub p: f64,
    #[serde(default)]
    pub threshold: f64,
}

impl PValueRecord {
    pub fn new(model_id: impl Into<String>, p: f64) -> Self {
        PValueRecord { model_id: model_id.into(), p, threshold: 0.0 }
    }
}

/// Outcome of the Holm-Bonferroni step-down procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolmOutcome {
    /// True iff every null in the family was rejected.
    pub all_rejected: bool,
    /// Input records in their original order, thresholds filled in.
    pub records: Vec<PValueRecord>,
}

/// One-sided pooled two-proportion z-test for `H1: mu_a > mu_b`.
///
/// Both proportions come from the same `n` prompts, so the pooled estimate
/// is `pbar = (mu_a + mu_b) / 2` with standard error
/// `sqrt(2 * pbar * (1 - pbar) / n)`, and the p-value is `1 - Phi(z)`.
///
/// A degenerate pooled variance (`pbar` of exactly 0 or 1) carries no
/// information, so the test conservatively returns 1.0 and never rejects.
pub fn z_test_one_sided(pair: &ProportionPair) -> Result<f64> {
    pair.validate()?;
    let pbar = (pair.mu_a + pair.mu_b) / 2.0;
    let se = (2.0 * pbar * (1.0 - pbar) / pair.n as f64).sqrt();
    if se == 0.0 {
        return Ok(1.0);
    }
    let z = (pair.mu_a - pair.mu_b) / se;
    Ok(erf::normal_sf(z))
}

/// Holm-Bonferroni step-down correction at family level `alpha`.
///
/// Sorts the p-values ascending, assigns the k-th smallest the threshold
/// `alpha / (n - k + 1)`, and rejects the whole family iff every sorted
/// p-value is at or below its threshold. Records are returned in their
/// original order with thresholds filled in.
pub fn holm_bonferroni(records: Vec<PValueRecord>, alpha: f64) -> Result<HolmOutcome> {
    if records.is_empty() {
        return Err(Error::invalid("holm_bonferroni requires a non-empty family"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} outside (0, 1)")));
    }
    for rec in &records {
        if !(0.0..=1.0).contains(&rec.p) || !rec.p.is_finite() {
            return Err(Error::invalid(format!(
                "p-value {} for `{}` outside [0, 1]",
                rec.p, rec.model_id
            )));
        }
    }

    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].p.partial_cmp(&records[b].p).unwrap());

    let mut records = records;
    let mut all_rejected = true;
    for (k, &idx) in order.iter().enumerate() {
        let threshold = alpha / (n - k) as f64;
        records[idx].threshold = threshold;
        if records[idx].p > threshold {
            all_rejected = false;
        }
    }
    Ok(HolmOutcome { all_rejected, records })
}

/// Confidence radius `U(t, alpha) = sqrt(ln(4 t^2 / alpha) / (2 t))` used by
/// successive elimination, with `t` the number of completed rounds.
pub fn bai_confidence_radius(t: u64, alpha: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("confidence radius requires t >= 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} outside (0, 1)")));
    }
    let t = t as f64;
    Ok(((4.0 * t * t / alpha).ln() / (2.0 * t)).sqrt())
}

/// Complementary error function and the standard normal survival function.
///
/// Rational Chebyshev approximations after W. J. Cody (SPECFUN `calerf`),
/// accurate to a couple of ulp over the whole range; comfortably inside the
/// 1e-12 absolute budget the z-test requires on |z| <= 8.
// Coefficients are kept verbatim from the published tables.
#[allow(clippy::excessive_precision)]
mod erf {
    const THRESH: f64 = 0.46875;
    const XBIG: f64 = 26.543;
    const SQRPI: f64 = 5.641_895_835_477_562_9e-1; // 1/sqrt(pi)

    const A: [f64; 5] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_56e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_47e3,
        1.857_777_061_846_031_53e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412_09e1,
        2.440_246_379_344_441_73e2,
        1.282_616_526_077_372_28e3,
        2.844_236_833_439_170_62e3,
    ];
    const C: [f64; 9] = [
        5.641_884_969_886_700_89e-1,
        8.883_149_794_388_375_94e0,
        6.611_919_063_714_162_95e1,
        2.986_351_381_974_001_31e2,
        8.819_522_212_417_690_9e2,
        1.712_047_612_634_070_58e3,
        2.051_078_377_826_071_47e3,
        1.230_339_354_797_997_25e3,
        2.153_115_354_744_038_46e-8,
    ];
    const D: [f64; 8] = [
        1.574_492_611_070_983_47e1,
        1.176_939_508_913_124_99e2,
        5.371_811_018_620_098_58e2,
        1.621_389_574_566_690_19e3,
        3.290_799_235_733_459_63e3,
        4.362_619_090_143_247_16e3,
        3.439_367_674_143_721_64e3,
        1.230_339_354_803_749_42e3,
    ];
    const P: [f64; 6] = [
        3.053_266_349_612_323_44e-1,
        3.603_448_999_498_044_39e-1,
        1.257_817_261_112_292_46e-1,
        1.608_378_514_874_227_66e-2,
        6.587_491_615_298_378_03e-4,
        1.631_538_713_730_209_78e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822_42e0,
        1.872_952_849_923_460_47e0,
        5.279_051_029_514_284_12e-1,
        6.051_834_131_244_131_91e-2,
        2.335_204_976_268_691_85e-3,
    ];

    /// erf(x) for |x| <= 0.46875.
    fn erf_small(x: f64) -> f64 {
        let y = x.abs();
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        x * (num + A[3]) / (den + B[3])
    }

    /// exp(-y*y) computed with the argument split at 1/16 granularity so
    /// the rounding of y*y does not dominate.
    fn exp_neg_ysq(y: f64) -> f64 {
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp()
    }

    /// erfc(y) for 0.46875 <= y <= 4.
    fn erfc_mid(y: f64) -> f64 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        exp_neg_ysq(y) * (num + C[7]) / (den + D[7])
    }

    /// erfc(y) for y > 4.
    fn erfc_large(y: f64) -> f64 {
        if y >= XBIG {
            return 0.0;
        }
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let tail = z * (num + P[4]) / (den + Q[4]);
        exp_neg_ysq(y) * (SQRPI - tail) / y
    }

    pub fn erfc(x: f64) -> f64 {
        let y = x.abs();
        let magnitude = if y <= THRESH {
            return 1.0 - erf_small(x);
        } else if y <= 4.0 {
            erfc_mid(y)
        } else {
            erfc_large(y)
        };
        if x < 0.0 {
            2.0 - magnitude
        } else {
            magnitude
        }
    }

    /// P(Z > z) for the standard normal: `erfc(z / sqrt(2)) / 2`.
    pub fn normal_sf(z: f64) -> f64 {
        0.5 * erfc(z / std::f64::consts::SQRT_2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(mu_a: f64, mu_b: f64, n: u64) -> ProportionPair {
        ProportionPair::new(mu_a, mu_b, n).unwrap()
    }

    #[test]
    fn erfc_reference_points() {
        // erfc(1) and friends to 16 significant digits (mpmath).
        let cases = [
            (0.0, 1.0),
            (0.25, 0.7236736098317631),
            (0.5, 0.4795001221869535),
            (1.0, 0.1572992070502851),
            (2.0, 0.004677734981047266),
            (4.0, 1.541725790028002e-8),
            (6.0, 2.151973671249891e-17),
            (-1.0, 1.842700792949715),
            (-3.0, 1.999977909503001),
        ];
        for (x, expected) in cases {
            let got = erf::erfc(x);
            assert!(
                (got - expected).abs() <= 4e-16 * expected.abs().max(1.0),
                "erfc({x}) = {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn z_test_equal_proportions_is_half() {
        assert_eq!(z_test_one_sided(&pair(0.5, 0.5, 1000)).unwrap(), 0.5);
        for x in [0.1, 0.25, 0.9] {
            let p = z_test_one_sided(&pair(x, x, 100)).unwrap();
            assert!((p - 0.5).abs() < 1e-15, "p = {p} at mu = {x}");
        }
    }

    #[test]
    fn z_test_degenerate_variance_returns_one() {
        assert_eq!(z_test_one_sided(&pair(1.0, 1.0, 100)).unwrap(), 1.0);
        assert_eq!(z_test_one_sided(&pair(0.0, 0.0, 100)).unwrap(), 1.0);
    }

    #[test]
    #[allow(clippy::excessive_precision)] // oracle digits kept verbatim
    fn z_test_pinned_oracle_values() {
        // Arbitrary-precision erfc evaluation, frozen by tests/data/gen_oracle.py.
        let p = z_test_one_sided(&pair(0.6, 0.5, 1000)).unwrap();
        assert!((p - 3.4839655364249325e-6).abs() < 1e-10, "p = {p}");
        let p = z_test_one_sided(&pair(0.52, 0.5, 1000)).unwrap();
        assert!((p - 0.18549883686830400).abs() < 1e-10, "p = {p}");
    }

    #[test]
    fn z_test_rejects_invalid_input() {
        assert!(ProportionPair::new(0.5, 0.5, 0).is_err());
        assert!(ProportionPair::new(-0.1, 0.5, 10).is_err());
        assert!(ProportionPair::new(0.5, 1.1, 10).is_err());
        // Not a count ratio over n.
        assert!(ProportionPair::new(0.05, 0.5, 10).is_err());
        assert!(ProportionPair::from_counts(11, 5, 10).is_err());
    }

    #[test]
    fn z_test_antitone_in_gap() {
        let mut last = 1.0;
        for hits in [500, 520, 550, 600, 700] {
            let p = z_test_one_sided(&ProportionPair::from_counts(hits, 500, 1000).unwrap())
                .unwrap();
            assert!(p <= last, "p not antitone at hits = {hits}");
            last = p;
        }
    }

    #[test]
    fn holm_examples() {
        let recs = vec![
            PValueRecord::new("a", 0.001),
            PValueRecord::new("b", 0.01),
            PValueRecord::new("c", 0.03),
        ];
        let out = holm_bonferroni(recs, 0.05).unwrap();
        assert!(out.all_rejected);
        assert!((out.records[0].threshold - 0.05 / 3.0).abs() < 1e-15);
        assert!((out.records[1].threshold - 0.05 / 2.0).abs() < 1e-15);
        assert!((out.records[2].threshold - 0.05).abs() < 1e-15);

        let out = holm_bonferroni(
            vec![PValueRecord::new("a", 0.03), PValueRecord::new("b", 0.04)],
            0.05,
        )
        .unwrap();
        assert!(!out.all_rejected, "0.03 > 0.05/2");

        let out = holm_bonferroni(vec![PValueRecord::new("a", 1.0)], 0.05).unwrap();
        assert!(!out.all_rejected);

        let out = holm_bonferroni(vec![PValueRecord::new("a", 0.05)], 0.05).unwrap();
        assert!(out.all_rejected, "single test reduces to p <= alpha");
    }

    #[test]
    fn holm_rejects_bad_input() {
        assert!(holm_bonferroni(vec![], 0.05).is_err());
        assert!(holm_bonferroni(vec![PValueRecord::new("a", 1.5)], 0.05).is_err());
        assert!(holm_bonferroni(vec![PValueRecord::new("a", 0.5)], 1.0).is_err());
    }

    #[test]
    #[allow(clippy::excessive_precision)] // oracle digits kept verbatim
    fn radius_pinned_values() {
        // sqrt(ln(80) / 2) et al., frozen by tests/data/gen_oracle.py.
        let u = bai_confidence_radius(1, 0.05).unwrap();
        assert!((u - 1.480207187300798376).abs() < 1e-12, "u = {u}");
        let u = bai_confidence_radius(10, 0.05).unwrap();
        assert!((u - 0.670343077112830821).abs() < 1e-12, "u = {u}");
        let u = bai_confidence_radius(7, 0.2).unwrap();
        assert!((u - 0.701404334769316187).abs() < 1e-12, "u = {u}");
    }

    #[test]
    fn radius_domain_checks() {
        assert!(bai_confidence_radius(0, 0.05).is_err());
        assert!(bai_confidence_radius(1, 0.0).is_err());
        assert!(bai_confidence_radius(1, 4.0).is_err());
    }

    #[test]
    fn radius_monotone() {
        // Strictly decreasing in t (integer steps), strictly increasing in 1/alpha.
        for alpha in [0.01, 0.05, 0.5, 0.9] {
            let mut last = f64::INFINITY;
            for t in 1..200 {
                let u = bai_confidence_radius(t, alpha).unwrap();
                assert!(u < last, "not strictly decreasing at t = {t}, alpha = {alpha}");
                last = u;
            }
            // Quadrupling t at fixed alpha strictly shrinks the radius.
            for t in [1u64, 5, 50] {
                assert!(
                    bai_confidence_radius(4 * t, alpha).unwrap()
                        < bai_confidence_radius(t, alpha).unwrap()
                );
            }
        }
        for t in [1u64, 3, 17] {
            let mut last = 0.0;
            for alpha in [0.9, 0.5, 0.1, 0.01, 0.001] {
                let u = bai_confidence_radius(t, alpha).unwrap();
                assert!(u > last, "not increasing in 1/alpha at t = {t}");
                last = u;
            }
        }
    }
}
