//! Scalar numerics shared across the crate: truncated-support pmfs, the
//! digamma function, stable softplus/sigmoid, percentiles, deterministic
//! pairwise summation and Pearson correlation.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Which step-weighting pmf to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscountPmf {
    /// `(1 - p)^2 * p^i * (i + 1)`
    ArithmeticoGeometric,
    /// `(1 - p) * p^i`
    Geometric,
}

/// Probability mass of `i` under the chosen discount pmf with parameter `p`.
pub fn discount_pmf(kind: DiscountPmf, p: f64, i: u64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("pmf parameter p={p} outside [0, 1)")));
    }
    let q = 1.0 - p;
    // p = 0 degenerates to a point mass at i = 0 (using 0^0 = 1).
    let pow = if i == 0 { 1.0 } else { p.powi(i as i32) };
    Ok(match kind {
        DiscountPmf::ArithmeticoGeometric => q * q * pow * (i as f64 + 1.0),
        DiscountPmf::Geometric => q * pow,
    })
}

/// `(1 - p)^2 * p^i * (i + 1)` for nonnegative integer `i`.
pub fn ag_pmf(p: f64, i: u64) -> Result<f64> {
    discount_pmf(DiscountPmf::ArithmeticoGeometric, p, i)
}

/// `(1 - p) * p^i` for nonnegative integer `i`.
pub fn geometric_pmf(p: f64, i: u64) -> Result<f64> {
    discount_pmf(DiscountPmf::Geometric, p, i)
}

/// Digamma function, accurate to ~1e-13 relative on `[1e-3, 1e9]`.
///
/// Upward recurrence moves the argument above 10, then the asymptotic
/// Bernoulli series (through the `x^-12` term) is applied.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma requires a positive argument, got {x}");
    let mut shift = 0.0;
    let mut x = x;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln x - 1/(2x) - sum_{n>=1} B_{2n} / (2n x^{2n})
    let series = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2 * (-1.0 / 252.0 + inv2 * (1.0 / 240.0 + inv2 * (-1.0 / 132.0 + inv2 * (691.0 / 32760.0))))));
    shift + x.ln() - 0.5 * inv + series
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Percentile with the linear-interpolation convention: for `n` sorted
/// values the rank of the `q`-th percentile is `h = q/100 * (n - 1)` and the
/// result interpolates between the neighbouring order statistics.
pub fn percentile_linear(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Data("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!("percentile q={q} outside [0, 100]")));
    }
    let n = sorted.len();
    let h = q / 100.0 * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Deterministic pairwise summation. Used for every PIL reduction so results
/// are reproducible independent of evaluation order elsewhere.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Sample median; even-length lists take the midpoint of the central pair.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Data("median of an empty sample".into()));
    }
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = s.len();
    if n % 2 == 1 {
        Ok(s[n / 2])
    } else {
        Ok(0.5 * (s[n / 2 - 1] + s[n / 2]))
    }
}

/// Unbiased sample variance; a single observation has variance 0.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = pairwise_sum(xs) / n as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Pearson correlation together with the two-sided p-value from the
/// t-distribution with `n - 2` degrees of freedom.
///
/// Returns `(NaN, NaN)` when fewer than 3 points are supplied or either
/// argument has zero variance.
pub fn pearson_with_p(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len(), "pearson inputs must have equal length");
    let n = xs.len();
    if n < 3 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pairwise_sum(xs) / n as f64;
    let my = pairwise_sum(ys) / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    if (1.0 - r * r) <= f64::EPSILON {
        return (r, 0.0);
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t-distribution");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    (r, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ag_pmf_matches_definition() {
        assert_eq!(ag_pmf(0.5, 0).unwrap(), 0.25);
        assert_eq!(ag_pmf(0.0, 0).unwrap(), 1.0);
        assert_eq!(ag_pmf(0.0, 1).unwrap(), 0.0);
        assert_eq!(ag_pmf(0.0, 7).unwrap(), 0.0);
        assert_eq!(geometric_pmf(0.25, 0).unwrap(), 0.75);
        assert!(ag_pmf(1.0, 0).is_err());
        assert!(ag_pmf(-0.1, 0).is_err());
    }

    #[test]
    fn ag_pmf_sums_to_one_bruteforce() {
        // brute-force summation oracle over a truncated support
        let total: f64 = (0..=10_000).map(|i| ag_pmf(0.9, i).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "sum was {total}");
    }

    proptest! {
        #[test]
        fn pmfs_sum_to_one(p in 0.0..0.99f64) {
            let horizon = 20_000u64;
            let ag: f64 = (0..horizon).map(|i| ag_pmf(p, i).unwrap()).sum();
            let geo: f64 = (0..horizon).map(|i| geometric_pmf(p, i).unwrap()).sum();
            prop_assert!((ag - 1.0).abs() < 1e-9);
            prop_assert!((geo - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn digamma_reference_values() {
        // reference values computed with 30-digit arithmetic
        let cases = [
            (1e-3, -1000.5755719318103),
            (0.01, -100.56088545786867),
            (0.1, -10.423754940411077),
            (0.5, -1.9635100260214235),
            (1.0, -0.5772156649015329),
            (1.5, 0.03648997397857652),
            (2.0, 0.42278433509846713),
            (6.0, 1.7061176684318005),
            (10.0, 2.251752589066721),
            (100.25, 4.602671243274713),
            (1e4, 9.21029037114285),
            (1e9, 20.72326583644641),
        ];
        for (x, want) in cases {
            let got = digamma(x);
            let rel = (got - want).abs() / want.abs().max(1.0);
            assert!(rel < 1e-12, "digamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn softplus_sigmoid_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn percentile_linear_interpolation() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert!((percentile_linear(&xs, 2.5).unwrap() - 24.975).abs() < 1e-12);
        assert!((percentile_linear(&xs, 97.5).unwrap() - 974.025).abs() < 1e-12);
        assert_eq!(percentile_linear(&[5.0], 50.0).unwrap(), 5.0);
        assert!(percentile_linear(&[], 50.0).is_err());
    }

    #[test]
    fn median_even_midpoint() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn pearson_fixture_longhand() {
        // frozen long-hand computation for a 5-point fixture
        let x = [0.1, 0.4, 0.35, 0.8, 0.95];
        let y = [0.05, 0.5, 0.3, 0.75, 1.1];
        let (r, p) = pearson_with_p(&x, &y);
        assert!((r - 0.9781272285018381).abs() < 1e-12, "r = {r}");
        assert!((p - 0.0038704329774260204).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn pearson_degenerate_is_nan() {
        let (r, p) = pearson_with_p(&[1.0, 1.0, 1.0], &[0.0, 0.5, 1.0]);
        assert!(r.is_nan() && p.is_nan());
        let (r, _) = pearson_with_p(&[1.0, 2.0], &[1.0, 2.0]);
        assert!(r.is_nan());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            scale_x in 0.1..10.0f64,
            shift_x in -5.0..5.0f64,
            scale_y in 0.1..10.0f64,
        ) {
            let x = [0.1, 0.4, 0.35, 0.8, 0.95];
            let y = [0.05, 0.5, 0.3, 0.75, 1.1];
            let xs: Vec<f64> = x.iter().map(|v| scale_x * v + shift_x).collect();
            let ys: Vec<f64> = y.iter().map(|v| scale_y * v).collect();
            let (r0, _) = pearson_with_p(&x, &y);
            let (r1, _) = pearson_with_p(&xs, &ys);
            prop_assert!((r0 - r1).abs() < 1e-10);
            // symmetry under exchanging the arguments
            let (r2, _) = pearson_with_p(&ys, &xs);
            prop_assert!((r1 - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_sum_matches_sequential() {
        let xs: Vec<f64> = (0..1001).map(|i| (i as f64).sin()).collect();
        let seq: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - seq).abs() < 1e-9);
    }

    #[test]
    fn sample_variance_basics() {
        assert_eq!(sample_variance(&[2.0]), 0.0);
        assert!((sample_variance(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
