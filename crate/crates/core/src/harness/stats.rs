//! Small statistical tests used by the reports and tests.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    Binomial::new(p, n).expect("valid binomial").sf(k - 1)
}

/// Standard normal upper tail.
pub fn normal_sf(z: f64) -> f64 {
    1.0 - Normal::standard().cdf(z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// One-sided p-value in the direction named by the test.
    pub p_value: f64,
}

/// Cochran-Armitage test for an increasing trend in proportions
/// `successes[i] / totals[i]` over `scores`.
pub fn cochran_armitage(successes: &[u64], totals: &[u64], scores: &[f64]) -> TestResult {
    let n: f64 = totals.iter().sum::<u64>() as f64;
    let r: f64 = successes.iter().sum::<u64>() as f64;
    let p = r / n;
    let mut t = 0.0;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..scores.len() {
        let (x, ni) = (scores[i], totals[i] as f64);
        t += x * (successes[i] as f64 - ni * p);
        s1 += ni * x * x;
        s2 += ni * x;
    }
    let var = p * (1.0 - p) * (s1 - s2 * s2 / n);
    let z = if var > 0.0 { t / var.sqrt() } else { 0.0 };
    TestResult { statistic: z, p_value: normal_sf(z) }
}

/// Paired t-test of `mean(a - b) < 0`.
pub fn paired_t_less(a: &[f64], b: &[f64]) -> TestResult {
    assert_eq!(a.len(), b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let se = (variance(&d) / n).sqrt();
    let t = if se > 0.0 {
        mean(&d) / se
    } else if mean(&d) < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2");
    TestResult { statistic: t, p_value: dist.cdf(t) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_tail_small_case() {
        // P(X >= 2), n = 3, p = 0.5 -> 4/8
        assert!((binomial_upper_tail(2, 3, 0.5) - 0.5).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(0, 3, 0.5), 1.0);
    }

    #[test]
    fn trend_direction() {
        let up = cochran_armitage(&[5, 10, 20], &[100, 100, 100], &[0.0, 1.0, 2.0]);
        assert!(up.statistic > 0.0 && up.p_value < 0.01);
        let flat = cochran_armitage(&[10, 10, 10], &[100, 100, 100], &[0.0, 1.0, 2.0]);
        assert!(flat.statistic.abs() < 1e-12);
    }

    #[test]
    fn trend_matches_hand_computation() {
        // p = 0.2, T = 5 - 15 = -10, var = 0.16 * (500 - 200^2 / 100) = 16
        let r = cochran_armitage(&[15, 5], &[50, 50], &[1.0, 3.0]);
        assert!((r.statistic + 2.5).abs() < 1e-12);
    }

    #[test]
    fn paired_less() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.5, 3.5, 5.5];
        let r = paired_t_less(&a, &b);
        assert!(r.statistic < 0.0 && r.p_value < 0.05);
    }
}
