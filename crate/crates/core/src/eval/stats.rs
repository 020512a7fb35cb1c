use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `None` when the differences have zero variance.
    pub t_statistic: Option<f64>,
    pub degrees_of_freedom: usize,
    /// Two-sided; `None` when the differences have zero variance.
    pub p_value: Option<f64>,
    /// Mean of `a - b`.
    pub mean_difference: f64,
}

impl TestResult {
    pub fn is_degenerate(&self) -> bool {
        self.p_value.is_none()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for fewer than
/// two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom, via the regularized incomplete beta function.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewPairs(a.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let m = mean(&d);
    let df = n - 1;
    let degenerate = d.iter().all(|&x| x == d[0]);
    let sd = sample_sd(&d);
    if degenerate || sd == 0.0 {
        return Ok(TestResult {
            t_statistic: None,
            degrees_of_freedom: df,
            p_value: None,
            mean_difference: m,
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(TestResult {
        t_statistic: Some(t),
        degrees_of_freedom: df,
        p_value: Some(t_two_sided_p(t, df as f64)),
        mean_difference: m,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-sided p by direct quadrature of the t density. With
    /// `t = sqrt(df) tan(theta)` the density becomes proportional to
    /// `cos(theta)^(df - 1)` on `[0, pi/2)`, which Simpson's rule handles
    /// well; the ratio of the tail integral to the half-line integral needs
    /// no normalizing constant.
    pub(crate) fn quadrature_p(t: f64, df: f64) -> f64 {
        fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
        let f = |th: f64| th.cos().powf(df - 1.0);
        let half = std::f64::consts::FRAC_PI_2;
        let theta0 = (t.abs() / df.sqrt()).atan();
        simpson(f, theta0, half, 20_000) / simpson(f, 0.0, half, 20_000)
    }

    #[test]
    fn textbook_example() {
        let r = paired_t_test(&[2.0, 3.0, 4.0, 6.0, 7.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        // diffs 1,1,1,2,2: mean 1.4, sd sqrt(0.3)
        let t = 1.4 / (0.3f64.sqrt() / 5f64.sqrt());
        assert!((r.t_statistic.unwrap() - t).abs() < 1e-12);
        assert_eq!(r.degrees_of_freedom, 4);
        assert!((r.p_value.unwrap() - quadrature_p(t, 4.0)).abs() < 1e-10);
        assert!((r.mean_difference - 1.4).abs() < 1e-12);
    }

    #[test]
    fn swap_negates_t() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 6.0, 7.0];
        let (x, y) = (paired_t_test(&a, &b).unwrap(), paired_t_test(&b, &a).unwrap());
        assert_eq!(x.t_statistic.unwrap(), -y.t_statistic.unwrap());
        assert_eq!(x.p_value, y.p_value);
    }

    #[test]
    fn degenerate_inputs() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.is_degenerate());
        assert_eq!(r.mean_difference, 0.0);
        let r = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!(r.is_degenerate() && r.mean_difference == 1.0);
        assert!(matches!(paired_t_test(&[1.0], &[1.0]), Err(EvalError::TooFewPairs(1))));
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1))));
        assert!(matches!(paired_t_test(&[f64::NAN, 2.0], &[1.0, 1.0]), Err(EvalError::NonFinite)));
    }

    #[test]
    fn p_value_falls_with_abs_t() {
        for df in [1.0, 3.0, 10.0, 40.0] {
            let mut prev = 1.0;
            for k in 0..50 {
                let p = t_two_sided_p(k as f64 * 0.2, df);
                assert!(p <= prev);
                prev = p;
            }
        }
        assert_eq!(t_two_sided_p(0.0, 5.0), 1.0);
    }

    #[test]
    fn agrees_with_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let n = rng.random_range(2..30);
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
            let r = paired_t_test(&a, &b).unwrap();
            let q = quadrature_p(r.t_statistic.unwrap(), r.degrees_of_freedom as f64);
            assert!((r.p_value.unwrap() - q).abs() < 1e-8);
        }
    }
}
