//! Sample statistics for Monte Carlo aggregation.

use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance; 0 for fewer than two samples.
    pub variance: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        // shifted by the first sample so constant data gives an exact mean
        let mean = match xs.first() {
            None => f64::NAN,
            Some(&x0) => x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n as f64,
        };
        let variance = if n < 2 {
            0.0
        } else {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        };
        Summary { n, mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Sample standard deviation over √n.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.std_dev() / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Welch's unequal-variance t-test from summary statistics.
pub fn welch(a: &Summary, b: &Summary) -> WelchTest {
    let va = a.variance / a.n as f64;
    let vb = b.variance / b.n as f64;
    let se2 = va + vb;
    let diff = a.mean - b.mean;
    if se2 == 0.0 {
        let p_value = if diff == 0.0 { 1.0 } else { 0.0 };
        return WelchTest {
            t: if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY },
            df: f64::INFINITY,
            p_value,
        };
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    WelchTest { t, df, p_value }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_basics() {
        let s = Summary::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.variance - 32.0 / 7.0).abs() < 1e-12);
        assert!((s.stderr() - (32.0f64 / 7.0).sqrt() / 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[3.0]).stderr(), 0.0);
        let c = Summary::of(&vec![29.166666666666668; 2000]);
        assert_eq!((c.mean, c.stderr()), (29.166666666666668, 0.0));
    }

    #[test]
    fn welch_matches_reference() {
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let a = Summary::of(&[27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4]);
        let b = Summary::of(&[27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4]);
        let w = welch(&a, &b);
        assert!((w.t - -2.455356398286006).abs() < 1e-9, "{w:?}");
        assert!((w.p_value - 0.021378001462866985).abs() < 1e-6, "{w:?}");
        assert!((w.df - 24.988529290231416).abs() < 1e-9);
    }

    #[test]
    fn identical_constant_samples() {
        let a = Summary::of(&[3.0; 10]);
        let w = welch(&a, &a);
        assert_eq!(w.p_value, 1.0);
        assert_eq!(w.t, 0.0);
    }
}
