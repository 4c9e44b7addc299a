//! Least-squares fits of message counts against the number of replicas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

/// Significance level of the quadratic-term test.
pub const ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub points: Vec<(f64, f64)>,
    pub linear: LinearFit,
    /// `c0 + c1 n + c2 n^2`.
    pub quadratic: [f64; 3],
    /// Partial F statistic of the added `n^2` term.
    pub f_statistic: f64,
    pub p_value: f64,
    pub quadratic_significant: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("need at least 4 distinct values of n, got {0}")]
    InsufficientPoints(usize),
}

/// Coefficients and residual sum of squares of a polynomial fit of `degree`.
fn poly_fit(points: &[(f64, f64)], degree: usize) -> (Vec<f64>, f64) {
    let x = DMatrix::from_fn(points.len(), degree + 1, |i, j| points[i].0.powi(j as i32));
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .expect("SVD with both factors always solves");
    let resid = &y - &x * &beta;
    (beta.iter().copied().collect(), resid.norm_squared())
}

/// Fits `y = a + b n` and `y = a + b n + c n^2`, and tests whether the
/// quadratic term explains significantly more variance.
pub fn complexity_fit(points: &[(f64, f64)]) -> Result<FitReport, FitError> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 4 {
        return Err(FitError::InsufficientPoints(xs.len()));
    }
    let (lin, rss1) = poly_fit(points, 1);
    let (quad, rss2) = poly_fit(points, 2);
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let tss: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let r_squared = if tss == 0.0 { 1.0 } else { 1.0 - rss1 / tss };

    let df2 = (points.len() - 3) as f64;
    let scale = tss.max(1.0) * 1e-12;
    let (f_statistic, p_value) = if rss1 - rss2 <= scale {
        (0.0, 1.0)
    } else if rss2 <= scale {
        (f64::INFINITY, 0.0)
    } else {
        let f = (rss1 - rss2) / (rss2 / df2);
        let dist = FisherSnedecor::new(1.0, df2).expect("positive degrees of freedom");
        (f, 1.0 - dist.cdf(f))
    };
    Ok(FitReport {
        points: points.to_vec(),
        linear: LinearFit { slope: lin[1], intercept: lin[0], r_squared },
        quadratic: [quad[0], quad[1], quad[2]],
        f_statistic,
        p_value,
        quadratic_significant: p_value < ALPHA,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_linear() {
        let pts: Vec<_> = [3.0, 5.0, 9.0, 17.0, 33.0].iter().map(|&n| (n, 4.0 * n - 2.0)).collect();
        let r = complexity_fit(&pts).unwrap();
        assert!((r.linear.slope - 4.0).abs() < 1e-9);
        assert!((r.linear.intercept + 2.0).abs() < 1e-9);
        assert!((r.linear.r_squared - 1.0).abs() < 1e-12);
        assert!(!r.quadratic_significant);
    }

    #[test]
    fn parabola_needs_the_quadratic_term() {
        let pts: Vec<_> = [3.0, 5.0, 9.0, 17.0, 33.0]
            .iter()
            .map(|&n: &f64| (n, n * n + 0.3 * (n * 7.0).sin()))
            .collect();
        let r = complexity_fit(&pts).unwrap();
        assert!(r.quadratic_significant, "p = {}", r.p_value);
        assert!((r.quadratic[2] - 1.0).abs() < 0.01);
    }

    #[test]
    fn noisy_line_keeps_quadratic_insignificant() {
        // deterministic small noise around 3n + 1, replicated per n
        let mut pts = Vec::new();
        for (k, n) in [3.0, 5.0, 9.0, 17.0, 33.0].iter().enumerate() {
            for j in 0..3 {
                let noise = (((k * 3 + j) * 37 % 11) as f64 - 5.0) * 0.05;
                pts.push((*n, 3.0 * n + 1.0 + noise));
            }
        }
        let r = complexity_fit(&pts).unwrap();
        assert!(r.linear.r_squared > 0.999);
        assert!(!r.quadratic_significant, "p = {}", r.p_value);
    }

    #[test]
    fn three_points_are_not_enough() {
        let pts = [(3.0, 1.0), (5.0, 2.0), (9.0, 3.0), (9.0, 3.1)];
        assert_eq!(complexity_fit(&pts), Err(FitError::InsufficientPoints(3)));
    }
}
