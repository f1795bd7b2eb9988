use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
///
/// `r_squared` is 1 when `ln y` has no spread and the fit is exact.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 points, got {}", xs.len())));
    }
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Precondition(format!("x[{i}] = {x} is not positive")));
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Precondition(format!("y[{i}] = {y} is not positive")));
        }
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LogLogFit { slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn exact_power_law() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let f = fit_loglog_slope(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_slope() {
        let f = fit_loglog_slope(&[1.0, 2.0, 4.0, 8.0], &[3.0; 4]).unwrap();
        assert!(f.slope.abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn noisy_linear_law() {
        let mut rng = Rng::new(17);
        let xs: Vec<f64> = (0..50).map(|i| 10f64.powf(i as f64 / 49.0 * 3.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * (1.0 + rng.uniform(-0.05, 0.05))).collect();
        let f = fit_loglog_slope(&xs, &ys).unwrap();
        assert!((f.slope - 1.0).abs() <= 0.05, "slope {}", f.slope);
    }

    #[test]
    fn preconditions_name_the_index() {
        let err = fit_loglog_slope(&[1.0, 2.0, -3.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("x[2]"), "{err}");
        let err = fit_loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("y[1]"), "{err}");
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
