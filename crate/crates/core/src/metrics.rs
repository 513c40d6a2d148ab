//! Station scores and resolution sweep curves.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationMetrics {
    pub mse: f64,
    pub mae: f64,
    pub n: usize,
}

/// Mean squared and mean absolute error of `pred` against `obs`.
pub fn evaluate_stations(pred: &[f64], obs: &[f64]) -> Result<StationMetrics> {
    if pred.len() != obs.len() || pred.is_empty() {
        return Err(Error::shape("evaluate_stations", &[pred.len()], &[obs.len()]));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, o) in pred.iter().zip(obs) {
        let e = p - o;
        se += e * e;
        ae += libm::fabs(e);
    }
    Ok(StationMetrics { mse: se / n, mae: ae / n, n: pred.len() })
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    evaluate_stations(a, b).map(|m| libm::sqrt(m.mse))
}

/// Station MSE after reconstructing at decreasing resolutions, ending with a
/// direct query at resolution 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub method: String,
    pub points: Vec<(f64, f64)>,
}

impl SweepCurve {
    pub fn new(method: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        let ok = points.windows(2).all(|w| w[0].0 > w[1].0) && points.last().is_some_and(|p| p.0 == 0.0);
        if !ok {
            return Err(Error::Config("sweep resolutions must decrease strictly and end at 0".into()));
        }
        Ok(SweepCurve { method: method.into(), points })
    }

    pub fn direct(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.1)
    }

    /// Every step rises by at most `tol` relative to the previous value.
    pub fn non_increasing_within(&self, tol: f64) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let m = evaluate_stations(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
        let m = evaluate_stations(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mse, m.mae), (4.0, 2.0));
        let m = evaluate_stations(&[1.0, -3.0], &[0.0, 0.0]).unwrap();
        assert_eq!((m.mse, m.mae), (5.0, 2.0));
        assert!(evaluate_stations(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sweep_validation() {
        assert!(SweepCurve::new("a", vec![(0.25, 1.0), (0.125, 0.9), (0.0, 0.5)]).is_ok());
        assert!(SweepCurve::new("a", vec![(0.25, 1.0), (0.25, 0.9), (0.0, 0.5)]).is_err());
        assert!(SweepCurve::new("a", vec![(0.25, 1.0), (0.125, 0.9)]).is_err());
    }
}
