//! Time-averaged performance metrics on the uniform simulation grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `√((1/T) Σ x(t_j)² dt)` with `T = len · dt` (left Riemann sum).
pub fn rms(signal: &[f64], dt: f64) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::InvalidArgument("rms of an empty signal".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let sum: f64 = signal.iter().map(|x| x * x * dt).sum();
    Ok((sum / (signal.len() as f64 * dt)).sqrt())
}

/// Mean over agents of each agent's RMS.
pub fn rms_avg(signals: &[Vec<f64>], dt: f64) -> Result<f64> {
    if signals.is_empty() {
        return Err(Error::InvalidArgument("rms_avg over no agents".into()));
    }
    let total: f64 = signals.iter().map(|s| rms(s, dt)).sum::<Result<f64>>()?;
    Ok(total / signals.len() as f64)
}

/// Largest absolute value over all agents and times.
pub fn peak(signals: &[Vec<f64>]) -> Result<f64> {
    if signals.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("peak of an empty signal".into()));
    }
    Ok(signals.iter().flatten().fold(0.0, |a: f64, x| a.max(x.abs())))
}

/// Streaming form of [`rms`] and [`peak`] for norms `‖e(t_j)‖`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    sum_sq: f64,
    count: usize,
    max_sq: f64,
}

impl Accumulator {
    /// Adds one sample given as its squared norm.
    pub fn push_sq(&mut self, sq: f64) {
        self.sum_sq += sq;
        self.count += 1;
        self.max_sq = self.max_sq.max(sq);
    }

    pub fn rms(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("rms of an empty signal".into()));
        }
        Ok((self.sum_sq / self.count as f64).sqrt())
    }

    pub fn rms_avg(accs: &[Accumulator]) -> Result<f64> {
        if accs.is_empty() {
            return Err(Error::InvalidArgument("rms_avg over no agents".into()));
        }
        Ok(accs.iter().map(Accumulator::rms).sum::<Result<f64>>()? / accs.len() as f64)
    }

    pub fn peak(accs: &[Accumulator]) -> f64 {
        accs.iter().fold(0.0, |a: f64, x| a.max(x.max_sq.sqrt()))
    }
}

/// The four headline metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub estimation_rms: f64,
    pub tracking_rms: f64,
    pub control_rms: f64,
    pub control_peak: f64,
}

impl Headline {
    /// Element-wise mean.
    pub fn mean(items: &[Headline]) -> Option<Headline> {
        if items.is_empty() {
            return None;
        }
        let k = items.len() as f64;
        let sum = items.iter().fold(Headline::default(), |a, h| Headline {
            estimation_rms: a.estimation_rms + h.estimation_rms,
            tracking_rms: a.tracking_rms + h.tracking_rms,
            control_rms: a.control_rms + h.control_rms,
            control_peak: a.control_peak + h.control_peak,
        });
        Some(Headline {
            estimation_rms: sum.estimation_rms / k,
            tracking_rms: sum.tracking_rms / k,
            control_rms: sum.control_rms / k,
            control_peak: sum.control_peak / k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_signal() {
        assert!((rms(&[2.0; 100], 0.01).unwrap() - 2.0).abs() < 1e-14);
        assert!(rms(&[], 0.1).is_err());
        assert!(peak(&[vec![]]).is_err());
        assert_eq!(peak(&[vec![1.0, -3.0], vec![2.0]]).unwrap(), 3.0);
    }

    #[test]
    fn sine_rms_converges() {
        let dt = 1e-4;
        let s: Vec<f64> = (0..100_000).map(|j| (std::f64::consts::TAU * j as f64 * dt).sin()).collect();
        assert!((rms(&s, dt).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn average_over_agents() {
        let v = rms_avg(&[vec![1.0; 10], vec![3.0; 10]], 0.1).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn accumulator_matches_batch(xs in prop::collection::vec(-10.0f64..10.0, 1..200)) {
            let mut acc = Accumulator::default();
            for x in &xs {
                acc.push_sq(x * x);
            }
            let batch = rms(&xs, 1e-3).unwrap();
            prop_assert!((acc.rms().unwrap() - batch).abs() <= 1e-12 * batch.max(1.0));
            prop_assert!((Accumulator::peak(&[acc]) - peak(&[xs.clone()]).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn rms_is_homogeneous(xs in prop::collection::vec(-10.0f64..10.0, 1..50), c in -5.0f64..5.0) {
            let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
            let a = rms(&scaled, 0.01).unwrap();
            let b = c.abs() * rms(&xs, 0.01).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }
}
