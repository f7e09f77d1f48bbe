use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Piecewise-constant hazard: `rates[i]` on `(knots[i], knots[i + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardPath {
    knots: Vec<f64>,
    rates: Vec<f64>,
}

impl HazardPath {
    pub fn new(knots: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if knots.len() != rates.len() + 1 || rates.is_empty() {
            return Err(Error::Config("hazard path needs one more knot than rates".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("hazard path knots must increase".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("hazard rates must be finite and non-negative".into()));
        }
        Ok(Self { knots, rates })
    }

    /// One piece per day: `rates[i]` on `(start + i, start + i + 1]`.
    pub fn daily(start: i64, rates: Vec<f64>) -> Result<Self> {
        let knots = (0..=rates.len()).map(|i| (start + i as i64) as f64).collect();
        Self::new(knots, rates)
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// `H(t0, t)` for `start <= t0 <= t <= end`.
    pub fn cumulative(&self, t0: f64, t: f64) -> f64 {
        let mut total = 0.0;
        for (i, &rate) in self.rates.iter().enumerate() {
            let lo = self.knots[i].max(t0);
            let hi = self.knots[i + 1].min(t);
            if hi > lo {
                total += rate * (hi - lo);
            }
        }
        total
    }

    /// The time `t` with `H(t0, t) = target`, or `None` when the path ends first.
    pub fn invert(&self, t0: f64, target: f64) -> Option<f64> {
        let mut left = target;
        for (i, &rate) in self.rates.iter().enumerate() {
            let lo = self.knots[i].max(t0);
            let hi = self.knots[i + 1];
            if hi <= lo {
                continue;
            }
            let mass = rate * (hi - lo);
            if mass >= left && rate > 0.0 {
                return Some(lo + left / rate);
            }
            left -= mass;
        }
        None
    }
}

/// Event time after `t0` by inversion of an `Exp(1)` draw; `None` means no
/// event before the end of the path.
pub fn sample_event_time<R: Rng + ?Sized>(path: &HazardPath, t0: f64, rng: &mut R) -> Option<f64> {
    let e: f64 = Exp1.sample(rng);
    path.invert(t0, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inversion_round_trips() {
        let p = HazardPath::new(vec![0.0, 2.0, 5.0, 9.0], vec![0.5, 0.0, 2.0]).unwrap();
        for target in [0.1, 0.99, 1.0, 1.5, 8.9] {
            let t = p.invert(0.0, target).unwrap();
            assert!((p.cumulative(0.0, t) - target).abs() < 1e-12);
        }
        assert!(p.invert(0.0, 9.1).is_none());
        let t = p.invert(1.0, 0.6).unwrap();
        assert!((t - 5.05).abs() < 1e-12);
    }

    #[test]
    fn zero_prefix_delays_events() {
        let p = HazardPath::new(vec![0.0, 10.0, 30.0], vec![0.0, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            if let Some(t) = sample_event_time(&p, 0.0, &mut rng) {
                assert!(t >= 10.0);
            }
        }
    }

    #[test]
    fn rejects_bad_paths() {
        assert!(HazardPath::new(vec![0.0, 1.0], vec![]).is_err());
        assert!(HazardPath::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(HazardPath::new(vec![0.0, 1.0], vec![-1.0]).is_err());
    }
}
