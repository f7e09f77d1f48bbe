use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default length, in days, of a baseline-hazard interval.
pub const DEFAULT_INTERVAL_DAYS: i64 = 14;

/// Calendar-time partition `t_0 < t_1 < ... < t_K` on which baseline hazards
/// are piecewise constant.
///
/// Days are integer offsets from the configured origin date. Interval `k`
/// (0-based) is the half-open range `(t_k, t_{k+1}]`; the start day `t_0`
/// belongs to the first interval so that the hazard on the enrollment day of
/// the earliest subjects is defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarGrid {
    boundaries: Vec<i64>,
}

impl CalendarGrid {
    /// Equal-length intervals of `interval_days`, the last one possibly shorter.
    pub fn new(start_day: i64, end_day: i64, interval_days: i64) -> Result<Self> {
        if interval_days <= 0 {
            return Err(Error::Grid(format!(
                "interval length must be positive, got {interval_days}"
            )));
        }
        if end_day <= start_day {
            return Err(Error::Grid(format!(
                "end day {end_day} must be after start day {start_day}"
            )));
        }
        let span = end_day - start_day;
        let k = (span + interval_days - 1) / interval_days;
        let mut boundaries: Vec<i64> = (0..k).map(|i| start_day + i * interval_days).collect();
        boundaries.push(end_day);
        Ok(Self { boundaries })
    }

    pub fn from_boundaries(boundaries: Vec<i64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Grid("need at least two boundaries".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Grid("boundaries must be strictly increasing".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[i64] {
        &self.boundaries
    }

    pub fn start_day(&self) -> i64 {
        self.boundaries[0]
    }

    pub fn end_day(&self) -> i64 {
        *self.boundaries.last().unwrap()
    }

    /// Number of intervals `K`.
    pub fn n_intervals(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn n_days(&self) -> usize {
        (self.end_day() - self.start_day() + 1) as usize
    }

    pub fn contains(&self, day: i64) -> bool {
        day >= self.start_day() && day <= self.end_day()
    }

    fn out_of_grid(&self, day: i64) -> Error {
        Error::OutOfGrid {
            day,
            start: self.start_day(),
            end: self.end_day(),
        }
    }

    /// 0-based index `k` of the interval `(t_k, t_{k+1}]` containing `day`.
    pub fn interval_index(&self, day: i64) -> Result<usize> {
        if !self.contains(day) {
            return Err(self.out_of_grid(day));
        }
        if day == self.start_day() {
            return Ok(0);
        }
        // first boundary >= day is t_{k+1}
        let upper = self.boundaries.partition_point(|&b| b < day);
        Ok(upper - 1)
    }

    /// Same convention as [`interval_index`](Self::interval_index) for a real-valued time.
    pub fn interval_index_at(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.start_day() as f64, self.end_day() as f64);
        if !(t >= start && t <= end) {
            return Err(Error::OutOfGrid {
                day: t.floor() as i64,
                start: self.start_day(),
                end: self.end_day(),
            });
        }
        if t == start {
            return Ok(0);
        }
        let upper = self.boundaries.partition_point(|&b| (b as f64) < t);
        Ok(upper - 1)
    }

    /// Inclusive day range `(first, last)` whose days map to interval `k`.
    pub fn interval_days(&self, k: usize) -> (i64, i64) {
        let first = if k == 0 {
            self.boundaries[0]
        } else {
            self.boundaries[k] + 1
        };
        (first, self.boundaries[k + 1])
    }

    /// Length of interval `k` in days, `t_{k+1} - t_k`.
    pub fn interval_length(&self, k: usize) -> i64 {
        self.boundaries[k + 1] - self.boundaries[k]
    }

    /// Interval index of every day in the grid, indexed by `day - start_day`.
    pub fn day_intervals(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_days());
        for k in 0..self.n_intervals() {
            let (first, last) = self.interval_days(k);
            out.extend(std::iter::repeat_n(k, (last - first + 1) as usize));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_open_intervals() {
        let grid = CalendarGrid::from_boundaries(vec![0, 30, 60]).unwrap();
        assert_eq!(grid.interval_index(30).unwrap(), 0);
        assert_eq!(grid.interval_index(31).unwrap(), 1);
        assert_eq!(grid.interval_index(60).unwrap(), 1);
        assert_eq!(grid.interval_index(0).unwrap(), 0);
        assert!(matches!(grid.interval_index(61), Err(Error::OutOfGrid { day: 61, .. })));
        assert!(grid.interval_index(-1).is_err());
    }

    #[test]
    fn last_interval_may_be_shorter() {
        let grid = CalendarGrid::new(0, 100, 14).unwrap();
        assert_eq!(grid.n_intervals(), 8);
        assert_eq!(grid.interval_length(6), 14);
        assert_eq!(grid.interval_length(7), 2);
        assert_eq!(grid.end_day(), 100);

        let even = CalendarGrid::new(10, 70, 30).unwrap();
        assert_eq!(even.boundaries(), &[10, 40, 70]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(CalendarGrid::new(5, 5, 14).is_err());
        assert!(CalendarGrid::new(0, 10, 0).is_err());
        assert!(CalendarGrid::from_boundaries(vec![0, 10, 10]).is_err());
    }

    #[test]
    fn day_intervals_cover_every_day() {
        let grid = CalendarGrid::new(3, 50, 7).unwrap();
        let map = grid.day_intervals();
        assert_eq!(map.len(), grid.n_days());
        for (offset, &k) in map.iter().enumerate() {
            assert_eq!(grid.interval_index(3 + offset as i64).unwrap(), k);
        }
    }

    #[test]
    fn real_valued_index_matches_integer_days() {
        let grid = CalendarGrid::from_boundaries(vec![0, 30, 60]).unwrap();
        assert_eq!(grid.interval_index_at(29.99).unwrap(), 0);
        assert_eq!(grid.interval_index_at(30.0).unwrap(), 0);
        assert_eq!(grid.interval_index_at(30.01).unwrap(), 1);
        assert!(grid.interval_index_at(60.5).is_err());
    }

    proptest! {
        #[test]
        fn index_monotone_and_consistent(start in -50i64..50, span in 1i64..400, len in 1i64..40) {
            let grid = CalendarGrid::new(start, start + span, len).unwrap();
            let mut prev = 0;
            for day in grid.start_day()..=grid.end_day() {
                let k = grid.interval_index(day).unwrap();
                prop_assert!(k >= prev);
                prev = k;
            }
            for (k, &b) in grid.boundaries().iter().enumerate().skip(1) {
                prop_assert_eq!(grid.interval_index(b).unwrap(), k - 1);
            }
        }
    }
}
