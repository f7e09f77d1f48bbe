//! Domain types for calendar-time survival data and their file formats.
//!
//! All times are integer days counted from a configured origin date. A
//! piecewise-constant quantity "at day `d`" is its value on the continuous
//! range `(d - 1, d]`, so integrals over `(a, b]` are sums over days
//! `a + 1 ..= b`.

mod grid;
pub mod io;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{CalendarGrid, DEFAULT_INTERVAL_DAYS};

/// Piecewise-constant real-valued path over days.
///
/// Piece `j` holds `values[j]` from day `starts[j]` until the next start; days
/// before the first start take the first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPath {
    starts: Vec<i64>,
    values: Vec<f64>,
}

impl StepPath {
    pub fn constant(value: f64) -> Self {
        Self {
            starts: vec![i64::MIN],
            values: vec![value],
        }
    }

    pub fn new(pieces: Vec<(i64, f64)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Data("step path needs at least one piece".into()));
        }
        if pieces.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data("step path change days must be strictly increasing".into()));
        }
        if pieces.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::Data("step path values must be finite".into()));
        }
        let (starts, values) = pieces.into_iter().unzip();
        Ok(Self { starts, values })
    }

    pub fn value_at(&self, day: i64) -> f64 {
        let idx = self.starts.partition_point(|&s| s <= day);
        self.values[idx.saturating_sub(1)]
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    /// Index of the piece in effect at `day`.
    pub fn piece_at(&self, day: i64) -> usize {
        self.starts.partition_point(|&s| s <= day).saturating_sub(1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Event,
    RightCensored,
    IntervalCensored,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Event => "event",
            Status::RightCensored => "right_censored",
            Status::IntervalCensored => "interval_censored",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "event" => Some(Status::Event),
            "right_censored" => Some(Status::RightCensored),
            "interval_censored" => Some(Status::IntervalCensored),
            _ => None,
        }
    }

    pub fn is_infection(self) -> bool {
        !matches!(self, Status::RightCensored)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub site: usize,
    pub enroll_day: i64,
    pub status: Status,
    /// Event or censoring day `T`, or the left end `L` of a censoring interval.
    pub time_lower: i64,
    /// Right end `R` of a censoring interval.
    pub time_upper: Option<i64>,
    pub variant: Option<usize>,
    pub x: StepPath,
    pub z: Vec<StepPath>,
}

impl Subject {
    /// Last day the subject's hazard is needed for.
    pub fn follow_up_end(&self) -> i64 {
        self.time_upper.unwrap_or(self.time_lower)
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if self.enroll_day > self.time_lower {
            return Err(match self.status {
                Status::Event => "enrollment after event".into(),
                _ => "enrollment after censoring date".into(),
            });
        }
        match (self.status, self.time_upper) {
            (Status::IntervalCensored, None) => return Err("interval-censored subject needs an upper date".into()),
            (Status::IntervalCensored, Some(upper)) if upper < self.time_lower => {
                return Err("inverted censoring interval".into())
            }
            (Status::IntervalCensored, Some(upper)) if upper == self.time_lower => {
                return Err("empty censoring interval".into())
            }
            (Status::Event | Status::RightCensored, Some(_)) => {
                return Err("upper date is only allowed for interval-censored subjects".into())
            }
            _ => {}
        }
        if self.status == Status::RightCensored && self.time_lower == self.enroll_day {
            return Err("zero follow-up".into());
        }
        if self.variant.is_some() && !self.status.is_infection() {
            return Err("variant given for a subject without infection".into());
        }
        Ok(())
    }
}

/// Validated study: subjects sorted by id, with labels for sites, variants and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyData {
    subjects: Vec<Subject>,
    sites: Vec<String>,
    variants: Vec<String>,
    covariates: Vec<String>,
    grid: CalendarGrid,
    origin: NaiveDate,
}

impl StudyData {
    pub fn new(
        mut subjects: Vec<Subject>,
        sites: Vec<String>,
        variants: Vec<String>,
        covariates: Vec<String>,
        grid: CalendarGrid,
        origin: NaiveDate,
    ) -> Result<Self> {
        if variants.is_empty() {
            return Err(Error::Data("at least one variant is required".into()));
        }
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Data(format!("duplicate subject id `{}`", w[0].id)));
        }
        let mut per_site = vec![0usize; sites.len()];
        for s in &subjects {
            let fail = |msg: String| Error::Data(format!("subject `{}`: {msg}", s.id));
            if s.site >= sites.len() {
                return Err(fail(format!("site index {} out of range", s.site)));
            }
            if let Some(v) = s.variant {
                if v >= variants.len() {
                    return Err(fail(format!("variant index {v} out of range")));
                }
            }
            if s.z.len() != covariates.len() {
                return Err(fail(format!("{} covariates, expected {}", s.z.len(), covariates.len())));
            }
            s.validate().map_err(fail)?;
            for day in [s.enroll_day, s.follow_up_end()] {
                if !grid.contains(day) {
                    return Err(fail(format!(
                        "day {day} outside grid [{}, {}]",
                        grid.start_day(),
                        grid.end_day()
                    )));
                }
            }
            per_site[s.site] += 1;
        }
        if !subjects.is_empty() {
            if let Some(empty) = per_site.iter().position(|&n| n == 0) {
                return Err(Error::Data(format!("site `{}` has no subjects", sites[empty])));
            }
        }
        Ok(Self {
            subjects,
            sites,
            variants,
            covariates,
            grid,
            origin,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn variants(&self) -> &[String] {
        &self.variants
    }

    pub fn n_variants(&self) -> usize {
        self.variants.len()
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn grid(&self) -> &CalendarGrid {
        &self.grid
    }

    pub fn origin(&self) -> NaiveDate {
        self.origin
    }

    /// Whether any infection carries a recorded variant.
    pub fn variants_recorded(&self) -> bool {
        self.subjects.iter().any(|s| s.variant.is_some())
    }

    /// Copy with a different subject list, re-validated.
    pub fn with_subjects(&self, subjects: Vec<Subject>) -> Result<Self> {
        Self::new(
            subjects,
            self.sites.clone(),
            self.variants.clone(),
            self.covariates.clone(),
            self.grid.clone(),
            self.origin,
        )
    }
}

/// Relative proportions `pi_s^(v)(d)` of circulating variants on each grid day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMix {
    start_day: i64,
    n_days: usize,
    n_variants: usize,
    /// `props[site][(day - start_day) * n_variants + v]`
    props: Vec<Vec<f64>>,
}

pub const PROPORTION_TOLERANCE: f64 = 1e-6;

impl VariantMix {
    /// A single variant circulating everywhere (`pi = 1`).
    pub fn single(grid: &CalendarGrid, n_sites: usize) -> Self {
        Self {
            start_day: grid.start_day(),
            n_days: grid.n_days(),
            n_variants: 1,
            props: vec![vec![1.0; grid.n_days()]; n_sites],
        }
    }

    /// Dense daily proportions per site, laid out day-major with `n_variants` per day.
    pub fn from_dense(grid: &CalendarGrid, n_variants: usize, props: Vec<Vec<f64>>) -> Result<Self> {
        let n_days = grid.n_days();
        for (site, p) in props.iter().enumerate() {
            if p.len() != n_days * n_variants {
                return Err(Error::Data(format!(
                    "site {site}: expected {} proportions, got {}",
                    n_days * n_variants,
                    p.len()
                )));
            }
            for (d, day) in p.chunks(n_variants).enumerate() {
                if day.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Data(format!(
                        "site {site}, day {}: proportion outside [0, 1]",
                        grid.start_day() + d as i64
                    )));
                }
                let sum: f64 = day.iter().sum();
                if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
                    return Err(Error::Data(format!(
                        "site {site}, day {}: variant proportions sum to {}",
                        grid.start_day() + d as i64,
                        round6(sum)
                    )));
                }
            }
        }
        Ok(Self {
            start_day: grid.start_day(),
            n_days,
            n_variants,
            props,
        })
    }

    pub fn n_variants(&self) -> usize {
        self.n_variants
    }

    pub fn n_sites(&self) -> usize {
        self.props.len()
    }

    /// Proportions of all variants at `day`; panics outside the grid.
    pub fn day(&self, site: usize, day: i64) -> &[f64] {
        let offset = (day - self.start_day) as usize;
        assert!(offset < self.n_days, "day {day} outside variant mix");
        &self.props[site][offset * self.n_variants..(offset + 1) * self.n_variants]
    }

    pub fn proportion(&self, site: usize, variant: usize, day: i64) -> f64 {
        self.day(site, day)[variant]
    }

    pub fn start_day(&self) -> i64 {
        self.start_day
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }
}

pub(crate) fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// One day of an epidemic curve: estimated community infections with optional interval bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveDay {
    pub mean: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Contiguous daily curve for one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteCurve {
    pub first_day: i64,
    pub days: Vec<CurveDay>,
}

impl SiteCurve {
    pub fn last_day(&self) -> i64 {
        self.first_day + self.days.len() as i64 - 1
    }

    pub fn get(&self, day: i64) -> Option<&CurveDay> {
        if day < self.first_day {
            return None;
        }
        self.days.get((day - self.first_day) as usize)
    }

    /// The curve shifted so that `shifted(d) = self(d - shift)`.
    pub fn shifted(&self, shift: i64) -> SiteCurve {
        SiteCurve {
            first_day: self.first_day + shift,
            days: self.days.clone(),
        }
    }

    /// The curve with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SiteCurve {
        let scale = |d: &CurveDay| CurveDay {
            mean: d.mean * factor,
            lower: d.lower.map(|v| v * factor),
            upper: d.upper.map(|v| v * factor),
        };
        SiteCurve {
            first_day: self.first_day,
            days: self.days.iter().map(scale).collect(),
        }
    }
}

/// Daily epidemic curves keyed by site label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpidemicCurve {
    pub sites: BTreeMap<String, SiteCurve>,
}

impl EpidemicCurve {
    pub fn site(&self, label: &str) -> Result<&SiteCurve> {
        self.sites
            .get(label)
            .ok_or_else(|| Error::Data(format!("epidemic curve has no site `{label}`")))
    }
}
