//! Synthetic staggered-enrollment trials and the prior-strength replication study.

mod curves;
mod event_time;
mod replication;

pub use curves::{curve_origin, synthetic_curves, CURVE_FIRST_DAY, CURVE_LAST_DAY, CURVE_LOG_HALF_WIDTH};
pub use event_time::{sample_event_time, HazardPath};
pub use replication::{
    run_replication_study, write_cells, write_fits, CellSummary, FitRecord, PriorCell, PriorKind, ReplicationConfig,
    ReplicationResults,
};

use chrono::NaiveDate;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{io, CalendarGrid, EpidemicCurve, Status, StepPath, StudyData, Subject};
use crate::error::{Error, Result};
use crate::hazard::{ModelParameters, ThresholdConfig};

pub const SIM_VARIANT: &str = "all";
pub const SIM_COVARIATE: &str = "z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmWindow {
    pub label: String,
    /// Biomarker value of the arm when `biomarker` is `arm`.
    pub x: f64,
    pub enroll_start: NaiveDate,
    pub enroll_end: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Biomarker {
    /// `X` is the arm's value.
    Arm,
    /// `X ~ N(mean, sd)` independent of the arm.
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTruth {
    pub value: f64,
    pub gamma_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub origin: NaiveDate,
    /// Arms are assigned with equal probability. The first arm is the
    /// reference for the attack-rate calibration.
    pub arms: Vec<ArmWindow>,
    pub sites: Vec<String>,
    pub gamma: f64,
    pub beta: f64,
    /// `P(Z = 1)`.
    pub z_probability: f64,
    pub biomarker: Biomarker,
    pub threshold: Option<ThresholdTruth>,
    /// Visit days after enrollment, starting at 0 and ending at `follow_up_days`.
    pub visit_days: Vec<i64>,
    pub follow_up_days: i64,
    pub interval_censor_fraction: f64,
    pub interval_length_days: i64,
    /// Expected reference-arm attack rate over follow-up used to calibrate `hazard_scale`.
    pub target_attack_rate: f64,
    /// Baseline hazard per unit of curve value; calibrated when absent.
    pub hazard_scale: Option<f64>,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_subjects: 500,
            origin: curve_origin(),
            arms: vec![
                ArmWindow {
                    label: "placebo".into(),
                    x: 0.0,
                    enroll_start: date(2021, 3, 1),
                    enroll_end: date(2021, 9, 1),
                },
                ArmWindow {
                    label: "vaccine".into(),
                    x: 1.0,
                    enroll_start: date(2021, 7, 1),
                    enroll_end: date(2021, 12, 1),
                },
            ],
            sites: vec!["GA".into(), "NY".into(), "WA".into()],
            gamma: -1.0,
            beta: -0.5,
            z_probability: 0.5,
            biomarker: Biomarker::Arm,
            threshold: None,
            visit_days: vec![0, 60, 120, 180],
            follow_up_days: 180,
            interval_censor_fraction: 0.2,
            interval_length_days: 14,
            target_attack_rate: 0.3,
            hazard_scale: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.arms.is_empty() {
            return bad("at least one arm is required");
        }
        if self.sites.is_empty() {
            return bad("at least one site is required");
        }
        if self.arms.iter().any(|a| a.enroll_end < a.enroll_start) {
            return bad("enrollment window ends before it starts");
        }
        if self.follow_up_days <= 0 || self.interval_length_days <= 0 {
            return bad("follow-up and interval length must be positive");
        }
        let v = &self.visit_days;
        if v.first() != Some(&0) || v.last() != Some(&self.follow_up_days) || v.windows(2).any(|w| w[0] >= w[1]) {
            return bad("visit days must increase from 0 to follow_up_days");
        }
        for (name, p) in [
            ("interval_censor_fraction", self.interval_censor_fraction),
            ("z_probability", self.z_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.target_attack_rate > 0.0 && self.target_attack_rate < 1.0) {
            return bad("target_attack_rate must lie in (0, 1)");
        }
        if let Biomarker::Normal { sd, .. } = self.biomarker {
            if !(sd > 0.0) {
                return bad("biomarker sd must be positive");
            }
        }
        if self.hazard_scale.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("hazard_scale must be positive");
        }
        Ok(())
    }

    fn day(&self, d: NaiveDate) -> i64 {
        io::day_of(d, self.origin)
    }

    /// Grid from the first enrollment to the end of the last follow-up,
    /// rounded up to whole intervals.
    pub fn grid(&self) -> Result<CalendarGrid> {
        let start = self.arms.iter().map(|a| self.day(a.enroll_start)).min().unwrap_or(0);
        let last = self.arms.iter().map(|a| self.day(a.enroll_end)).max().unwrap_or(0) + self.follow_up_days;
        let len = self.interval_length_days;
        let k = (last - start + len - 1) / len;
        CalendarGrid::new(start, start + k * len, len)
    }
}

/// A simulation config resolved against its epidemic curve. The true baseline
/// hazard of a site on day `d` is `hazard_scale * curve(d)`.
#[derive(Debug, Clone)]
pub struct TrialDesign {
    config: SimConfig,
    grid: CalendarGrid,
    /// Mean daily curve value per site and interval.
    interval_means: Vec<Vec<f64>>,
    /// Daily curve values per site, indexed by `day - grid.start_day()`.
    daily_means: Vec<Vec<f64>>,
    scale: f64,
}

impl TrialDesign {
    pub fn new(config: &SimConfig, curve: &EpidemicCurve) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let b = grid.boundaries().to_vec();
        let mut interval_means = Vec::with_capacity(config.sites.len());
        for label in &config.sites {
            let sc = curve.site(label)?;
            let means = (0..grid.n_intervals())
                .map(|k| {
                    let mut total = 0.0;
                    for d in b[k] + 1..=b[k + 1] {
                        let v = sc
                            .get(d)
                            .ok_or_else(|| Error::Config(format!("curve for `{label}` does not cover day {d}")))?;
                        total += v.mean;
                    }
                    if !(total > 0.0) {
                        return Err(Error::Config(format!("curve for `{label}` is zero in interval {k}")));
                    }
                    Ok(total / (b[k + 1] - b[k]) as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            interval_means.push(means);
        }
        let daily_means = config
            .sites
            .iter()
            .map(|label| {
                let sc = curve.site(label)?;
                (grid.start_day()..=grid.end_day())
                    .map(|d| {
                        sc.get(d)
                            .map(|v| v.mean)
                            .ok_or_else(|| Error::Config(format!("curve for `{label}` does not cover day {d}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut design = Self {
            config: config.clone(),
            grid,
            interval_means,
            daily_means,
            scale: 1.0,
        };
        design.scale = match config.hazard_scale {
            Some(c) => c,
            None => design.calibrate_scale()?,
        };
        design.config.hazard_scale = Some(design.scale);
        Ok(design)
    }

    /// The config with `hazard_scale` filled in.
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn grid(&self) -> &CalendarGrid {
        &self.grid
    }

    pub fn hazard_scale(&self) -> f64 {
        self.scale
    }

    /// True baseline hazard of `site` on `day`.
    pub fn baseline(&self, site: usize, day: i64) -> f64 {
        self.scale * self.daily_means[site][(day - self.grid.start_day()) as usize]
    }

    fn cumulative_baseline(&self, site: usize, enroll: i64) -> f64 {
        (enroll + 1..=enroll + self.config.follow_up_days)
            .map(|d| self.daily_means[site][(d - self.grid.start_day()) as usize])
            .sum()
    }

    /// Expected attack rate over follow-up in the first arm at hazard scale `c`,
    /// with the biomarker term at 0.
    pub fn expected_attack_rate(&self, c: f64) -> f64 {
        let cfg = &self.config;
        let arm = &cfg.arms[0];
        let (lo, hi) = (cfg.day(arm.enroll_start), cfg.day(arm.enroll_end));
        let p = cfg.z_probability;
        let mut total = 0.0;
        for s in 0..cfg.sites.len() {
            for e in lo..=hi {
                let h = c * self.cumulative_baseline(s, e);
                total += (1.0 - p) * -(-h).exp_m1() + p * -(-h * cfg.beta.exp()).exp_m1();
            }
        }
        total / (cfg.sites.len() as f64 * (hi - lo + 1) as f64)
    }

    fn calibrate_scale(&self) -> Result<f64> {
        let target = self.config.target_attack_rate;
        let (mut lo, mut hi) = (-60.0_f64, 20.0_f64);
        if self.expected_attack_rate(hi.exp()) < target {
            return Err(Error::Config("attack rate target is unreachable".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.expected_attack_rate(mid.exp()) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// Piecewise-constant approximation of the truth relative to the given
    /// reference intervals: each interval carries its mean daily baseline.
    pub fn true_parameters(&self, ref_interval: &[usize]) -> ModelParameters {
        let cfg = &self.config;
        let threshold = match cfg.threshold {
            Some(t) => ThresholdConfig::estimate(t.value, t.value - 1.0, t.value + 1.0),
            None => ThresholdConfig::none(),
        };
        let mut p = ModelParameters::zeros(ref_interval.to_vec(), self.grid.n_intervals(), 1, 1, &threshold);
        for (s, m) in self.interval_means.iter().enumerate() {
            let r = ref_interval[s];
            p.log_h_ref[s] = (self.scale * m[r]).ln();
            for (k, v) in m.iter().enumerate() {
                p.log_r[s][k] = if k == r { 0.0 } else { (v / m[r]).ln() };
            }
        }
        p.gamma[0] = cfg.gamma;
        p.beta[0] = cfg.beta;
        if let Some(t) = cfg.threshold {
            p.gamma_t[0] = t.gamma_t;
            p.x_threshold = Some(t.value);
        }
        p
    }

    fn linear_predictor(&self, x: f64, z: f64) -> f64 {
        let cfg = &self.config;
        let bx = match cfg.threshold {
            None => cfg.gamma * x,
            Some(t) if x > t.value => cfg.gamma * x + t.gamma_t,
            Some(_) => 0.0,
        };
        bx + cfg.beta * z
    }

    /// One synthetic trial. The draw order per subject is arm, enrollment day,
    /// site, `Z`, `X` (when random), event time; interval-censored events are
    /// then chosen as a simple random sample of the events.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StudyData> {
        let cfg = &self.config;
        let n = cfg.n_subjects;
        let width = n.max(1).to_string().len();
        let normal = match cfg.biomarker {
            Biomarker::Normal { mean, sd } => Some(Normal::new(mean, sd).map_err(|e| Error::Config(e.to_string()))?),
            Biomarker::Arm => None,
        };
        let mut subjects = Vec::with_capacity(n);
        let mut events = Vec::new();
        for i in 0..n {
            let arm = &cfg.arms[rng.random_range(0..cfg.arms.len())];
            let enroll = rng.random_range(cfg.day(arm.enroll_start)..=cfg.day(arm.enroll_end));
            let site = rng.random_range(0..cfg.sites.len());
            let z = if rng.random_bool(cfg.z_probability) { 1.0 } else { 0.0 };
            let x = match &normal {
                Some(d) => d.sample(rng),
                None => arm.x,
            };
            let rel = self.linear_predictor(x, z).exp();
            let rates = (enroll + 1..=enroll + cfg.follow_up_days)
                .map(|d| self.baseline(site, d) * rel)
                .collect();
            let path = HazardPath::daily(enroll, rates)?;
            let (status, time_lower) = match sample_event_time(&path, enroll as f64, rng) {
                Some(t) => {
                    events.push(i);
                    (
                        Status::Event,
                        (t.ceil() as i64).clamp(enroll + 1, enroll + cfg.follow_up_days),
                    )
                }
                None => (Status::RightCensored, enroll + cfg.follow_up_days),
            };
            subjects.push(Subject {
                id: format!("p{:0width$}", i + 1),
                site,
                enroll_day: enroll,
                status,
                time_lower,
                time_upper: None,
                variant: None,
                x: StepPath::constant(x),
                z: vec![StepPath::constant(z)],
            });
        }
        let n_ic = (cfg.interval_censor_fraction * events.len() as f64).round() as usize;
        for j in index::sample(rng, events.len(), n_ic) {
            let s = &mut subjects[events[j]];
            let since = s.time_lower - s.enroll_day;
            let v = cfg.visit_days.iter().position(|&v| v >= since).unwrap();
            s.status = Status::IntervalCensored;
            s.time_upper = Some(s.enroll_day + cfg.visit_days[v]);
            s.time_lower = s.enroll_day + cfg.visit_days[v - 1];
        }
        StudyData::new(
            subjects,
            cfg.sites.clone(),
            vec![SIM_VARIANT.into()],
            vec![SIM_COVARIATE.into()],
            self.grid.clone(),
            cfg.origin,
        )
    }
}

/// Resolve `config` against `curve` and simulate one trial.
pub fn simulate_trial<R: Rng + ?Sized>(config: &SimConfig, curve: &EpidemicCurve, rng: &mut R) -> Result<StudyData> {
    TrialDesign::new(config, curve)?.simulate(rng)
}

/// Trial `index` of a seeded series: ChaCha8 stream `index` of `seed`.
pub fn simulate_seeded(design: &TrialDesign, seed: u64, index: u64) -> Result<StudyData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    design.simulate(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(n: usize) -> TrialDesign {
        let cfg = SimConfig {
            n_subjects: n,
            ..Default::default()
        };
        TrialDesign::new(&cfg, &synthetic_curves()).unwrap()
    }

    #[test]
    fn default_grid_has_equal_intervals() {
        let g = SimConfig::default().grid().unwrap();
        assert_eq!(g.start_day(), 59);
        assert!(g.end_day() >= 334 + 180);
        assert!((0..g.n_intervals()).all(|k| g.interval_length(k) == 14));
    }

    #[test]
    fn calibration_hits_target() {
        let d = design(10);
        assert!((d.expected_attack_rate(d.hazard_scale()) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn simulation_is_reproducible() {
        let d = design(300);
        let a = simulate_seeded(&d, 9, 2).unwrap();
        let b = simulate_seeded(&d, 9, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_seeded(&d, 9, 3).unwrap());
    }

    #[test]
    fn interval_censoring_brackets_visits() {
        let d = design(2000);
        let data = simulate_seeded(&d, 4, 0).unwrap();
        let mut n_ic = 0;
        let mut n_ev = 0;
        for s in data.subjects() {
            match s.status {
                Status::IntervalCensored => {
                    n_ic += 1;
                    let l = s.time_lower - s.enroll_day;
                    let r = s.time_upper.unwrap() - s.enroll_day;
                    let visits = &d.config().visit_days;
                    let j = visits.iter().position(|&v| v == l).unwrap();
                    assert_eq!(visits[j + 1], r);
                }
                Status::Event => {
                    n_ev += 1;
                    assert!(s.time_lower > s.enroll_day && s.time_lower <= s.enroll_day + 180);
                }
                Status::RightCensored => assert_eq!(s.time_lower, s.enroll_day + 180),
            }
        }
        let frac = n_ic as f64 / (n_ic + n_ev) as f64;
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
    }

    #[test]
    fn no_interval_censoring_when_fraction_is_zero() {
        let cfg = SimConfig {
            n_subjects: 500,
            interval_censor_fraction: 0.0,
            ..Default::default()
        };
        let data = simulate_trial(&cfg, &synthetic_curves(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(data.subjects().iter().all(|s| s.status != Status::IntervalCensored));
    }

    #[test]
    fn true_parameters_average_baseline() {
        let d = design(10);
        let refs = vec![3, 10, 20];
        let p = d.true_parameters(&refs);
        for (s, &r) in refs.iter().enumerate() {
            for k in [0, 5, 30] {
                let b = d.grid().boundaries();
                let days = b[k] + 1..=b[k + 1];
                let avg = days.clone().map(|day| d.baseline(s, day)).sum::<f64>() / days.count() as f64;
                let h = (p.log_h_ref[s] + p.log_r[s][k]).exp();
                assert!((h / avg - 1.0).abs() < 1e-12);
            }
            assert_eq!(p.log_r[s][r], 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let c = SimConfig {
            interval_censor_fraction: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SimConfig {
            visit_days: vec![0, 60, 120],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c: SimConfig = serde_json::from_str(r#"{"n_subjects": 20}"#).unwrap();
        assert_eq!(c.arms.len(), 2);
        assert!(serde_json::from_str::<SimConfig>(r#"{"n_subject": 20}"#).is_err());
    }
}
