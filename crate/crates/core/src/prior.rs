//! Priors for the baseline hazard and regression coefficients, including the
//! construction of relative-hazard priors from epidemic curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CalendarGrid, EpidemicCurve, SiteCurve, Status, StudyData};
use crate::error::{Error, Result};
use crate::hazard::{ThresholdConfig, ThresholdMode};

/// `2 * 1.96`: width of a 95% normal interval in standard deviations.
pub const CI95_WIDTH_SDS: f64 = 3.92;
pub const DEFAULT_SIGMA_REF: f64 = 5.0;
pub const DEFAULT_COEF_SD: f64 = 2.0;
pub const SMALL_COEF_SD: f64 = 0.5;
pub const CONTINUITY_CORRECTION: f64 = 0.5;
/// Constant prior sds for the relative hazards used in the simulation study.
pub const SIGMA_LADDER: [f64; 4] = [0.25, 1.0, 2.5, 5.0];

/// Prior on one scalar coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefPrior {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Normal restricted to `(-inf, 0]` and renormalized.
    NormalUpperZero {
        mean: f64,
        sd: f64,
    },
    /// Not sampled; held at `value`.
    Fixed {
        value: f64,
    },
}

impl CoefPrior {
    pub fn normal(mean: f64, sd: f64) -> Self {
        CoefPrior::Normal { mean, sd }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, CoefPrior::Fixed { .. })
    }

    /// Prior mean for free coefficients, the held value for fixed ones.
    pub fn center(&self) -> f64 {
        match *self {
            CoefPrior::Normal { mean, .. } => mean,
            CoefPrior::NormalUpperZero { mean, sd } => mean.min(-0.1 * sd),
            CoefPrior::Fixed { value } => value,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            CoefPrior::Normal { mean, sd } | CoefPrior::NormalUpperZero { mean, sd } => {
                if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                    return Err(Error::Prior(format!("{what}: need finite mean and sd > 0")));
                }
            }
            CoefPrior::Fixed { value } => {
                if !value.is_finite() {
                    return Err(Error::Prior(format!("{what}: fixed value must be finite")));
                }
            }
        }
        Ok(())
    }
}

/// Prior on one site's baseline hazard: `log h_ref ~ N(mu_ref, sigma_ref^2)` and
/// `log r_k ~ N(mu_r[k], sigma_r[k]^2)` for `k != ref_interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePrior {
    pub site: String,
    pub ref_interval: usize,
    pub mu_ref: f64,
    pub sigma_ref: f64,
    pub mu_r: Vec<f64>,
    pub sigma_r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub sites: Vec<SitePrior>,
    /// One per variant; the first must be `Fixed { value: 0 }`.
    pub alpha: Vec<CoefPrior>,
    pub gamma: Vec<CoefPrior>,
    /// Empty unless a threshold is used.
    pub gamma_t: Vec<CoefPrior>,
    pub beta: Vec<CoefPrior>,
    pub threshold: Option<UniformPrior>,
}

impl PriorSpec {
    pub fn ref_intervals(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.ref_interval).collect()
    }

    /// Check dimensions and support against a study and threshold configuration.
    pub fn validate(&self, data: &StudyData, threshold: &ThresholdConfig) -> Result<()> {
        let fail = |m: String| Err(Error::Prior(m));
        let k = data.grid().n_intervals();
        if self.sites.len() != data.n_sites() {
            return fail(format!(
                "expected {} site priors, found {}",
                data.n_sites(),
                self.sites.len()
            ));
        }
        for (sp, label) in self.sites.iter().zip(data.sites()) {
            if &sp.site != label {
                return fail(format!("site prior `{}` where `{label}` was expected", sp.site));
            }
            if sp.mu_r.len() != k || sp.sigma_r.len() != k {
                return fail(format!("site `{label}`: expected {k} relative-hazard priors"));
            }
            if sp.ref_interval >= k {
                return fail(format!(
                    "site `{label}`: reference interval {} out of range",
                    sp.ref_interval
                ));
            }
            if sp.mu_r[sp.ref_interval] != 0.0 {
                return fail(format!("site `{label}`: mu_r at the reference interval must be 0"));
            }
            let sds_ok =
                sp.sigma_ref > 0.0 && sp.sigma_ref.is_finite() && sp.sigma_r.iter().all(|s| *s > 0.0 && s.is_finite());
            if !sds_ok || !sp.mu_ref.is_finite() || sp.mu_r.iter().any(|m| !m.is_finite()) {
                return fail(format!("site `{label}`: need finite means and sds > 0"));
            }
        }
        let v = data.n_variants();
        if self.alpha.len() != v || self.gamma.len() != v {
            return fail(format!("expected alpha and gamma priors for {v} variants"));
        }
        if self.alpha[0] != (CoefPrior::Fixed { value: 0.0 }) {
            return fail("alpha of the reference variant must be fixed at 0".into());
        }
        let n_gamma_t = if threshold.has_threshold() { v } else { 0 };
        if self.gamma_t.len() != n_gamma_t {
            return fail(format!("expected {n_gamma_t} gamma_t priors"));
        }
        if self.beta.len() != data.covariates().len() {
            return fail(format!("expected {} beta priors", data.covariates().len()));
        }
        let coefs = [
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("gamma_t", &self.gamma_t),
            ("beta", &self.beta),
        ];
        for (name, list) in coefs {
            for (j, p) in list.iter().enumerate() {
                p.validate(&format!("{name}[{j}]"))?;
                if matches!(p, CoefPrior::NormalUpperZero { .. })
                    && (name != "gamma" || threshold.mode != ThresholdMode::Estimate)
                {
                    return fail(format!(
                        "{name}[{j}]: upper-zero truncation is only available for gamma when estimating a threshold"
                    ));
                }
            }
        }
        match (threshold.mode, self.threshold) {
            (ThresholdMode::Estimate, Some(u)) => {
                if !(u.lower < u.upper) {
                    return fail("threshold prior needs lower < upper".into());
                }
                Ok(())
            }
            (ThresholdMode::Estimate, None) => fail("threshold estimation needs a uniform prior".into()),
            (_, Some(_)) => fail("threshold prior given without threshold estimation".into()),
            (_, None) => Ok(()),
        }
    }
}

/// Infections and person-days per site and interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalExposure {
    pub events: Vec<Vec<f64>>,
    pub person_days: Vec<Vec<f64>>,
}

/// Day to which an infection is attributed: `T` for events, the floor of the
/// midpoint of `(L, R]` for interval-censored infections.
fn attributed_day(s: &crate::data::Subject) -> Option<i64> {
    match s.status {
        Status::Event => Some(s.time_lower),
        Status::IntervalCensored => {
            let upper = s.time_upper.expect("validated interval");
            Some((s.time_lower + upper).div_euclid(2))
        }
        Status::RightCensored => None,
    }
}

/// Count infections and at-risk person-days per site and interval.
///
/// Day `d` of follow-up covers `(d-1, d]`; interval-censored subjects
/// contribute person-time up to their attributed infection day.
pub fn interval_exposure(data: &StudyData) -> Result<IntervalExposure> {
    let grid = data.grid();
    let k = grid.n_intervals();
    let mut events = vec![vec![0.0; k]; data.n_sites()];
    let mut person_days = vec![vec![0.0; k]; data.n_sites()];
    let day_interval = grid.day_intervals();
    for s in data.subjects() {
        let end = attributed_day(s).unwrap_or(s.time_lower);
        for d in s.enroll_day + 1..=end {
            person_days[s.site][day_interval[(d - grid.start_day()) as usize]] += 1.0;
        }
        if let Some(d) = attributed_day(s) {
            events[s.site][grid.interval_index(d)?] += 1.0;
        }
    }
    Ok(IntervalExposure { events, person_days })
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per site, the interval with the most observed infections, ties to the
/// earliest. Sites without infections fall back to the interval with the
/// most person-days and log a warning.
pub fn select_reference_interval(data: &StudyData) -> Result<Vec<usize>> {
    let exposure = interval_exposure(data)?;
    data.sites()
        .iter()
        .enumerate()
        .map(|(s, label)| {
            let events = &exposure.events[s];
            if events.iter().any(|e| *e > 0.0) {
                return Ok(argmax_first(events));
            }
            let pd = &exposure.person_days[s];
            if pd.iter().all(|p| *p == 0.0) {
                return Err(Error::Prior(format!("site `{label}` has no follow-up in any interval")));
            }
            let k = argmax_first(pd);
            log::warn!("site `{label}` has no infections; reference interval {k} chosen by person-days");
            Ok(k)
        })
        .collect()
}

/// How the relative-hazard prior sds are set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    /// `scale * sqrt(sd_k^2 + sd_ref^2)` with `sd_k = (log U_k - log L_k) / 3.92`
    /// from the summed curve bounds of each interval.
    FromBounds {
        scale: f64,
    },
    Constant {
        sd: f64,
    },
}

/// Curve totals over `(t_k, t_{k+1}]` for every interval.
fn interval_totals(curve: &SiteCurve, grid: &CalendarGrid, label: &str) -> Result<Vec<CurveDay3>> {
    (0..grid.n_intervals())
        .map(|k| {
            let b = grid.boundaries();
            let mut total = CurveDay3::default();
            for d in b[k] + 1..=b[k + 1] {
                let day = curve
                    .get(d)
                    .ok_or_else(|| Error::Prior(format!("epidemic curve for `{label}` does not cover day {d}")))?;
                total.mean += day.mean;
                total.lower = total.lower.zip(day.lower).map(|(a, b)| a + b);
                total.upper = total.upper.zip(day.upper).map(|(a, b)| a + b);
            }
            Ok(total)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct CurveDay3 {
    mean: f64,
    lower: Option<f64>,
    upper: Option<f64>,
}

impl Default for CurveDay3 {
    fn default() -> Self {
        Self {
            mean: 0.0,
            lower: Some(0.0),
            upper: Some(0.0),
        }
    }
}

/// `(mu_r, sigma_r)` for one site from its epidemic curve.
pub fn site_relative_prior(
    curve: &SiteCurve,
    label: &str,
    grid: &CalendarGrid,
    ref_interval: usize,
    sigma: SigmaSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let totals = interval_totals(curve, grid, label)?;
    for (k, t) in totals.iter().enumerate() {
        if !(t.mean > 0.0) {
            return Err(Error::Prior(format!(
                "site `{label}`: epidemic curve total is zero in interval {k}"
            )));
        }
    }
    let c_ref = totals[ref_interval].mean;
    let mu_r: Vec<f64> = totals
        .iter()
        .enumerate()
        .map(|(k, t)| if k == ref_interval { 0.0 } else { (t.mean / c_ref).ln() })
        .collect();
    let sigma_r = match sigma {
        SigmaSpec::Constant { sd } => vec![sd; totals.len()],
        SigmaSpec::FromBounds { scale } => {
            let sd_hat = |k: usize| -> Result<f64> {
                let t = totals[k];
                match (t.lower, t.upper) {
                    (Some(lo), Some(hi)) if lo > 0.0 => Ok((hi.ln() - lo.ln()) / CI95_WIDTH_SDS),
                    (Some(_), Some(_)) => Err(Error::Prior(format!(
                        "site `{label}`: lower bound total is zero in interval {k}"
                    ))),
                    _ => Err(Error::Prior(format!(
                        "site `{label}`: epidemic curve lacks bounds in interval {k}"
                    ))),
                }
            };
            let sd_ref = sd_hat(ref_interval)?;
            (0..totals.len())
                .map(|k| Ok(scale * (sd_hat(k)?.powi(2) + sd_ref.powi(2)).sqrt()))
                .collect::<Result<_>>()?
        }
    };
    Ok((mu_r, sigma_r))
}

/// Relative-hazard priors for every site, in `sites` order.
pub fn curve_to_relative_prior(
    curve: &EpidemicCurve,
    sites: &[String],
    grid: &CalendarGrid,
    ref_intervals: &[usize],
    sigma: SigmaSpec,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    sites
        .iter()
        .zip(ref_intervals)
        .map(|(label, &k)| site_relative_prior(curve.site(label)?, label, grid, k, sigma))
        .collect()
}

/// `mu_ref = log(events / person-days)` in each site's reference interval,
/// with 0.5 events substituted when none were observed.
pub fn reference_rate_prior(data: &StudyData, ref_intervals: &[usize], sigma_ref: f64) -> Result<Vec<(f64, f64)>> {
    let exposure = interval_exposure(data)?;
    data.sites()
        .iter()
        .enumerate()
        .map(|(s, label)| {
            let k = ref_intervals[s];
            let pd = exposure.person_days[s][k];
            if pd <= 0.0 {
                return Err(Error::Prior(format!(
                    "site `{label}` has no person-days in reference interval {k}"
                )));
            }
            let events = exposure.events[s][k];
            let events = if events > 0.0 { events } else { CONTINUITY_CORRECTION };
            Ok(((events / pd).ln(), sigma_ref))
        })
        .collect()
}

/// Priors on everything except the baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPriors {
    pub alpha: Vec<CoefPrior>,
    pub gamma: Vec<CoefPrior>,
    pub gamma_t: Vec<CoefPrior>,
    pub beta: Vec<CoefPrior>,
    pub threshold: Option<UniformPrior>,
}

impl CoefficientPriors {
    /// `N(0, sd)` on every free coefficient, alpha of the reference variant
    /// fixed at 0, and a uniform threshold prior over the configured bounds.
    pub fn weakly_informative(n_variants: usize, n_covariates: usize, threshold: &ThresholdConfig, sd: f64) -> Self {
        let mut alpha = vec![CoefPrior::normal(0.0, sd); n_variants];
        alpha[0] = CoefPrior::Fixed { value: 0.0 };
        Self {
            alpha,
            gamma: vec![CoefPrior::normal(0.0, sd); n_variants],
            gamma_t: if threshold.has_threshold() {
                vec![CoefPrior::normal(0.0, sd); n_variants]
            } else {
                vec![]
            },
            beta: vec![CoefPrior::normal(0.0, sd); n_covariates],
            threshold: match threshold.mode {
                ThresholdMode::Estimate => threshold.bounds.map(|(lower, upper)| UniformPrior { lower, upper }),
                _ => None,
            },
        }
    }
}

/// Curve-informed prior: reference intervals from the data, relative hazards
/// from the curve, reference rates from the data.
pub fn build_prior(
    data: &StudyData,
    curve: &EpidemicCurve,
    sigma: SigmaSpec,
    sigma_ref: f64,
    coefficients: CoefficientPriors,
) -> Result<PriorSpec> {
    let refs = select_reference_interval(data)?;
    let relative = curve_to_relative_prior(curve, data.sites(), data.grid(), &refs, sigma)?;
    let rates = reference_rate_prior(data, &refs, sigma_ref)?;
    let sites = data
        .sites()
        .iter()
        .zip(refs)
        .zip(relative.into_iter().zip(rates))
        .map(|((label, k), ((mu_r, sigma_r), (mu_ref, sigma_ref)))| SitePrior {
            site: label.clone(),
            ref_interval: k,
            mu_ref,
            sigma_ref,
            mu_r,
            sigma_r,
        })
        .collect();
    Ok(assemble(sites, coefficients))
}

fn assemble(sites: Vec<SitePrior>, c: CoefficientPriors) -> PriorSpec {
    PriorSpec {
        sites,
        alpha: c.alpha,
        gamma: c.gamma,
        gamma_t: c.gamma_t,
        beta: c.beta,
        threshold: c.threshold,
    }
}

/// Curve of the wrong site, shifted by `day_shift` days, for every study site.
///
/// `shifted(d) = source(d - day_shift)`, so a positive shift uses curve values
/// from `day_shift` days earlier.
pub fn misspecified_curve(
    curve: &EpidemicCurve,
    curve_map: &BTreeMap<String, String>,
    sites: &[String],
    day_shift: i64,
) -> Result<EpidemicCurve> {
    let mut out = EpidemicCurve::default();
    for label in sites {
        let source = curve_map.get(label).map(String::as_str).unwrap_or(label);
        out.sites.insert(label.clone(), curve.site(source)?.shifted(day_shift));
    }
    Ok(out)
}

/// As [`build_prior`], with each site's curve replaced per [`misspecified_curve`].
pub fn misspecified_prior(
    data: &StudyData,
    curve: &EpidemicCurve,
    curve_map: &BTreeMap<String, String>,
    day_shift: i64,
    sigma: SigmaSpec,
    sigma_ref: f64,
    coefficients: CoefficientPriors,
) -> Result<PriorSpec> {
    let wrong = misspecified_curve(curve, curve_map, data.sites(), day_shift)?;
    build_prior(data, &wrong, sigma, sigma_ref, coefficients)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlatMean {
    Zero,
    /// Mean over intervals of the curve-informed `mu_r` of the site.
    SiteMean,
}

/// Flat relative-hazard prior derived from a curve-informed one: constant
/// `mu_r` (0 or the site mean) and constant `sd`. `mu_ref`, when given,
/// replaces every site's reference-rate mean.
pub fn flat_prior(base: &PriorSpec, mode: FlatMean, sd: f64, mu_ref: Option<f64>) -> PriorSpec {
    let mut out = base.clone();
    for sp in &mut out.sites {
        let k = sp.mu_r.len();
        let level = match mode {
            FlatMean::Zero => 0.0,
            FlatMean::SiteMean => sp.mu_r.iter().sum::<f64>() / k as f64,
        };
        sp.mu_r = vec![level; k];
        sp.mu_r[sp.ref_interval] = 0.0;
        sp.sigma_r = vec![sd; k];
        if let Some(m) = mu_ref {
            sp.mu_ref = m;
        }
    }
    out
}

pub fn save_priors(path: &std::path::Path, priors: &PriorSpec) -> Result<()> {
    let text = serde_json::to_string_pretty(priors)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_priors(path: &std::path::Path) -> Result<PriorSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
