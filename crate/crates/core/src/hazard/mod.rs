//! Variant-specific and overall hazards, cumulative hazards, survivor
//! functions and per-subject log-likelihood contributions.
//!
//! The variant-`v` hazard of subject `i` at site `s` on day `d` is
//!
//! ```text
//! h_i^(v)(d) = pi_s^(v)(d) * h_ref,s * r_s(d) * exp(alpha_v + g_v(X_i(d)) + Z_i(d) . beta)
//! ```
//!
//! where `g_v(x) = gamma_v * x` without a threshold, and
//! `g_v(x) = (gamma_v * x + gammaT_v) * 1{x > tau}` with threshold `tau`.
//! The overall hazard is the sum over variants.
//!
//! [`HazardModel`] evaluates everything day by day and is the reference
//! implementation. [`CompiledLikelihood`] precomputes per-subject exposure
//! weights and is what the samplers call.

mod compiled;

use serde::{Deserialize, Serialize};

use crate::data::{CalendarGrid, Status, StudyData, Subject, VariantMix};
use crate::error::{Error, Result};
use crate::math::log1m_exp_neg;
use crate::parallel::{self, Reduction};

pub use compiled::CompiledLikelihood;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    None,
    /// Threshold fixed at the assay's lower limit of detection.
    FixedLlod,
    /// Threshold is a parameter with a uniform prior on `bounds`.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    #[serde(default)]
    pub x_llod: Option<f64>,
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl ThresholdConfig {
    pub fn none() -> Self {
        Self {
            mode: ThresholdMode::None,
            x_llod: None,
            bounds: None,
        }
    }

    pub fn fixed_llod(x_llod: f64) -> Self {
        Self {
            mode: ThresholdMode::FixedLlod,
            x_llod: Some(x_llod),
            bounds: None,
        }
    }

    pub fn estimate(x_llod: f64, lower: f64, upper: f64) -> Self {
        Self {
            mode: ThresholdMode::Estimate,
            x_llod: Some(x_llod),
            bounds: Some((lower, upper)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != ThresholdMode::None && !self.x_llod.is_some_and(f64::is_finite) {
            return Err(Error::Config("threshold mode requires a finite x_llod".into()));
        }
        match (self.mode, self.bounds) {
            (ThresholdMode::Estimate, Some((lo, hi))) if lo < hi && lo.is_finite() && hi.is_finite() => Ok(()),
            (ThresholdMode::Estimate, _) => Err(Error::Config(
                "threshold estimation requires finite bounds with lower < upper".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn has_threshold(&self) -> bool {
        self.mode != ThresholdMode::None
    }

    /// The threshold in effect for the given parameters.
    pub fn tau(&self, params: &ModelParameters) -> Option<f64> {
        match self.mode {
            ThresholdMode::None => None,
            ThresholdMode::FixedLlod => self.x_llod,
            ThresholdMode::Estimate => params.x_threshold,
        }
    }
}

/// Model parameters `theta`.
///
/// Indices are 0-based. `log_r[s][ref_interval[s]]` is structurally zero and
/// `alpha[0]` is zero: variant 0 is the reference variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub log_h_ref: Vec<f64>,
    pub log_r: Vec<Vec<f64>>,
    pub ref_interval: Vec<usize>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Present (one per variant) iff a threshold is in use.
    pub gamma_t: Vec<f64>,
    pub beta: Vec<f64>,
    pub x_threshold: Option<f64>,
}

impl ModelParameters {
    /// All-zero parameters with the given shape; the threshold, if any, sits at `x_threshold`.
    pub fn zeros(
        ref_interval: Vec<usize>,
        n_intervals: usize,
        n_variants: usize,
        n_covariates: usize,
        threshold: &ThresholdConfig,
    ) -> Self {
        let n_sites = ref_interval.len();
        Self {
            log_h_ref: vec![0.0; n_sites],
            log_r: vec![vec![0.0; n_intervals]; n_sites],
            ref_interval,
            alpha: vec![0.0; n_variants],
            gamma: vec![0.0; n_variants],
            gamma_t: if threshold.has_threshold() {
                vec![0.0; n_variants]
            } else {
                vec![]
            },
            beta: vec![0.0; n_covariates],
            x_threshold: match threshold.mode {
                ThresholdMode::Estimate => threshold.bounds.map(|(lo, hi)| 0.5 * (lo + hi)),
                _ => None,
            },
        }
    }

    pub fn n_sites(&self) -> usize {
        self.log_h_ref.len()
    }

    pub fn n_variants(&self) -> usize {
        self.alpha.len()
    }

    pub fn offsets(&self) -> FlatOffsets {
        let n_sites = self.log_h_ref.len();
        let n_intervals = self.log_r.first().map_or(0, Vec::len);
        let v = self.alpha.len();
        let log_r = n_sites;
        let alpha = log_r + n_sites * n_intervals;
        let gamma = alpha + v;
        let gamma_t = gamma + v;
        let beta = gamma_t + self.gamma_t.len();
        FlatOffsets {
            log_h_ref: 0,
            log_r,
            alpha,
            gamma,
            gamma_t,
            beta,
            len: beta + self.beta.len(),
            n_intervals,
        }
    }

    /// Every real parameter except `x_threshold`, in [`FlatOffsets`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.log_h_ref.clone();
        for r in &self.log_r {
            out.extend_from_slice(r);
        }
        for part in [&self.alpha, &self.gamma, &self.gamma_t, &self.beta] {
            out.extend_from_slice(part);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat) for parameters of the same shape.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let o = self.offsets();
        assert_eq!(flat.len(), o.len, "flat parameter length");
        self.log_h_ref.copy_from_slice(&flat[..o.log_r]);
        for (s, r) in self.log_r.iter_mut().enumerate() {
            let start = o.log_r + s * o.n_intervals;
            r.copy_from_slice(&flat[start..start + o.n_intervals]);
        }
        self.alpha.copy_from_slice(&flat[o.alpha..o.gamma]);
        self.gamma.copy_from_slice(&flat[o.gamma..o.gamma_t]);
        self.gamma_t.copy_from_slice(&flat[o.gamma_t..o.beta]);
        self.beta.copy_from_slice(&flat[o.beta..o.len]);
    }
}

/// Positions of each parameter block in the flat vector:
/// `log_h_ref[s]`, `log_r[s][k]` site-major, `alpha[v]`, `gamma[v]`, `gamma_t[v]`, `beta[j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatOffsets {
    pub log_h_ref: usize,
    pub log_r: usize,
    pub alpha: usize,
    pub gamma: usize,
    pub gamma_t: usize,
    pub beta: usize,
    pub len: usize,
    pub n_intervals: usize,
}

impl FlatOffsets {
    pub fn log_r_index(&self, site: usize, k: usize) -> usize {
        self.log_r + site * self.n_intervals + k
    }
}

impl ModelParameters {
    /// Check the structural constraints against a study and threshold configuration.
    pub fn validate(&self, data: &StudyData, threshold: &ThresholdConfig) -> Result<()> {
        let fail = |m: String| Err(Error::Parameters(m));
        let k = data.grid().n_intervals();
        if self.log_h_ref.len() != data.n_sites()
            || self.log_r.len() != data.n_sites()
            || self.ref_interval.len() != data.n_sites()
        {
            return fail(format!("expected {} sites", data.n_sites()));
        }
        for (s, (r, &rk)) in self.log_r.iter().zip(&self.ref_interval).enumerate() {
            if r.len() != k {
                return fail(format!("site {s}: expected {k} relative hazards"));
            }
            if rk >= k {
                return fail(format!("site {s}: reference interval {rk} out of range"));
            }
            if r[rk] != 0.0 {
                return fail(format!("site {s}: log_r at the reference interval must be 0"));
            }
        }
        let v = data.n_variants();
        if self.alpha.len() != v || self.gamma.len() != v {
            return fail(format!("expected {v} variants"));
        }
        if self.alpha[0] != 0.0 {
            return fail("alpha of the reference variant must be 0".into());
        }
        let expected_gamma_t = if threshold.has_threshold() { v } else { 0 };
        if self.gamma_t.len() != expected_gamma_t {
            return fail("gamma_t must be present exactly when a threshold is used".into());
        }
        if self.beta.len() != data.covariates().len() {
            return fail(format!("expected {} covariate coefficients", data.covariates().len()));
        }
        match (threshold.mode, self.x_threshold) {
            (ThresholdMode::Estimate, None) => fail("x_threshold required when estimating".into()),
            (ThresholdMode::Estimate, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => fail("x_threshold only allowed when estimating".into()),
        }
    }
}

/// Linear predictor for covariate values `x`, `z` and variant `v`.
pub(crate) fn linear_predictor_values(params: &ModelParameters, tau: Option<f64>, v: usize, x: f64, z: &[f64]) -> f64 {
    let mut eta = params.alpha[v];
    for (zj, bj) in z.iter().zip(&params.beta) {
        eta += zj * bj;
    }
    match tau {
        None => eta + params.gamma[v] * x,
        Some(t) if x > t => eta + params.gamma[v] * x + params.gamma_t[v],
        Some(_) => eta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationScheme {
    /// Closed-form integral of the step functions.
    #[default]
    ExactPiecewise,
    /// Trapezoid rule on the daily grid with half-weight endpoints.
    DailyTrapezoid,
}

/// Quadrature for `int_L^R h^(v)(t) S(t) dt` in the known-variant interval-censored case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalQuadrature {
    /// Per-day closed form: within a day the hazard is constant and `S` is exponential.
    #[default]
    Exact,
    /// Trapezoid rule with `steps_per_day` nodes per day.
    Trapezoid { steps_per_day: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LikelihoodOptions {
    #[serde(default)]
    pub scheme: IntegrationScheme,
    #[serde(default)]
    pub interval_quadrature: IntervalQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKnowledge {
    Known,
    #[default]
    Unknown,
}

/// Day-by-day hazard evaluation over a grid and variant mix.
#[derive(Debug, Clone, Copy)]
pub struct HazardModel<'a> {
    pub grid: &'a CalendarGrid,
    pub mix: &'a VariantMix,
    pub threshold: ThresholdConfig,
    pub options: LikelihoodOptions,
}

impl<'a> HazardModel<'a> {
    pub fn new(grid: &'a CalendarGrid, mix: &'a VariantMix, threshold: ThresholdConfig) -> Self {
        Self {
            grid,
            mix,
            threshold,
            options: LikelihoodOptions::default(),
        }
    }

    pub fn with_options(mut self, options: LikelihoodOptions) -> Self {
        self.options = options;
        self
    }

    /// `h_ref,s * r_s(day)`.
    pub fn baseline_hazard(&self, params: &ModelParameters, site: usize, day: i64) -> Result<f64> {
        let k = self.grid.interval_index(day)?;
        Ok((params.log_h_ref[site] + params.log_r[site][k]).exp())
    }

    pub fn linear_predictor(&self, params: &ModelParameters, subject: &Subject, variant: usize, day: i64) -> f64 {
        let z: Vec<f64> = subject.z.iter().map(|p| p.value_at(day)).collect();
        linear_predictor_values(params, self.threshold.tau(params), variant, subject.x.value_at(day), &z)
    }

    pub fn variant_hazard(&self, params: &ModelParameters, subject: &Subject, variant: usize, day: i64) -> Result<f64> {
        let pi = self.mix.proportion(subject.site, variant, day);
        if pi == 0.0 {
            self.grid.interval_index(day)?;
            return Ok(0.0);
        }
        let base = self.baseline_hazard(params, subject.site, day)?;
        Ok(pi * base * self.linear_predictor(params, subject, variant, day).exp())
    }

    pub fn overall_hazard(&self, params: &ModelParameters, subject: &Subject, day: i64) -> Result<f64> {
        (0..self.mix.n_variants())
            .map(|v| self.variant_hazard(params, subject, v, day))
            .sum()
    }

    /// Hazard at real time `t`: the value of the day `ceil(t)` step, i.e. the
    /// step covering `(ceil(t) - 1, ceil(t)]`. `variant = None` gives the overall hazard.
    pub fn hazard_at(
        &self,
        params: &ModelParameters,
        subject: &Subject,
        variant: Option<usize>,
        t: f64,
    ) -> Result<f64> {
        let day = t.ceil() as i64;
        match variant {
            Some(v) => self.variant_hazard(params, subject, v, day),
            None => self.overall_hazard(params, subject, day),
        }
    }

    /// `int_from^to h_i(u) du` under `scheme`.
    pub fn cumulative_hazard(
        &self,
        params: &ModelParameters,
        subject: &Subject,
        from: i64,
        to: i64,
        scheme: IntegrationScheme,
    ) -> Result<f64> {
        if from > to {
            return Err(Error::Data(format!(
                "cumulative hazard from day {from} to earlier day {to}"
            )));
        }
        if from == to {
            self.grid.interval_index(from)?;
            return Ok(0.0);
        }
        let mut total = 0.0;
        for day in from + 1..=to {
            total += self.overall_hazard(params, subject, day)?;
        }
        if scheme == IntegrationScheme::DailyTrapezoid {
            let first = self.overall_hazard(params, subject, from)?;
            let last = self.overall_hazard(params, subject, to)?;
            total += 0.5 * (first - last);
        }
        Ok(total)
    }

    /// `S_i(t) = exp(-int_{t_i0}^t h_i)`.
    pub fn survivor(&self, params: &ModelParameters, subject: &Subject, day: i64) -> Result<f64> {
        if day < subject.enroll_day {
            return Err(Error::Data(format!(
                "survivor requested at day {day} before enrollment day {}",
                subject.enroll_day
            )));
        }
        let h = self.cumulative_hazard(params, subject, subject.enroll_day, day, self.options.scheme)?;
        Ok((-h).exp())
    }

    fn infecting_variant(subject: &Subject, knowledge: VariantKnowledge) -> Result<Option<usize>> {
        match knowledge {
            VariantKnowledge::Unknown => Ok(None),
            VariantKnowledge::Known if subject.status.is_infection() => subject.variant.map(Some).ok_or_else(|| {
                Error::Data(format!(
                    "subject `{}`: known-variant likelihood needs the infecting variant",
                    subject.id
                ))
            }),
            VariantKnowledge::Known => Ok(None),
        }
    }

    /// Log-likelihood contribution of one subject.
    ///
    /// Returns `-inf` when an interval-censored subject has `S(L) = S(R)` to
    /// machine precision; any other non-finite value is an error naming the subject.
    pub fn log_lik_subject(
        &self,
        params: &ModelParameters,
        subject: &Subject,
        knowledge: VariantKnowledge,
    ) -> Result<f64> {
        let variant = Self::infecting_variant(subject, knowledge)?;
        let scheme = self.options.scheme;
        let t0 = subject.enroll_day;
        let h_lower = self.cumulative_hazard(params, subject, t0, subject.time_lower, scheme)?;
        let value = match subject.status {
            Status::RightCensored => -h_lower,
            Status::Event => {
                let h = match variant {
                    Some(v) => self.variant_hazard(params, subject, v, subject.time_lower)?,
                    None => self.overall_hazard(params, subject, subject.time_lower)?,
                };
                h.ln() - h_lower
            }
            Status::IntervalCensored => {
                let upper = subject.time_upper.expect("validated interval");
                match variant {
                    None => {
                        let h_upper = self.cumulative_hazard(params, subject, t0, upper, scheme)?;
                        -h_lower + log1m_exp_neg(h_upper - h_lower)
                    }
                    Some(v) => {
                        let days: Vec<DayHazard> = (subject.time_lower + 1..=upper)
                            .map(|d| {
                                Ok(DayHazard {
                                    overall: self.overall_hazard(params, subject, d)?,
                                    variant: self.variant_hazard(params, subject, v, d)?,
                                })
                            })
                            .collect::<Result<_>>()?;
                        -h_lower + log_interval_integral(&days, self.options.interval_quadrature)
                    }
                }
            }
        };
        check_contribution(subject, value)
    }

    /// Sum of subject contributions in subject-id order.
    pub fn log_lik_total(
        &self,
        params: &ModelParameters,
        data: &StudyData,
        knowledge: VariantKnowledge,
        reduction: Reduction,
    ) -> Result<f64> {
        let contribution = |s: &Subject| self.log_lik_subject(params, s, knowledge);
        let parts: Vec<Result<f64>> = match reduction {
            Reduction::Sequential => data.subjects().iter().map(contribution).collect(),
            Reduction::Ordered | Reduction::Unordered => parallel::map_ordered(data.subjects(), contribution),
        };
        reduce_contributions(data.subjects(), parts, reduction)
    }
}

/// Hazards on one day `(d-1, d]` of a censoring interval.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DayHazard {
    pub overall: f64,
    pub variant: f64,
}

/// `log int_L^R h^(v)(t) S(t) / S(L) dt` from the daily hazards on `(L, R]`.
pub(crate) fn log_interval_integral(days: &[DayHazard], quad: IntervalQuadrature) -> f64 {
    let mut total = 0.0_f64;
    // cumulative hazard from L to the start of the current day
    let mut h_before = 0.0_f64;
    for day in days {
        let g = day.overall;
        let piece = match quad {
            IntervalQuadrature::Exact => {
                if g > 0.0 {
                    day.variant / g * -(-g).exp_m1()
                } else {
                    0.0
                }
            }
            IntervalQuadrature::Trapezoid { steps_per_day } => {
                let m = steps_per_day.max(1);
                let dt = 1.0 / m as f64;
                let f = |u: f64| day.variant * (-g * u).exp();
                let mut s = 0.5 * (f(0.0) + f(1.0));
                for j in 1..m {
                    s += f(j as f64 * dt);
                }
                s * dt
            }
        };
        total += (-h_before).exp() * piece;
        h_before += g;
    }
    total.ln()
}

pub(crate) fn check_contribution(subject: &Subject, value: f64) -> Result<f64> {
    if value.is_nan() || value == f64::INFINITY {
        return Err(Error::NonFinite {
            subjects: vec![subject.id.clone()],
        });
    }
    if value == f64::NEG_INFINITY {
        log::debug!("subject `{}` has zero likelihood", subject.id);
    }
    Ok(value)
}

pub(crate) fn reduce_contributions(subjects: &[Subject], parts: Vec<Result<f64>>, reduction: Reduction) -> Result<f64> {
    let mut bad = Vec::new();
    let mut values = Vec::with_capacity(parts.len());
    for (s, part) in subjects.iter().zip(parts) {
        match part {
            Ok(v) => values.push(v),
            Err(Error::NonFinite { .. }) => bad.push(s.id.clone()),
            Err(e) => return Err(e),
        }
    }
    if !bad.is_empty() {
        return Err(Error::NonFinite { subjects: bad });
    }
    Ok(match reduction {
        Reduction::Unordered => parallel::sum_unordered(&values, |v| *v),
        _ => values.iter().sum(),
    })
}
