use std::collections::HashMap;

use super::{
    check_contribution, linear_predictor_values, log_interval_integral, reduce_contributions, DayHazard, FlatOffsets,
    IntegrationScheme, IntervalQuadrature, LikelihoodOptions, ModelParameters, ThresholdConfig, VariantKnowledge,
};
use crate::data::{Status, StudyData, Subject, VariantMix};
use crate::error::{Error, Result};
use crate::math::log1m_exp_neg;
use crate::parallel::{self, Reduction};

/// Run of days sharing an interval and covariate piece; `weights[v]` sums
/// `pi^(v)(d)` over the run.
#[derive(Debug, Clone, Default)]
struct Segments {
    interval: Vec<u32>,
    cov: Vec<u32>,
    weights: Vec<f64>,
}

impl Segments {
    fn push_day(&mut self, k: usize, cov: usize, pi: &[f64]) {
        let n = self.interval.len();
        if n > 0 && self.interval[n - 1] as usize == k && self.cov[n - 1] as usize == cov {
            let w = &mut self.weights[(n - 1) * pi.len()..n * pi.len()];
            for (acc, p) in w.iter_mut().zip(pi) {
                *acc += p;
            }
        } else {
            self.interval.push(k as u32);
            self.cov.push(cov as u32);
            self.weights.extend_from_slice(pi);
        }
    }
}

#[derive(Debug, Clone)]
struct Point {
    interval: usize,
    cov: usize,
    pi: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Kernel {
    site: usize,
    status: Status,
    variant: Option<usize>,
    covs: Vec<(f64, Vec<f64>)>,
    to_lower: Segments,
    lower_to_upper: Segments,
    enroll: Point,
    lower: Point,
    upper: Option<Point>,
    /// Days of `(L, R]` for known-variant interval censoring.
    interval_days: Vec<Point>,
}

/// Likelihood with per-subject exposure weights precomputed.
///
/// Because baseline hazards are constant on grid intervals and covariates
/// are piecewise constant, the cumulative hazard over a follow-up window is
/// `sum_k sum_v exp(log h_ref + log r_k) exp(eta_v) W[k][v]` where `W[k][v]`
/// sums the variant proportions over the window's days in interval `k`.
/// Evaluation cost is proportional to the number of intervals touched, not days.
#[derive(Debug, Clone)]
pub struct CompiledLikelihood {
    n_variants: usize,
    threshold: ThresholdConfig,
    options: LikelihoodOptions,
    knowledge: VariantKnowledge,
    kernels: Vec<Kernel>,
    subjects: Vec<Subject>,
}

impl CompiledLikelihood {
    pub fn new(
        data: &StudyData,
        mix: &VariantMix,
        threshold: ThresholdConfig,
        options: LikelihoodOptions,
        knowledge: VariantKnowledge,
    ) -> Result<Self> {
        threshold.validate()?;
        if mix.n_variants() != data.n_variants() || mix.n_sites() != data.n_sites() {
            return Err(Error::Data(format!(
                "variant mix has {} sites x {} variants, data has {} x {}",
                mix.n_sites(),
                mix.n_variants(),
                data.n_sites(),
                data.n_variants()
            )));
        }
        let grid = data.grid();
        let day_interval = grid.day_intervals();
        let interval_of = |d: i64| day_interval[(d - grid.start_day()) as usize];
        let mut kernels = Vec::with_capacity(data.subjects().len());
        for s in data.subjects() {
            let variant = match knowledge {
                VariantKnowledge::Known if s.status.is_infection() => Some(s.variant.ok_or_else(|| {
                    Error::Data(format!(
                        "subject `{}`: known-variant likelihood needs the infecting variant",
                        s.id
                    ))
                })?),
                _ => None,
            };
            let mut cov_index: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut covs = Vec::new();
            let mut cov_at = |d: i64| {
                let key: Vec<usize> = std::iter::once(s.x.piece_at(d))
                    .chain(s.z.iter().map(|z| z.piece_at(d)))
                    .collect();
                *cov_index.entry(key).or_insert_with(|| {
                    covs.push((s.x.value_at(d), s.z.iter().map(|z| z.value_at(d)).collect()));
                    covs.len() - 1
                })
            };
            let point = |d: i64, cov_at: &mut dyn FnMut(i64) -> usize| Point {
                interval: interval_of(d),
                cov: cov_at(d),
                pi: mix.day(s.site, d).to_vec(),
            };
            let enroll = point(s.enroll_day, &mut cov_at);
            let lower = point(s.time_lower, &mut cov_at);
            let upper = s.time_upper.map(|u| point(u, &mut cov_at));
            let mut to_lower = Segments::default();
            for d in s.enroll_day + 1..=s.time_lower {
                to_lower.push_day(interval_of(d), cov_at(d), mix.day(s.site, d));
            }
            let mut lower_to_upper = Segments::default();
            let mut interval_days = Vec::new();
            if let Some(u) = s.time_upper {
                for d in s.time_lower + 1..=u {
                    lower_to_upper.push_day(interval_of(d), cov_at(d), mix.day(s.site, d));
                    if variant.is_some() {
                        interval_days.push(point(d, &mut cov_at));
                    }
                }
            }
            kernels.push(Kernel {
                site: s.site,
                status: s.status,
                variant,
                covs,
                to_lower,
                lower_to_upper,
                enroll,
                lower,
                upper,
                interval_days,
            });
        }
        Ok(Self {
            n_variants: data.n_variants(),
            threshold,
            options,
            knowledge,
            kernels,
            subjects: data.subjects().to_vec(),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.kernels.len()
    }

    pub fn threshold(&self) -> &ThresholdConfig {
        &self.threshold
    }

    pub fn knowledge(&self) -> VariantKnowledge {
        self.knowledge
    }

    /// `exp(log h_ref,s + log r_s,k)` for every site and interval.
    fn baseline_table(params: &ModelParameters) -> Vec<Vec<f64>> {
        params
            .log_r
            .iter()
            .zip(&params.log_h_ref)
            .map(|(r, h)| r.iter().map(|lr| (h + lr).exp()).collect())
            .collect()
    }

    fn subject_log_lik(
        &self,
        i: usize,
        params: &ModelParameters,
        tau: Option<f64>,
        baseline: &[Vec<f64>],
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let kern = &self.kernels[i];
        let nv = self.n_variants;
        let base = &baseline[kern.site];
        let mut eff = Vec::with_capacity(kern.covs.len() * nv);
        for (x, z) in &kern.covs {
            for v in 0..nv {
                eff.push(linear_predictor_values(params, tau, v, *x, z).exp());
            }
        }
        let cum = |seg: &Segments| -> f64 {
            let mut total = 0.0;
            for (j, (&k, &c)) in seg.interval.iter().zip(&seg.cov).enumerate() {
                let e = &eff[c as usize * nv..(c as usize + 1) * nv];
                let w = &seg.weights[j * nv..(j + 1) * nv];
                let mut risk = 0.0;
                for v in 0..nv {
                    risk += e[v] * w[v];
                }
                total += base[k as usize] * risk;
            }
            total
        };
        let variant_hazard = |p: &Point, v: usize| base[p.interval] * eff[p.cov * nv + v] * p.pi[v];
        let overall = |p: &Point| (0..nv).map(|v| variant_hazard(p, v)).sum::<f64>();
        let trapezoid = self.options.scheme == IntegrationScheme::DailyTrapezoid;
        let correction = |from: &Point, to: &Point, same_day: bool| {
            if trapezoid && !same_day {
                0.5 * (overall(from) - overall(to))
            } else {
                0.0
            }
        };

        let s = &self.subjects[i];
        let lower_same_day = s.time_lower == s.enroll_day;
        let h_lower = cum(&kern.to_lower) + correction(&kern.enroll, &kern.lower, lower_same_day);
        let mut h_gap = 0.0;
        let mut days: Vec<DayHazard> = Vec::new();
        let value = match kern.status {
            Status::RightCensored => -h_lower,
            Status::Event => {
                let h = match kern.variant {
                    Some(v) => variant_hazard(&kern.lower, v),
                    None => overall(&kern.lower),
                };
                h.ln() - h_lower
            }
            Status::IntervalCensored => {
                let upper = kern.upper.as_ref().expect("validated interval");
                match kern.variant {
                    None => {
                        let h_upper =
                            cum(&kern.to_lower) + cum(&kern.lower_to_upper) + correction(&kern.enroll, upper, false);
                        h_gap = h_upper - h_lower;
                        -h_lower + log1m_exp_neg(h_gap)
                    }
                    Some(v) => {
                        days = kern
                            .interval_days
                            .iter()
                            .map(|p| DayHazard {
                                overall: overall(p),
                                variant: variant_hazard(p, v),
                            })
                            .collect();
                        -h_lower + log_interval_integral(&days, self.options.interval_quadrature)
                    }
                }
            }
        };
        let value = check_contribution(s, value)?;
        if let (Some(grad), true) = (grad, value.is_finite()) {
            let g = Gradient::new(kern, params, tau, base, &eff, trapezoid);
            let lower_window = |grad: &mut [f64], coef: f64| {
                g.segments(grad, coef, &kern.to_lower);
                g.correction(grad, coef, &kern.enroll, &kern.lower, lower_same_day);
            };
            match (kern.status, kern.variant) {
                (Status::RightCensored, _) => lower_window(grad, -1.0),
                (Status::Event, Some(v)) => {
                    lower_window(grad, -1.0);
                    g.point_variant(grad, 1.0 / variant_hazard(&kern.lower, v), &kern.lower, v);
                }
                (Status::Event, None) => {
                    lower_window(grad, -1.0);
                    g.point_overall(grad, 1.0 / overall(&kern.lower), &kern.lower);
                }
                (Status::IntervalCensored, None) => {
                    let upper = kern.upper.as_ref().expect("validated interval");
                    let w = 1.0 / h_gap.exp_m1();
                    lower_window(grad, -1.0 - w);
                    g.segments(grad, w, &kern.to_lower);
                    g.segments(grad, w, &kern.lower_to_upper);
                    g.correction(grad, w, &kern.enroll, upper, false);
                }
                (Status::IntervalCensored, Some(v)) => {
                    lower_window(grad, -1.0);
                    // f = sum_d P_d q_d with P_d = exp(-sum_{d' < d} g_d'), q_d = a_d phi(g_d)
                    let n = days.len();
                    let mut p = vec![0.0; n];
                    let mut pq = vec![0.0; n];
                    let mut before = 0.0_f64;
                    for (d, day) in days.iter().enumerate() {
                        p[d] = (-before).exp();
                        pq[d] = p[d] * day.variant * phi(day.overall);
                        before += day.overall;
                    }
                    let f: f64 = pq.iter().sum();
                    let mut tail = 0.0;
                    for d in (0..n).rev() {
                        let day = days[d];
                        let point = &kern.interval_days[d];
                        let coef_g = (p[d] * day.variant * phi_prime(day.overall) - tail) / f;
                        let coef_a = p[d] * phi(day.overall) / f;
                        g.point_overall(grad, coef_g, point);
                        g.point_variant(grad, coef_a, point, v);
                        tail += pq[d];
                    }
                }
            }
        }
        Ok(value)
    }

    /// Per-subject contributions in subject order.
    pub fn contributions(&self, params: &ModelParameters) -> Vec<Result<f64>> {
        let tau = self.threshold.tau(params);
        let baseline = Self::baseline_table(params);
        (0..self.kernels.len())
            .map(|i| self.subject_log_lik(i, params, tau, &baseline, None))
            .collect()
    }

    /// Total log-likelihood, summed in subject order on the current thread.
    pub fn log_lik(&self, params: &ModelParameters) -> Result<f64> {
        self.log_lik_with(params, Reduction::Sequential)
    }

    pub fn log_lik_with(&self, params: &ModelParameters, reduction: Reduction) -> Result<f64> {
        let tau = self.threshold.tau(params);
        let baseline = Self::baseline_table(params);
        let eval = |i: usize| self.subject_log_lik(i, params, tau, &baseline, None);
        let parts: Vec<Result<f64>> = match reduction {
            Reduction::Sequential => (0..self.kernels.len()).map(eval).collect(),
            _ => parallel::map_range(self.kernels.len(), eval),
        };
        reduce_contributions(&self.subjects, parts, reduction)
    }

    /// Whether [`log_lik_gradient`](Self::log_lik_gradient) is available. The
    /// trapezoid interval quadrature with known variants has no analytic gradient.
    pub fn supports_gradient(&self) -> bool {
        !(self.knowledge == VariantKnowledge::Known
            && matches!(self.options.interval_quadrature, IntervalQuadrature::Trapezoid { .. }))
    }

    /// Log-likelihood and its gradient in [`ModelParameters::to_flat`] order.
    ///
    /// Subjects are processed in fixed chunks whose partial gradients are
    /// summed in chunk order, so the result does not depend on scheduling
    /// unless `reduction` is `Unordered`.
    pub fn log_lik_gradient(&self, params: &ModelParameters, reduction: Reduction) -> Result<(f64, Vec<f64>)> {
        if !self.supports_gradient() {
            return Err(Error::Config(
                "no analytic gradient for the trapezoid interval quadrature with known variants".into(),
            ));
        }
        const CHUNK: usize = 64;
        let tau = self.threshold.tau(params);
        let baseline = Self::baseline_table(params);
        let len = params.offsets().len;
        let n = self.kernels.len();
        let chunk = |c: usize| {
            let mut grad = vec![0.0; len];
            let parts: Vec<Result<f64>> = (c * CHUNK..((c + 1) * CHUNK).min(n))
                .map(|i| self.subject_log_lik(i, params, tau, &baseline, Some(&mut grad)))
                .collect();
            (parts, grad)
        };
        let n_chunks = n.div_ceil(CHUNK);
        let chunks: Vec<(Vec<Result<f64>>, Vec<f64>)> = match reduction {
            Reduction::Sequential => (0..n_chunks).map(chunk).collect(),
            _ => parallel::map_range(n_chunks, chunk),
        };
        let mut grad = vec![0.0; len];
        let mut parts = Vec::with_capacity(n);
        for (p, g) in chunks {
            parts.extend(p);
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
        }
        let value = reduce_contributions(&self.subjects, parts, reduction)?;
        Ok((value, grad))
    }
}

/// `(1 - exp(-g)) / g`.
fn phi(g: f64) -> f64 {
    if g > 0.0 {
        -(-g).exp_m1() / g
    } else {
        1.0
    }
}

/// Derivative of [`phi`], by series for small `g`.
fn phi_prime(g: f64) -> f64 {
    if g < 1.0 {
        // sum_{n>=1} (-1)^n n g^(n-1) / (n+1)!
        let mut total = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0;
        for n in 1..=25 {
            let term = n as f64 * pow / fact;
            total += if n % 2 == 1 { -term } else { term };
            pow *= g;
            fact *= (n + 2) as f64;
        }
        total
    } else {
        ((-g).exp() * (g + 1.0) - 1.0) / (g * g)
    }
}

/// Accumulates `coef * d(hazard term) / d(theta)` into the flat gradient.
struct Gradient<'k> {
    offsets: FlatOffsets,
    site: usize,
    nv: usize,
    base: &'k [f64],
    eff: &'k [f64],
    /// Per covariate piece: d eta / d gamma, d eta / d gamma_t, z.
    design: Vec<(f64, f64, &'k [f64])>,
    trapezoid: bool,
}

impl<'k> Gradient<'k> {
    fn new(
        kern: &'k Kernel,
        params: &ModelParameters,
        tau: Option<f64>,
        base: &'k [f64],
        eff: &'k [f64],
        trapezoid: bool,
    ) -> Self {
        let design = kern
            .covs
            .iter()
            .map(|(x, z)| {
                let (gx, ind) = match tau {
                    None => (*x, 0.0),
                    Some(t) if *x > t => (*x, 1.0),
                    Some(_) => (0.0, 0.0),
                };
                (gx, ind, z.as_slice())
            })
            .collect();
        Self {
            offsets: params.offsets(),
            site: kern.site,
            nv: params.n_variants(),
            base,
            eff,
            design,
            trapezoid,
        }
    }

    /// Add the gradient of a term whose value is `a`, at interval `k`, piece `c`, variant `v`.
    #[inline]
    fn atom(&self, grad: &mut [f64], a: f64, k: usize, c: usize, v: usize) {
        let o = &self.offsets;
        let (gx, ind, z) = self.design[c];
        grad[o.log_h_ref + self.site] += a;
        grad[o.log_r_index(self.site, k)] += a;
        grad[o.alpha + v] += a;
        grad[o.gamma + v] += a * gx;
        if o.beta > o.gamma_t {
            grad[o.gamma_t + v] += a * ind;
        }
        for (j, zj) in z.iter().enumerate() {
            grad[o.beta + j] += a * zj;
        }
    }

    fn segments(&self, grad: &mut [f64], coef: f64, seg: &Segments) {
        let nv = self.nv;
        for (j, (&k, &c)) in seg.interval.iter().zip(&seg.cov).enumerate() {
            let (k, c) = (k as usize, c as usize);
            for v in 0..nv {
                let a = coef * self.base[k] * self.eff[c * nv + v] * seg.weights[j * nv + v];
                self.atom(grad, a, k, c, v);
            }
        }
    }

    fn point_variant(&self, grad: &mut [f64], coef: f64, p: &Point, v: usize) {
        let a = coef * self.base[p.interval] * self.eff[p.cov * self.nv + v] * p.pi[v];
        self.atom(grad, a, p.interval, p.cov, v);
    }

    fn point_overall(&self, grad: &mut [f64], coef: f64, p: &Point) {
        for v in 0..self.nv {
            self.point_variant(grad, coef, p, v);
        }
    }

    fn correction(&self, grad: &mut [f64], coef: f64, from: &Point, to: &Point, same_day: bool) {
        if self.trapezoid && !same_day {
            self.point_overall(grad, 0.5 * coef, from);
            self.point_overall(grad, -0.5 * coef, to);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CalendarGrid, StepPath};
    use crate::hazard::{HazardModel, ThresholdMode};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_study(rng: &mut ChaCha8Rng, n: usize, n_variants: usize, time_varying: bool) -> (StudyData, VariantMix) {
        let grid = CalendarGrid::new(0, 140, 14).unwrap();
        let sites = vec!["A".to_string(), "B".to_string()];
        let variants: Vec<String> = (0..n_variants).map(|v| format!("v{v}")).collect();
        let mut subjects = Vec::new();
        for i in 0..n {
            let enroll = rng.random_range(0..60);
            let lower = enroll + rng.random_range(1..50);
            let status = match i % 3 {
                0 => Status::Event,
                1 => Status::RightCensored,
                _ => Status::IntervalCensored,
            };
            let upper = (status == Status::IntervalCensored).then(|| lower + rng.random_range(1..20));
            let x = if time_varying {
                StepPath::new(vec![
                    (0, rng.random_range(-1.0..1.0)),
                    (enroll + 3, rng.random_range(-1.0..1.0)),
                ])
                .unwrap()
            } else {
                StepPath::constant(rng.random_range(-1.0..1.0))
            };
            subjects.push(Subject {
                id: format!("s{i:03}"),
                site: i % 2,
                enroll_day: enroll,
                status,
                time_lower: lower,
                time_upper: upper,
                variant: status.is_infection().then(|| rng.random_range(0..n_variants)),
                x,
                z: vec![StepPath::constant(rng.random_range(0.0..1.0))],
            });
        }
        let data = StudyData::new(
            subjects,
            sites,
            variants,
            vec!["z".into()],
            grid.clone(),
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
        )
        .unwrap();
        let dense = (0..2)
            .map(|_| {
                (0..grid.n_days())
                    .flat_map(|_| {
                        let raw: Vec<f64> = (0..n_variants).map(|_| rng.random_range(0.05..1.0)).collect();
                        let sum: f64 = raw.iter().sum();
                        raw.into_iter().map(move |r| r / sum)
                    })
                    .collect()
            })
            .collect();
        let mix = VariantMix::from_dense(&grid, n_variants, dense).unwrap();
        (data, mix)
    }

    fn random_params(rng: &mut ChaCha8Rng, data: &StudyData, threshold: &ThresholdConfig) -> ModelParameters {
        let k = data.grid().n_intervals();
        let mut p = ModelParameters::zeros(vec![1, 3], k, data.n_variants(), 1, threshold);
        for s in 0..2 {
            p.log_h_ref[s] = rng.random_range(-5.0..-3.0);
            for kk in 0..k {
                if kk != p.ref_interval[s] {
                    p.log_r[s][kk] = rng.random_range(-1.0..1.0);
                }
            }
        }
        for v in 0..data.n_variants() {
            if v > 0 {
                p.alpha[v] = rng.random_range(-0.5..0.5);
            }
            p.gamma[v] = rng.random_range(-1.0..0.5);
        }
        for g in p.gamma_t.iter_mut() {
            *g = rng.random_range(-1.0..0.5);
        }
        p.beta[0] = rng.random_range(-1.0..1.0);
        if threshold.mode == ThresholdMode::Estimate {
            p.x_threshold = Some(rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn compiled_matches_day_by_day_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let thresholds = [
            ThresholdConfig::none(),
            ThresholdConfig::fixed_llod(0.1),
            ThresholdConfig::estimate(0.0, -1.0, 1.0),
        ];
        for (round, time_varying) in [(0, false), (1, true)] {
            for threshold in thresholds {
                let (data, mix) = random_study(&mut rng, 60, 1 + round + 1, time_varying);
                for knowledge in [VariantKnowledge::Unknown, VariantKnowledge::Known] {
                    for scheme in [IntegrationScheme::ExactPiecewise, IntegrationScheme::DailyTrapezoid] {
                        for quad in [
                            IntervalQuadrature::Exact,
                            IntervalQuadrature::Trapezoid { steps_per_day: 4 },
                        ] {
                            let options = LikelihoodOptions {
                                scheme,
                                interval_quadrature: quad,
                            };
                            let compiled = CompiledLikelihood::new(&data, &mix, threshold, options, knowledge).unwrap();
                            let reference = HazardModel::new(data.grid(), &mix, threshold).with_options(options);
                            let p = random_params(&mut rng, &data, &threshold);
                            let parts = compiled.contributions(&p);
                            for (s, part) in data.subjects().iter().zip(parts) {
                                let expected = reference.log_lik_subject(&p, s, knowledge).unwrap();
                                let got = part.unwrap();
                                assert!(
                                    (got - expected).abs() <= 1e-10 * expected.abs().max(1.0),
                                    "{} {:?} {:?}: {got} vs {expected}",
                                    s.id,
                                    knowledge,
                                    scheme
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reductions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (data, mix) = random_study(&mut rng, 90, 2, false);
        let compiled = CompiledLikelihood::new(
            &data,
            &mix,
            ThresholdConfig::none(),
            LikelihoodOptions::default(),
            VariantKnowledge::Unknown,
        )
        .unwrap();
        let p = random_params(&mut rng, &data, &ThresholdConfig::none());
        let seq = compiled.log_lik_with(&p, Reduction::Sequential).unwrap();
        let ord = compiled.log_lik_with(&p, Reduction::Ordered).unwrap();
        let unord = compiled.log_lik_with(&p, Reduction::Unordered).unwrap();
        assert_eq!(seq.to_bits(), ord.to_bits());
        assert!((seq - unord).abs() < 1e-9);
    }

    fn fd_gradient(compiled: &CompiledLikelihood, p: &ModelParameters) -> Vec<f64> {
        let flat = p.to_flat();
        (0..flat.len())
            .map(|j| {
                let h = 1e-6 * flat[j].abs().max(1.0);
                let mut q = p.clone();
                let mut f = flat.clone();
                f[j] += h;
                q.set_flat(&f);
                let up = compiled.log_lik(&q).unwrap();
                f[j] -= 2.0 * h;
                q.set_flat(&f);
                let down = compiled.log_lik(&q).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let thresholds = [
            ThresholdConfig::none(),
            ThresholdConfig::fixed_llod(0.1),
            ThresholdConfig::estimate(0.0, -1.0, 1.0),
        ];
        for threshold in thresholds {
            let (data, mix) = random_study(&mut rng, 45, 2, true);
            for knowledge in [VariantKnowledge::Unknown, VariantKnowledge::Known] {
                for scheme in [IntegrationScheme::ExactPiecewise, IntegrationScheme::DailyTrapezoid] {
                    let options = LikelihoodOptions {
                        scheme,
                        interval_quadrature: IntervalQuadrature::Exact,
                    };
                    let compiled = CompiledLikelihood::new(&data, &mix, threshold, options, knowledge).unwrap();
                    let p = random_params(&mut rng, &data, &threshold);
                    let (value, grad) = compiled.log_lik_gradient(&p, Reduction::Ordered).unwrap();
                    assert_eq!(value.to_bits(), compiled.log_lik(&p).unwrap().to_bits());
                    let fd = fd_gradient(&compiled, &p);
                    let o = p.offsets();
                    for (j, (a, b)) in grad.iter().zip(&fd).enumerate() {
                        let on_ref = (0..2).any(|s| j == o.log_r_index(s, p.ref_interval[s]));
                        if on_ref || j == o.alpha {
                            continue;
                        }
                        assert!(
                            (a - b).abs() <= 1e-5 * b.abs().max(1.0),
                            "{knowledge:?} {scheme:?} [{j}]: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn phi_series_matches_closed_form() {
        for g in [0.5, 0.9, 0.999] {
            let direct = (f64::exp(-g) * (g + 1.0) - 1.0) / (g * g);
            assert!((phi_prime(g) - direct).abs() < 1e-12);
        }
        assert!((phi_prime(1e-9) + 0.5).abs() < 1e-9);
    }

    #[test]
    fn gradient_unavailable_for_trapezoid_known() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, mix) = random_study(&mut rng, 6, 2, false);
        let options = LikelihoodOptions {
            scheme: IntegrationScheme::ExactPiecewise,
            interval_quadrature: IntervalQuadrature::Trapezoid { steps_per_day: 2 },
        };
        let compiled =
            CompiledLikelihood::new(&data, &mix, ThresholdConfig::none(), options, VariantKnowledge::Known).unwrap();
        assert!(!compiled.supports_gradient());
        let p = random_params(&mut rng, &data, &ThresholdConfig::none());
        assert!(compiled.log_lik_gradient(&p, Reduction::Sequential).is_err());
    }

    #[test]
    fn known_variant_needs_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (data, mix) = random_study(&mut rng, 9, 2, false);
        let stripped: Vec<Subject> = data
            .subjects()
            .iter()
            .cloned()
            .map(|mut s| {
                s.variant = None;
                s
            })
            .collect();
        let data = data.with_subjects(stripped).unwrap();
        assert!(CompiledLikelihood::new(
            &data,
            &mix,
            ThresholdConfig::none(),
            LikelihoodOptions::default(),
            VariantKnowledge::Known
        )
        .is_err());
        assert!(CompiledLikelihood::new(
            &data,
            &mix,
            ThresholdConfig::none(),
            LikelihoodOptions::default(),
            VariantKnowledge::Unknown
        )
        .is_ok());
    }
}
