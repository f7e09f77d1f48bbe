//! Posterior assembly, MCMC sampling, diagnostics and posterior-predictive checks.

mod diagnostics;
mod output;
mod ppc;
mod sampler;

pub use diagnostics::{ess, split_rhat, summarize, unconverged, Contrast, SummaryRow, RHAT_THRESHOLD};
pub use output::{read_draws, write_draws, write_ppc, write_summary};
pub use ppc::{observed_cuminc, posterior_predict_cuminc, predicted_infections, PpcRow, DEFAULT_PPC_DRAWS};
pub use sampler::{
    finite_difference_gradient, sample_posterior, Algorithm, ChainStats, GradientMode, PosteriorDraws, SamplerConfig,
    Target,
};

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{StudyData, VariantMix};
use crate::error::{Error, Result};
use crate::hazard::{
    CompiledLikelihood, LikelihoodOptions, ModelParameters, ThresholdConfig, ThresholdMode, VariantKnowledge,
};
use crate::math::normal_log_pdf;
use crate::parallel::Reduction;
use crate::prior::{CoefPrior, PriorSpec};

/// Maps the free parameters sampled by MCMC to [`ModelParameters`].
///
/// Structural zeros (`log_r` at the reference interval, `alpha` of the first
/// variant) and coefficients with [`CoefPrior::Fixed`] priors are held at
/// their values in the template. `x_threshold` is not part of the continuous
/// vector; it is sampled by its own move.
#[derive(Debug, Clone)]
pub struct ParameterLayout {
    template: ModelParameters,
    free: Vec<usize>,
    names: Vec<String>,
    estimate_threshold: bool,
}

impl ParameterLayout {
    pub fn new(data: &StudyData, prior: &PriorSpec, threshold: &ThresholdConfig) -> Result<Self> {
        prior.validate(data, threshold)?;
        let k = data.grid().n_intervals();
        let mut template = ModelParameters::zeros(
            prior.ref_intervals(),
            k,
            data.n_variants(),
            data.covariates().len(),
            threshold,
        );
        let o = template.offsets();
        let mut free = Vec::new();
        let mut names = Vec::new();
        for (s, site) in data.sites().iter().enumerate() {
            free.push(o.log_h_ref + s);
            names.push(format!("log_h_ref[{site}]"));
        }
        for (s, site) in data.sites().iter().enumerate() {
            for kk in 0..k {
                if kk != template.ref_interval[s] {
                    free.push(o.log_r_index(s, kk));
                    names.push(format!("log_r[{site}][{kk}]"));
                }
            }
        }
        let blocks: [(&str, &[CoefPrior], usize, &[String]); 4] = [
            ("alpha", &prior.alpha, o.alpha, data.variants()),
            ("gamma", &prior.gamma, o.gamma, data.variants()),
            ("gamma_t", &prior.gamma_t, o.gamma_t, data.variants()),
            ("beta", &prior.beta, o.beta, data.covariates()),
        ];
        let mut flat = template.to_flat();
        for (name, priors, offset, labels) in blocks {
            for (j, p) in priors.iter().enumerate() {
                match p {
                    CoefPrior::Fixed { value } => flat[offset + j] = *value,
                    _ => {
                        free.push(offset + j);
                        names.push(format!("{name}[{}]", labels[j]));
                    }
                }
            }
        }
        template.set_flat(&flat);
        Ok(Self {
            template,
            free,
            names,
            estimate_threshold: threshold.mode == ThresholdMode::Estimate,
        })
    }

    /// Number of continuous free parameters.
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn estimates_threshold(&self) -> bool {
        self.estimate_threshold
    }

    /// Column names of a draw: the continuous parameters, then `x_threshold` if estimated.
    pub fn draw_names(&self) -> Vec<String> {
        let mut out = self.names.clone();
        if self.estimate_threshold {
            out.push("x_threshold".into());
        }
        out
    }

    /// Flat indices (in [`ModelParameters::to_flat`] order) of the free parameters.
    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn template(&self) -> &ModelParameters {
        &self.template
    }

    pub fn params(&self, theta: &[f64], x_threshold: Option<f64>) -> ModelParameters {
        let mut flat = self.template.to_flat();
        for (&i, &t) in self.free.iter().zip(theta) {
            flat[i] = t;
        }
        let mut p = self.template.clone();
        p.set_flat(&flat);
        if self.estimate_threshold {
            p.x_threshold = x_threshold;
        }
        p
    }

    /// Parameters from one stored draw row.
    pub fn params_from_draw(&self, row: &[f64]) -> ModelParameters {
        let xt = self.estimate_threshold.then(|| row[self.dim()]);
        self.params(&row[..self.dim()], xt)
    }

    pub fn pack(&self, params: &ModelParameters) -> Vec<f64> {
        let flat = params.to_flat();
        self.free.iter().map(|&i| flat[i]).collect()
    }
}

fn coef_log_prior(prior: &CoefPrior, x: f64) -> f64 {
    match *prior {
        CoefPrior::Normal { mean, sd } => normal_log_pdf(x, mean, sd),
        CoefPrior::NormalUpperZero { mean, sd } => {
            if x > 0.0 {
                f64::NEG_INFINITY
            } else {
                let mass = Normal::standard().cdf(-mean / sd);
                normal_log_pdf(x, mean, sd) - mass.ln()
            }
        }
        CoefPrior::Fixed { .. } => 0.0,
    }
}

fn coef_log_prior_derivative(prior: &CoefPrior, x: f64) -> f64 {
    match *prior {
        CoefPrior::Normal { mean, sd } | CoefPrior::NormalUpperZero { mean, sd } => -(x - mean) / (sd * sd),
        CoefPrior::Fixed { .. } => 0.0,
    }
}

/// Log prior density of `params`, up to nothing: every term is a normalized density.
///
/// Structural zeros and fixed coefficients contribute 0. `x_threshold`
/// outside its uniform support gives `-inf`.
pub fn log_prior(params: &ModelParameters, priors: &PriorSpec) -> f64 {
    let mut total = 0.0;
    for (s, sp) in priors.sites.iter().enumerate() {
        total += normal_log_pdf(params.log_h_ref[s], sp.mu_ref, sp.sigma_ref);
        for (k, lr) in params.log_r[s].iter().enumerate() {
            if k != sp.ref_interval {
                total += normal_log_pdf(*lr, sp.mu_r[k], sp.sigma_r[k]);
            }
        }
    }
    let blocks = [
        (&priors.alpha, &params.alpha),
        (&priors.gamma, &params.gamma),
        (&priors.gamma_t, &params.gamma_t),
        (&priors.beta, &params.beta),
    ];
    for (ps, xs) in blocks {
        for (p, x) in ps.iter().zip(xs) {
            total += coef_log_prior(p, *x);
        }
    }
    if let Some(u) = priors.threshold {
        match params.x_threshold {
            Some(x) if (u.lower..=u.upper).contains(&x) => total -= (u.upper - u.lower).ln(),
            _ => return f64::NEG_INFINITY,
        }
    }
    total
}

/// Gradient of [`log_prior`] in [`ModelParameters::to_flat`] order, added into `grad`.
pub fn add_log_prior_gradient(params: &ModelParameters, priors: &PriorSpec, grad: &mut [f64]) {
    let o = params.offsets();
    for (s, sp) in priors.sites.iter().enumerate() {
        grad[o.log_h_ref + s] -= (params.log_h_ref[s] - sp.mu_ref) / sp.sigma_ref.powi(2);
        for (k, lr) in params.log_r[s].iter().enumerate() {
            if k != sp.ref_interval {
                grad[o.log_r_index(s, k)] -= (lr - sp.mu_r[k]) / sp.sigma_r[k].powi(2);
            }
        }
    }
    let blocks = [
        (&priors.alpha, &params.alpha, o.alpha),
        (&priors.gamma, &params.gamma, o.gamma),
        (&priors.gamma_t, &params.gamma_t, o.gamma_t),
        (&priors.beta, &params.beta, o.beta),
    ];
    for (ps, xs, offset) in blocks {
        for (j, (p, x)) in ps.iter().zip(xs).enumerate() {
            grad[offset + j] += coef_log_prior_derivative(p, *x);
        }
    }
}

/// Unnormalized log posterior of the calendar-time model.
#[derive(Debug, Clone)]
pub struct Posterior {
    likelihood: CompiledLikelihood,
    prior: PriorSpec,
    layout: ParameterLayout,
    reduction: Reduction,
}

impl Posterior {
    pub fn new(
        data: &StudyData,
        mix: &VariantMix,
        prior: PriorSpec,
        threshold: ThresholdConfig,
        options: LikelihoodOptions,
        knowledge: VariantKnowledge,
    ) -> Result<Self> {
        let layout = ParameterLayout::new(data, &prior, &threshold)?;
        let likelihood = CompiledLikelihood::new(data, mix, threshold, options, knowledge)?;
        Ok(Self {
            likelihood,
            prior,
            layout,
            reduction: Reduction::default(),
        })
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn likelihood(&self) -> &CompiledLikelihood {
        &self.likelihood
    }

    /// `log_lik_total + log_prior`. A `-inf` prior short-circuits the likelihood.
    pub fn log_posterior(&self, params: &ModelParameters) -> Result<f64> {
        let lp = log_prior(params, &self.prior);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(self.likelihood.log_lik_with(params, self.reduction)? + lp)
    }

    /// Prior means of the free parameters, clamped into the support of truncated priors.
    fn center(&self) -> Vec<f64> {
        let mut p = self.layout.template.clone();
        for (s, sp) in self.prior.sites.iter().enumerate() {
            p.log_h_ref[s] = sp.mu_ref;
            p.log_r[s].copy_from_slice(&sp.mu_r);
        }
        let blocks = [
            (&self.prior.alpha, &mut p.alpha),
            (&self.prior.gamma, &mut p.gamma),
            (&self.prior.gamma_t, &mut p.gamma_t),
            (&self.prior.beta, &mut p.beta),
        ];
        for (ps, xs) in blocks {
            for (prior, x) in ps.iter().zip(xs.iter_mut()) {
                *x = prior.center();
            }
        }
        self.layout.pack(&p)
    }

    fn nonfinite(&self, e: Error) -> f64 {
        log::debug!("log posterior not finite: {e}");
        f64::NAN
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn names(&self) -> Vec<String> {
        self.layout.draw_names()
    }

    fn log_density(&self, theta: &[f64], x_threshold: Option<f64>) -> f64 {
        let p = self.layout.params(theta, x_threshold);
        self.log_posterior(&p).unwrap_or_else(|e| self.nonfinite(e))
    }

    fn has_gradient(&self) -> bool {
        self.likelihood.supports_gradient()
    }

    fn log_density_gradient(&self, theta: &[f64], x_threshold: Option<f64>, grad: &mut [f64]) -> f64 {
        if !self.has_gradient() {
            return finite_difference_gradient(self, theta, x_threshold, grad);
        }
        let p = self.layout.params(theta, x_threshold);
        let lp = log_prior(&p, &self.prior);
        if lp == f64::NEG_INFINITY {
            grad.fill(0.0);
            return lp;
        }
        match self.likelihood.log_lik_gradient(&p, self.reduction) {
            Ok((ll, mut full)) => {
                add_log_prior_gradient(&p, &self.prior, &mut full);
                for (g, &i) in grad.iter_mut().zip(self.layout.free_indices()) {
                    *g = full[i];
                }
                ll + lp
            }
            Err(e) => self.nonfinite(e),
        }
    }

    fn threshold_bounds(&self) -> Option<(f64, f64)> {
        if !self.layout.estimate_threshold {
            return None;
        }
        self.prior.threshold.map(|u| (u.lower, u.upper))
    }

    fn initial_center(&self) -> Vec<f64> {
        self.center()
    }

    /// Prior sds capped at 0.1.
    fn initial_scales(&self) -> Vec<f64> {
        let mut sds = vec![0.0; self.layout.template.offsets().len];
        let o = self.layout.template.offsets();
        for (s, sp) in self.prior.sites.iter().enumerate() {
            sds[o.log_h_ref + s] = sp.sigma_ref;
            for (k, sd) in sp.sigma_r.iter().enumerate() {
                sds[o.log_r_index(s, k)] = *sd;
            }
        }
        let blocks = [
            (&self.prior.alpha, o.alpha),
            (&self.prior.gamma, o.gamma),
            (&self.prior.gamma_t, o.gamma_t),
            (&self.prior.beta, o.beta),
        ];
        for (ps, offset) in blocks {
            for (j, p) in ps.iter().enumerate() {
                if let CoefPrior::Normal { sd, .. } | CoefPrior::NormalUpperZero { sd, .. } = p {
                    sds[offset + j] = *sd;
                }
            }
        }
        self.layout.free.iter().map(|&i| sds[i].min(0.1)).collect()
    }
}
