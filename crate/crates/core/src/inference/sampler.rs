use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

/// A log density over `dim()` continuous parameters plus an optional bounded
/// scalar (the biomarker threshold) updated by its own Metropolis move.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Column names of a draw: `dim()` continuous parameters, then the
    /// threshold when [`threshold_bounds`](Self::threshold_bounds) is set.
    fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.dim()).map(|i| format!("theta[{i}]")).collect();
        if self.threshold_bounds().is_some() {
            out.push("x_threshold".into());
        }
        out
    }

    /// Log density; `-inf` outside the support, NaN when evaluation failed.
    fn log_density(&self, theta: &[f64], x_threshold: Option<f64>) -> f64;

    fn has_gradient(&self) -> bool {
        false
    }

    /// Log density with its gradient in `grad`.
    fn log_density_gradient(&self, theta: &[f64], x_threshold: Option<f64>, grad: &mut [f64]) -> f64 {
        finite_difference_gradient(self, theta, x_threshold, grad)
    }

    fn threshold_bounds(&self) -> Option<(f64, f64)> {
        None
    }

    /// Centre of the initialization jitter.
    fn initial_center(&self) -> Vec<f64>;

    /// Rough posterior scales used before adaptation.
    fn initial_scales(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
}

/// Relative step of the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Central finite-difference gradient with step `1e-5 * max(1, |theta_i|)`.
pub fn finite_difference_gradient<T: Target + ?Sized>(
    target: &T,
    theta: &[f64],
    x_threshold: Option<f64>,
    grad: &mut [f64],
) -> f64 {
    let value = target.log_density(theta, x_threshold);
    let mut work = theta.to_vec();
    for i in 0..theta.len() {
        let h = FD_STEP * theta[i].abs().max(1.0);
        work[i] = theta[i] + h;
        let up = target.log_density(&work, x_threshold);
        work[i] = theta[i] - h;
        let down = target.log_density(&work, x_threshold);
        work[i] = theta[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Random-walk Metropolis with Robbins-Monro scale and empirical covariance adaptation.
    AdaptiveRwm,
    /// Static-path Hamiltonian Monte Carlo with jittered path length.
    #[default]
    Hmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Analytic gradient when the target has one, finite differences otherwise.
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Iterations per chain including warmup.
    pub n_iterations: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Initial half-width of the threshold proposal; `0.1 * (upper - lower)` when absent.
    pub threshold_proposal_width: Option<f64>,
    /// HMC target acceptance.
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub gradient: GradientMode,
    /// Run chains on separate threads.
    pub parallel_chains: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iterations: 4000,
            warmup_fraction: 0.5,
            seed: 1,
            algorithm: Algorithm::Hmc,
            threshold_proposal_width: None,
            target_accept: 0.8,
            max_leapfrog_steps: 128,
            gradient: GradientMode::Analytic,
            parallel_chains: true,
        }
    }
}

pub const RWM_TARGET_ACCEPT: f64 = 0.234;
pub const THRESHOLD_TARGET_ACCEPT: f64 = 0.4;
pub const INIT_ATTEMPTS: usize = 100;
pub const INIT_JITTER: f64 = 0.5;

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.n_chains < 2 {
            return fail("at least 2 chains are needed for R-hat");
        }
        if self.n_iterations == 0 || !self.n_iterations.is_multiple_of(2) {
            return fail("n_iterations must be positive and even");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return fail("warmup_fraction must lie in (0, 1)");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0, 1)");
        }
        if self.threshold_proposal_width.is_some_and(|w| !(w > 0.0)) {
            return fail("threshold_proposal_width must be positive");
        }
        if self.max_leapfrog_steps == 0 {
            return fail("max_leapfrog_steps must be positive");
        }
        if self.n_warmup() == self.n_iterations {
            return fail("no iterations left after warmup");
        }
        Ok(())
    }

    pub fn n_warmup(&self) -> usize {
        (self.n_iterations as f64 * self.warmup_fraction).round() as usize
    }

    pub fn n_kept(&self) -> usize {
        self.n_iterations - self.n_warmup()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainStats {
    /// Acceptance rate of the continuous block after warmup.
    pub accept_rate: f64,
    pub threshold_accept_rate: Option<f64>,
    /// Proposals whose density could not be evaluated.
    pub n_nonfinite: usize,
    pub n_divergent: usize,
    /// Final HMC step size or RWM proposal scale.
    pub step_size: f64,
}

/// Post-warmup draws, `draws[chain][iteration][parameter]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub stats: Vec<ChainStats>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    /// Draws per chain.
    pub fn n_draws(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of one parameter, per chain.
    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|c| c.iter().map(|row| row[param]).collect())
            .collect()
    }

    /// Draws of one parameter, all chains concatenated.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.draws
            .iter()
            .flat_map(|c| c.iter().map(move |row| row[param]))
            .collect()
    }
}

/// Run `config.n_chains` independent chains. Chain `c` uses the ChaCha8
/// stream `c` of `config.seed`, so results are reproducible whatever the
/// thread count.
pub fn sample_posterior<T: Target>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    if let Some((lo, hi)) = target.threshold_bounds() {
        if !(lo < hi) {
            return Err(Error::Config("threshold bounds need lower < upper".into()));
        }
    }
    let run = |c: usize| run_chain(target, config, c);
    let results: Vec<Result<(Vec<Vec<f64>>, ChainStats)>> = if config.parallel_chains {
        parallel::map_range(config.n_chains, run)
    } else {
        (0..config.n_chains).map(run).collect()
    };
    let mut draws = Vec::with_capacity(config.n_chains);
    let mut stats = Vec::with_capacity(config.n_chains);
    for r in results {
        let (d, s) = r?;
        draws.push(d);
        stats.push(s);
    }
    Ok(PosteriorDraws {
        names: target.names(),
        draws,
        stats,
    })
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Jittered starting point with finite density (and gradient, for HMC).
fn initialize<T: Target>(
    target: &T,
    rng: &mut ChaCha8Rng,
    need_gradient: bool,
    gradient: GradientMode,
) -> Result<(Vec<f64>, Option<f64>)> {
    let center = target.initial_center();
    let mut grad = vec![0.0; target.dim()];
    for _ in 0..INIT_ATTEMPTS {
        let theta: Vec<f64> = center
            .iter()
            .map(|c| c + rng.random_range(-INIT_JITTER..=INIT_JITTER))
            .collect();
        let xt = target.threshold_bounds().map(|(lo, hi)| rng.random_range(lo..=hi));
        let ok = if need_gradient {
            let lp = evaluate_gradient(target, gradient, &theta, xt, &mut grad);
            lp.is_finite() && grad.iter().all(|g| g.is_finite())
        } else {
            target.log_density(&theta, xt).is_finite()
        };
        if ok {
            return Ok((theta, xt));
        }
    }
    Err(Error::Sampler(format!(
        "no starting point with finite log density after {INIT_ATTEMPTS} attempts"
    )))
}

fn evaluate_gradient<T: Target>(
    target: &T,
    mode: GradientMode,
    theta: &[f64],
    xt: Option<f64>,
    grad: &mut [f64],
) -> f64 {
    match mode {
        GradientMode::Analytic if target.has_gradient() => target.log_density_gradient(theta, xt, grad),
        _ => finite_difference_gradient(target, theta, xt, grad),
    }
}

/// Fold `x` into `[lo, hi]` by reflection at the bounds.
pub(crate) fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let period = 2.0 * width;
    let y = (x - lo).rem_euclid(period);
    if y <= width {
        lo + y
    } else {
        hi - (y - width)
    }
}

/// Robbins-Monro gain at adaptation step `t` (1-based).
fn gain(t: usize) -> f64 {
    (t as f64).powf(-0.6)
}

/// Random-walk move for the threshold, reflected at its bounds.
struct ThresholdMove {
    lo: f64,
    hi: f64,
    log_width: f64,
    accepted: usize,
    proposed: usize,
}

impl ThresholdMove {
    fn new(bounds: (f64, f64), width: Option<f64>) -> Self {
        let (lo, hi) = bounds;
        Self {
            lo,
            hi,
            log_width: width.unwrap_or(0.1 * (hi - lo)).min(hi - lo).ln(),
            accepted: 0,
            proposed: 0,
        }
    }

    /// One Metropolis step; returns whether the move was accepted.
    #[allow(clippy::too_many_arguments)]
    fn step<T: Target>(
        &mut self,
        target: &T,
        theta: &[f64],
        xt: &mut f64,
        lp: &mut f64,
        rng: &mut ChaCha8Rng,
        adapt_step: Option<usize>,
        counting: bool,
        nonfinite: &mut usize,
    ) -> bool {
        let w = self.log_width.exp();
        let proposal = reflect(*xt + rng.random_range(-w..=w), self.lo, self.hi);
        let lp_new = target.log_density(theta, Some(proposal));
        let accept_prob = if lp_new.is_nan() {
            *nonfinite += 1;
            0.0
        } else {
            (lp_new - *lp).exp().min(1.0)
        };
        let accepted = rng.random::<f64>() < accept_prob;
        if accepted {
            *xt = proposal;
            *lp = lp_new;
        }
        if let Some(t) = adapt_step {
            let max = (self.hi - self.lo).ln();
            let min = max + (1e-6f64).ln();
            self.log_width = (self.log_width + gain(t) * (accept_prob - THRESHOLD_TARGET_ACCEPT)).clamp(min, max);
        }
        if counting {
            self.proposed += 1;
            self.accepted += accepted as usize;
        }
        accepted
    }

    fn rate(&self) -> f64 {
        self.accepted as f64 / self.proposed.max(1) as f64
    }
}

fn row(theta: &[f64], xt: Option<f64>) -> Vec<f64> {
    let mut out = theta.to_vec();
    out.extend(xt);
    out
}

fn run_chain<T: Target>(target: &T, config: &SamplerConfig, chain: usize) -> Result<(Vec<Vec<f64>>, ChainStats)> {
    let mut rng = chain_rng(config.seed, chain);
    match config.algorithm {
        Algorithm::AdaptiveRwm => run_rwm(target, config, &mut rng),
        Algorithm::Hmc => run_hmc(target, config, &mut rng),
    }
}

/// Running mean and scatter matrix.
struct Welford {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
    }

    fn covariance(&self) -> DMatrix<f64> {
        &self.m2 / (self.n as f64 - 1.0)
    }
}

fn run_rwm<T: Target>(target: &T, config: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<f64>>, ChainStats)> {
    let d = target.dim();
    let n_warmup = config.n_warmup();
    let (mut theta, mut xt) = initialize(target, rng, false, config.gradient)?;
    let mut lp = target.log_density(&theta, xt);
    let mut chol = DMatrix::from_diagonal(&DVector::from_vec(target.initial_scales()));
    let base_log_scale = (2.38 / (d.max(1) as f64).sqrt()).ln();
    let mut log_scale = base_log_scale;
    let mut threshold = target
        .threshold_bounds()
        .map(|b| ThresholdMove::new(b, config.threshold_proposal_width));
    // covariance estimated over [W/4, W/2), then re-estimated over [W/2, W)
    let first_window = n_warmup / 4;
    let second_window = n_warmup / 2;
    let mut welford = Welford::new(d);
    let mut stats = ChainStats::default();
    let mut accepted = 0usize;
    let mut kept = Vec::with_capacity(config.n_kept());
    let mut z = vec![0.0; d];
    let mut proposal = vec![0.0; d];
    for it in 0..config.n_iterations {
        let warmup = it < n_warmup;
        if d > 0 {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let step = &chol * DVector::from_column_slice(&z) * log_scale.exp();
            for i in 0..d {
                proposal[i] = theta[i] + step[i];
            }
            let lp_new = target.log_density(&proposal, xt);
            let accept_prob = if lp_new.is_nan() {
                stats.n_nonfinite += 1;
                0.0
            } else {
                (lp_new - lp).exp().min(1.0)
            };
            if rng.random::<f64>() < accept_prob {
                theta.copy_from_slice(&proposal);
                lp = lp_new;
                if !warmup {
                    accepted += 1;
                }
            }
            if warmup {
                log_scale += gain(it + 1) * (accept_prob - RWM_TARGET_ACCEPT);
                if it >= first_window {
                    if it == second_window {
                        welford = Welford::new(d);
                    }
                    welford.push(&theta);
                    let refresh = it + 1 == second_window
                        || (it >= second_window && (it + 1 - second_window).is_multiple_of(100));
                    if refresh && welford.n > 2 * d + 10 {
                        let cov = welford.covariance() + DMatrix::identity(d, d) * 1e-10;
                        if let Some(c) = cov.cholesky() {
                            chol = c.l();
                            log_scale = base_log_scale;
                        }
                    }
                }
            }
        }
        if let (Some(mv), Some(x)) = (threshold.as_mut(), xt.as_mut()) {
            mv.step(
                target,
                &theta,
                x,
                &mut lp,
                rng,
                warmup.then_some(it + 1),
                !warmup,
                &mut stats.n_nonfinite,
            );
        }
        if !warmup {
            kept.push(row(&theta, xt));
        }
    }
    stats.accept_rate = accepted as f64 / config.n_kept() as f64;
    stats.threshold_accept_rate = threshold.map(|m| m.rate());
    stats.step_size = log_scale.exp();
    Ok((kept, stats))
}

/// Dual-averaging step-size adaptation.
struct DualAveraging {
    mu: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: usize,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            t: 0,
            target,
        }
    }

    /// Update with the acceptance statistic; returns the next step size.
    fn update(&mut self, accept: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1;
        let t = self.t as f64;
        let w = 1.0 / (t + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        let log_eps = self.mu - t.sqrt() / GAMMA * self.h_bar;
        let eta = t.powf(-KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Phase {
    theta: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
}

struct Hamiltonian<'t, T: Target> {
    target: &'t T,
    mode: GradientMode,
    inv_mass: Vec<f64>,
}

impl<T: Target> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_mass).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    /// `n` leapfrog steps from `start` with momentum `p` (updated in place).
    fn leapfrog(&self, start: &Phase, p: &mut [f64], eps: f64, n: usize, xt: Option<f64>) -> Phase {
        let mut theta = start.theta.clone();
        let mut grad = start.grad.clone();
        let mut lp = start.lp;
        for _ in 0..n {
            for i in 0..p.len() {
                p[i] += 0.5 * eps * grad[i];
                theta[i] += eps * self.inv_mass[i] * p[i];
            }
            lp = evaluate_gradient(self.target, self.mode, &theta, xt, &mut grad);
            if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Phase {
                    theta,
                    grad,
                    lp: f64::NAN,
                };
            }
            for i in 0..p.len() {
                p[i] += 0.5 * eps * grad[i];
            }
        }
        Phase { theta, grad, lp }
    }

    fn momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inv_mass
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect()
    }

    /// Heuristic initial step size: halve or double until the one-step
    /// acceptance ratio crosses 1/2.
    fn reasonable_step(&self, state: &Phase, xt: Option<f64>, rng: &mut ChaCha8Rng) -> f64 {
        let mut eps = 1.0;
        let ratio = |eps: f64, rng: &mut ChaCha8Rng| {
            let mut p = self.momentum(rng);
            let h0 = -state.lp + self.kinetic(&p);
            let next = self.leapfrog(state, &mut p, eps, 1, xt);
            let h1 = -next.lp + self.kinetic(&p);
            if h1.is_finite() {
                (h0 - h1).exp()
            } else {
                0.0
            }
        };
        let up = ratio(eps, rng) > 0.5;
        for _ in 0..50 {
            let r = ratio(eps, rng);
            if up != (r > 0.5) {
                break;
            }
            eps = if up { eps * 2.0 } else { eps / 2.0 };
        }
        eps
    }
}

/// Warmup schedule: fast step-size phase, doubling windows that estimate the
/// diagonal mass matrix, then a final step-size phase.
/// Returns the first iteration of the first window and the window ends.
fn mass_windows(n_warmup: usize) -> (usize, Vec<usize>) {
    let (init, term, base) = if n_warmup >= 150 + 25 {
        (75, 50, 25)
    } else {
        let init = (0.15 * n_warmup as f64) as usize;
        let term = (0.1 * n_warmup as f64) as usize;
        (init, term, n_warmup - init - term)
    };
    let last = n_warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base.max(1);
    while start < last {
        let mut end = start + size;
        // fold a short final window into its predecessor
        if end + 2 * size > last {
            end = last;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    (init, ends)
}

fn run_hmc<T: Target>(target: &T, config: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<f64>>, ChainStats)> {
    let d = target.dim();
    let n_warmup = config.n_warmup();
    let (theta, mut xt) = initialize(target, rng, true, config.gradient)?;
    let mut ham = Hamiltonian {
        target,
        mode: config.gradient,
        inv_mass: target.initial_scales().iter().map(|s| s * s).collect(),
    };
    let mut grad = vec![0.0; d];
    let lp = evaluate_gradient(target, config.gradient, &theta, xt, &mut grad);
    let mut state = Phase { theta, grad, lp };
    let mut threshold = target
        .threshold_bounds()
        .map(|b| ThresholdMove::new(b, config.threshold_proposal_width));
    let mut eps = if d > 0 {
        ham.reasonable_step(&state, xt, rng)
    } else {
        1.0
    };
    let mut da = DualAveraging::new(eps, config.target_accept);
    let (window_start, window_ends) = mass_windows(n_warmup);
    let window_last = window_ends.last().copied().unwrap_or(0);
    let mut var_sum = vec![0.0; d];
    let mut var_sq = vec![0.0; d];
    let mut var_n = 0usize;
    let mut stats = ChainStats::default();
    let mut accept_sum = 0.0;
    let mut kept = Vec::with_capacity(config.n_kept());
    for it in 0..config.n_iterations {
        let warmup = it < n_warmup;
        if d > 0 {
            // path length jittered around pi/2 in mass-scaled units
            let path = std::f64::consts::FRAC_PI_2 * rng.random_range(0.5..1.5);
            let n_steps = ((path / eps).ceil() as usize).clamp(1, config.max_leapfrog_steps);
            let mut p = ham.momentum(rng);
            let h0 = -state.lp + ham.kinetic(&p);
            let next = ham.leapfrog(&state, &mut p, eps, n_steps, xt);
            let h1 = -next.lp + ham.kinetic(&p);
            let accept_prob = if next.lp.is_nan() || !h1.is_finite() {
                if next.lp.is_nan() {
                    stats.n_nonfinite += 1;
                }
                stats.n_divergent += 1;
                0.0
            } else if h1 - h0 > 1000.0 {
                stats.n_divergent += 1;
                0.0
            } else {
                (h0 - h1).exp().min(1.0)
            };
            if rng.random::<f64>() < accept_prob {
                state = next;
            }
            if warmup {
                eps = da.update(accept_prob);
                if it >= window_start && it < window_last {
                    var_n += 1;
                    for i in 0..d {
                        var_sum[i] += state.theta[i];
                        var_sq[i] += state.theta[i] * state.theta[i];
                    }
                }
                if window_ends.contains(&(it + 1)) && var_n > 2 {
                    let n = var_n as f64;
                    for i in 0..d {
                        let mean = var_sum[i] / n;
                        let var = ((var_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
                        // shrink toward a small constant
                        ham.inv_mass[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                    }
                    var_sum.fill(0.0);
                    var_sq.fill(0.0);
                    var_n = 0;
                    eps = ham.reasonable_step(&state, xt, rng);
                    da = DualAveraging::new(eps, config.target_accept);
                }
                if it + 1 == n_warmup {
                    eps = da.final_step();
                }
            } else {
                accept_sum += accept_prob;
            }
        }
        if let (Some(mv), Some(x)) = (threshold.as_mut(), xt.as_mut()) {
            let moved = mv.step(
                target,
                &state.theta,
                x,
                &mut state.lp,
                rng,
                warmup.then_some(it + 1),
                !warmup,
                &mut stats.n_nonfinite,
            );
            if moved && d > 0 {
                state.lp = evaluate_gradient(target, config.gradient, &state.theta, xt, &mut state.grad);
            }
        }
        if !warmup {
            kept.push(row(&state.theta, xt));
        }
    }
    stats.accept_rate = accept_sum / config.n_kept() as f64;
    stats.threshold_accept_rate = threshold.map(|m| m.rate());
    stats.step_size = eps;
    Ok((kept, stats))
}
