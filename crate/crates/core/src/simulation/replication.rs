use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimConfig, TrialDesign, SIM_COVARIATE, SIM_VARIANT};
use crate::data::{EpidemicCurve, StudyData, VariantMix};
use crate::error::{Error, Result};
use crate::hazard::{LikelihoodOptions, ThresholdConfig, VariantKnowledge};
use crate::inference::{sample_posterior, split_rhat, Posterior, SamplerConfig};
use crate::math::{mean, quantile_sorted};
use crate::parallel;
use crate::prior::{
    build_prior, flat_prior, misspecified_prior, CoefficientPriors, FlatMean, PriorSpec, SigmaSpec, DEFAULT_COEF_SD,
    DEFAULT_SIGMA_REF, SIGMA_LADDER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Curve of the study site.
    Correct,
    /// Curve of another site, shifted in time.
    Misspecified,
    /// Constant zero `mu_r`.
    Flat,
}

impl PriorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Correct => "correct",
            PriorKind::Misspecified => "misspecified",
            PriorKind::Flat => "flat",
        }
    }
}

/// One baseline-hazard prior of the study: kind and constant `sigma_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorCell {
    pub kind: PriorKind,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub trial: SimConfig,
    pub sample_sizes: Vec<usize>,
    pub n_replications: usize,
    pub cells: Vec<PriorCell>,
    /// Study site to the site whose curve the misspecified prior uses.
    pub misspecified_sites: BTreeMap<String, String>,
    /// The misspecified curve at day `d` is the source curve at `d - shift`.
    pub misspecified_shift_days: i64,
    /// `mu_ref` of the flat prior.
    pub flat_mu_ref: f64,
    pub sigma_ref: f64,
    pub coef_sd: f64,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        let mut cells: Vec<PriorCell> = SIGMA_LADDER
            .iter()
            .map(|&sd| PriorCell {
                kind: PriorKind::Correct,
                sd,
            })
            .collect();
        cells.extend(SIGMA_LADDER.iter().map(|&sd| PriorCell {
            kind: PriorKind::Misspecified,
            sd,
        }));
        cells.extend([2.5, 5.0].map(|sd| PriorCell {
            kind: PriorKind::Flat,
            sd,
        }));
        let misspecified_sites = [("GA", "PA"), ("NY", "MO"), ("WA", "OH")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Self {
            trial: SimConfig::default(),
            sample_sizes: vec![100, 500, 1000, 5000],
            n_replications: 50,
            cells,
            misspecified_sites,
            misspecified_shift_days: 30,
            flat_mu_ref: -5.0,
            sigma_ref: DEFAULT_SIGMA_REF,
            coef_sd: DEFAULT_COEF_SD,
            sampler: SamplerConfig::default(),
            seed: 1,
        }
    }
}

impl ReplicationConfig {
    pub fn validate(&self) -> Result<()> {
        self.trial.validate()?;
        self.sampler.validate()?;
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.n_replications == 0 || self.cells.is_empty() {
            return Err(Error::Config("need at least one replication and one prior cell".into()));
        }
        if self.cells.iter().any(|c| !(c.sd > 0.0)) {
            return Err(Error::Config("prior cell sds must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior summary of one coefficient in one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub n: usize,
    pub prior: PriorKind,
    pub prior_sd: f64,
    pub replication: usize,
    pub param: String,
    pub truth: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub covers: bool,
    /// Largest split R-hat over all parameters of the fit.
    pub max_rhat: f64,
}

/// Bias and 95% CrI coverage of one coefficient in one `(N, prior)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub prior: PriorKind,
    pub prior_sd: f64,
    pub misspecified: bool,
    pub param: String,
    pub bias: f64,
    pub coverage: f64,
    pub n_reps: usize,
    pub n_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResults {
    /// The trial config with the calibrated hazard scale.
    pub trial: SimConfig,
    pub cells: Vec<CellSummary>,
    pub fits: Vec<FitRecord>,
    /// `(N, prior, sd, replication, message)` of failed fits.
    pub failures: Vec<(usize, PriorKind, f64, usize, String)>,
}

impl ReplicationResults {
    pub fn cell(&self, n: usize, prior: PriorKind, sd: f64, param: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.prior == prior && c.prior_sd == sd && c.param == param)
    }
}

fn coefficient_names() -> [(String, &'static str); 2] {
    [
        (format!("gamma[{SIM_VARIANT}]"), "gamma"),
        (format!("beta[{SIM_COVARIATE}]"), "beta"),
    ]
}

/// The prior of `cell` for a simulated dataset.
pub(crate) fn cell_prior(
    config: &ReplicationConfig,
    cell: PriorCell,
    data: &StudyData,
    curve: &EpidemicCurve,
) -> Result<PriorSpec> {
    let coefs = CoefficientPriors::weakly_informative(1, 1, &ThresholdConfig::none(), config.coef_sd);
    let sigma = SigmaSpec::Constant { sd: cell.sd };
    match cell.kind {
        PriorKind::Correct => build_prior(data, curve, sigma, config.sigma_ref, coefs),
        PriorKind::Misspecified => misspecified_prior(
            data,
            curve,
            &config.misspecified_sites,
            config.misspecified_shift_days,
            sigma,
            config.sigma_ref,
            coefs,
        ),
        PriorKind::Flat => {
            let base = build_prior(data, curve, sigma, config.sigma_ref, coefs)?;
            Ok(flat_prior(&base, FlatMean::Zero, cell.sd, Some(config.flat_mu_ref)))
        }
    }
}

/// `(parameter, mean, lower, upper, max R-hat)`.
type ParamEstimate = (String, f64, f64, f64, f64);

fn fit_one(
    config: &ReplicationConfig,
    cell: PriorCell,
    data: &StudyData,
    curve: &EpidemicCurve,
    seed: u64,
) -> Result<Vec<ParamEstimate>> {
    let prior = cell_prior(config, cell, data, curve)?;
    let mix = VariantMix::single(data.grid(), data.n_sites());
    let posterior = Posterior::new(
        data,
        &mix,
        prior,
        ThresholdConfig::none(),
        LikelihoodOptions::default(),
        VariantKnowledge::Unknown,
    )?;
    let sampler = SamplerConfig {
        seed,
        ..config.sampler.clone()
    };
    let draws = sample_posterior(&posterior, &sampler)?;
    let max_rhat = (0..draws.names.len())
        .map(|j| split_rhat(&draws.chains_of(j)))
        .fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { a } else { a.max(b) });
    coefficient_names()
        .into_iter()
        .map(|(name, _)| {
            let j = draws
                .param_index(&name)
                .ok_or_else(|| Error::Sampler(format!("no draws for `{name}`")))?;
            let mut pooled = draws.pooled(j);
            pooled.sort_by(f64::total_cmp);
            Ok((
                name,
                mean(&pooled),
                quantile_sorted(&pooled, 0.025),
                quantile_sorted(&pooled, 0.975),
                max_rhat,
            ))
        })
        .collect()
}

/// Simulates `n_replications` trials per sample size and fits each under every
/// prior cell. Dataset `r` of sample size `i` uses ChaCha8 stream
/// `(i << 32) | r` of `seed`; all cells of a dataset share the sampler seed.
pub fn run_replication_study(config: &ReplicationConfig, curve: &EpidemicCurve) -> Result<ReplicationResults> {
    config.validate()?;
    let design = TrialDesign::new(&config.trial, curve)?;
    let datasets: Vec<(usize, usize)> = (0..config.sample_sizes.len())
        .flat_map(|i| (0..config.n_replications).map(move |r| (i, r)))
        .collect();
    let simulated: Vec<Result<(StudyData, u64)>> = parallel::map_ordered(&datasets, |&(i, r)| {
        let mut trial = design.config().clone();
        trial.n_subjects = config.sample_sizes[i];
        let d = TrialDesign::new(&trial, curve)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(((i as u64) << 32) | r as u64);
        let data = d.simulate(&mut rng)?;
        Ok((data, rng.next_u64()))
    });
    let simulated: Vec<(StudyData, u64)> = simulated.into_iter().collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..simulated.len())
        .flat_map(|d| (0..config.cells.len()).map(move |c| (d, c)))
        .collect();
    let outcomes = parallel::map_ordered(&jobs, |&(d, c)| {
        let (data, seed) = &simulated[d];
        let (i, r) = datasets[d];
        let out = fit_one(config, config.cells[c], data, curve, *seed);
        log::info!(
            "N={} rep={} prior={}:{} {}",
            config.sample_sizes[i],
            r,
            config.cells[c].kind.as_str(),
            config.cells[c].sd,
            if out.is_ok() { "done" } else { "failed" }
        );
        out
    });

    let truth = |short: &str| {
        if short == "gamma" {
            config.trial.gamma
        } else {
            config.trial.beta
        }
    };
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (&(d, c), outcome) in jobs.iter().zip(outcomes) {
        let (i, r) = datasets[d];
        let cell = config.cells[c];
        let n = config.sample_sizes[i];
        match outcome {
            Ok(rows) => {
                for ((name, mean, lower, upper, max_rhat), (_, short)) in rows.into_iter().zip(coefficient_names()) {
                    let t = truth(short);
                    fits.push(FitRecord {
                        n,
                        prior: cell.kind,
                        prior_sd: cell.sd,
                        replication: r,
                        param: name,
                        truth: t,
                        mean,
                        lower,
                        upper,
                        covers: lower <= t && t <= upper,
                        max_rhat,
                    });
                }
            }
            Err(e) => {
                log::warn!(
                    "fit failed: N={n} rep={r} prior={}:{}: {e}",
                    cell.kind.as_str(),
                    cell.sd
                );
                failures.push((n, cell.kind, cell.sd, r, e.to_string()));
            }
        }
    }

    let mut cells = Vec::new();
    for &n in &config.sample_sizes {
        for cell in &config.cells {
            let n_failures = failures
                .iter()
                .filter(|f| f.0 == n && f.1 == cell.kind && f.2 == cell.sd)
                .count();
            for (name, _) in coefficient_names() {
                let rows: Vec<&FitRecord> = fits
                    .iter()
                    .filter(|f| f.n == n && f.prior == cell.kind && f.prior_sd == cell.sd && f.param == name)
                    .collect();
                let k = rows.len();
                let (bias, coverage) = if k == 0 {
                    (f64::NAN, f64::NAN)
                } else {
                    (
                        rows.iter().map(|f| f.mean - f.truth).sum::<f64>() / k as f64,
                        rows.iter().filter(|f| f.covers).count() as f64 / k as f64,
                    )
                };
                cells.push(CellSummary {
                    n,
                    prior: cell.kind,
                    prior_sd: cell.sd,
                    misspecified: cell.kind == PriorKind::Misspecified,
                    param: name,
                    bias,
                    coverage,
                    n_reps: k,
                    n_failures,
                });
            }
        }
    }
    Ok(ReplicationResults {
        trial: design.config().clone(),
        cells,
        fits,
        failures,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cells.csv`: N, prior, prior_sd, misspecified, param, bias, coverage, n_reps, n_failures.
pub fn write_cells(path: impl AsRef<Path>, cells: &[CellSummary]) -> Result<()> {
    write_rows(path.as_ref(), cells)
}

/// One row per fit and coefficient.
pub fn write_fits(path: impl AsRef<Path>, fits: &[FitRecord]) -> Result<()> {
    write_rows(path.as_ref(), fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Algorithm;
    use crate::simulation::synthetic_curves;

    #[test]
    fn default_cells_cover_ladder() {
        let c = ReplicationConfig::default();
        assert_eq!(c.cells.len(), 10);
        assert_eq!(c.misspecified_sites["NY"], "MO");
        c.validate().unwrap();
    }

    #[test]
    fn cell_priors() {
        let config = ReplicationConfig::default();
        let curve = synthetic_curves();
        let trial = SimConfig {
            n_subjects: 300,
            ..Default::default()
        };
        let data = super::super::simulate_trial(&trial, &curve, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let correct = cell_prior(
            &config,
            PriorCell {
                kind: PriorKind::Correct,
                sd: 0.25,
            },
            &data,
            &curve,
        )
        .unwrap();
        let wrong = cell_prior(
            &config,
            PriorCell {
                kind: PriorKind::Misspecified,
                sd: 0.25,
            },
            &data,
            &curve,
        )
        .unwrap();
        let flat = cell_prior(
            &config,
            PriorCell {
                kind: PriorKind::Flat,
                sd: 5.0,
            },
            &data,
            &curve,
        )
        .unwrap();
        assert_ne!(correct.sites[0].mu_r, wrong.sites[0].mu_r);
        assert!(flat
            .sites
            .iter()
            .all(|s| s.mu_ref == -5.0 && s.mu_r.iter().all(|m| *m == 0.0)));
        assert!(correct.sites[1].sigma_r.iter().all(|s| *s == 0.25));
        assert_eq!(correct.sites[2].mu_r[correct.sites[2].ref_interval], 0.0);
    }

    #[test]
    fn tiny_study_runs_and_writes_cells() {
        let config = ReplicationConfig {
            trial: SimConfig {
                interval_length_days: 60,
                ..Default::default()
            },
            sample_sizes: vec![120],
            n_replications: 2,
            cells: vec![
                PriorCell {
                    kind: PriorKind::Correct,
                    sd: 0.25,
                },
                PriorCell {
                    kind: PriorKind::Flat,
                    sd: 5.0,
                },
            ],
            sampler: SamplerConfig {
                n_chains: 2,
                n_iterations: 200,
                algorithm: Algorithm::Hmc,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = run_replication_study(&config, &synthetic_curves()).unwrap();
        assert_eq!(res.cells.len(), 4);
        assert_eq!(res.fits.len(), 8);
        assert!(res.trial.hazard_scale.is_some());
        let c = res.cell(120, PriorKind::Correct, 0.25, "gamma[all]").unwrap();
        assert_eq!(c.n_reps + c.n_failures, 2);
        let again = run_replication_study(&config, &synthetic_curves()).unwrap();
        assert_eq!(res, again);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        write_cells(&path, &res.cells).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "N,prior,prior_sd,misspecified,param,bias,coverage,n_reps,n_failures\n120,correct,0.25,false,gamma[all],"
        ));
    }
}
