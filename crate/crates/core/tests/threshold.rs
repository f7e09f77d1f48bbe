//! The Gibbs-style threshold move checked against direct marginalization.

use ctsurv::data::VariantMix;
use ctsurv::hazard::{LikelihoodOptions, ThresholdConfig, VariantKnowledge};
use ctsurv::inference::{ess, sample_posterior, Posterior, SamplerConfig};
use ctsurv::prior::{build_prior, CoefPrior, CoefficientPriors, SigmaSpec, DEFAULT_SIGMA_REF};
use ctsurv::simulation::{simulate_seeded, synthetic_curves, Biomarker, SimConfig, ThresholdTruth, TrialDesign};

const LOWER: f64 = -2.0;
const UPPER: f64 = 2.0;

#[test]
fn threshold_sampler_matches_grid_marginal() {
    let tau = -0.3;
    let trial = SimConfig {
        n_subjects: 300,
        sites: vec!["GA".into()],
        interval_length_days: 460,
        biomarker: Biomarker::Normal { mean: 0.0, sd: 1.0 },
        beta: 0.0,
        gamma: -0.5,
        threshold: Some(ThresholdTruth {
            value: tau,
            gamma_t: -1.5,
        }),
        ..Default::default()
    };
    let design = TrialDesign::new(&trial, &synthetic_curves()).unwrap();
    let data = simulate_seeded(&design, 77, 0).unwrap();
    assert_eq!(data.grid().n_intervals(), 1);
    let mix = VariantMix::single(data.grid(), data.n_sites());
    let threshold = ThresholdConfig::estimate(LOWER, LOWER, UPPER);
    let mut coefs = CoefficientPriors::weakly_informative(1, 1, &threshold, 2.0);
    coefs.gamma = vec![CoefPrior::Fixed { value: -0.5 }];
    coefs.gamma_t = vec![CoefPrior::Fixed { value: -1.5 }];
    coefs.beta = vec![CoefPrior::Fixed { value: 0.0 }];
    let prior = build_prior(
        &data,
        &synthetic_curves(),
        SigmaSpec::Constant { sd: 1.0 },
        DEFAULT_SIGMA_REF,
        coefs,
    )
    .unwrap();
    let post = Posterior::new(
        &data,
        &mix,
        prior,
        threshold,
        LikelihoodOptions::default(),
        VariantKnowledge::Unknown,
    )
    .unwrap();
    assert_eq!(post.layout().dim(), 1);
    let log_post = |lh: f64, xt: f64| post.log_posterior(&post.layout().params(&[lh], Some(xt))).unwrap();

    // the likelihood is constant in X_T between consecutive distinct X values
    let mut cuts: Vec<f64> = data
        .subjects()
        .iter()
        .map(|s| s.x.value_at(s.enroll_day))
        .filter(|x| *x > LOWER && *x < UPPER)
        .collect();
    cuts.extend([LOWER, UPPER]);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let segments: Vec<(f64, f64)> = cuts.windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0])).collect();

    let centre = (0..1200)
        .map(|i| -12.0 + 0.01 * i as f64)
        .max_by(|a, b| log_post(*a, tau).total_cmp(&log_post(*b, tau)))
        .unwrap();
    let lh_grid: Vec<f64> = (0..801).map(|i| centre - 4.0 + 8.0 * i as f64 / 800.0).collect();
    let mut cells = Vec::with_capacity(lh_grid.len() * segments.len());
    for &lh in &lh_grid {
        for &(mid, width) in &segments {
            cells.push((lh, mid, log_post(lh, mid) + width.ln()));
        }
    }
    let peak = cells.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let (mut xt_mean, mut lh_mean, mut below) = (0.0, 0.0, 0.0);
    for &(lh, mid, lp) in &cells {
        let w = (lp - peak).exp();
        total += w;
        xt_mean += w * mid;
        lh_mean += w * lh;
        below += w * f64::from(mid < tau);
    }
    let (xt_mean, lh_mean, below) = (xt_mean / total, lh_mean / total, below / total);
    let edge = cells
        .iter()
        .filter(|c| c.0 == lh_grid[0] || c.0 == lh_grid[800])
        .map(|c| c.2)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(edge - peak < -20.0, "log_h_ref grid too narrow");

    let config = SamplerConfig {
        n_chains: 4,
        n_iterations: 4000,
        seed: 78,
        ..Default::default()
    };
    let draws = sample_posterior(&post, &config).unwrap();
    let check = |name: &str, f: &dyn Fn(f64) -> f64, want: f64| {
        let chains: Vec<Vec<f64>> = draws
            .chains_of(draws.param_index(name).unwrap())
            .into_iter()
            .map(|c| c.into_iter().map(f).collect())
            .collect();
        let pooled: Vec<f64> = chains.concat();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / ess(&chains)).sqrt();
        assert!(
            (mean - want).abs() < 4.0 * se,
            "{name}: sampler {mean} vs grid {want} (se {se})"
        );
    };
    check("x_threshold", &|v| v, xt_mean);
    check("x_threshold", &|v| f64::from(v < tau), below);
    check("log_h_ref[GA]", &|v| v, lh_mean);
}
