use std::path::{Path, PathBuf};

use ctsurv::data::io::{self, ParticipantLabels};
use ctsurv::data::{CalendarGrid, EpidemicCurve, StudyData, VariantMix};
use ctsurv::hazard::HazardModel;
use ctsurv::inference::{
    posterior_predict_cuminc, read_draws, sample_posterior, summarize as summarize_draws, unconverged, write_draws,
    write_ppc, write_summary, Contrast, Posterior, SummaryRow, RHAT_THRESHOLD,
};
use ctsurv::prior::{
    build_prior, flat_prior, load_priors, misspecified_prior, save_priors, CoefPrior, CoefficientPriors, PriorSpec,
};
use ctsurv::simulation::{curve_origin, run_replication_study, synthetic_curves, write_cells, write_fits, TrialDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use crate::config::{Needs, PriorSource, ReplicateConfig, RunConfig, SimulateConfig};
use crate::manifest::Manifest;
use crate::{Failure, FitArgs, ModelArgs, PpcArgs, ReplicateArgs, SimulateArgs, SummarizeArgs};

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn create_out(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))
}

/// Config with relative io paths resolved against the config file and
/// command-line paths applied on top.
fn load_run_config(args: &ModelArgs) -> Result<RunConfig, Failure> {
    let mut config: RunConfig = read_json(&args.config)?;
    config.rebase(args.config.parent().unwrap_or(Path::new(".")));
    let set = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
        if flag.is_some() {
            *slot = flag.clone();
        }
    };
    set(&mut config.io.data, &args.data);
    set(&mut config.io.curve, &args.curve);
    set(&mut config.io.variants, &args.variants);
    set(&mut config.io.priors, &args.priors);
    if args.priors.is_some() {
        config.prior.source = PriorSource::File;
    }
    Ok(config)
}

fn check(config: &RunConfig, needs: Needs) -> Outcome {
    let problems = config.problems(needs);
    if problems.is_empty() {
        return Ok(());
    }
    Err(invalid(format!(
        "{} configuration problem(s):\n  {}",
        problems.len(),
        problems.join("\n  ")
    )))
}

struct Model {
    grid: CalendarGrid,
    data: StudyData,
    mix: VariantMix,
}

fn load_model(config: &RunConfig) -> Result<Model, Failure> {
    let grid = config.model.grid.build()?;
    let origin = config.model.grid.origin;
    let labels = ParticipantLabels {
        sites: config.model.sites.clone(),
        variants: config.model.variants.clone(),
    };
    let data = io::load_participants(config.io.data.as_ref().unwrap(), &grid, origin, &labels)?;
    let mix = match &config.io.variants {
        Some(path) => io::load_variant_proportions(path, &grid, origin, data.sites(), data.variants())?,
        None if data.n_variants() == 1 => VariantMix::single(&grid, data.n_sites()),
        None => return Err(invalid("io.variants is required with more than one variant")),
    };
    Ok(Model { grid, data, mix })
}

fn coefficient_priors(config: &RunConfig, data: &StudyData) -> CoefficientPriors {
    let threshold = config.model.threshold();
    let sd = config.prior.coefficient_sd;
    let mut c = CoefficientPriors::weakly_informative(data.n_variants(), data.covariates().len(), &threshold, sd);
    if config.prior.gamma_upper_zero {
        c.gamma = vec![CoefPrior::NormalUpperZero { mean: 0.0, sd }; data.n_variants()];
    }
    c
}

fn load_prior(config: &RunConfig, model: &Model) -> Result<PriorSpec, Failure> {
    let p = &config.prior;
    let prior = match p.source {
        PriorSource::File => load_priors(config.io.priors.as_ref().unwrap())?,
        PriorSource::Built => {
            let curve =
                io::load_epidemic_curve(config.io.curve.as_ref().unwrap(), &model.grid, config.model.grid.origin)?;
            let coefs = coefficient_priors(config, &model.data);
            let built = match &p.misspecified {
                Some(m) => {
                    misspecified_prior(&model.data, &curve, &m.sites, m.shift_days, p.sigma, p.sigma_ref, coefs)?
                }
                None => build_prior(&model.data, &curve, p.sigma, p.sigma_ref, coefs)?,
            };
            match &p.flat {
                Some(f) => flat_prior(&built, f.mean, f.sd, f.mu_ref),
                None => built,
            }
        }
    };
    prior.validate(&model.data, &config.model.threshold())?;
    Ok(prior)
}

fn record_inputs(manifest: &mut Manifest, config: &RunConfig, config_path: &Path, draws: Option<&Path>) -> Outcome {
    manifest.add_input("config", config_path)?;
    let io = &config.io;
    let files = [
        ("data", io.data.as_deref()),
        ("variants", io.variants.as_deref()),
        (
            "curve",
            if config.prior.source == PriorSource::Built {
                io.curve.as_deref()
            } else {
                None
            },
        ),
        (
            "priors",
            if config.prior.source == PriorSource::File {
                io.priors.as_deref()
            } else {
                None
            },
        ),
        ("draws", draws),
    ];
    for (label, path) in files {
        if let Some(p) = path {
            manifest.add_input(label, p)?;
        }
    }
    Ok(())
}

fn posterior(config: &RunConfig, model: &Model, prior: PriorSpec) -> Result<Posterior, Failure> {
    Ok(Posterior::new(
        &model.data,
        &model.mix,
        prior,
        config.model.threshold(),
        config.model.likelihood,
        config.model.variant_knowledge,
    )?)
}

fn convergence_gate(rows: &[SummaryRow]) -> Outcome {
    let bad = unconverged(rows, RHAT_THRESHOLD);
    if bad.is_empty() {
        return Ok(());
    }
    let listing: Vec<String> = bad
        .iter()
        .map(|r| format!("{} (R-hat {:.4})", r.parameter, r.rhat))
        .collect();
    Err(Failure::Sampler(format!(
        "{} parameter(s) with R-hat not below {RHAT_THRESHOLD}:\n  {}",
        bad.len(),
        listing.join("\n  ")
    )))
}

pub fn fit(args: FitArgs) -> Outcome {
    let mut config = load_run_config(&args.model)?;
    if let Some(s) = args.seed {
        config.sampler.seed = s;
    }
    if let Some(c) = args.chains {
        config.sampler.n_chains = c;
    }
    if let Some(n) = args.iterations {
        config.sampler.n_iterations = n;
    }
    check(
        &config,
        Needs {
            data: true,
            prior: true,
        },
    )?;
    let model = load_model(&config)?;
    let prior = load_prior(&config, &model)?;
    let post = posterior(&config, &model, prior.clone())?;
    for c in &config.contrasts {
        if !post.layout().draw_names().contains(&c.parameter) {
            return Err(invalid(format!("contrast on unknown parameter `{}`", c.parameter)));
        }
    }
    let mut manifest = Manifest::new("fit", &config, config.sampler.seed).map_err(|e| invalid(e.to_string()))?;
    record_inputs(&mut manifest, &config, &args.model.config, None)?;

    let draws = sample_posterior(&post, &config.sampler)?;
    let rows = summarize_draws(&draws, &config.contrasts)?;
    let out = &args.model.out;
    create_out(out)?;
    write_draws(out.join("draws.csv"), &draws)?;
    write_summary(out.join("summary.csv"), &rows)?;
    save_priors(&out.join("priors.json"), &prior)?;
    manifest.outputs = vec!["draws.csv".into(), "summary.csv".into(), "priors.json".into()];
    manifest.write(out)?;
    for (c, s) in draws.stats.iter().enumerate() {
        if s.n_divergent > 0 {
            log::warn!("chain {c}: {} divergent transitions", s.n_divergent);
        }
    }
    if args.require_converged {
        convergence_gate(&rows)?;
    }
    Ok(())
}

pub fn prior_build(args: ModelArgs) -> Outcome {
    let config = load_run_config(&args)?;
    check(
        &config,
        Needs {
            data: true,
            prior: true,
        },
    )?;
    let model = load_model(&config)?;
    let prior = load_prior(&config, &model)?;
    let mut manifest =
        Manifest::new("prior-build", &config, config.sampler.seed).map_err(|e| invalid(e.to_string()))?;
    record_inputs(&mut manifest, &config, &args.config, None)?;
    create_out(&args.out)?;
    save_priors(&args.out.join("priors.json"), &prior)?;
    manifest.outputs = vec!["priors.json".into()];
    manifest.write(&args.out)?;
    Ok(())
}

pub fn ppc(args: PpcArgs) -> Outcome {
    let mut config = load_run_config(&args.model)?;
    if let Some(days) = &args.eval_days {
        config.ppc.eval_days = days.clone();
    }
    if let Some(n) = args.n_draws {
        config.ppc.n_draws = n;
    }
    if let Some(s) = args.seed {
        config.sampler.seed = s;
    }
    check(
        &config,
        Needs {
            data: true,
            prior: true,
        },
    )?;
    if !args.draws.is_file() {
        return Err(invalid(format!("draws file `{}` does not exist", args.draws.display())));
    }
    let model = load_model(&config)?;
    let prior = load_prior(&config, &model)?;
    let post = posterior(&config, &model, prior)?;
    let draws = read_draws(&args.draws)?;
    if draws.names != post.layout().draw_names() {
        return Err(invalid("draws columns do not match the model parameters"));
    }
    let mut manifest = Manifest::new("ppc", &config, config.sampler.seed).map_err(|e| invalid(e.to_string()))?;
    record_inputs(&mut manifest, &config, &args.model.config, Some(&args.draws))?;
    let hazard =
        HazardModel::new(&model.grid, &model.mix, config.model.threshold()).with_options(config.model.likelihood);
    let rows = posterior_predict_cuminc(
        &draws,
        post.layout(),
        &hazard,
        &model.data,
        &config.ppc.eval_days,
        config.ppc.n_draws,
        config.sampler.seed,
    )?;
    create_out(&args.model.out)?;
    write_ppc(args.model.out.join("ppc.csv"), &rows)?;
    manifest.outputs = vec!["ppc.csv".into()];
    manifest.write(&args.model.out)?;
    Ok(())
}

fn load_curve_for(
    path: &Option<PathBuf>,
    grid: &CalendarGrid,
    origin: chrono::NaiveDate,
) -> Result<EpidemicCurve, Failure> {
    match path {
        Some(p) => Ok(io::load_epidemic_curve(p, grid, origin)?),
        None => Ok(synthetic_curves()),
    }
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let mut config: SimulateConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SimulateConfig::default(),
    };
    if let Some(n) = args.n_subjects {
        config.trial.n_subjects = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.trial.validate()?;
    let grid = config.trial.grid()?;
    let curve = load_curve_for(&args.curve, &grid, config.trial.origin)?;
    let design = TrialDesign::new(&config.trial, &curve)?;
    config.trial = design.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let data = design.simulate(&mut rng)?;

    let mut manifest = Manifest::new("simulate", &config, config.seed).map_err(|e| invalid(e.to_string()))?;
    if let Some(p) = &args.config {
        manifest.add_input("config", p)?;
    }
    if let Some(p) = &args.curve {
        manifest.add_input("curve", p)?;
    }
    create_out(&args.out)?;
    io::save_participants(&data, args.out.join("participants.csv"))?;
    let mut outputs = vec!["participants.csv".to_string(), "sim-config.json".to_string()];
    if args.curve.is_none() {
        let file = std::fs::File::create(args.out.join("curve.csv"))?;
        io::write_epidemic_curve(&curve, curve_origin(), std::io::BufWriter::new(file))?;
        outputs.push("curve.csv".into());
    }
    let resolved = serde_json::to_string_pretty(&config).map_err(|e| invalid(e.to_string()))?;
    std::fs::write(args.out.join("sim-config.json"), resolved + "\n")?;
    manifest.outputs = outputs;
    manifest.write(&args.out)?;
    Ok(())
}

pub fn replicate(args: ReplicateArgs) -> Outcome {
    let mut config: ReplicateConfig = read_json(&args.config)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    let grid = config.trial.grid()?;
    let curve = load_curve_for(&args.curve, &grid, config.trial.origin)?;
    let mut manifest = Manifest::new("replicate", &config, config.seed).map_err(|e| invalid(e.to_string()))?;
    manifest.add_input("config", &args.config)?;
    if let Some(p) = &args.curve {
        manifest.add_input("curve", p)?;
    }
    let results = run_replication_study(&config, &curve)?;
    create_out(&args.out)?;
    write_cells(args.out.join("cells.csv"), &results.cells)?;
    write_fits(args.out.join("fits.csv"), &results.fits)?;
    manifest.outputs = vec!["cells.csv".into(), "fits.csv".into()];
    manifest.write(&args.out)?;
    Ok(())
}

fn parse_contrast(raw: &str) -> Result<Contrast, Failure> {
    let (name, dx) = raw
        .rsplit_once('=')
        .ok_or_else(|| invalid(format!("contrast `{raw}` is not `parameter=delta_x`")))?;
    let delta_x = dx
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| invalid(format!("contrast `{raw}`: invalid delta_x")))?;
    Ok(Contrast {
        parameter: name.to_string(),
        delta_x,
    })
}

pub fn summarize(args: SummarizeArgs) -> Outcome {
    let contrasts = args
        .contrast
        .iter()
        .map(|c| parse_contrast(c))
        .collect::<Result<Vec<_>, _>>()?;
    let draws = read_draws(&args.draws)?;
    let rows = summarize_draws(&draws, &contrasts)?;
    let mut manifest = Manifest::new("summarize", &contrasts, 0).map_err(|e| invalid(e.to_string()))?;
    manifest.add_input("draws", &args.draws)?;
    create_out(&args.out)?;
    write_summary(args.out.join("summary.csv"), &rows)?;
    manifest.outputs = vec!["summary.csv".into()];
    manifest.write(&args.out)?;
    if args.require_converged {
        convergence_gate(&rows)?;
    }
    Ok(())
}
