use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ctsurv::data::CalendarGrid;
use ctsurv::hazard::{LikelihoodOptions, ThresholdConfig, ThresholdMode, VariantKnowledge};
use ctsurv::inference::{Contrast, SamplerConfig, DEFAULT_PPC_DRAWS};
use ctsurv::prior::{FlatMean, SigmaSpec, DEFAULT_COEF_SD, DEFAULT_SIGMA_REF, SMALL_COEF_SD};
use ctsurv::simulation::{ReplicationConfig, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub origin: NaiveDate,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub interval_length_days: i64,
}

impl GridBlock {
    pub fn build(&self) -> ctsurv::Result<CalendarGrid> {
        let day = |d: NaiveDate| ctsurv::data::io::day_of(d, self.origin);
        CalendarGrid::new(day(self.start), day(self.end), self.interval_length_days)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// Variant labels; empty means one variant named `all`.
    #[serde(default)]
    pub variants: Vec<String>,
    /// Site labels in index order; sorted labels from the data when absent.
    #[serde(default)]
    pub sites: Option<Vec<String>>,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    #[serde(default)]
    pub llod: Option<f64>,
    #[serde(default)]
    pub threshold_bounds: Option<(f64, f64)>,
    pub grid: GridBlock,
    #[serde(default)]
    pub variant_knowledge: VariantKnowledge,
    #[serde(default)]
    pub likelihood: LikelihoodOptions,
}

impl ModelBlock {
    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            mode: self.threshold_mode,
            x_llod: self.llod,
            bounds: self.threshold_bounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    #[default]
    Built,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatBlock {
    #[serde(default = "flat_mean_default")]
    pub mean: FlatMean,
    pub sd: f64,
    #[serde(default)]
    pub mu_ref: Option<f64>,
}

fn flat_mean_default() -> FlatMean {
    FlatMean::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisspecifiedBlock {
    /// Study site to the site whose curve is used instead.
    pub sites: BTreeMap<String, String>,
    #[serde(default)]
    pub shift_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorBlock {
    pub source: PriorSource,
    pub sigma: SigmaSpec,
    pub sigma_ref: f64,
    /// SD of the normal priors on coefficients: 2 or 0.5.
    pub coefficient_sd: f64,
    /// Truncate the gamma priors to non-positive values.
    pub gamma_upper_zero: bool,
    pub flat: Option<FlatBlock>,
    pub misspecified: Option<MisspecifiedBlock>,
}

impl Default for PriorBlock {
    fn default() -> Self {
        Self {
            source: PriorSource::Built,
            sigma: SigmaSpec::FromBounds { scale: 1.0 },
            sigma_ref: DEFAULT_SIGMA_REF,
            coefficient_sd: DEFAULT_COEF_SD,
            gamma_upper_zero: false,
            flat: None,
            misspecified: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpcBlock {
    /// Days since enrollment.
    pub eval_days: Vec<i64>,
    pub n_draws: usize,
}

impl Default for PpcBlock {
    fn default() -> Self {
        Self {
            eval_days: vec![60, 180],
            n_draws: DEFAULT_PPC_DRAWS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    pub data: Option<PathBuf>,
    pub curve: Option<PathBuf>,
    pub variants: Option<PathBuf>,
    pub priors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub prior: PriorBlock,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub ppc: PpcBlock,
    #[serde(default)]
    pub io: IoBlock,
    #[serde(default)]
    pub contrasts: Vec<Contrast>,
}

/// What a subcommand needs from the io block.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub data: bool,
    pub prior: bool,
}

impl RunConfig {
    /// Every problem found, so that all of them can be reported at once.
    pub fn problems(&self, needs: Needs) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.model.grid.build() {
            out.push(e.to_string());
        }
        let t = self.model.threshold();
        if let Err(e) = t.validate() {
            out.push(e.to_string());
        }
        if self.model.threshold_bounds.is_some() && self.model.threshold_mode != ThresholdMode::Estimate {
            out.push("threshold_bounds are only allowed with threshold_mode `estimate`".into());
        }
        if let Err(e) = self.sampler.validate() {
            out.push(e.to_string());
        }
        let sd = self.prior.coefficient_sd;
        if sd != DEFAULT_COEF_SD && sd != SMALL_COEF_SD {
            out.push(format!(
                "prior.coefficient_sd must be {DEFAULT_COEF_SD} or {SMALL_COEF_SD}, got {sd}"
            ));
        }
        if self.prior.gamma_upper_zero && self.model.threshold_mode != ThresholdMode::Estimate {
            out.push("prior.gamma_upper_zero requires threshold_mode `estimate`".into());
        }
        if self.ppc.n_draws == 0 {
            out.push("ppc.n_draws must be positive".into());
        }
        let mut require = |name: &str, path: &Option<PathBuf>| match path {
            None => out.push(format!("io.{name} is required")),
            Some(p) if !p.is_file() => out.push(format!("io.{name}: file `{}` does not exist", p.display())),
            _ => {}
        };
        if needs.data {
            require("data", &self.io.data);
            if self.model.variants.len() > 1 {
                require("variants", &self.io.variants);
            }
        }
        if needs.prior {
            match self.prior.source {
                PriorSource::Built => require("curve", &self.io.curve),
                PriorSource::File => require("priors", &self.io.priors),
            }
        }
        out
    }

    /// Resolve relative io paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.io.data,
            &mut self.io.curve,
            &mut self.io.variants,
            &mut self.io.priors,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// `simulate` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub trial: SimConfig,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            trial: SimConfig::default(),
            seed: 1,
        }
    }
}

pub type ReplicateConfig = ReplicationConfig;
