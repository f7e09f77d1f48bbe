use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::sampler::PosteriorDraws;
use crate::error::{Error, Result};
use crate::math::{mean, quantile_sorted, variance};

/// R-hat below which a parameter counts as converged.
pub const RHAT_THRESHOLD: f64 = 1.05;

/// Split each chain into halves, dropping the middle draw of odd-length chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks, `Phi^-1((r - 3/8) / (S + 1/4))`, ties averaged.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize)> = chains.iter().flatten().copied().zip(0..).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len();
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &pooled[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let mut it = ranks.into_iter();
    chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|_| normal.inverse_cdf((it.next().unwrap() - 0.375) / (s as f64 + 0.25)))
                .collect()
        })
        .collect()
}

/// Classic potential scale reduction of equal-length chains.
fn classic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let b = n * variance(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn degenerate(chains: &[Vec<f64>], what: &str) -> bool {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        log::warn!("{what} needs at least 2 chains of 4 draws");
        return true;
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|x| *x == first) {
        log::warn!("{what} undefined for constant draws");
        return true;
    }
    false
}

/// Rank-normalized split R-hat: the larger of the bulk and folded (tail)
/// values. NaN for constant draws or fewer than 2 chains of 4 draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if degenerate(chains, "R-hat") {
        return f64::NAN;
    }
    let halves = split(chains);
    let bulk = classic_rhat(&rank_normalize(&halves));
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let median = quantile_sorted(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - median).abs()).collect())
        .collect();
    let tail = classic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Biased autocovariance at `lag` of a chain with mean `m`.
fn autocov(c: &[f64], m: f64, lag: usize) -> f64 {
    let n = c.len();
    c[..n - lag]
        .iter()
        .zip(&c[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// ESS of equal-length chains via Geyer's initial monotone sequence on the
/// combined-chain autocorrelations.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, 0)).collect();
    let mean_var = mean(&acov0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if chains.len() > 1 {
        var_plus += variance(&means);
    }
    let rho = |lag: usize| -> f64 {
        let acov_t = mean(
            &chains
                .iter()
                .zip(&means)
                .map(|(c, mu)| autocov(c, *mu, lag))
                .collect::<Vec<_>>(),
        );
        1.0 - (mean_var - acov_t) / var_plus
    };
    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = (if t == 0 { 1.0 } else { rho(t) }) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau_sum += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / (m * nf).log10().max(1.0));
    let total = m * nf;
    (total / tau).min(total * total.log10())
}

/// Bulk effective sample size: ESS of the rank-normalized split chains.
/// NaN under the same conditions as [`split_rhat`].
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    if degenerate(chains, "ESS") {
        return f64::NAN;
    }
    ess_of(&rank_normalize(&split(chains)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q50: f64,
    pub q97_5: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Hazard-ratio contrast `exp(coef * delta_x)` for a named coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub parameter: String,
    pub delta_x: f64,
}

fn summary_row(parameter: String, chains: &[Vec<f64>]) -> SummaryRow {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let sd = if pooled.len() > 1 {
        variance(&pooled).max(0.0).sqrt()
    } else {
        0.0
    };
    SummaryRow {
        parameter,
        mean: mean(&pooled),
        sd,
        q2_5: quantile_sorted(&pooled, 0.025),
        q50: quantile_sorted(&pooled, 0.5),
        q97_5: quantile_sorted(&pooled, 0.975),
        rhat: split_rhat(chains),
        ess: ess(chains),
    }
}

/// One row per parameter, then `HR[...]` and `RRR[...]` rows (`RRR = 1 - HR`)
/// for each contrast.
pub fn summarize(draws: &PosteriorDraws, contrasts: &[Contrast]) -> Result<Vec<SummaryRow>> {
    if draws.n_draws() == 0 {
        return Err(Error::Sampler("no draws to summarize".into()));
    }
    let mut rows: Vec<SummaryRow> = draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| summary_row(name.clone(), &draws.chains_of(j)))
        .collect();
    for c in contrasts {
        let j = draws
            .param_index(&c.parameter)
            .ok_or_else(|| Error::Config(format!("contrast on unknown parameter `{}`", c.parameter)))?;
        let hr: Vec<Vec<f64>> = draws
            .chains_of(j)
            .iter()
            .map(|ch| ch.iter().map(|g| (g * c.delta_x).exp()).collect())
            .collect();
        let rrr: Vec<Vec<f64>> = hr.iter().map(|ch| ch.iter().map(|h| 1.0 - h).collect()).collect();
        let label = format!("{};dx={}", c.parameter, c.delta_x);
        rows.push(summary_row(format!("HR[{label}]"), &hr));
        rows.push(summary_row(format!("RRR[{label}]"), &rrr));
    }
    Ok(rows)
}

/// Rows whose R-hat is undefined or not below `max_rhat`.
pub fn unconverged(rows: &[SummaryRow], max_rhat: f64) -> Vec<&SummaryRow> {
    rows.iter().filter(|r| !(r.rhat < max_rhat)).collect()
}
