use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampler::PosteriorDraws;
use super::ParameterLayout;
use crate::data::{Status, StudyData, Subject};
use crate::error::{Error, Result};
use crate::hazard::HazardModel;
use crate::parallel;

pub const DEFAULT_PPC_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcRow {
    pub draw: usize,
    /// Days since enrollment.
    pub eval_day: i64,
    pub predicted_cuminc: f64,
    pub observed_cuminc: f64,
}

/// Whether the subject is known to be infected `e` days after enrollment:
/// an event on or before that day, or a censoring interval closed by then.
fn observed_by(s: &Subject, e: i64) -> bool {
    let day = s.enroll_day + e;
    match s.status {
        Status::Event => s.time_lower <= day,
        Status::IntervalCensored => s.time_upper.is_some_and(|r| r <= day),
        Status::RightCensored => false,
    }
}

/// Observed proportion infected at each eval day since enrollment.
pub fn observed_cuminc(data: &StudyData, eval_days: &[i64]) -> Vec<f64> {
    let n = data.subjects().len().max(1) as f64;
    eval_days
        .iter()
        .map(|&e| data.subjects().iter().filter(|s| observed_by(s, e)).count() as f64 / n)
        .collect()
}

/// Per subject, whether it is predicted infected by each eval day (days since
/// enrollment), using one uniform per subject for all days.
pub fn predicted_infections<R: Rng>(
    model: &HazardModel<'_>,
    params: &crate::hazard::ModelParameters,
    data: &StudyData,
    eval_days: &[i64],
    rng: &mut R,
) -> Result<Vec<Vec<bool>>> {
    data.subjects()
        .iter()
        .map(|s| {
            let u: f64 = rng.random();
            let mut from = s.enroll_day;
            let mut cum = 0.0;
            eval_days
                .iter()
                .map(|&e| {
                    let to = s.enroll_day + e;
                    cum += model.cumulative_hazard(params, s, from, to, model.options.scheme)?;
                    from = to;
                    Ok(u > (-cum).exp())
                })
                .collect()
        })
        .collect()
}

/// Predicted cumulative incidence at `eval_days` (days since enrollment) for
/// `n_draws` posterior draws chosen without replacement.
///
/// For each draw and subject one uniform `u` is compared with the survivor
/// function at every eval day, so a subject infected by one day stays
/// infected at later days. Draw `j` uses the ChaCha8 stream `j` of `seed`.
pub fn posterior_predict_cuminc(
    draws: &PosteriorDraws,
    layout: &ParameterLayout,
    model: &HazardModel<'_>,
    data: &StudyData,
    eval_days: &[i64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<PpcRow>> {
    let total = draws.n_chains() * draws.n_draws();
    if n_draws == 0 || n_draws > total {
        return Err(Error::Config(format!(
            "posterior predictive needs 1..={total} draws, {n_draws} requested"
        )));
    }
    if eval_days.windows(2).any(|w| w[0] >= w[1]) || eval_days.first().is_some_and(|e| *e < 0) {
        return Err(Error::Config("eval days must be non-negative and increasing".into()));
    }
    let grid = data.grid();
    if let Some(&last) = eval_days.last() {
        if let Some(s) = data.subjects().iter().find(|s| !grid.contains(s.enroll_day + last)) {
            return Err(Error::Config(format!(
                "subject `{}`: day {last} after enrollment is outside the grid",
                s.id
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, n_draws).into_vec();
    picks.sort_unstable();
    let observed = observed_cuminc(data, eval_days);
    let n_subjects = data.subjects().len().max(1) as f64;
    let per_draw = |j: usize| -> Result<Vec<PpcRow>> {
        let pick = picks[j];
        let row = &draws.draws[pick / draws.n_draws()][pick % draws.n_draws()];
        let params = layout.params_from_draw(row);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64 + 1);
        let flags = predicted_infections(model, &params, data, eval_days, &mut rng)?;
        let mut infected = vec![0usize; eval_days.len()];
        for f in &flags {
            for (count, hit) in infected.iter_mut().zip(f) {
                *count += *hit as usize;
            }
        }
        Ok(eval_days
            .iter()
            .zip(infected)
            .zip(&observed)
            .map(|((&e, k), &obs)| PpcRow {
                draw: j,
                eval_day: e,
                predicted_cuminc: k as f64 / n_subjects,
                observed_cuminc: obs,
            })
            .collect())
    };
    let rows: Vec<Result<Vec<PpcRow>>> = parallel::map_range(n_draws, per_draw);
    let mut out = Vec::with_capacity(n_draws * eval_days.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CalendarGrid, StepPath, VariantMix};
    use crate::hazard::{ModelParameters, ThresholdConfig};
    use chrono::NaiveDate;

    fn cohort(n: usize) -> StudyData {
        let subjects = (0..n)
            .map(|i| Subject {
                id: format!("s{i:04}"),
                site: 0,
                enroll_day: (i % 10) as i64,
                status: Status::RightCensored,
                time_lower: 150,
                time_upper: None,
                variant: None,
                x: StepPath::constant(0.0),
                z: vec![],
            })
            .collect();
        StudyData::new(
            subjects,
            vec!["GA".into()],
            vec!["all".into()],
            vec![],
            CalendarGrid::new(0, 200, 14).unwrap(),
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
        )
        .unwrap()
    }

    fn params(log_h: f64, data: &StudyData) -> ModelParameters {
        let mut p = ModelParameters::zeros(vec![0], data.grid().n_intervals(), 1, 0, &ThresholdConfig::none());
        p.log_h_ref[0] = log_h;
        p
    }

    #[test]
    fn no_hazard_means_no_infections() {
        let data = cohort(50);
        let mix = VariantMix::single(data.grid(), 1);
        let model = HazardModel::new(data.grid(), &mix, ThresholdConfig::none());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flags = predicted_infections(&model, &params(-800.0, &data), &data, &[60, 180], &mut rng).unwrap();
        assert!(flags.iter().flatten().all(|f| !f));
    }

    #[test]
    fn half_survival_gives_half_incidence() {
        let data = cohort(20000);
        let mix = VariantMix::single(data.grid(), 1);
        let model = HazardModel::new(data.grid(), &mix, ThresholdConfig::none());
        // S(100) = 1/2
        let p = params((2f64.ln() / 100.0).ln(), &data);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flags = predicted_infections(&model, &p, &data, &[30, 100, 180], &mut rng).unwrap();
        let share = flags.iter().filter(|f| f[1]).count() as f64 / flags.len() as f64;
        assert!((share - 0.5).abs() < 0.015, "{share}");
        for f in &flags {
            assert!(f.windows(2).all(|w| !w[0] || w[1]));
        }
    }

    #[test]
    fn observed_counts_closed_intervals_only() {
        let mut data = cohort(2);
        let mut subjects = data.subjects().to_vec();
        subjects[0].status = Status::IntervalCensored;
        subjects[0].time_lower = 30;
        subjects[0].time_upper = Some(60);
        subjects[1].status = Status::Event;
        subjects[1].time_lower = 20;
        subjects[1].enroll_day = 1;
        data = data.with_subjects(subjects).unwrap();
        assert_eq!(observed_cuminc(&data, &[19, 59, 60]), vec![0.5, 0.5, 1.0]);
    }
}
