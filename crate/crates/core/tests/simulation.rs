use ctsurv::data::io::{read_participants, write_participants, ParticipantLabels};
use ctsurv::data::{CurveDay, EpidemicCurve, SiteCurve, Status, StudyData};
use ctsurv::simulation::{simulate_trial, synthetic_curves, SimConfig, TrialDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flat_curve(level: f64) -> EpidemicCurve {
    let mut curve = EpidemicCurve::default();
    for site in ["GA", "NY", "WA"] {
        let days = vec![
            CurveDay {
                mean: level,
                lower: Some(level / 2.0),
                upper: Some(level * 2.0)
            };
            700
        ];
        curve.sites.insert(site.into(), SiteCurve { first_day: -60, days });
    }
    curve
}

fn infected(data: &StudyData, x: Option<f64>) -> (usize, usize) {
    let pick: Vec<_> = data
        .subjects()
        .iter()
        .filter(|s| x.is_none_or(|x| s.x.value_at(s.enroll_day) == x))
        .collect();
    (pick.iter().filter(|s| s.status.is_infection()).count(), pick.len())
}

#[test]
fn simulated_data_survives_the_load_path() {
    let config = SimConfig {
        n_subjects: 800,
        ..Default::default()
    };
    let data = simulate_trial(&config, &synthetic_curves(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut bytes = Vec::new();
    write_participants(&data, &mut bytes).unwrap();
    let labels = ParticipantLabels {
        sites: Some(config.sites.clone()),
        variants: vec!["all".into()],
    };
    let back = read_participants(
        bytes.as_slice(),
        "participants.csv",
        data.grid(),
        data.origin(),
        &labels,
    )
    .unwrap();
    assert_eq!(back, data);
    let statuses: std::collections::BTreeSet<_> = data.subjects().iter().map(|s| s.status.as_str()).collect();
    assert_eq!(statuses.len(), 3);
}

#[test]
fn arms_are_balanced() {
    for seed in 0..5 {
        let config = SimConfig {
            n_subjects: 2000,
            ..Default::default()
        };
        let data = simulate_trial(&config, &synthetic_curves(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let vaccine = data
            .subjects()
            .iter()
            .filter(|s| s.x.value_at(s.enroll_day) == 1.0)
            .count();
        let p = vaccine as f64 / 2000.0;
        assert!((0.45..=0.55).contains(&p), "seed {seed}: {p}");
    }
}

#[test]
fn constant_hazard_incidence_matches_closed_form() {
    let h = 0.002;
    let level = 1000.0;
    let config = SimConfig {
        n_subjects: 6000,
        gamma: 0.0,
        beta: 0.0,
        hazard_scale: Some(h / level),
        ..Default::default()
    };
    let data = simulate_trial(&config, &flat_curve(level), &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
    let (k, n) = infected(&data, None);
    let expected = 1.0 - (-h * 180.0).exp();
    let se = (expected * (1.0 - expected) / n as f64).sqrt();
    let got = k as f64 / n as f64;
    assert!((got - expected).abs() < 4.0 * se, "{got} vs {expected}");
}

#[test]
fn hazard_ratio_shows_in_arm_incidence() {
    let h = 0.002;
    let gamma: f64 = -0.7;
    let config = SimConfig {
        n_subjects: 8000,
        gamma,
        beta: 0.0,
        hazard_scale: Some(h / 1000.0),
        ..Default::default()
    };
    let data = simulate_trial(&config, &flat_curve(1000.0), &mut ChaCha8Rng::seed_from_u64(19)).unwrap();
    for (x, rate) in [(0.0, h), (1.0, h * gamma.exp())] {
        let (k, n) = infected(&data, Some(x));
        let expected = 1.0 - (-rate * 180.0).exp();
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        let got = k as f64 / n as f64;
        assert!((got - expected).abs() < 4.0 * se, "arm {x}: {got} vs {expected}");
    }
}

#[test]
fn strong_protection_suppresses_vaccine_infections() {
    let config = SimConfig {
        n_subjects: 1500,
        gamma: -50.0,
        ..Default::default()
    };
    let data = simulate_trial(&config, &synthetic_curves(), &mut ChaCha8Rng::seed_from_u64(23)).unwrap();
    let (vaccinated, n_vaccine) = infected(&data, Some(1.0));
    let (placebo, n_placebo) = infected(&data, Some(0.0));
    assert!(n_vaccine > 600 && n_placebo > 600);
    assert_eq!(vaccinated, 0);
    assert!(placebo as f64 / n_placebo as f64 > 0.15);
}

#[test]
fn calibrated_placebo_attack_rate_is_near_target() {
    let config = SimConfig {
        n_subjects: 4000,
        ..Default::default()
    };
    let design = TrialDesign::new(&config, &synthetic_curves()).unwrap();
    let data = design.simulate(&mut ChaCha8Rng::seed_from_u64(29)).unwrap();
    let (k, n) = infected(&data, Some(0.0));
    let rate = k as f64 / n as f64;
    assert!((rate - 0.3).abs() < 0.04, "{rate}");
    assert!(data
        .subjects()
        .iter()
        .all(|s| s.status != Status::RightCensored || s.time_lower == s.enroll_day + 180));
}
