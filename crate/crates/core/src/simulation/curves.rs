use chrono::NaiveDate;

use crate::data::{CurveDay, EpidemicCurve, SiteCurve};

/// Origin of the bundled curves: day 0 is 2021-01-01.
pub fn curve_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()
}

pub const CURVE_FIRST_DAY: i64 = -60;
pub const CURVE_LAST_DAY: i64 = 600;
/// Half-width of the bundled uncertainty band on the log scale.
pub const CURVE_LOG_HALF_WIDTH: f64 = 0.3;

/// `(peak day, height, width in days)`.
type Wave = (f64, f64, f64);

fn waves(site: &str) -> (f64, &'static [Wave]) {
    match site {
        "GA" => (
            800.0,
            &[(8.0, 9000.0, 28.0), (236.0, 11000.0, 24.0), (375.0, 16000.0, 20.0)],
        ),
        "NY" => (
            900.0,
            &[
                (15.0, 12000.0, 30.0),
                (92.0, 6000.0, 26.0),
                (232.0, 4000.0, 30.0),
                (362.0, 30000.0, 16.0),
            ],
        ),
        "WA" => (
            500.0,
            &[(109.0, 3500.0, 22.0), (247.0, 6500.0, 26.0), (380.0, 12000.0, 22.0)],
        ),
        "PA" => (
            700.0,
            &[
                (20.0, 8000.0, 35.0),
                (100.0, 12000.0, 28.0),
                (290.0, 6000.0, 45.0),
                (360.0, 7000.0, 22.0),
            ],
        ),
        "MO" => (
            600.0,
            &[(190.0, 14000.0, 25.0), (300.0, 2500.0, 30.0), (390.0, 5000.0, 25.0)],
        ),
        "OH" => (
            800.0,
            &[
                (30.0, 9000.0, 30.0),
                (110.0, 7000.0, 25.0),
                (265.0, 9000.0, 40.0),
                (345.0, 6000.0, 25.0),
            ],
        ),
        _ => (0.0, &[]),
    }
}

/// Synthetic daily infection curves for GA, NY, WA, PA, MO and OH with winter
/// 2020-21, Delta and Omicron waves. Bounds are `mean * exp(-+0.3)`.
pub fn synthetic_curves() -> EpidemicCurve {
    let mut curve = EpidemicCurve::default();
    for site in ["GA", "NY", "WA", "PA", "MO", "OH"] {
        let (base, ws) = waves(site);
        let days = (CURVE_FIRST_DAY..=CURVE_LAST_DAY)
            .map(|d| {
                let mean = base
                    + ws.iter()
                        .map(|(peak, height, width)| {
                            let z = (d as f64 - peak) / width;
                            height * (-0.5 * z * z).exp()
                        })
                        .sum::<f64>();
                let mean = (mean * 1e3).round() / 1e3;
                CurveDay {
                    mean,
                    lower: Some(mean * (-CURVE_LOG_HALF_WIDTH).exp()),
                    upper: Some(mean * CURVE_LOG_HALF_WIDTH.exp()),
                }
            })
            .collect();
        curve.sites.insert(
            site.to_string(),
            SiteCurve {
                first_day: CURVE_FIRST_DAY,
                days,
            },
        );
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_positive_sites() {
        let c = synthetic_curves();
        assert_eq!(c.sites.len(), 6);
        for sc in c.sites.values() {
            assert_eq!(sc.last_day(), CURVE_LAST_DAY);
            assert!(sc.days.iter().all(|d| d.mean > 0.0 && d.lower.unwrap() < d.mean));
        }
        let ga = c.site("GA").unwrap();
        assert!(ga.get(375).unwrap().mean > ga.get(150).unwrap().mean * 5.0);
    }
}
