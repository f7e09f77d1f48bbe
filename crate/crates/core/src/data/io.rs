//! CSV readers and writers for participants, epidemic curves and variant proportions.
//!
//! Readers report schema violations with the file line and column. Writers
//! emit a deterministic normalized form, so that reading a written file and
//! writing it again reproduces the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use csv::StringRecord;

use super::{
    round6, CalendarGrid, CurveDay, EpidemicCurve, SiteCurve, Status, StepPath, StudyData, Subject, VariantMix,
    PROPORTION_TOLERANCE,
};
use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub const PARTICIPANT_COLUMNS: [&str; 8] = [
    "id",
    "site",
    "enroll_date",
    "status",
    "date_lower",
    "date_upper",
    "variant",
    "x",
];

/// Known labels for a participants file.
#[derive(Debug, Clone, Default)]
pub struct ParticipantLabels {
    /// Site labels in index order; `None` takes the sorted distinct labels found in the file.
    pub sites: Option<Vec<String>>,
    /// Variant labels in index order. Empty means a single unnamed variant.
    pub variants: Vec<String>,
}

pub fn day_of(date: NaiveDate, origin: NaiveDate) -> i64 {
    (date - origin).num_days()
}

pub fn date_of(day: i64, origin: NaiveDate) -> NaiveDate {
    origin + Duration::days(day)
}

struct RowCtx<'a> {
    file: &'a str,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, column: &str, message: impl Into<String>) -> Error {
        Error::Schema {
            file: self.file.to_string(),
            line: self.line,
            column: column.to_string(),
            message: message.into(),
        }
    }
}

fn header_index(headers: &StringRecord, file: &str, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema {
            file: file.to_string(),
            line: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })
}

fn field(record: &StringRecord, idx: usize) -> &str {
    record.get(idx).map(str::trim).unwrap_or("")
}

fn parse_date(ctx: &RowCtx, column: &str, raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|_| ctx.err(column, format!("invalid ISO-8601 date `{raw}`")))
}

fn parse_f64(ctx: &RowCtx, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| ctx.err(column, format!("invalid number `{raw}`")))?;
    if !v.is_finite() {
        return Err(ctx.err(column, format!("non-finite number `{raw}`")));
    }
    Ok(v)
}

fn open_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_participants(
    path: impl AsRef<Path>,
    grid: &CalendarGrid,
    origin: NaiveDate,
    labels: &ParticipantLabels,
) -> Result<StudyData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_participants(file, &file_name(path), grid, origin, labels)
}

/// Parse participants from any reader; `file` names the source in error messages.
pub fn read_participants<R: Read>(
    reader: R,
    file: &str,
    grid: &CalendarGrid,
    origin: NaiveDate,
    labels: &ParticipantLabels,
) -> Result<StudyData> {
    let mut rdr = open_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(file, e))?.clone();
    let idx: Vec<usize> = PARTICIPANT_COLUMNS
        .iter()
        .map(|c| header_index(&headers, file, c))
        .collect::<Result<_>>()?;
    let x_col = idx[7];
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|i| !idx.contains(i))
        .filter(|&i| i > x_col)
        .collect();
    let covariates: Vec<String> = covariate_cols.iter().map(|&i| headers[i].trim().to_string()).collect();

    let records: Vec<(u64, StringRecord)> = rdr
        .records()
        .map(|r| {
            let r = r.map_err(|e| Error::csv(file, e))?;
            let line = r.position().map(|p| p.line()).unwrap_or(0);
            Ok((line, r))
        })
        .collect::<Result<_>>()?;

    let sites: Vec<String> = match &labels.sites {
        Some(s) => s.clone(),
        None => {
            let mut s: Vec<String> = records.iter().map(|(_, r)| field(r, idx[1]).to_string()).collect();
            s.sort();
            s.dedup();
            s
        }
    };
    let variants: Vec<String> = if labels.variants.is_empty() {
        vec!["all".to_string()]
    } else {
        labels.variants.clone()
    };
    let site_index: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let variant_index: HashMap<&str, usize> = variants.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut subjects = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let ctx = RowCtx { file, line: *line };
        let id = field(rec, idx[0]);
        if id.is_empty() {
            return Err(ctx.err("id", "empty id"));
        }
        let site_label = field(rec, idx[1]);
        let site = *site_index
            .get(site_label)
            .ok_or_else(|| ctx.err("site", format!("unknown site `{site_label}`")))?;
        let enroll = parse_date(&ctx, "enroll_date", field(rec, idx[2]))?;
        let status_raw = field(rec, idx[3]);
        let status =
            Status::parse(status_raw).ok_or_else(|| ctx.err("status", format!("unknown status `{status_raw}`")))?;
        let lower = parse_date(&ctx, "date_lower", field(rec, idx[4]))?;
        let upper_raw = field(rec, idx[5]);
        let upper = if upper_raw.is_empty() {
            None
        } else {
            Some(parse_date(&ctx, "date_upper", upper_raw)?)
        };
        let variant_raw = field(rec, idx[6]);
        let variant = if variant_raw.is_empty() {
            None
        } else {
            Some(
                *variant_index
                    .get(variant_raw)
                    .ok_or_else(|| ctx.err("variant", format!("unknown variant `{variant_raw}`")))?,
            )
        };
        let x_raw = field(rec, x_col);
        if x_raw.is_empty() {
            return Err(ctx.err("x", "missing value"));
        }
        let x = parse_f64(&ctx, "x", x_raw)?;
        let z = covariate_cols
            .iter()
            .zip(&covariates)
            .map(|(&i, name)| {
                let raw = field(rec, i);
                if raw.is_empty() {
                    return Err(ctx.err(name, "missing value"));
                }
                parse_f64(&ctx, name, raw).map(StepPath::constant)
            })
            .collect::<Result<Vec<_>>>()?;

        let subject = Subject {
            id: id.to_string(),
            site,
            enroll_day: day_of(enroll, origin),
            status,
            time_lower: day_of(lower, origin),
            time_upper: upper.map(|d| day_of(d, origin)),
            variant,
            x: StepPath::constant(x),
            z,
        };
        let column_for = |msg: &str| match msg {
            "inverted censoring interval" | "empty censoring interval" => "date_upper",
            "variant given for a subject without infection" => "variant",
            _ => "date_lower",
        };
        subject.validate().map_err(|msg| ctx.err(column_for(&msg), msg))?;
        for (column, day) in [("enroll_date", subject.enroll_day), ("date_lower", subject.time_lower)]
            .into_iter()
            .chain(subject.time_upper.map(|d| ("date_upper", d)))
        {
            if !grid.contains(day) {
                return Err(ctx.err(
                    column,
                    format!(
                        "date {} outside grid {}..{}",
                        date_of(day, origin),
                        date_of(grid.start_day(), origin),
                        date_of(grid.end_day(), origin)
                    ),
                ));
            }
        }
        subjects.push(subject);
    }

    StudyData::new(subjects, sites, variants, covariates, grid.clone(), origin)
}

/// Write participants in normalized form (subject id order, shortest round-trip floats).
pub fn write_participants<W: Write>(data: &StudyData, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = PARTICIPANT_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariates().iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::csv("<output>", e))?;
    let origin = data.origin();
    for s in data.subjects() {
        if !s.x.is_constant() || s.z.iter().any(|z| !z.is_constant()) {
            return Err(Error::Data(format!(
                "subject `{}` has time-varying covariates, which the participants file cannot hold",
                s.id
            )));
        }
        let mut row = vec![
            s.id.clone(),
            data.sites()[s.site].clone(),
            date_of(s.enroll_day, origin).format(DATE_FORMAT).to_string(),
            s.status.as_str().to_string(),
            date_of(s.time_lower, origin).format(DATE_FORMAT).to_string(),
            s.time_upper
                .map(|d| date_of(d, origin).format(DATE_FORMAT).to_string())
                .unwrap_or_default(),
            s.variant.map(|v| data.variants()[v].clone()).unwrap_or_default(),
            s.x.values()[0].to_string(),
        ];
        row.extend(s.z.iter().map(|z| z.values()[0].to_string()));
        wtr.write_record(&row).map_err(|e| Error::csv("<output>", e))?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn save_participants(data: &StudyData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_participants(data, std::io::BufWriter::new(file))
}

pub fn load_variant_proportions(
    path: impl AsRef<Path>,
    grid: &CalendarGrid,
    origin: NaiveDate,
    sites: &[String],
    variants: &[String],
) -> Result<VariantMix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_variant_proportions(file, &file_name(path), grid, origin, sites, variants)
}

/// Parse variant proportions and fill days without records by carrying the last record forward.
pub fn read_variant_proportions<R: Read>(
    reader: R,
    file: &str,
    grid: &CalendarGrid,
    origin: NaiveDate,
    sites: &[String],
    variants: &[String],
) -> Result<VariantMix> {
    let n_var = variants.len();
    let mut rdr = open_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(file, e))?.clone();
    let cols: Vec<usize> = ["site", "date", "variant", "proportion"]
        .iter()
        .map(|c| header_index(&headers, file, c))
        .collect::<Result<_>>()?;
    let site_index: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let variant_index: HashMap<&str, usize> = variants.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    // per site: day -> (proportions, first line seen)
    let mut observed: Vec<BTreeMap<i64, (Vec<f64>, u64)>> = vec![BTreeMap::new(); sites.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(file, e))?;
        let ctx = RowCtx {
            file,
            line: rec.position().map(|p| p.line()).unwrap_or(0),
        };
        let site_label = field(&rec, cols[0]);
        let Some(&site) = site_index.get(site_label) else {
            continue; // sites outside the study are ignored
        };
        let day = day_of(parse_date(&ctx, "date", field(&rec, cols[1]))?, origin);
        let variant_label = field(&rec, cols[2]);
        let v = *variant_index
            .get(variant_label)
            .ok_or_else(|| ctx.err("variant", format!("unknown variant `{variant_label}`")))?;
        let p = parse_f64(&ctx, "proportion", field(&rec, cols[3]))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(ctx.err("proportion", format!("proportion {p} outside [0, 1]")));
        }
        let entry = observed[site]
            .entry(day)
            .or_insert_with(|| (vec![0.0; n_var], ctx.line));
        entry.0[v] = p;
    }

    let n_days = grid.n_days();
    let mut dense = Vec::with_capacity(sites.len());
    for (site, obs) in observed.iter().enumerate() {
        for (&day, (props, line)) in obs {
            let sum: f64 = props.iter().sum();
            if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
                return Err(Error::Schema {
                    file: file.to_string(),
                    line: *line,
                    column: "proportion".into(),
                    message: format!(
                        "variant proportions sum to {} at site `{}` on {}",
                        round6(sum),
                        sites[site],
                        date_of(day, origin)
                    ),
                });
            }
        }
        let mut current = match obs.range(..=grid.start_day()).next_back() {
            Some((_, (p, _))) => p.clone(),
            None => {
                return Err(Error::Data(format!(
                    "variant proportions for site `{}` have no record on or before the first grid day {}",
                    sites[site],
                    date_of(grid.start_day(), origin)
                )))
            }
        };
        let mut out = Vec::with_capacity(n_days * n_var);
        for day in grid.start_day()..=grid.end_day() {
            if let Some((p, _)) = obs.get(&day) {
                current = p.clone();
            }
            out.extend_from_slice(&current);
        }
        dense.push(out);
    }
    VariantMix::from_dense(grid, n_var, dense)
}

pub fn write_variant_proportions<W: Write>(
    mix: &VariantMix,
    sites: &[String],
    variants: &[String],
    origin: NaiveDate,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let out = |e| Error::csv("<output>", e);
    wtr.write_record(["site", "date", "variant", "proportion"])
        .map_err(out)?;
    for (s, site) in sites.iter().enumerate() {
        for offset in 0..mix.n_days() {
            let day = mix.start_day() + offset as i64;
            let date = date_of(day, origin).format(DATE_FORMAT).to_string();
            for (v, variant) in variants.iter().enumerate() {
                wtr.write_record([
                    site.as_str(),
                    &date,
                    variant.as_str(),
                    &mix.proportion(s, v, day).to_string(),
                ])
                .map_err(out)?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn load_epidemic_curve(path: impl AsRef<Path>, grid: &CalendarGrid, origin: NaiveDate) -> Result<EpidemicCurve> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_epidemic_curve(file, &file_name(path), grid, origin)
}

/// Interpolate between observed `(day, value)` points on the log scale,
/// falling back to linear interpolation when an endpoint is zero.
fn fill_gaps(points: &[(i64, f64)], first: i64, last: i64) -> Vec<f64> {
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    let mut j = 0;
    for day in first..=last {
        while j + 1 < points.len() && points[j + 1].0 <= day {
            j += 1;
        }
        let (d0, v0) = points[j];
        let value = if day <= d0 || j + 1 == points.len() {
            v0
        } else {
            let (d1, v1) = points[j + 1];
            let w = (day - d0) as f64 / (d1 - d0) as f64;
            if v0 > 0.0 && v1 > 0.0 {
                ((1.0 - w) * v0.ln() + w * v1.ln()).exp()
            } else {
                (1.0 - w) * v0 + w * v1
            }
        };
        out.push(value);
    }
    out
}

/// Parse an epidemic curve. Gaps between observed days are filled by
/// log-linear interpolation; the curve is extended to cover the grid by
/// carrying the nearest observation.
pub fn read_epidemic_curve<R: Read>(
    reader: R,
    file: &str,
    grid: &CalendarGrid,
    origin: NaiveDate,
) -> Result<EpidemicCurve> {
    let mut rdr = open_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(file, e))?.clone();
    let cols: Vec<usize> = ["site", "date", "mean", "lower", "upper"]
        .iter()
        .map(|c| header_index(&headers, file, c))
        .collect::<Result<_>>()?;

    let mut raw: BTreeMap<String, BTreeMap<i64, CurveDay>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(file, e))?;
        let ctx = RowCtx {
            file,
            line: rec.position().map(|p| p.line()).unwrap_or(0),
        };
        let site = field(&rec, cols[0]);
        if site.is_empty() {
            return Err(ctx.err("site", "empty site"));
        }
        let day = day_of(parse_date(&ctx, "date", field(&rec, cols[1]))?, origin);
        let mean = parse_f64(&ctx, "mean", field(&rec, cols[2]))?;
        let optional = |name: &str, idx: usize| -> Result<Option<f64>> {
            let s = field(&rec, idx);
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f64(&ctx, name, s).map(Some)
            }
        };
        let lower = optional("lower", cols[3])?;
        let upper = optional("upper", cols[4])?;
        for (name, v) in [("mean", Some(mean)), ("lower", lower), ("upper", upper)] {
            if v.is_some_and(|v| v < 0.0) {
                return Err(ctx.err(name, "negative value"));
            }
        }
        if let (Some(l), Some(u)) = (lower, upper) {
            if u < l {
                return Err(ctx.err("upper", "upper bound below lower bound"));
            }
        }
        if lower.is_some_and(|l| mean < l) {
            return Err(ctx.err("mean", "mean below lower bound"));
        }
        if upper.is_some_and(|u| mean > u) {
            return Err(ctx.err("mean", "mean above upper bound"));
        }
        let site_days = raw.entry(site.to_string()).or_default();
        if site_days.insert(day, CurveDay { mean, lower, upper }).is_some() {
            return Err(ctx.err("date", format!("duplicate record for site `{site}`")));
        }
    }

    let mut curve = EpidemicCurve::default();
    for (site, days) in raw {
        if !days.keys().any(|&d| grid.contains(d)) {
            return Err(Error::Data(format!(
                "epidemic curve for site `{site}` has no records inside the grid"
            )));
        }
        let first = (*days.keys().next().unwrap()).min(grid.start_day());
        let last = (*days.keys().next_back().unwrap()).max(grid.end_day());
        let series = |get: &dyn Fn(&CurveDay) -> Option<f64>| -> Option<Vec<f64>> {
            let points: Vec<(i64, f64)> = days.iter().filter_map(|(&d, c)| get(c).map(|v| (d, v))).collect();
            (!points.is_empty()).then(|| fill_gaps(&points, first, last))
        };
        let mean = series(&|c| Some(c.mean)).unwrap();
        let lower = series(&|c| c.lower);
        let upper = series(&|c| c.upper);
        let filled = (0..mean.len())
            .map(|i| CurveDay {
                mean: mean[i],
                lower: lower.as_ref().map(|l| l[i]),
                upper: upper.as_ref().map(|u| u[i]),
            })
            .collect();
        curve.sites.insert(
            site,
            SiteCurve {
                first_day: first,
                days: filled,
            },
        );
    }
    Ok(curve)
}

pub fn write_epidemic_curve<W: Write>(curve: &EpidemicCurve, origin: NaiveDate, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let out = |e| Error::csv("<output>", e);
    wtr.write_record(["site", "date", "mean", "lower", "upper"])
        .map_err(out)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (site, sc) in &curve.sites {
        for (i, d) in sc.days.iter().enumerate() {
            let date = date_of(sc.first_day + i as i64, origin);
            wtr.write_record([
                site.clone(),
                date.format(DATE_FORMAT).to_string(),
                d.mean.to_string(),
                opt(d.lower),
                opt(d.upper),
            ])
            .map_err(out)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()
    }

    fn year_grid() -> CalendarGrid {
        CalendarGrid::new(0, 364, 14).unwrap()
    }

    const HEADER: &str = "id,site,enroll_date,status,date_lower,date_upper,variant,x\n";

    fn parse(body: &str) -> Result<StudyData> {
        read_participants(
            format!("{HEADER}{body}").as_bytes(),
            "participants.csv",
            &year_grid(),
            origin(),
            &ParticipantLabels::default(),
        )
    }

    #[test]
    fn event_row_converts_dates_to_day_offsets() {
        let data = parse("p1,GA,2021-07-01,event,2021-08-15,,,0\n").unwrap();
        let s = &data.subjects()[0];
        assert_eq!(s.enroll_day, 181);
        assert_eq!(s.time_lower, 226);
        assert_eq!(s.status, Status::Event);
        assert_eq!(s.time_upper, None);
    }

    #[test]
    fn inverted_interval_names_row_and_column() {
        let err = parse(
            "p1,GA,2021-07-01,event,2021-08-15,,,0\n\
             p2,GA,2021-07-01,interval_censored,2021-09-01,2021-08-01,,0\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("date_upper"), "{msg}");
        assert!(msg.contains("inverted censoring interval"), "{msg}");
    }

    #[test]
    fn row_level_rejections() {
        let cases = [
            ("p1,GA,2021-07-01,event,2021-06-15,,,0", "enrollment after event"),
            ("p1,GA,2021-07-01,right_censored,2021-07-01,,,0", "zero follow-up"),
            ("p1,GA,2021-07-01,cured,2021-08-01,,,0", "unknown status"),
            ("p1,GA,2021-13-01,event,2021-08-01,,,0", "invalid ISO-8601"),
            ("p1,GA,2021-07-01,event,2021-08-01,,,", "missing value"),
            ("p1,GA,2021-07-01,event,2022-08-01,,,0", "outside grid"),
            ("p1,GA,2021-07-01,event,2021-08-01,,delta,0", "unknown variant"),
        ];
        for (row, expected) in cases {
            let msg = parse(&format!("{row}\n")).unwrap_err().to_string();
            assert!(msg.contains(expected), "{row}: {msg}");
        }
    }

    #[test]
    fn unknown_site_rejected_with_explicit_labels() {
        let labels = ParticipantLabels {
            sites: Some(vec!["NY".into()]),
            variants: vec![],
        };
        let err = read_participants(
            format!("{HEADER}p1,GA,2021-07-01,event,2021-08-15,,,0\n").as_bytes(),
            "participants.csv",
            &year_grid(),
            origin(),
            &labels,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown site `GA`"));
    }

    #[test]
    fn covariates_are_header_driven() {
        let body = "id,site,enroll_date,status,date_lower,date_upper,variant,x,age,sex\n\
                    p1,GA,2021-07-01,right_censored,2021-08-15,,,1.5,30,1\n";
        let data = read_participants(
            body.as_bytes(),
            "p.csv",
            &year_grid(),
            origin(),
            &ParticipantLabels::default(),
        )
        .unwrap();
        assert_eq!(data.covariates(), &["age".to_string(), "sex".to_string()]);
        assert_eq!(data.subjects()[0].z[0].value_at(200), 30.0);
        assert_eq!(data.subjects()[0].x.value_at(200), 1.5);
    }

    #[test]
    fn participants_round_trip_is_byte_identical() {
        let body = "p2,NY,2021-03-01,interval_censored,2021-05-01,2021-07-01,,0.25\n\
                    p1,GA,2021-07-01,event,2021-08-15,,,1\n\
                    p3,GA,2021-02-01,right_censored,2021-08-01,,,-0.5\n";
        let data = parse(body).unwrap();
        let mut first = Vec::new();
        write_participants(&data, &mut first).unwrap();
        let again = read_participants(
            first.as_slice(),
            "again.csv",
            &year_grid(),
            origin(),
            &ParticipantLabels::default(),
        )
        .unwrap();
        assert_eq!(again, data);
        let mut second = Vec::new();
        write_participants(&again, &mut second).unwrap();
        assert_eq!(first, second);
        assert!(String::from_utf8(first)
            .unwrap()
            .starts_with("id,site,enroll_date,status,date_lower,date_upper,variant,x\np1,GA"));
    }

    fn small_grid() -> CalendarGrid {
        CalendarGrid::new(0, 3, 2).unwrap()
    }

    fn variants(body: &str, names: &[&str]) -> Result<VariantMix> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        read_variant_proportions(
            format!("site,date,variant,proportion\n{body}").as_bytes(),
            "variants.csv",
            &small_grid(),
            origin(),
            &["GA".to_string()],
            &names,
        )
    }

    #[test]
    fn single_variant_is_identically_one() {
        let mix = variants("GA,2021-01-01,d,1\n", &["d"]).unwrap();
        for day in 0..=3 {
            assert_eq!(mix.proportion(0, 0, day), 1.0);
        }
    }

    #[test]
    fn missing_days_carry_forward() {
        let mix = variants(
            "GA,2021-01-01,d,0.9\nGA,2021-01-01,o,0.1\n\
             GA,2021-01-03,d,0.2\nGA,2021-01-03,o,0.8\n",
            &["d", "o"],
        )
        .unwrap();
        assert_eq!(mix.day(0, 1), &[0.9, 0.1]);
        assert_eq!(mix.day(0, 2), &[0.2, 0.8]);
        assert_eq!(mix.day(0, 3), &[0.2, 0.8]);
    }

    #[test]
    fn proportions_must_sum_to_one() {
        let err = variants("GA,2021-01-01,d,0.7\nGA,2021-01-01,o,0.2\n", &["d", "o"]).unwrap_err();
        assert!(err.to_string().contains("variant proportions sum to 0.9"), "{err}");
    }

    #[test]
    fn first_day_needs_a_source() {
        let err = variants("GA,2021-01-02,d,1\n", &["d"]).unwrap_err();
        assert!(err.to_string().contains("no record on or before"));
    }

    fn curve(body: &str) -> Result<EpidemicCurve> {
        read_epidemic_curve(
            format!("site,date,mean,lower,upper\n{body}").as_bytes(),
            "curve.csv",
            &CalendarGrid::new(0, 2, 1).unwrap(),
            origin(),
        )
    }

    #[test]
    fn curve_gaps_fill_log_linearly() {
        let c = curve("GA,2021-01-01,100,,\nGA,2021-01-03,400,,\n").unwrap();
        let ga = c.site("GA").unwrap();
        assert!((ga.get(1).unwrap().mean - 200.0).abs() < 1e-9);
        assert_eq!(ga.get(1).unwrap().lower, None);
    }

    #[test]
    fn curve_bounds_checked() {
        let err = curve("GA,2021-01-01,200,300,400\n").unwrap_err();
        assert!(err.to_string().contains("mean below lower bound"));
        let err = curve("GA,2021-01-01,-1,,\n").unwrap_err();
        assert!(err.to_string().contains("negative value"));
    }

    #[test]
    fn constant_curve_extends_over_grid() {
        let c = curve("GA,2021-01-02,50,40,60\n").unwrap();
        let ga = c.site("GA").unwrap();
        assert_eq!(ga.first_day, 0);
        assert_eq!(ga.last_day(), 2);
        assert!(ga.days.iter().all(|d| d.mean == 50.0 && d.lower == Some(40.0)));
    }

    #[test]
    fn curve_needs_records_in_grid() {
        let err = curve("GA,2022-01-02,50,,\n").unwrap_err();
        assert!(err.to_string().contains("no records inside the grid"));
    }
}
