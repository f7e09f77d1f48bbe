use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::diagnostics::SummaryRow;
use super::ppc::PpcRow;
use super::sampler::PosteriorDraws;
use crate::error::{Error, Result};

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish<W: Write>(writer: csv::Writer<W>, path: &Path) -> Result<()> {
    writer
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Writes `chain, iteration, <params...>`; iterations count post-warmup draws from 0.
pub fn write_draws(path: impl AsRef<Path>, draws: &PosteriorDraws) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(draws.names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (c, chain) in draws.draws.iter().enumerate() {
        for (i, row) in chain.iter().enumerate() {
            let mut rec = vec![c.to_string(), i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
    }
    finish(w, path)
}

/// Reads a file produced by [`write_draws`]. Chain statistics are not stored and come back empty.
pub fn read_draws(path: impl AsRef<Path>) -> Result<PosteriorDraws> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_draws(file, &path.display().to_string())
}

fn parse_draws<R: Read>(reader: R, name: &str) -> Result<PosteriorDraws> {
    let mut r = csv::Reader::from_reader(reader);
    let schema = |line: u64, column: &str, message: String| Error::Schema {
        file: name.to_string(),
        line,
        column: column.to_string(),
        message,
    };
    let header = r.headers().map_err(|e| Error::csv(name, e))?.clone();
    if header.len() < 2 || &header[0] != "chain" || &header[1] != "iteration" {
        return Err(schema(1, "chain", "header must start with `chain,iteration`".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut draws: Vec<Vec<Vec<f64>>> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let line = n as u64 + 2;
        let rec = rec.map_err(|e| Error::csv(name, e))?;
        let chain: usize = rec[0]
            .parse()
            .map_err(|_| schema(line, "chain", format!("not a chain index: `{}`", &rec[0])))?;
        let iter: usize = rec[1]
            .parse()
            .map_err(|_| schema(line, "iteration", format!("not an iteration: `{}`", &rec[1])))?;
        if chain > draws.len() {
            return Err(schema(line, "chain", format!("chain {chain} skips an index")));
        }
        if chain == draws.len() {
            draws.push(Vec::new());
        }
        if iter != draws[chain].len() {
            return Err(schema(
                line,
                "iteration",
                format!("expected iteration {}", draws[chain].len()),
            ));
        }
        let row = rec
            .iter()
            .skip(2)
            .zip(&names)
            .map(|(v, col)| {
                v.parse::<f64>()
                    .map_err(|_| schema(line, col, format!("not a number: `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        draws[chain].push(row);
    }
    if let Some(first) = draws.first() {
        if draws.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Data(format!("{name}: chains have different lengths")));
        }
    }
    Ok(PosteriorDraws {
        names,
        draws,
        stats: Vec::new(),
    })
}

pub fn write_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(["parameter", "mean", "sd", "q2.5", "q50", "q97.5", "rhat", "ess"])
        .map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let nums = [r.mean, r.sd, r.q2_5, r.q50, r.q97_5, r.rhat, r.ess];
        let mut rec = vec![r.parameter.clone()];
        rec.extend(nums.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

pub fn write_ppc(path: impl AsRef<Path>, rows: &[PpcRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    if rows.is_empty() {
        w.write_record(["draw", "eval_day", "predicted_cuminc", "observed_cuminc"])
            .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PosteriorDraws {
        PosteriorDraws {
            names: vec!["alpha[a]".into(), "log_r[GA][3]".into()],
            draws: vec![
                vec![vec![0.1, -1.0 / 3.0], vec![f64::MIN_POSITIVE, 2.5e-17]],
                vec![vec![-7.0, 1e300], vec![0.0, -0.0]],
            ],
            stats: Vec::new(),
        }
    }

    #[test]
    fn draws_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        let d = sample();
        write_draws(&path, &d).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("chain,iteration,alpha[a],log_r[GA][3]\n0,0,"));
        assert_eq!(read_draws(&path).unwrap(), d);
    }

    #[test]
    fn draws_reject_gaps() {
        let bad = "chain,iteration,a\n0,0,1\n0,2,1\n";
        let err = parse_draws(bad.as_bytes(), "d.csv").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let bad = "chain,iteration,a\n0,0,x\n";
        assert!(parse_draws(bad.as_bytes(), "d.csv").is_err());
    }

    #[test]
    fn summary_and_ppc_headers() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("summary.csv");
        let row = SummaryRow {
            parameter: "gamma[a]".into(),
            mean: 1.0,
            sd: 0.5,
            q2_5: 0.0,
            q50: 1.0,
            q97_5: 2.0,
            rhat: f64::NAN,
            ess: 100.0,
        };
        write_summary(&s, &[row]).unwrap();
        let text = std::fs::read_to_string(&s).unwrap();
        assert_eq!(
            text,
            "parameter,mean,sd,q2.5,q50,q97.5,rhat,ess\ngamma[a],1,0.5,0,1,2,NaN,100\n"
        );
        let p = dir.path().join("ppc.csv");
        let rows = [PpcRow {
            draw: 0,
            eval_day: 30,
            predicted_cuminc: 0.25,
            observed_cuminc: 0.2,
        }];
        write_ppc(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "draw,eval_day,predicted_cuminc,observed_cuminc\n0,30,0.25,0.2\n");
        write_ppc(&p, &[]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("draw,eval_day"));
    }
}
