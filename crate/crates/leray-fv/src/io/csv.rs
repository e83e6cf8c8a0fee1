//! Coefficient time-series CSV: header `t,cl,cd`, one row per sample,
//! shortest round-trip float formatting.

use std::io::{BufRead, Write};
use std::path::Path;

use super::IoError;
use crate::bench::CoefficientSeries;

pub fn write_csv_to<W: Write>(series: &CoefficientSeries, mut w: W) -> Result<(), IoError> {
    writeln!(w, "t,cl,cd")?;
    for &(t, cl, cd) in &series.samples {
        writeln!(w, "{t},{cl},{cd}")?;
    }
    Ok(())
}

pub fn write_csv(series: &CoefficientSeries, path: &Path) -> Result<(), IoError> {
    let file = std::fs::File::create(path)
        .map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    let mut w = std::io::BufWriter::new(file);
    write_csv_to(series, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Re-parse an emitted CSV. Bitwise round-trip: `read(write(s)) == s`.
pub fn read_csv<R: BufRead>(r: R) -> Result<CoefficientSeries, IoError> {
    let mut series = CoefficientSeries::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if i == 0 {
            if line != "t,cl,cd" {
                return Err(IoError::Parse {
                    line: 1,
                    msg: format!("expected header 't,cl,cd', got '{line}'"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |what: &str| -> Result<f64, IoError> {
            parts
                .next()
                .ok_or_else(|| IoError::Parse { line: i + 1, msg: format!("missing {what}") })?
                .parse::<f64>()
                .map_err(|_| IoError::Parse { line: i + 1, msg: format!("invalid {what}") })
        };
        let t = next("t")?;
        let cl = next("cl")?;
        let cd = next("cd")?;
        if parts.next().is_some() {
            return Err(IoError::Parse { line: i + 1, msg: "too many columns".into() });
        }
        if let Some(&(last, _, _)) = series.samples.last() {
            if t <= last {
                return Err(IoError::Parse { line: i + 1, msg: "time not increasing".into() });
            }
        }
        series.samples.push((t, cl, cd));
    }
    Ok(series)
}
