//! CSV ingestion for evaluation data, feature pools, parameter vectors and
//! externally computed scores.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{GraspError, Result};
use crate::sampling::EvalSample;
use crate::scores::ExternalScores;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| GraspError::Io(format!("{}: {e}", path.display())))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

fn csv_err(e: csv::Error) -> GraspError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    GraspError::Input { line, message: e.to_string() }
}

fn parse_field(raw: &str, col: &str, line: usize) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| GraspError::Input { line, message: format!("column '{col}': '{raw}' is not a number") })?;
    if !v.is_finite() {
        return Err(GraspError::Input { line, message: format!("column '{col}': non-finite value") });
    }
    Ok(v)
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    Ok(rdr.headers().map_err(csv_err)?.iter().map(|h| h.to_string()).collect())
}

/// Reads held-out data with columns `y` and `eta_hat`; every other column is a
/// feature, in file order.
pub fn read_eval_samples<R: Read>(r: R) -> Result<Vec<EvalSample>> {
    let mut rdr = reader(r);
    let hdr = headers(&mut rdr)?;
    let find = |name: &str| {
        hdr.iter()
            .position(|h| h == name)
            .ok_or_else(|| GraspError::Input { line: 1, message: format!("missing required column '{name}'") })
    };
    let iy = find("y")?;
    let ie = find("eta_hat")?;
    let feats: Vec<usize> = (0..hdr.len()).filter(|&i| i != iy && i != ie).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let y = parse_field(&rec[iy], "y", line)?;
        if y != 0.0 && y != 1.0 {
            return Err(GraspError::Input { line, message: format!("label must be 0 or 1, got {y}") });
        }
        let eta_hat = parse_field(&rec[ie], "eta_hat", line)?;
        if !(0.0..=1.0).contains(&eta_hat) {
            return Err(GraspError::Input { line, message: format!("probability out of range: {eta_hat}") });
        }
        let x = feats.iter().map(|&i| parse_field(&rec[i], &hdr[i], line)).collect::<Result<Vec<_>>>()?;
        out.push(EvalSample { x, y: y as u8, eta_hat });
    }
    if out.is_empty() {
        return Err(GraspError::Input { line: 1, message: "no data rows".into() });
    }
    Ok(out)
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalSample>> {
    read_eval_samples(open(path)?)
}

/// Reads a numeric table with a header row; rows must all have the same width.
pub fn read_matrix<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = reader(r);
    let hdr = headers(&mut rdr)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = rec.iter().zip(&hdr).map(|(v, h)| parse_field(v, h, line)).collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((hdr, rows))
}

/// Feature rows and an optional `eta_hat` column.
pub type Pool = (Vec<Vec<f64>>, Option<Vec<f64>>);

/// Unlabeled feature rows for model-X sampling. An `eta_hat` column, if
/// present, is split off and returned separately.
pub fn read_pool_csv(path: &Path) -> Result<Pool> {
    let (hdr, mut rows) = read_matrix(open(path)?)?;
    if rows.is_empty() {
        return Err(GraspError::Input { line: 1, message: "feature pool is empty".into() });
    }
    let eta = hdr.iter().position(|h| h == "eta_hat").map(|i| {
        rows.iter_mut().map(|r| r.remove(i)).collect::<Vec<f64>>()
    });
    if let Some(e) = &eta {
        if let Some(j) = e.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(GraspError::Input { line: j + 2, message: format!("probability out of range: {}", e[j]) });
        }
    }
    Ok((rows, eta))
}

/// A parameter vector: numbers separated by commas, whitespace or newlines.
pub fn parse_theta(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            out.push(parse_field(tok, "theta", i + 1)?);
        }
    }
    if out.is_empty() {
        return Err(GraspError::Input { line: 1, message: "parameter file is empty".into() });
    }
    Ok(out)
}

pub fn read_theta(path: &Path) -> Result<Vec<f64>> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s).map_err(|e| GraspError::Io(e.to_string()))?;
    parse_theta(&s)
}

/// Scores with columns `sample`, `counterfeit` (0 = original) and `score`.
pub fn read_external_scores<R: Read>(r: R) -> Result<ExternalScores> {
    let mut rdr = reader(r);
    let hdr = headers(&mut rdr)?;
    let col = |name: &str| {
        hdr.iter()
            .position(|h| h == name)
            .ok_or_else(|| GraspError::Input { line: 1, message: format!("missing required column '{name}'") })
    };
    let (is, ic, iv) = (col("sample")?, col("counterfeit")?, col("score")?);
    let mut out = ExternalScores::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let index = |i: usize, name: &str| {
            rec[i].parse::<usize>().map_err(|_| GraspError::Input {
                line,
                message: format!("column '{name}': '{}' is not a nonnegative integer", &rec[i]),
            })
        };
        out.insert(index(is, "sample")?, index(ic, "counterfeit")?, parse_field(&rec[iv], "score", line)?);
    }
    Ok(out)
}

pub fn read_external_scores_csv(path: &Path) -> Result<ExternalScores> {
    read_external_scores(open(path)?)
}
