//! Plain-text file formats.
//!
//! * Matrices: CSV, one row per line, entries in full round-trip precision.
//! * Count matrices: the same layout with nonnegative integers.
//! * Trajectories: a header line `# mode=<chain|iid-pairs> p=<p>` followed by
//!   one state index per line (chain) or one `i,j` pair per line (pairs).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::markov::{SamplingMode, TransitionCounts, Trajectory};
use crate::Matrix;

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

fn parse_rows<T: std::str::FromStr>(text: &str) -> Result<Vec<Vec<T>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<T>().map_err(|_| {
                    Error::Parse(format!("line {}: cannot parse '{}'", lineno + 1, cell.trim()))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no matrix rows found".into()));
    }
    let p = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
        return Err(Error::Parse(format!(
            "matrix must be square: row {} has {} entries, expected {p}",
            i + 1,
            r.len()
        )));
    }
    Ok(rows)
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let rows = parse_rows::<f64>(text)?;
    let p = rows.len();
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

pub fn counts_from_csv(text: &str) -> Result<TransitionCounts> {
    let rows = parse_rows::<u64>(text)?;
    let p = rows.len();
    TransitionCounts::from_matrix(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

pub fn counts_to_csv(c: &TransitionCounts) -> String {
    let mut out = String::new();
    for i in 0..c.p() {
        let row: Vec<String> = (0..c.p()).map(|j| c.get(i, j).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn trajectory_to_text(t: &Trajectory) -> String {
    let mut out = format!("# mode={} p={}\n", t.mode(), t.p());
    match t {
        Trajectory::Chain { states, .. } => {
            for s in states {
                let _ = writeln!(out, "{s}");
            }
        }
        Trajectory::Pairs { pairs, .. } => {
            for (a, b) in pairs {
                let _ = writeln!(out, "{a},{b}");
            }
        }
    }
    out
}

fn parse_header(line: &str) -> Result<(SamplingMode, usize)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("trajectory header must start with '#'".into()))?;
    let mut mode = None;
    let mut p = None;
    for token in body.split_whitespace() {
        match token.split_once('=') {
            Some(("mode", v)) => mode = Some(v.parse::<SamplingMode>()?),
            Some(("p", v)) => {
                p = Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad state count '{v}'")))?)
            }
            _ => return Err(Error::Parse(format!("unknown header field '{token}'"))),
        }
    }
    match (mode, p) {
        (Some(m), Some(p)) => Ok((m, p)),
        _ => Err(Error::Parse("header needs both mode= and p=".into())),
    }
}

pub fn trajectory_from_text(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))?;
    let (mode, p) = parse_header(header.trim())?;
    let index = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad state index '{}'", s.trim())))
    };
    match mode {
        SamplingMode::Chain => Trajectory::chain(p, lines.map(index).collect::<Result<_>>()?),
        SamplingMode::IidPairs => {
            let pairs = lines
                .map(|l| {
                    let (a, b) = l
                        .split_once(',')
                        .ok_or_else(|| Error::Parse(format!("expected 'i,j', got '{}'", l.trim())))?;
                    Ok((index(a)?, index(b)?))
                })
                .collect::<Result<_>>()?;
            Trajectory::pairs(p, pairs)
        }
    }
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    matrix_from_csv(&fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    Ok(fs::write(path, matrix_to_csv(m))?)
}

pub fn read_counts(path: &Path) -> Result<TransitionCounts> {
    counts_from_csv(&fs::read_to_string(path)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_text(&fs::read_to_string(path)?)
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    Ok(fs::write(path, trajectory_to_text(t))?)
}
