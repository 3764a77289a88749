//! Trajectory CSV files.
//!
//! Floats are written with `f64`'s `Display`, the shortest text that parses
//! back to the same value, so a file read back compares equal to the
//! trajectory that produced it. Absent optional values are empty fields.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use wdlab::{Trajectory, TrajectoryRow};

pub const HEADER: [&str; 11] = [
    "step",
    "layer",
    "gamma_t",
    "lambda_eff",
    "grad_norm",
    "weight_norm",
    "ratio",
    "ema_ratio",
    "predicted_ratio",
    "grad_wnorm",
    "weight_wnorm",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in traj.rows() {
        w.write_record([
            r.step.to_string(),
            r.layer.to_string(),
            r.gamma_t.to_string(),
            r.lambda_eff.to_string(),
            r.grad_norm.to_string(),
            r.weight_norm.to_string(),
            r.ratio.to_string(),
            r.ema_ratio.to_string(),
            opt(r.predicted_ratio),
            opt(r.grad_wnorm),
            opt(r.weight_wnorm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader.headers().context("reading header")?;
    if header.iter().ne(HEADER) {
        bail!("unexpected header, expected {}", HEADER.join(","));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.with_context(|| format!("line {line}"))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .with_context(|| format!("line {line}: bad {} value {:?}", HEADER[k], field(k)))
        };
        let maybe = |k: usize| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<usize> {
            field(k)
                .parse::<usize>()
                .with_context(|| format!("line {line}: bad {} value {:?}", HEADER[k], field(k)))
        };
        rows.push(TrajectoryRow {
            step: int(0)?,
            layer: int(1)?,
            gamma_t: num(2)?,
            lambda_eff: num(3)?,
            grad_norm: num(4)?,
            weight_norm: num(5)?,
            ratio: num(6)?,
            ema_ratio: num(7)?,
            predicted_ratio: maybe(8)?,
            grad_wnorm: maybe(9)?,
            weight_wnorm: maybe(10)?,
        });
    }
    Ok(Trajectory::from_rows(rows)?)
}

pub fn read_trajectory_file(path: &std::path::Path) -> Result<Trajectory> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trajectory(std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}
