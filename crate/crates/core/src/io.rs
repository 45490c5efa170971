//! On-disk formats shared by the pipeline stages.
//!
//! Trajectory CSV: header `t,i,v`, one sample per row, floats printed in
//! shortest round-trip form. Labels and provenance ride in a JSON-lines
//! manifest next to the CSVs. Feature CSV: header `label,f1,...,fd`.
//! Fit records and models are JSON.

use crate::features::{FeatureKind, FeatureVector};
use crate::fit::{LinearFit, PiecewiseFit, QuadFit};
use crate::prep::{BreakpointGrid, FitMode};
use crate::sim::{Sample, Trajectory, TrajectoryMeta};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{file}:{line}: column `{column}`: {message}")]
    Schema {
        file: String,
        line: usize,
        column: String,
        message: String,
    },
    #[error("manifest entry `{file}` has no matching trajectory CSV")]
    MissingLabel { file: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes a trajectory as `t,i,v` rows.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.len() * 24 + 8);
    out.push_str("t,i,v\n");
    for s in &traj.samples {
        // `{}` prints the shortest string that parses back to the same f64,
        // which keeps rewrites byte-identical.
        writeln!(out, "{},{},{}", s.t, s.i, s.v).expect("string write cannot fail");
    }
    out
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    std::fs::write(path, trajectory_to_csv(traj)).map_err(|e| io_err(path, e))
}

/// Parses a trajectory CSV, reporting malformed cells by line and column.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "t,i,v" => {}
        Some((_, header)) => {
            return Err(IoError::Schema {
                file,
                line: 1,
                column: "header".into(),
                message: format!("expected `t,i,v`, got `{header}`"),
            })
        }
        None => {
            return Err(IoError::Schema {
                file,
                line: 1,
                column: "header".into(),
                message: "empty file".into(),
            })
        }
    }
    let mut samples = Vec::new();
    for (idx, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let line = idx + 1;
        let mut cells = row.split(',');
        let mut parse = |column: &str| -> Result<f64, IoError> {
            let cell = cells.next().ok_or_else(|| IoError::Schema {
                file: file.clone(),
                line,
                column: column.to_string(),
                message: "missing cell".into(),
            })?;
            cell.trim().parse::<f64>().map_err(|_| IoError::Schema {
                file: file.clone(),
                line,
                column: column.to_string(),
                message: format!("not a number: `{cell}`"),
            })
        };
        let t = parse("t")?;
        let i = parse("i")?;
        let v = parse("v")?;
        samples.push(Sample { t, i, v });
    }
    Ok(Trajectory {
        samples,
        label: None,
        meta: TrajectoryMeta::default(),
    })
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: u32,
    pub seed: u64,
    pub scenario: u32,
    pub eta: f64,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), IoError> {
    let mut out = String::new();
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| IoError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| IoError::Schema {
            file: path.display().to_string(),
            line: idx + 1,
            column: "manifest".into(),
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Loads every manifest entry's CSV and joins the label onto it.
pub fn load_dataset(dir: &Path, manifest_path: &Path) -> Result<Vec<Trajectory>, IoError> {
    let entries = read_manifest(manifest_path)?;
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let csv_path = dir.join(&entry.file);
        if !csv_path.is_file() {
            return Err(IoError::MissingLabel { file: entry.file });
        }
        let mut traj = read_trajectory_csv(&csv_path)?;
        traj.label = Some(entry.label);
        traj.meta = TrajectoryMeta {
            seed: entry.seed,
            scenario: Some(entry.scenario),
            eta: entry.eta,
        };
        out.push(traj);
    }
    Ok(out)
}

/// Serializes labeled feature vectors as `label,f1,...,fd`.
pub fn features_to_csv(vectors: &[FeatureVector]) -> String {
    let dim = vectors.first().map_or(0, FeatureVector::dim);
    let mut out = String::from("label");
    for j in 1..=dim {
        write!(out, ",f{j}").expect("string write cannot fail");
    }
    out.push('\n');
    for v in vectors {
        write!(out, "{}", v.label.map_or(-1i64, i64::from)).expect("string write cannot fail");
        for x in &v.values {
            write!(out, ",{x}").expect("string write cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn write_features_csv(path: &Path, vectors: &[FeatureVector]) -> Result<(), IoError> {
    std::fs::write(path, features_to_csv(vectors)).map_err(|e| io_err(path, e))
}

/// Reads a feature CSV; the producing fit family is not recorded in the
/// format, so `kind` comes back as `None`.
pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) => {
            let cols: Vec<&str> = header.split(',').collect();
            if cols.first() != Some(&"label") {
                return Err(IoError::Schema {
                    file,
                    line: 1,
                    column: "header".into(),
                    message: format!("expected `label,f1,...`, got `{header}`"),
                });
            }
            cols.len() - 1
        }
        None => {
            return Err(IoError::Schema {
                file,
                line: 1,
                column: "header".into(),
                message: "empty file".into(),
            })
        }
    };
    let mut out = Vec::new();
    for (idx, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let line = idx + 1;
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(IoError::Schema {
                file: file.clone(),
                line,
                column: "row".into(),
                message: format!("expected {} cells, got {}", dim + 1, cells.len()),
            });
        }
        let label: i64 = cells[0].trim().parse().map_err(|_| IoError::Schema {
            file: file.clone(),
            line,
            column: "label".into(),
            message: format!("not an integer: `{}`", cells[0]),
        })?;
        let mut values = Vec::with_capacity(dim);
        for (j, cell) in cells[1..].iter().enumerate() {
            let x: f64 = cell.trim().parse().map_err(|_| IoError::Schema {
                file: file.clone(),
                line,
                column: format!("f{}", j + 1),
                message: format!("not a number: `{cell}`"),
            })?;
            values.push(x);
        }
        out.push(FeatureVector {
            values,
            kind: None,
            label: (label >= 0).then_some(label as u32),
        });
    }
    Ok(out)
}

/// Serialized per-trajectory fit: grid, knots, derived coefficients, and
/// residual, plus the source file for traceability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub source: String,
    pub label: Option<u32>,
    pub mode: FitMode,
    pub grid: Vec<f64>,
    pub knots: Vec<f64>,
    pub pieces: Vec<PieceCoeffs>,
    pub residual: f64,
}

/// Derived coefficients of one piece in either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PieceCoeffs {
    Linear { slope: f64, intercept: f64 },
    Quadratic { m: f64, n: f64, h: f64 },
}

impl FitRecord {
    pub fn from_fit(fit: &PiecewiseFit, source: String, label: Option<u32>) -> Self {
        let (pieces, knots) = match fit {
            PiecewiseFit::Linear(f) => (
                f.slopes()
                    .iter()
                    .zip(f.intercepts())
                    .map(|(s, h)| PieceCoeffs::Linear {
                        slope: *s,
                        intercept: h,
                    })
                    .collect(),
                f.knot_values().to_vec(),
            ),
            PiecewiseFit::Quadratic(f) => (
                f.coefficients()
                    .iter()
                    .map(|c| PieceCoeffs::Quadratic {
                        m: c.m,
                        n: c.n,
                        h: c.h,
                    })
                    .collect(),
                f.knot_values().to_vec(),
            ),
        };
        FitRecord {
            source,
            label,
            mode: fit.grid().mode(),
            grid: fit.grid().knots().to_vec(),
            knots,
            pieces,
            residual: fit.residual(),
        }
    }

    /// Rebuilds the evaluable fit, revalidating the grid invariants.
    pub fn to_fit(&self) -> Result<PiecewiseFit, IoError> {
        let grid = BreakpointGrid::from_knot_positions(self.grid.clone(), self.mode).map_err(
            |e| IoError::Json {
                path: self.source.clone(),
                message: e.to_string(),
            },
        )?;
        let fit = match self.mode {
            FitMode::Linear => LinearFit::from_knots(grid, self.knots.clone(), self.residual)
                .map(PiecewiseFit::Linear),
            FitMode::Quadratic => QuadFit::from_knots(grid, self.knots.clone(), self.residual)
                .map(PiecewiseFit::Quadratic),
        };
        fit.map_err(|e| IoError::Json {
            path: self.source.clone(),
            message: e.to_string(),
        })
    }

    /// Feature kind this record's mode produces.
    pub fn feature_kind(&self) -> FeatureKind {
        match self.mode {
            FitMode::Linear => FeatureKind::Linear,
            FitMode::Quadratic => FeatureKind::Quadratic,
        }
    }
}

pub fn write_fit_record(path: &Path, record: &FitRecord) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(record).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn read_fit_record(path: &Path) -> Result<FitRecord, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Measured-vs-fitted overlay rows, sorted by current, knots flagged.
pub fn plot_overlay_csv(samples: &[(f64, f64)], fit: &PiecewiseFit) -> String {
    let mut rows: Vec<(f64, f64, f64, bool)> = samples
        .iter()
        .map(|&(i, v)| (i, v, fit.evaluate(i), false))
        .collect();
    for &x in fit.grid().knots() {
        let y = fit.evaluate(x);
        rows.push((x, y, y, true));
    }
    rows.sort_by(|a, b| {
        (a.0, a.3)
            .partial_cmp(&(b.0, b.3))
            .expect("finite currents")
    });
    let mut out = String::from("i,v_measured,v_fit,is_breakpoint\n");
    for (i, vm, vf, knot) in rows {
        writeln!(out, "{},{},{},{}", i, vm, vf, u8::from(knot)).expect("string write cannot fail");
    }
    out
}
