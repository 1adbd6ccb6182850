//! On-disk layout of a generated dataset.
//!
//! A dataset directory holds the observational table, which is all a
//! practitioner would see, plus two ground-truth sidecars that only the
//! evaluation code opens:
//!
//! ```text
//! observational.csv    x_0..x_{d-1},t,y
//! ground_truth.csv     cu_0..cu_{k-1},mu_y0,mu_y1,propensity,t_x_true,y_x_true
//! ground_truth.json    confounded flag, mechanism weights, covariance
//! ```
//!
//! Reals are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vluci::nn::Matrix;
use vluci::synth::{GroundTruth, MechanismWeights, Observational, SynthDataset};

use crate::error::{LabError, Result};

pub const OBSERVATIONAL: &str = "observational.csv";
pub const TRUTH_TABLE: &str = "ground_truth.csv";
pub const TRUTH_META: &str = "ground_truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub confounded: bool,
    pub weights: MechanismWeights,
    pub covariance: Matrix,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(LabError::io(path))?))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = create(path)?;
    let io = LabError::io(path);
    (|| {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()
    })()
    .map_err(io)
}

pub fn write_observational(path: &Path, obs: &Observational) -> Result<()> {
    let d = obs.x.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.push("t".into());
    header.push("y".into());
    write_rows(
        path,
        &header,
        (0..obs.len()).map(|i| {
            let mut row = obs.x.row(i).to_vec();
            row.push(obs.t[i]);
            row.push(obs.y[i]);
            row
        }),
    )
}

pub fn write_truth(path: &Path, g: &GroundTruth) -> Result<()> {
    let k = g.cu.cols();
    let mut header: Vec<String> = (0..k).map(|j| format!("cu_{j}")).collect();
    header.extend(["mu_y0", "mu_y1", "propensity", "t_x_true", "y_x_true"].map(String::from));
    write_rows(
        path,
        &header,
        (0..g.cu.rows()).map(|i| {
            let mut row = g.cu.row(i).to_vec();
            row.extend([g.mu_y0[i], g.mu_y1[i], g.propensity[i], g.t_x_true[i], g.y_x_true[i]]);
            row
        }),
    )
}

/// Writes all three files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, ds: &SynthDataset, confounded: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(LabError::io(dir))?;
    write_observational(&dir.join(OBSERVATIONAL), &ds.obs)?;
    if let Some(g) = &ds.truth {
        write_truth(&dir.join(TRUTH_TABLE), g)?;
    }
    if let (Some(weights), Some(covariance)) = (&ds.weights, &ds.covariance) {
        let meta = TruthMeta { confounded, weights: weights.clone(), covariance: covariance.clone() };
        let path = dir.join(TRUTH_META);
        let text = serde_json::to_string_pretty(&meta).expect("meta serialises");
        fs::write(&path, text + "\n").map_err(LabError::io(&path))?;
    }
    Ok(())
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let parse_err = |line: u64, message: String| LabError::Parse { path: path.to_path_buf(), line, message };
    let file = File::open(path).map_err(LabError::io(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    parse_err(line, format!("column {}: cannot parse {field:?} as a number", header[j]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn column_index(t: &Table, path: &Path, name: &str) -> Result<usize> {
    t.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| LabError::Parse { path: path.to_path_buf(), line: 1, message: format!("missing column {name}") })
}

fn prefixed_columns(t: &Table, prefix: &str) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = t
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()).map(|k| (k, i)))
        .collect();
    cols.sort_unstable();
    cols.into_iter().map(|(_, i)| i).collect()
}

fn gather(t: &Table, cols: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(t.rows.len() * cols.len());
    for row in &t.rows {
        data.extend(cols.iter().map(|&c| row[c]));
    }
    Ok(Matrix::from_vec(t.rows.len(), cols.len(), data)?)
}

/// Reads `x_*`, `t` and `y`. Treatment values other than 0 and 1 are rejected
/// with the offending line number.
pub fn read_observational(path: &Path) -> Result<Observational> {
    let table = read_table(path)?;
    let x_cols = prefixed_columns(&table, "x_");
    if x_cols.is_empty() {
        return Err(LabError::Parse { path: path.to_path_buf(), line: 1, message: "no x_ columns".into() });
    }
    let t_col = column_index(&table, path, "t")?;
    let y_col = column_index(&table, path, "y")?;
    if let Some(i) = table.rows.iter().position(|r| r[t_col] != 0.0 && r[t_col] != 1.0) {
        return Err(LabError::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            message: format!("treatment must be 0 or 1, found {}", table.rows[i][t_col]),
        });
    }
    let x = gather(&table, &x_cols)?;
    let t = table.rows.iter().map(|r| r[t_col]).collect();
    let y = table.rows.iter().map(|r| r[y_col]).collect();
    Ok(Observational::new(x, t, y)?)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let table = read_table(path)?;
    let cu_cols = prefixed_columns(&table, "cu_");
    let col = |name: &str| -> Result<Vec<f64>> {
        let c = column_index(&table, path, name)?;
        Ok(table.rows.iter().map(|r| r[c]).collect())
    };
    Ok(GroundTruth {
        cu: gather(&table, &cu_cols)?,
        mu_y0: col("mu_y0")?,
        mu_y1: col("mu_y1")?,
        propensity: col("propensity")?,
        t_x_true: col("t_x_true")?,
        y_x_true: col("y_x_true")?,
    })
}

pub fn read_truth_meta(path: &Path) -> Result<TruthMeta> {
    let text = fs::read_to_string(path).map_err(LabError::io(path))?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse { path: path.to_path_buf(), line: e.line() as u64, message: e.to_string() })
}

/// Observational data of a dataset directory. Never touches the sidecars.
pub fn read_observational_dir(dir: &Path) -> Result<Observational> {
    let path = dir.join(OBSERVATIONAL);
    if !path.exists() {
        return Err(LabError::Data(format!("no dataset at {}", path.display())));
    }
    read_observational(&path)
}

/// Observational data plus whatever ground truth is present. Missing sidecars
/// leave the corresponding fields `None`.
pub fn read_dataset(dir: &Path) -> Result<SynthDataset> {
    let obs = read_observational_dir(dir)?;
    let truth_path = dir.join(TRUTH_TABLE);
    let truth = if truth_path.exists() {
        let g = read_truth(&truth_path)?;
        if g.cu.rows() != obs.len() {
            return Err(LabError::Data(format!(
                "{} has {} rows but the observational table has {}",
                truth_path.display(),
                g.cu.rows(),
                obs.len()
            )));
        }
        Some(g)
    } else {
        None
    };
    let meta_path = dir.join(TRUTH_META);
    let meta = if meta_path.exists() { Some(read_truth_meta(&meta_path)?) } else { None };
    let (weights, covariance) = match meta {
        Some(m) => (Some(m.weights), Some(m.covariance)),
        None => (None, None),
    };
    Ok(SynthDataset { obs, truth, weights, covariance })
}

pub fn sidecar_paths(dir: &Path) -> [PathBuf; 2] {
    [dir.join(TRUTH_TABLE), dir.join(TRUTH_META)]
}
