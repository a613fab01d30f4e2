//! Dataset bundles: a directory holding `features.csv` (or an
//! `images.idx`/`labels.idx` pair), `clean_labels.csv`, optional
//! `noisy_labels.csv` and `true_rows.csv`, and `meta.json`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{load_idx, Dataset, Normalization};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    /// Generator settings recorded by `corrupt`.
    #[serde(default)]
    pub noise: Option<serde_json::Value>,
}

impl BundleMeta {
    pub fn for_dataset(d: &Dataset) -> Self {
        Self {
            n: d.len(),
            d: d.dim(),
            c: d.class_count(),
            seed: None,
            normalization: None,
            noise: None,
        }
    }
}

pub fn save_bundle(dataset: &Dataset, meta: &BundleMeta, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dataset.features(), dir.join("features.csv"))?;
    if let Some(l) = dataset.clean_labels() {
        write_labels(l, dir.join("clean_labels.csv"))?;
    }
    if let Some(l) = dataset.noisy_labels() {
        write_labels(l, dir.join("noisy_labels.csv"))?;
    }
    if let Some(r) = dataset.true_rows() {
        write_matrix(r, dir.join("true_rows.csv"))?;
    }
    write_json(meta, dir.join("meta.json"))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(Dataset, BundleMeta)> {
    let dir = dir.as_ref();
    let meta: Option<BundleMeta> = if dir.join("meta.json").exists() {
        Some(read_json(dir.join("meta.json"))?)
    } else {
        None
    };
    let mut ds = if dir.join("features.csv").exists() {
        let x = read_matrix(dir.join("features.csv"))?;
        let c = match &meta {
            Some(m) => m.c,
            None => {
                let labels = read_labels(dir.join("clean_labels.csv"))?;
                labels.iter().max().map_or(2, |m| (m + 1).max(2))
            }
        };
        let ds = Dataset::new(x, c)?;
        if dir.join("clean_labels.csv").exists() {
            ds.with_clean_labels(read_labels(dir.join("clean_labels.csv"))?)?
        } else {
            ds
        }
    } else if dir.join("images.idx").exists() {
        let ds = load_idx(dir.join("images.idx"), dir.join("labels.idx"))?;
        match &meta {
            Some(m) if m.c != ds.class_count() => {
                let labels = ds.clean_labels().map(|l| l.to_vec());
                let base = Dataset::new(ds.features().to_owned(), m.c)?;
                match labels {
                    Some(l) => base.with_clean_labels(l)?,
                    None => base,
                }
            }
            _ => ds,
        }
    } else {
        return Err(Error::InvalidInput(format!(
            "{} has neither features.csv nor images.idx",
            dir.display()
        )));
    };
    if dir.join("noisy_labels.csv").exists() {
        ds = ds.with_noisy_labels(read_labels(dir.join("noisy_labels.csv"))?)?;
    }
    if dir.join("true_rows.csv").exists() {
        ds = ds.with_true_rows(read_matrix(dir.join("true_rows.csv"))?)?;
    }
    let meta = meta.unwrap_or_else(|| BundleMeta::for_dataset(&ds));
    if meta.n != ds.len() || meta.d != ds.dim() {
        return Err(Error::Format(format!(
            "meta.json declares {}x{}, files hold {}x{}",
            meta.n,
            meta.d,
            ds.len(),
            ds.dim()
        )));
    }
    Ok((ds, meta))
}

/// Headerless CSV, one matrix row per line, shortest round-trip formatting.
pub fn write_matrix(m: ndarray::ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    source_name: path.display().to_string(),
                    row: r + 1,
                    column: cells.len().min(w),
                    message: format!("ragged row: {} fields, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                source_name: path.display().to_string(),
                row: r + 1,
                column: c,
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(r, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                source_name: path.display().to_string(),
                row: r + 1,
                column: 0,
                message: format!("`{l}` is not a nonnegative integer"),
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
