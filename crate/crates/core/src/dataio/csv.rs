use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::{Error, Result};

/// Which CSV column holds the labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    /// Requires a header row.
    Name(String),
    Last,
    /// Feature-only file.
    None,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub has_header: bool,
    /// Overrides `1 + max label`.
    pub class_count: Option<usize>,
    /// Store the label column as noisy labels instead of clean ones.
    pub labels_are_noisy: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: LabelColumn::Last,
            has_header: false,
            class_count: None,
            labels_are_noisy: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, &path.display().to_string(), options)
}

/// Parses CSV text from any reader. `source_name` is used in error messages.
pub fn load_csv_reader<R: Read>(reader: R, source_name: &str, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(reader);

    let label_idx = match &options.label_column {
        LabelColumn::Index(i) => Some(LabelIdx::At(*i)),
        LabelColumn::Last => Some(LabelIdx::Last),
        LabelColumn::None => None,
        LabelColumn::Name(name) => {
            if !options.has_header {
                return Err(Error::Config(format!(
                    "label column `{name}` given by name but the file has no header"
                )));
            }
            let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?;
            let pos = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("no column named `{name}` in {source_name}")))?;
            Some(LabelIdx::At(pos))
        }
    };

    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    let row_offset = usize::from(options.has_header) + 1;

    for (r, record) in rdr.records().enumerate() {
        let row = r + row_offset;
        let record = record.map_err(|e| Error::Format(format!("{source_name}: {e}")))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    source_name: source_name.to_string(),
                    row,
                    column: record.len().min(w),
                    message: format!("ragged row: {} fields, expected {w}", record.len()),
                })
            }
            _ => {}
        }
        let lab = label_idx.map(|l| match l {
            LabelIdx::At(i) => i,
            LabelIdx::Last => record.len() - 1,
        });
        if let Some(li) = lab {
            if li >= record.len() {
                return Err(Error::Config(format!(
                    "label column {li} out of range for {} columns",
                    record.len()
                )));
            }
        }
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == lab {
                let label: usize = cell.parse().map_err(|_| Error::Parse {
                    source_name: source_name.to_string(),
                    row,
                    column: c,
                    message: format!("label `{cell}` is not a nonnegative integer"),
                })?;
                labels.push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    source_name: source_name.to_string(),
                    row,
                    column: c,
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        source_name: source_name.to_string(),
                        row,
                        column: c,
                        message: format!("`{cell}` is not finite"),
                    });
                }
                values.push(v);
            }
        }
    }

    let width = width.ok_or_else(|| Error::InvalidInput(format!("{source_name} has no data rows")))?;
    let d = width - usize::from(label_idx.is_some());
    let n = if d == 0 { 0 } else { values.len() / d };
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(format!("{source_name}: {e}")))?;

    let class_count = match (options.class_count, labels.iter().max()) {
        (Some(c), _) => c,
        (None, Some(&m)) => m + 1,
        (None, None) => 2,
    };
    let ds = Dataset::new(features, class_count.max(2))?;
    if label_idx.is_none() {
        return Ok(ds);
    }
    if options.labels_are_noisy {
        ds.with_noisy_labels(labels)
    } else {
        ds.with_clean_labels(labels)
    }
}

#[derive(Clone, Copy)]
enum LabelIdx {
    At(usize),
    Last,
}

/// Writes features followed by the clean label column (if any). Values are
/// printed in shortest round-trip form.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if header {
        let mut cols: Vec<String> = (0..dataset.dim()).map(|j| format!("x{j}")).collect();
        if dataset.clean_labels().is_some() {
            cols.push("label".into());
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    for i in 0..dataset.len() {
        let mut cells: Vec<String> = dataset.feature_row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = dataset.clean_labels() {
            cells.push(l[i].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
