//! Feature file formats.
//!
//! * `csv`: header `label,f0,f1,...`, with the semantic table in a sibling
//!   `*.sem.csv` (header `class,s0,s1,...`). Class ids are remapped densely in
//!   the order of the semantic file.
//! * `azb`: magic `AZB1`, little-endian `u32` N, d_x, C, d_a, then N·d_x
//!   `f64` features, N `u32` labels and C·d_a `f64` semantics.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, SemanticSource, SemanticTable};
use crate::error::{Error, Result};
use crate::numkit::{ByteReader, Matrix};

const AZB_MAGIC: &[u8; 4] = b"AZB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Azb,
}

impl FileFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(FileFormat::Csv),
            "azb" => Some(FileFormat::Azb),
            _ => None,
        }
    }
}

impl std::str::FromStr for FileFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(FileFormat::Csv),
            "azb" => Ok(FileFormat::Azb),
            other => Err(format!("unknown feature format `{other}`")),
        }
    }
}

/// `features.csv` → `features.sem.csv`
pub fn semantics_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.sem.csv"))
}

pub fn load_features(path: &Path, format: FileFormat) -> Result<Dataset> {
    match format {
        FileFormat::Csv => load_csv(path),
        FileFormat::Azb => load_azb(&fs::read(path)?),
    }
}

pub fn save_features(dataset: &Dataset, path: &Path, format: FileFormat) -> Result<()> {
    match format {
        FileFormat::Csv => save_csv(dataset, path),
        FileFormat::Azb => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            w.write_all(&azb_bytes(dataset))?;
            w.flush()?;
            Ok(())
        }
    }
}

fn parse_error(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Reads `id,v0,v1,...` records. Row numbers in errors are 1-based data rows.
fn read_numeric_csv(path: &Path, expect_first: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let headers = reader.headers().map_err(|e| csv_error(e, path))?.clone();
    if headers.get(0) != Some(expect_first) {
        return Err(parse_error(
            0,
            format!("{}: header must start with `{expect_first}`", path.display()),
        ));
    }
    let width = headers.len() - 1;
    if width == 0 {
        return Err(parse_error(0, format!("{}: no value columns", path.display())));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_error(row, e.to_string()))?;
        if record.len() != width + 1 {
            return Err(parse_error(
                row,
                format!("expected {} columns, found {}", width + 1, record.len()),
            ));
        }
        let mut values = Vec::with_capacity(width);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(row, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(row, "non-finite value"));
            }
            values.push(v);
        }
        out.push((record[0].to_string(), values));
    }
    Ok(out)
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_error(0, format!("{}: {other:?}", path.display())),
    }
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let sem_rows = read_numeric_csv(&semantics_path(path), "class")?;
    if sem_rows.is_empty() {
        return Err(parse_error(0, "semantic file has no rows"));
    }
    let mut index = HashMap::new();
    let mut names = Vec::with_capacity(sem_rows.len());
    let mut sem_data = Vec::new();
    for (row, (name, values)) in sem_rows.into_iter().enumerate() {
        if index.insert(name.clone(), row).is_some() {
            return Err(parse_error(row + 1, format!("duplicate class `{name}`")));
        }
        names.push(name);
        sem_data.push(values);
    }
    let semantics = SemanticTable::new(Matrix::from_rows(&sem_data)?, SemanticSource::WordEmbedding)?;

    let rows = read_numeric_csv(path, "label")?;
    if rows.is_empty() {
        return Err(parse_error(0, "no rows"));
    }
    let mut labels = Vec::with_capacity(rows.len());
    let mut feats = Vec::with_capacity(rows.len());
    for (i, (label, values)) in rows.into_iter().enumerate() {
        let class = *index
            .get(&label)
            .ok_or_else(|| parse_error(i + 1, format!("unknown class id `{label}`")))?;
        labels.push(class);
        feats.push(values);
    }
    Dataset::new(Matrix::from_rows(&feats)?, labels, semantics, names)
}

fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(e, path))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.dim_x()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| csv_error(e, path))?;
    for (r, &l) in ds.labels().iter().enumerate() {
        let mut rec = vec![ds.class_names()[l].clone()];
        rec.extend(ds.features().row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(e, path))?;
    }
    w.flush()?;

    let sem_path = semantics_path(path);
    let mut w = csv::Writer::from_path(&sem_path).map_err(|e| csv_error(e, &sem_path))?;
    let mut header = vec!["class".to_string()];
    header.extend((0..ds.dim_a()).map(|i| format!("s{i}")));
    w.write_record(&header).map_err(|e| csv_error(e, &sem_path))?;
    for (c, name) in ds.class_names().iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(ds.semantics().matrix().row(c).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(e, &sem_path))?;
    }
    w.flush()?;
    Ok(())
}

fn azb_bytes(ds: &Dataset) -> Vec<u8> {
    let (n, dx, c, da) = (ds.len(), ds.dim_x(), ds.class_count(), ds.dim_a());
    let mut out = Vec::with_capacity(20 + 8 * (n * dx + c * da) + 4 * n);
    out.extend_from_slice(AZB_MAGIC);
    for v in [n, dx, c, da] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in ds.features().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in ds.labels() {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for v in ds.semantics().matrix().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn load_azb(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(parse_error(0, "no rows"));
    }
    let mut r = ByteReader::new(bytes);
    if r.take(4).map_err(|_| parse_error(0, "truncated header"))? != AZB_MAGIC {
        return Err(parse_error(0, "bad magic, expected AZB1"));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32().map_err(|_| parse_error(0, "truncated header"))? as usize;
    }
    let [n, dx, c, da] = dims;
    if n == 0 {
        return Err(parse_error(0, "no rows"));
    }
    let expected = 20 + 8 * (n * dx + c * da) + 4 * n;
    if bytes.len() != expected {
        return Err(parse_error(
            0,
            format!("file is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let features = r.f64s(n * dx)?;
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let l = r.u32()? as usize;
        if l >= c {
            return Err(parse_error(row + 1, format!("unknown class id {l}")));
        }
        labels.push(l);
    }
    let sem = r.f64s(c * da)?;
    if let Some(row) = features
        .chunks(dx.max(1))
        .position(|chunk| chunk.iter().any(|v| !v.is_finite()))
    {
        return Err(parse_error(row + 1, "non-finite value"));
    }
    Dataset::new(
        Matrix::from_vec(n, dx, features)?,
        labels,
        SemanticTable::new(Matrix::from_vec(c, da, sem)?, SemanticSource::WordEmbedding)?,
        (0..c).map(|i| i.to_string()).collect(),
    )
}
