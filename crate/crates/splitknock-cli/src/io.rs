//! CSV ingestion: numeric matrices with an auto-detected optional header
//! row, response vectors, triplet-form transforms, and edge lists. All
//! external indices are 1-based.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed row {}", path.display(), i + 1))?;
        let fields: Vec<String> = record.iter().map(|f| f.to_string()).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(fields);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(rows)
}

fn is_numeric_row(row: &[String]) -> bool {
    row.iter().all(|f| f.parse::<f64>().is_ok())
}

fn parse_numeric(rows: &[Vec<String>], path: &Path) -> Result<Vec<Vec<f64>>> {
    let start = usize::from(!is_numeric_row(&rows[0]));
    if start == rows.len() {
        bail!("{}: only a header row, no data", path.display());
    }
    let width = rows[start].len();
    let mut out = Vec::with_capacity(rows.len() - start);
    for (offset, row) in rows[start..].iter().enumerate() {
        let line = start + offset + 1;
        if row.len() != width {
            bail!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line,
                row.len(),
                width
            );
        }
        let mut parsed = Vec::with_capacity(width);
        for (col, field) in row.iter().enumerate() {
            let v: f64 = field.parse().with_context(|| {
                format!(
                    "{}: row {}, column {}: not a number: {:?}",
                    path.display(),
                    line,
                    col + 1,
                    field
                )
            })?;
            parsed.push(v);
        }
        out.push(parsed);
    }
    Ok(out)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows(path)?;
    let data = parse_numeric(&rows, path)?;
    let (r, c) = (data.len(), data[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| data[i][j]))
}

/// A column vector; a single-row file is accepted as a row vector.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() == 1 {
        Ok(DVector::from_column_slice(m.column(0).as_slice()))
    } else if m.nrows() == 1 {
        Ok(DVector::from_fn(m.ncols(), |j, _| m[(0, j)]))
    } else {
        bail!(
            "{}: expected a vector, found a {}x{} matrix",
            path.display(),
            m.nrows(),
            m.ncols()
        )
    }
}

/// Dense m x p matrix, or a triplet file with header "row,col,value"
/// (1-based indices).
pub fn read_transform_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows(path)?;
    let header: Vec<String> = rows[0].iter().map(|f| f.to_ascii_lowercase()).collect();
    if header == ["row", "col", "value"] {
        let mut triplets = Vec::new();
        let (mut max_row, mut max_col) = (0usize, 0usize);
        for (offset, row) in rows[1..].iter().enumerate() {
            let line = offset + 2;
            if row.len() != 3 {
                bail!("{}: triplet row {} needs 3 fields", path.display(), line);
            }
            let r: usize = row[0]
                .parse()
                .with_context(|| format!("{}: row {}: bad row index", path.display(), line))?;
            let c: usize = row[1]
                .parse()
                .with_context(|| format!("{}: row {}: bad col index", path.display(), line))?;
            let v: f64 = row[2]
                .parse()
                .with_context(|| format!("{}: row {}: bad value", path.display(), line))?;
            if r == 0 || c == 0 {
                bail!("{}: row {}: triplet indices are 1-based", path.display(), line);
            }
            max_row = max_row.max(r);
            max_col = max_col.max(c);
            triplets.push((r - 1, c - 1, v));
        }
        if triplets.is_empty() {
            bail!("{}: empty triplet file", path.display());
        }
        let mut d = DMatrix::zeros(max_row, max_col);
        for (r, c, v) in triplets {
            d[(r, c)] = v;
        }
        Ok(d)
    } else {
        read_matrix(path)
    }
}

/// Edge list: two columns (tail, head), 1-based, optional header.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let rows = read_rows(path)?;
    let data = parse_numeric(&rows, path)?;
    let mut edges = Vec::with_capacity(data.len());
    for (i, row) in data.iter().enumerate() {
        if row.len() != 2 {
            bail!("{}: edge row {} needs 2 fields", path.display(), i + 1);
        }
        let tail = row[0] as usize;
        let head = row[1] as usize;
        if tail == 0 || head == 0 || row[0].fract() != 0.0 || row[1].fract() != 0.0 {
            bail!(
                "{}: edge row {}: indices must be positive integers (1-based)",
                path.display(),
                i + 1
            );
        }
        edges.push((tail - 1, head - 1));
    }
    Ok(edges)
}

pub fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

/// 17 significant digits, matching the JSON float format.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
