//! Matrix Market and plain-vector file I/O.
//!
//! Sparse matrices use the coordinate format ("%%MatrixMarket matrix
//! coordinate real general", 1-based indices, duplicates summed on read);
//! dense matrices use the array format (column-major, per the format spec).
//! Vectors are whitespace-separated reals; blank lines and lines starting
//! with '%' are skipped.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{DenseMatrix, SparseMatrix};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

struct MmHeader {
    format: String, // "coordinate" | "array"
}

fn parse_header(first: &str) -> Result<MmHeader> {
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() != 5 || !fields[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix <format> real general'"));
    }
    let (object, format, field, symmetry) = (fields[1], fields[2], fields[3], fields[4]);
    if !object.eq_ignore_ascii_case("matrix") {
        return Err(parse_err(1, format!("unsupported object '{object}'")));
    }
    if !field.eq_ignore_ascii_case("real") && !field.eq_ignore_ascii_case("integer") {
        return Err(parse_err(1, format!("unsupported field '{field}'")));
    }
    if !symmetry.eq_ignore_ascii_case("general") {
        return Err(parse_err(1, format!("unsupported symmetry '{symmetry}'")));
    }
    if !format.eq_ignore_ascii_case("coordinate") && !format.eq_ignore_ascii_case("array") {
        return Err(parse_err(1, format!("unsupported format '{format}'")));
    }
    Ok(MmHeader {
        format: format.to_ascii_lowercase(),
    })
}

/// Lines of the body with their 1-based line numbers, comments and blanks
/// stripped. The header is line 1.
fn body_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'))
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let first = text.lines().next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = parse_header(first)?;
    if header.format != "coordinate" {
        return Err(parse_err(1, "expected coordinate format for a sparse matrix"));
    }
    let mut body = body_lines(&text);
    let (size_line_no, size_line) = body
        .next()
        .ok_or_else(|| parse_err(1, "missing size line"))?;
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(parse_err(size_line_no, "size line needs 'rows cols nnz'"));
    }
    let parse_usize = |s: &str, line: usize| -> Result<usize> {
        s.parse()
            .map_err(|_| parse_err(line, format!("bad integer '{s}'")))
    };
    let n_rows = parse_usize(dims[0], size_line_no)?;
    let n_cols = parse_usize(dims[1], size_line_no)?;
    let nnz = parse_usize(dims[2], size_line_no)?;
    let mut triplets = Vec::with_capacity(nnz);
    for (line_no, line) in body {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(line_no, "entry needs 'row col value'"));
        }
        let r = parse_usize(f[0], line_no)?;
        let c = parse_usize(f[1], line_no)?;
        let v: f64 = f[2]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad real '{}'", f[2])))?;
        if r == 0 || c == 0 || r > n_rows || c > n_cols {
            return Err(parse_err(
                line_no,
                format!("index ({r}, {c}) outside 1..={n_rows} x 1..={n_cols}"),
            ));
        }
        triplets.push((r - 1, c - 1, v));
    }
    if triplets.len() != nnz {
        return Err(parse_err(
            size_line_no,
            format!("declared {nnz} entries, found {}", triplets.len()),
        ));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, &triplets)
}

pub fn write_matrix_market(path: impl AsRef<Path>, a: &SparseMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    out.push_str(&format!("{} {} {}\n", a.n_rows(), a.n_cols(), a.nnz()));
    for (r, cols, vals) in a.rows() {
        for (&c, &v) in cols.iter().zip(vals) {
            out.push_str(&format!("{} {} {:.17e}\n", r + 1, c + 1, v));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_dense_matrix_market(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let first = text.lines().next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = parse_header(first)?;
    if header.format != "array" {
        return Err(parse_err(1, "expected array format for a dense matrix"));
    }
    let mut body = body_lines(&text);
    let (size_line_no, size_line) = body
        .next()
        .ok_or_else(|| parse_err(1, "missing size line"))?;
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(size_line_no, "size line needs 'rows cols'"));
    }
    let n_rows: usize = dims[0]
        .parse()
        .map_err(|_| parse_err(size_line_no, "bad row count"))?;
    let n_cols: usize = dims[1]
        .parse()
        .map_err(|_| parse_err(size_line_no, "bad col count"))?;
    let mut values = Vec::with_capacity(n_rows * n_cols);
    for (line_no, line) in body {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad real '{tok}'")))?;
            values.push(v);
        }
    }
    if values.len() != n_rows * n_cols {
        return Err(parse_err(
            size_line_no,
            format!("expected {} values, found {}", n_rows * n_cols, values.len()),
        ));
    }
    // array format is column-major
    let mut m = DenseMatrix::zeros(n_rows, n_cols);
    for c in 0..n_cols {
        for r in 0..n_rows {
            m.set(r, c, values[c * n_rows + r]);
        }
    }
    Ok(m)
}

pub fn write_dense_matrix_market(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{} {}\n", m.n_rows(), m.n_cols()));
    for c in 0..m.n_cols() {
        for r in 0..m.n_rows() {
            out.push_str(&format!("{:.17e}\n", m.get(r, c)));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad real '{tok}'")))?;
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput {
            what: "read_vector",
            reason: format!("{} has no values", path.display()),
        });
    }
    Ok(out)
}

pub fn write_vector(path: impl AsRef<Path>, xs: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for x in xs {
        writeln!(f, "{x:.17e}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}
