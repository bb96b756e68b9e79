//! Headerless CSV storage for matrices and label vectors.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SmfError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Parses CSV text: one matrix row per line, no header. Ragged rows and
/// non-finite entries are rejected.
pub fn parse_csv<T: Scalar>(text: &str) -> Result<Matrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| SmfError::Parse(format!("csv row {}: {e}", line + 1)))?;
        let mut row = Vec::with_capacity(rec.len());
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                SmfError::Parse(format!("row {} col {}: `{field}` is not a number", line + 1, col + 1))
            })?;
            if !v.is_finite() {
                return Err(SmfError::Parse(format!("row {} col {}: non-finite value", line + 1, col + 1)));
            }
            row.push(T::lit(v));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn read_csv<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&text).map_err(|e| match e {
        SmfError::Parse(msg) => SmfError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn format_csv<T: Scalar>(m: &Matrix<T>) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = (0..m.cols()).map(|j| format!("{}", m[(i, j)].as_f64())).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(format_csv(m).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads one integer label per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<usize>()
                .map_err(|_| SmfError::Parse(format!("{} line {}: `{l}` is not a label", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for y in labels {
        writeln!(w, "{y}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let m = Matrix::from_rows(&[vec![1.5, -2.0, 1e-17], vec![0.1, 3.0, 7.25]]).unwrap();
        let back: Matrix<f64> = parse_csv(&format_csv(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_ragged_and_garbage() {
        assert!(parse_csv::<f64>("1,2\n3\n").is_err());
        assert!(parse_csv::<f64>("1,x\n").is_err());
        assert!(parse_csv::<f64>("1,NaN\n").is_err());
        assert!(parse_csv::<f64>("1,inf\n").is_err());
    }

    #[test]
    fn labels_roundtrip() {
        let dir = std::env::temp_dir().join(format!("smf-labels-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("y.csv");
        write_labels(&p, &[0, 2, 1]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 2, 1]);
        std::fs::remove_dir_all(&dir).ok();
    }
}
