//! Self-describing text archive for parameter snapshots.
//!
//! Format (line-oriented):
//!
//! ```text
//! streamrec-tensors v1
//! meta <one line of caller-defined metadata>
//! tensor <name> <rows> <cols>
//! <cols values> ...        (one line per row)
//! ```
//!
//! Values are written with Rust's shortest-roundtrip float formatting, so a
//! save/load cycle is bitwise exact.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &str = "streamrec-tensors v1";

pub fn write_archive<W: Write>(
    out: &mut W,
    meta: &str,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    if meta.contains('\n') {
        return Err(Error::Snapshot("metadata must be a single line".into()));
    }
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "meta {meta}")?;
    for (name, tensor) in tensors {
        if name.contains(char::is_whitespace) {
            return Err(Error::Snapshot(format!("tensor name '{name}' contains whitespace")));
        }
        writeln!(out, "tensor {name} {} {}", tensor.rows(), tensor.cols())?;
        for r in 0..tensor.rows() {
            let row = tensor.row(r);
            let mut line = String::with_capacity(row.len() * 12);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{v}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn read_archive<R: BufRead>(input: R) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut lines = input.lines().enumerate();
    let bad = |line: usize, msg: String| Error::Snapshot(format!("line {}: {msg}", line + 1));

    let (_, first) = lines.next().ok_or_else(|| Error::Snapshot("empty archive".into()))?;
    if first? != MAGIC {
        return Err(Error::Snapshot(format!("bad magic line, expected '{MAGIC}'")));
    }
    let (meta_no, meta_line) =
        lines.next().ok_or_else(|| Error::Snapshot("missing meta line".into()))?;
    let meta_line = meta_line?;
    let meta = meta_line
        .strip_prefix("meta ")
        .ok_or_else(|| bad(meta_no, "expected 'meta ...'".into()))?
        .to_string();

    let mut tensors = Vec::new();
    let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
    for (no, line) in lines {
        let line = line?;
        if let Some(rest) = line.strip_prefix("tensor ") {
            if let Some((name, rows, cols, data)) = pending.take() {
                tensors.push(finish_tensor(name, rows, cols, data, no)?);
            }
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| bad(no, "tensor header missing name".into()))?
                .to_string();
            let rows: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(no, "tensor header missing row count".into()))?;
            let cols: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(no, "tensor header missing column count".into()))?;
            pending = Some((name, rows, cols, Vec::with_capacity(rows * cols)));
        } else {
            let (_, _, cols, data) = pending
                .as_mut()
                .ok_or_else(|| bad(no, "values outside any tensor block".into()))?;
            let before = data.len();
            for token in line.split_whitespace() {
                let v: f64 = token
                    .parse()
                    .map_err(|_| bad(no, format!("unparseable value '{token}'")))?;
                data.push(v);
            }
            if data.len() - before != *cols {
                return Err(bad(no, format!("expected {cols} values per row")));
            }
        }
    }
    if let Some((name, rows, cols, data)) = pending.take() {
        tensors.push(finish_tensor(name, rows, cols, data, 0)?);
    }
    Ok((meta, tensors))
}

fn finish_tensor(
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    line: usize,
) -> Result<(String, Tensor)> {
    if data.len() != rows * cols {
        return Err(Error::Snapshot(format!(
            "tensor '{name}' near line {}: got {} values, expected {}x{}",
            line + 1,
            data.len(),
            rows,
            cols
        )));
    }
    let rows_vec: Vec<Vec<f64>> = data.chunks(cols.max(1)).map(|c| c.to_vec()).collect();
    let tensor = if rows == 0 || cols == 0 {
        Tensor::zeros(rows, cols)
    } else {
        Tensor::from_rows(rows_vec)?
    };
    Ok((name, tensor))
}
