//! Plain-text parameter checkpoints.
//!
//! ```text
//! tripletmine-checkpoint v1
//! embedder <n> <h1> ... <d>
//! head <d> <C>                   (or `head none`)
//! layer <l> weights <rows> <cols>
//! <one line per row, space separated>
//! layer <l> bias <len>
//! <one line>
//! ...                            (every layer in order)
//! head weights <d> <C>
//! <rows>
//! head bias <C>
//! <one line>
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! read-back checkpoint is bit-identical to what was written.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, EmbedderParams, SoftmaxHead};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "tripletmine-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub embedder: EmbedderParams,
    pub head: Option<SoftmaxHead>,
}

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").expect("write to string");
    }
    s
}

fn write_matrix(out: &mut String, header: &str, m: &Array2<f64>) {
    writeln!(out, "{header} {} {}", m.nrows(), m.ncols()).expect("write to string");
    for row in m.rows() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
}

fn write_vector(out: &mut String, header: &str, v: &Array1<f64>) {
    writeln!(out, "{header} {}", v.len()).expect("write to string");
    out.push_str(&join(v.iter().copied()));
    out.push('\n');
}

pub fn render_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    let sizes: Vec<String> = ckpt.embedder.sizes().iter().map(usize::to_string).collect();
    writeln!(out, "embedder {}", sizes.join(" ")).expect("write to string");
    match &ckpt.head {
        Some(h) => writeln!(out, "head {} {}", h.dim(), h.classes()),
        None => writeln!(out, "head none"),
    }
    .expect("write to string");
    for (l, layer) in ckpt.embedder.layers().iter().enumerate() {
        write_matrix(&mut out, &format!("layer {l} weights"), &layer.weights);
        write_vector(&mut out, &format!("layer {l} bias"), &layer.bias);
    }
    if let Some(h) = &ckpt.head {
        write_matrix(&mut out, "head weights", &h.weights);
        write_vector(&mut out, "head bias", &h.bias);
    }
    out
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(render_checkpoint(ckpt).as_bytes())?;
    file.flush()?;
    Ok(())
}

struct Lines<'a, R> {
    inner: std::io::Lines<R>,
    line: usize,
    path: &'a Path,
}

impl<R: BufRead> Lines<'_, R> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        })
    }

    fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => self.fail("unexpected end of file"),
        }
    }

    /// Read a header line that must start with `prefix`, returning the
    /// integer fields after it.
    fn header(&mut self, prefix: &str) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        let Some(rest) = line.strip_prefix(prefix) else {
            return self.fail(format!("expected {prefix:?}, found {line:?}"));
        };
        rest.split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .or_else(|e| self.fail(format!("bad size in {line:?}: {e}")))
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = match line.split_whitespace().map(str::parse::<f64>).collect() {
            Ok(v) => v,
            Err(e) => return self.fail(format!("bad value: {e}")),
        };
        if values.len() != expected {
            return self.fail(format!("expected {expected} values, found {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return self.fail("non-finite parameter");
        }
        Ok(values)
    }

    fn matrix(&mut self, prefix: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let dims = self.header(prefix)?;
        if dims != [rows, cols] {
            return self.fail(format!("expected {rows}x{cols} matrix, header says {dims:?}"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.values(cols)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("sized above"))
    }

    fn vector(&mut self, prefix: &str, len: usize) -> Result<Array1<f64>> {
        let dims = self.header(prefix)?;
        if dims != [len] {
            return self.fail(format!("expected vector of {len}, header says {dims:?}"));
        }
        Ok(Array1::from(self.values(len)?))
    }
}

pub fn parse_checkpoint<R: BufRead>(reader: R, path: &Path) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
        path,
    };
    let magic = lines.next_line()?;
    if magic.trim_end() != CHECKPOINT_MAGIC {
        return lines.fail(format!("not a checkpoint (expected {CHECKPOINT_MAGIC:?})"));
    }
    let sizes = lines.header("embedder")?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return lines.fail(format!("invalid layer sizes {sizes:?}"));
    }
    let head_line = lines.next_line()?;
    let head_dims = match head_line.trim() {
        "head none" => None,
        other => {
            let dims: Vec<usize> = other
                .strip_prefix("head")
                .map(|r| r.split_whitespace().filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_default();
            if dims.len() != 2 {
                return lines.fail(format!("bad head line {other:?}"));
            }
            Some((dims[0], dims[1]))
        }
    };
    let mut layers = Vec::new();
    for (l, w) in sizes.windows(2).enumerate() {
        let weights = lines.matrix(&format!("layer {l} weights"), w[0], w[1])?;
        let bias = lines.vector(&format!("layer {l} bias"), w[1])?;
        layers.push(Dense { weights, bias });
    }
    let head = match head_dims {
        None => None,
        Some((d, c)) => Some(SoftmaxHead {
            weights: lines.matrix("head weights", d, c)?,
            bias: lines.vector("head bias", c)?,
        }),
    };
    Ok(Checkpoint {
        embedder: EmbedderParams::from_layers(layers)?,
        head,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    parse_checkpoint(std::io::BufReader::new(file), path)
}
