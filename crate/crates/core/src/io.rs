//! Plain-text number formats shared by the file writers.
//!
//! Matrices are written as a line holding `N` followed by `N` rows of `N`
//! space-separated floats. Floats use Rust's shortest round-trip formatting,
//! so reading a file back yields bit-identical values.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl FormatError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse { line, message: message.into() }
    }
}

pub fn write_row<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    w.write_all(b"\n")
}

pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        write_row(w, m.row(r).iter().copied())?;
    }
    Ok(())
}

/// Line-oriented reader that tracks line numbers and skips blank lines.
pub struct LineReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R) -> Self {
        LineReader { inner, line: 0, buf: String::new() }
    }

    pub fn line_number(&self) -> usize {
        self.line
    }

    /// Next non-empty line, or `None` at end of input.
    pub fn next_line(&mut self) -> Result<Option<&str>, FormatError> {
        loop {
            self.buf.clear();
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            if !self.buf.trim().is_empty() {
                return Ok(Some(self.buf.trim()));
            }
        }
    }

    pub fn expect_line(&mut self) -> Result<&str, FormatError> {
        let line = self.line;
        match self.next_line()? {
            Some(l) => Ok(l),
            None => Err(FormatError::parse(line + 1, "unexpected end of input")),
        }
    }

    pub fn floats(&mut self, expected: usize) -> Result<Vec<f64>, FormatError> {
        let text = self.expect_line()?.to_owned();
        let line = self.line;
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| FormatError::parse(line, format!("`{t}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != expected {
            return Err(FormatError::parse(line, format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    pub fn matrix(&mut self, n: usize) -> Result<DMatrix<f64>, FormatError> {
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            let row = self.floats(n)?;
            for (c, v) in row.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }
}

pub fn parse_dimension(text: &str, line: usize) -> Result<usize, FormatError> {
    text.trim().parse::<usize>().map_err(|e| FormatError::parse(line, format!("bad dimension `{text}`: {e}")))
}

/// Reads a whitespace-separated vector of floats (any line layout).
pub fn read_vector<R: BufRead>(mut r: R) -> Result<Vec<f64>, FormatError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| FormatError::parse(0, format!("`{t}`: {e}"))))
        .collect()
}
