//! Plain-text serialization of built-in problem instances.
//!
//! ```text
//! lazy-newton-instance 1
//! kind logsumexp
//! mu 0.05
//! delta 1.3e-5
//! seed 42
//! matrix A 3 2
//! 0.1 -0.5
//! ...
//! vector b 3
//! 0.25 0.75 -0.5
//! end
//! ```
//!
//! Numbers use Rust's shortest round-trip decimal form, so a written instance
//! reads back bit-identical regardless of locale.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracles::{
    LogSumExpProblem, Objective, QuadraticProblem, ScalarLoss, SeparableNorm, SeparableProblem,
};

const MAGIC: &str = "lazy-newton-instance 1";

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    LogSumExp(LogSumExpProblem),
    Separable(SeparableProblem),
    Quadratic(QuadraticProblem),
}

impl Instance {
    pub fn objective(&self) -> Arc<dyn Objective> {
        match self {
            Self::LogSumExp(p) => Arc::new(p.clone()),
            Self::Separable(p) => Arc::new(p.clone()),
            Self::Quadratic(p) => Arc::new(p.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.objective().dim()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        match self {
            Self::LogSumExp(p) => {
                out.push_str("kind logsumexp\n");
                let _ = writeln!(out, "mu {}", p.mu);
                let _ = writeln!(out, "delta {}", p.delta);
                let _ = writeln!(out, "seed {}", p.seed);
                write_matrix(&mut out, "A", &p.a);
                write_vector(&mut out, "b", &p.b);
            }
            Self::Separable(p) => {
                out.push_str("kind separable\n");
                let _ = writeln!(out, "loss {}", p.loss.name());
                match p.norm {
                    SeparableNorm::Identity => out.push_str("norm identity\n"),
                    SeparableNorm::Gram { delta } => {
                        let _ = writeln!(out, "norm gram {delta}");
                    }
                }
                let _ = writeln!(out, "seed {}", p.seed);
                write_matrix(&mut out, "A", &p.a);
            }
            Self::Quadratic(p) => {
                out.push_str("kind quadratic\n");
                let _ = writeln!(out, "seed {}", p.seed);
                write_matrix(&mut out, "Q", &p.q);
                write_vector(&mut out, "c", &p.c);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (line, first) = lines.next_line()?;
        if first != MAGIC {
            return Err(parse_err(line, format!("expected header `{MAGIC}`")));
        }
        let kind = lines.keyword("kind")?;
        let instance = match kind.as_str() {
            "logsumexp" => {
                let mu = lines.number("mu")?;
                let delta = lines.number("delta")?;
                let seed = lines.integer("seed")?;
                let a = lines.matrix("A")?;
                let b = lines.vector("b")?;
                if b.len() != a.nrows() {
                    return Err(parse_err(lines.line, "b length must equal rows of A"));
                }
                Self::LogSumExp(LogSumExpProblem {
                    a,
                    b,
                    mu,
                    delta,
                    seed,
                })
            }
            "separable" => {
                let loss_name = lines.keyword("loss")?;
                let loss = ScalarLoss::from_name(&loss_name)
                    .ok_or_else(|| parse_err(lines.line, format!("unknown loss `{loss_name}`")))?;
                let norm_spec = lines.keyword("norm")?;
                let mut parts = norm_spec.split_whitespace();
                let norm = match (parts.next(), parts.next()) {
                    (Some("identity"), None) => SeparableNorm::Identity,
                    (Some("gram"), Some(delta)) => SeparableNorm::Gram {
                        delta: parse_f64(lines.line, delta)?,
                    },
                    _ => return Err(parse_err(lines.line, "bad norm specification")),
                };
                let seed = lines.integer("seed")?;
                let a = lines.matrix("A")?;
                Self::Separable(SeparableProblem {
                    a,
                    loss,
                    norm,
                    seed,
                })
            }
            "quadratic" => {
                let seed = lines.integer("seed")?;
                let q = lines.matrix("Q")?;
                let c = lines.vector("c")?;
                if q.nrows() != q.ncols() || q.nrows() != c.len() {
                    return Err(parse_err(lines.line, "Q must be square and match c"));
                }
                Self::Quadratic(QuadraticProblem { q, c, seed })
            }
            other => return Err(parse_err(lines.line, format!("unknown kind `{other}`"))),
        };
        let (line, last) = lines.next_line()?;
        if last != "end" {
            return Err(parse_err(line, "expected `end`"));
        }
        Ok(instance)
    }
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "vector {name} {}", v.len());
    let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    out.push_str(&cells.join(" "));
    out.push('\n');
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, token: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid number `{token}`")))
}

fn parse_usize(line: usize, token: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("invalid integer `{token}`")))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            self.line = i + 1;
            let trimmed = raw.trim();
            if !trimmed.is_empty() {
                return Ok((self.line, trimmed));
            }
        }
        Err(parse_err(self.line + 1, "unexpected end of input"))
    }

    /// Returns the remainder of a `key value...` line.
    fn keyword(&mut self, key: &str) -> Result<String> {
        let (line, text) = self.next_line()?;
        match text.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok(rest.trim().to_string()),
            _ => Err(parse_err(line, format!("expected `{key}`"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<f64> {
        let v = self.keyword(key)?;
        parse_f64(self.line, &v)
    }

    fn integer(&mut self, key: &str) -> Result<u64> {
        let v = self.keyword(key)?;
        v.parse::<u64>()
            .map_err(|_| parse_err(self.line, format!("invalid integer `{v}`")))
    }

    fn row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (line, text) = self.next_line()?;
        let values = text
            .split_whitespace()
            .map(|t| parse_f64(line, t))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(parse_err(
                line,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        Ok(values)
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let header = self.keyword("matrix")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(parse_err(
                self.line,
                format!("expected `matrix {name} ROWS COLS`"),
            ));
        }
        let rows = parse_usize(self.line, parts[1])?;
        let cols = parse_usize(self.line, parts[2])?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn vector(&mut self, name: &str) -> Result<DVector<f64>> {
        let header = self.keyword("vector")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 2 || parts[0] != name {
            return Err(parse_err(
                self.line,
                format!("expected `vector {name} LEN`"),
            ));
        }
        let len = parse_usize(self.line, parts[1])?;
        Ok(DVector::from_vec(self.row(len)?))
    }
}
