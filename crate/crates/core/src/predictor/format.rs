//! Plain-text model files.
//!
//! ```text
//! lstmhra-predictor 1
//! window 5
//! hidden1 32
//! hidden2 32
//! attention_dim 32      (0 for the ablated network)
//! scale 19
//! tensor layer1.w_f 32 33
//! <one row of space-separated values per line>
//! ...
//! end
//! ```

use std::fmt::Write as _;

use super::{NetworkShape, PredictorNetwork};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "lstmhra-predictor";

/// `(rows, cols)` for every tensor, in [`PredictorNetwork::tensors`] order.
fn layout(net: &PredictorNetwork) -> Vec<(String, usize, usize)> {
    let h1 = net.layer1.hidden_size();
    let h2 = net.layer2.hidden_size();
    net.tensors()
        .into_iter()
        .map(|(name, t)| {
            let cols = if name.starts_with("layer1.w_") {
                h1 + net.layer1.input_width()
            } else if name.starts_with("layer2.w_") {
                h2 + net.layer2.input_width()
            } else if name == "attention.context" {
                h1
            } else if name == "attention.query" {
                h2
            } else {
                t.len()
            };
            (name, t.len() / cols, cols)
        })
        .collect()
}

/// Serializes every weight with round-trip-exact decimal formatting.
pub fn write_network(net: &PredictorNetwork) -> String {
    let shape = net.shape();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "window {}", shape.window);
    let _ = writeln!(out, "hidden1 {}", shape.hidden1);
    let _ = writeln!(out, "hidden2 {}", shape.hidden2);
    let _ = writeln!(out, "attention_dim {}", shape.attention_dim);
    let _ = writeln!(out, "scale {}", net.scale());
    for ((name, rows, cols), (_, values)) in layout(net).into_iter().zip(net.tensors()) {
        let _ = writeln!(out, "tensor {name} {rows} {cols}");
        for row in values.chunks(cols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let line = line.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Ok(line);
            }
        }
        Err(self.error("unexpected end of file"))
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            line: self.last,
            message: message.into(),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let line = self.next()?;
        let value = line
            .strip_prefix(key)
            .filter(|r| r.starts_with(' '))
            .ok_or_else(|| self.error(format!("expected `{key} <value>`, found {line:?}")))?;
        value
            .trim()
            .parse()
            .map_err(|e| self.error(format!("bad {key}: {e}")))
    }
}

/// Parses [`write_network`] output. Errors carry the 1-based line number.
pub fn read_network(text: &str) -> Result<PredictorNetwork> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let header = lines.next()?;
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| lines.error(format!("not a predictor file: {header:?}")))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(lines.error(format!("unsupported format version {version:?}")));
    }
    let window: usize = lines.keyed("window")?;
    let hidden1: usize = lines.keyed("hidden1")?;
    let hidden2: usize = lines.keyed("hidden2")?;
    let attention_dim: usize = lines.keyed("attention_dim")?;
    let scale: f64 = lines.keyed("scale")?;
    let shape = NetworkShape {
        window,
        hidden1,
        hidden2,
        attention_dim,
        attention: attention_dim > 0,
    };
    let mut net = PredictorNetwork::zeros(shape).map_err(|e| lines.error(e.to_string()))?;
    net.set_scale(scale)
        .map_err(|e| lines.error(e.to_string()))?;

    let expected = layout(&net);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    for (name, rows, cols) in &expected {
        let line = lines.next()?;
        let want = format!("tensor {name} {rows} {cols}");
        if line.split_whitespace().ne(want.split_whitespace()) {
            return Err(lines.error(format!("expected `{want}`, found {line:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..*rows {
            let row = lines.next()?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| lines.error(format!("bad value {tok:?} in {name}: {e}")))?;
                if !v.is_finite() {
                    return Err(lines.error(format!("non-finite value in {name}")));
                }
                data.push(v);
            }
            if data.len() - before != *cols {
                return Err(lines.error(format!(
                    "{name} row has {} values, expected {cols}",
                    data.len() - before
                )));
            }
        }
        values.push(data);
    }
    let tail = lines.next()?;
    if tail != "end" {
        return Err(lines.error(format!("expected `end`, found {tail:?}")));
    }
    for ((_, dst), src) in net.tensors_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    Ok(net)
}
