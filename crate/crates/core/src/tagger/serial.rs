//! Text container for trained taggers.
//!
//! ```text
//! unitrans-tagger 1
//! labels LOC MISC ORG PER
//! embedding_dim 24
//! window 1
//! hidden_dim 64
//! dropout 0.1
//! tensor encoder.weight 64 72
//! <64 lines of 72 values>
//! ...
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so a save/load cycle is exact.

use std::fmt::Write as _;

use super::{EncoderConfig, TaggerModel, Tensor};
use crate::corpus::LabelSet;
use crate::error::{Error, Result};

const MAGIC: &str = "unitrans-tagger";
const VERSION: u32 = 1;

pub(super) fn to_text(model: &TaggerModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "labels {}", model.label_set.entity_types().join(" "));
    let _ = writeln!(out, "embedding_dim {}", model.embedding_dim);
    let _ = writeln!(out, "window {}", model.encoder.window);
    let _ = writeln!(out, "hidden_dim {}", model.encoder.hidden_dim);
    let _ = writeln!(out, "dropout {}", model.encoder.dropout);
    for t in Tensor::ALL {
        let (rows, cols) = model.shape.dims(t);
        let _ = writeln!(out, "tensor {} {rows} {cols}", t.name());
        for row in model.tensor(t).chunks_exact(cols) {
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(0, "unexpected end of model file"))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (no, line) = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((no, rest.trim())),
            None if line == key => Ok((no, "")),
            _ => Err(Error::parse(no, format!("expected field {key:?}"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (no, value) = self.field(key)?;
        value
            .parse()
            .map_err(|_| Error::parse(no, format!("invalid value for {key}: {value:?}")))
    }
}

pub(super) fn from_text(text: &str) -> Result<TaggerModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, header) = lines.next()?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(Error::Format(format!("{MAGIC} version {v} is not supported"))),
        _ => return Err(Error::Format("not a tagger model file".into())),
    }
    let (_, types) = lines.field("labels")?;
    let label_set = LabelSet::new(types.split_whitespace())?;
    let embedding_dim: usize = lines.number("embedding_dim")?;
    let window: usize = lines.number("window")?;
    let hidden_dim: usize = lines.number("hidden_dim")?;
    let dropout: f64 = lines.number("dropout")?;
    let encoder = EncoderConfig {
        window,
        hidden_dim,
        dropout,
    };
    let mut model = TaggerModel::zeros(encoder, embedding_dim, label_set)?;
    for t in Tensor::ALL {
        let (no, spec) = lines.field("tensor")?;
        let expected = model.shape.dims(t);
        let parts: Vec<&str> = spec.split_whitespace().collect();
        let dims = match parts.as_slice() {
            [name, r, c] if *name == t.name() => (r.parse::<usize>().ok(), c.parse::<usize>().ok()),
            _ => return Err(Error::parse(no, format!("expected tensor {}", t.name()))),
        };
        if dims != (Some(expected.0), Some(expected.1)) {
            return Err(Error::parse(
                no,
                format!("tensor {} must be {}x{}", t.name(), expected.0, expected.1),
            ));
        }
        let values = model.tensor_mut(t);
        for r in 0..expected.0 {
            let (no, line) = lines.next()?;
            let row = &mut values[r * expected.1..(r + 1) * expected.1];
            let mut count = 0;
            for (slot, v) in row.iter_mut().zip(line.split_whitespace()) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::parse(no, format!("non-numeric value {v:?}")))?;
                count += 1;
            }
            if count != expected.1 || line.split_whitespace().count() != expected.1 {
                return Err(Error::parse(no, format!("expected {} values", expected.1)));
            }
        }
    }
    if !model.is_finite() {
        return Err(Error::Numeric("model file contains non-finite parameters".into()));
    }
    Ok(model)
}
