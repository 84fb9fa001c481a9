//! Token corpora in CoNLL column format with BIO entity labels.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub mod synth;

pub use synth::{generate_synthetic_bilingual, SynthConfig, SyntheticBenchmark};

/// Entity types used by the CoNLL-2002/2003 shared tasks.
pub const CONLL_ENTITY_TYPES: [&str; 4] = ["LOC", "MISC", "ORG", "PER"];

/// The decoded meaning of a class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// Ordered BIO label inventory: `O, B-T1, I-T1, B-T2, I-T2, ...`.
///
/// The position of a label in this list is its class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    entity_types: Vec<String>,
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(entity_types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        for (i, name) in entity_types.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid entity type name {name:?}")));
            }
            if entity_types[..i].contains(name) {
                return Err(Error::config(format!("duplicate entity type {name:?}")));
            }
        }
        let mut labels = Vec::with_capacity(1 + 2 * entity_types.len());
        labels.push("O".to_string());
        for name in &entity_types {
            labels.push(format!("B-{name}"));
            labels.push(format!("I-{name}"));
        }
        Ok(Self {
            entity_types,
            labels,
        })
    }

    /// `LOC, MISC, ORG, PER`: nine classes.
    pub fn conll() -> Self {
        Self::new(CONLL_ENTITY_TYPES).expect("static entity types are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn begin(&self, entity_type: usize) -> usize {
        1 + 2 * entity_type
    }

    pub fn inside(&self, entity_type: usize) -> usize {
        2 + 2 * entity_type
    }

    pub fn tag(&self, id: usize) -> Tag {
        match id {
            0 => Tag::Outside,
            n if n % 2 == 1 => Tag::Begin((n - 1) / 2),
            n => Tag::Inside((n - 2) / 2),
        }
    }

    /// Whether label `cur` may follow `prev` (`None` = sentence start).
    pub fn allows(&self, prev: Option<usize>, cur: usize) -> bool {
        match self.tag(cur) {
            Tag::Outside | Tag::Begin(_) => true,
            Tag::Inside(t) => match prev.map(|p| self.tag(p)) {
                Some(Tag::Begin(u)) | Some(Tag::Inside(u)) => u == t,
                _ => false,
            },
        }
    }

    /// Returns the first position that breaks the BIO scheme, if any.
    pub fn first_violation(&self, labels: &[usize]) -> Option<(usize, String)> {
        let mut prev = None;
        for (pos, &label) in labels.iter().enumerate() {
            if label >= self.len() {
                return Some((pos, format!("class id {label} out of range")));
            }
            if !self.allows(prev, label) {
                let message = match prev {
                    None => format!("{} at sentence start", self.name(label)),
                    Some(p) => format!("{} after {}", self.name(label), self.name(p)),
                };
                return Some((pos, message));
            }
            prev = Some(label);
        }
        None
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::conll()
    }
}

/// A labeled sentence: tokens and BIO class ids of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
}

impl LabeledSentence {
    /// Validates lengths, tokens and BIO structure.
    pub fn new(tokens: Vec<String>, labels: Vec<usize>, label_set: &LabelSet) -> Result<Self> {
        check_tokens(0, &tokens)?;
        if tokens.len() != labels.len() {
            return Err(Error::validation(
                0,
                tokens.len().min(labels.len()),
                format!("{} tokens but {} labels", tokens.len(), labels.len()),
            ));
        }
        if let Some((pos, msg)) = label_set.first_violation(&labels) {
            return Err(Error::validation(0, pos, msg));
        }
        Ok(Self { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledSentence {
        UnlabeledSentence {
            tokens: self.tokens.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledSentence {
    pub tokens: Vec<String>,
}

impl UnlabeledSentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        check_tokens(0, &tokens)?;
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn check_tokens(sentence: usize, tokens: &[String]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::validation(sentence, 0, "empty sentence"));
    }
    if let Some(pos) = tokens.iter().position(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
        return Err(Error::validation(sentence, pos, "empty or whitespace-bearing token"));
    }
    Ok(())
}

/// A half-open token range `[start, end)` carrying one entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        Self {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }
}

/// Spans of a sentence; see [`spans_from_labels`].
pub fn extract_spans(sentence: &LabeledSentence, label_set: &LabelSet) -> Result<Vec<EntitySpan>> {
    spans_from_labels(&sentence.labels, label_set)
}

/// Each maximal `B-X (I-X)*` run becomes one span, in order of start.
pub fn spans_from_labels(labels: &[usize], label_set: &LabelSet) -> Result<Vec<EntitySpan>> {
    if let Some((pos, msg)) = label_set.first_violation(labels) {
        return Err(Error::validation(0, pos, msg));
    }
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (pos, &label) in labels.iter().enumerate() {
        match label_set.tag(label) {
            Tag::Inside(_) => {}
            tag => {
                if let Some((start, t)) = open.take() {
                    spans.push(EntitySpan::new(start, pos, &label_set.entity_types[t]));
                }
                if let Tag::Begin(t) = tag {
                    open = Some((pos, t));
                }
            }
        }
    }
    if let Some((start, t)) = open {
        spans.push(EntitySpan::new(start, labels.len(), &label_set.entity_types[t]));
    }
    Ok(spans)
}

fn is_docstart(line: &str) -> bool {
    line.starts_with("-DOCSTART-")
}

/// Splits column text into sentences of `(line number, columns)` rows.
fn split_blocks(text: &str) -> Vec<Vec<(usize, Vec<&str>)>> {
    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim_start().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        if is_docstart(line) {
            continue;
        }
        current.push((i + 1, line.split_whitespace().collect()));
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

/// Parses labeled CoNLL text: one token per line, the token in the first
/// column and the BIO label in the last, sentences separated by blank lines.
///
/// Lines starting with `-DOCSTART-` are skipped. Every line must carry the
/// same number of columns (at least two).
pub fn read_conll(text: &str, label_set: &LabelSet) -> Result<Vec<LabeledSentence>> {
    let mut columns = None;
    let mut sentences = Vec::new();
    for block in split_blocks(text) {
        let index = sentences.len();
        let mut tokens = Vec::with_capacity(block.len());
        let mut labels = Vec::with_capacity(block.len());
        for (line_no, cols) in &block {
            if cols.len() < 2 {
                return Err(Error::parse(*line_no, "expected at least 2 columns"));
            }
            match columns {
                None => columns = Some(cols.len()),
                Some(n) if n != cols.len() => {
                    return Err(Error::parse(
                        *line_no,
                        format!("expected {n} columns, found {}", cols.len()),
                    ))
                }
                _ => {}
            }
            let label = cols[cols.len() - 1];
            let id = label_set.id(label).ok_or_else(|| Error::Label {
                line: *line_no,
                label: label.to_string(),
            })?;
            tokens.push(cols[0].to_string());
            labels.push(id);
        }
        if let Some((pos, msg)) = label_set.first_violation(&labels) {
            return Err(Error::validation(
                index,
                pos,
                format!("{msg} (line {})", block[pos].0),
            ));
        }
        sentences.push(LabeledSentence { tokens, labels });
    }
    Ok(sentences)
}

/// Parses unlabeled token-per-line text. Only the first column is read, so
/// labeled CoNLL files are accepted too.
pub fn read_unlabeled(text: &str) -> Result<Vec<UnlabeledSentence>> {
    Ok(split_blocks(text)
        .into_iter()
        .map(|block| UnlabeledSentence {
            tokens: block.into_iter().map(|(_, cols)| cols[0].to_string()).collect(),
        })
        .collect())
}

/// Writes `token\tlabel` lines with a blank line after every sentence.
pub fn write_conll(sentences: &[LabeledSentence], label_set: &LabelSet) -> String {
    let mut out = String::new();
    for sentence in sentences {
        for (token, &label) in sentence.tokens.iter().zip(&sentence.labels) {
            let _ = writeln!(out, "{token}\t{}", label_set.name(label));
        }
        out.push('\n');
    }
    out
}

pub fn write_unlabeled(sentences: &[UnlabeledSentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        for token in &sentence.tokens {
            out.push_str(token);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
