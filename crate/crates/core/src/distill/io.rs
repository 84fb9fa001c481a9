//! File formats for distillation targets.
//!
//! Soft labels are a little-endian binary tensor file:
//!
//! ```text
//! b"UTSOFT" u16 version | u32 classes | u32 members | u64 sentences
//! per sentence: u64 tokens, then tokens × classes f64 values
//! ```
//!
//! Pseudo labels are CoNLL text (`token<TAB>label`, blank line between
//! sentences) preceded by a `# unitrans-pseudo 1` line; `_` marks tokens
//! without a label.

use std::fmt::Write as _;

use super::{PseudoHardLabels, SoftLabelSet};
use crate::corpus::{LabelSet, UnlabeledSentence};
use crate::error::{Error, Result};
use crate::tagger::ProbRows;

const SOFT_MAGIC: &[u8; 6] = b"UTSOFT";
const SOFT_VERSION: u16 = 1;
const PSEUDO_HEADER: &str = "# unitrans-pseudo 1";
pub(crate) const ABSENT: &str = "_";

pub(super) fn soft_to_bytes(soft: &SoftLabelSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SOFT_MAGIC);
    out.extend_from_slice(&SOFT_VERSION.to_le_bytes());
    out.extend_from_slice(&(soft.classes as u32).to_le_bytes());
    out.extend_from_slice(&(soft.members as u32).to_le_bytes());
    out.extend_from_slice(&(soft.rows.len() as u64).to_le_bytes());
    for rows in &soft.rows {
        out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
        for v in rows.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("soft-label file truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.array()?)).map_err(|_| Error::Format("count overflows".into()))
    }
}

pub(super) fn soft_from_bytes(bytes: &[u8]) -> Result<SoftLabelSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(SOFT_MAGIC.len()).ok() != Some(SOFT_MAGIC.as_slice()) {
        return Err(Error::Format("not a soft-label file".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != SOFT_VERSION {
        return Err(Error::Format(format!("soft-label version {version} is not supported")));
    }
    let classes = u32::from_le_bytes(r.array()?) as usize;
    let members = u32::from_le_bytes(r.array()?) as usize;
    let count = r.u64()?;
    if classes == 0 {
        return Err(Error::Format("soft-label file declares zero classes".into()));
    }
    let mut rows = Vec::new();
    for s in 0..count {
        let tokens = r.u64()?;
        let width = tokens
            .checked_mul(classes)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("row count overflows".into()))?;
        let data: Vec<f64> = r
            .take(width)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let sentence = ProbRows::new(classes, data).map_err(|e| match e {
            Error::Validation { position, message, .. } => Error::validation(s, position, message),
            other => other,
        })?;
        rows.push(sentence);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after soft labels".into()));
    }
    SoftLabelSet::new(classes, members, rows)
}

pub fn write_pseudo_labels(
    sentences: &[UnlabeledSentence],
    pseudo: &PseudoHardLabels,
    label_set: &LabelSet,
) -> Result<String> {
    if sentences.len() != pseudo.len() {
        return Err(Error::validation(
            sentences.len().min(pseudo.len()),
            0,
            "sentence and pseudo-label counts differ",
        ));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{PSEUDO_HEADER}");
    for (i, (s, labels)) in sentences.iter().zip(&pseudo.sentences).enumerate() {
        if s.tokens.len() != labels.len() {
            return Err(Error::validation(i, s.tokens.len().min(labels.len()), "token and label counts differ"));
        }
        for (token, label) in s.tokens.iter().zip(labels) {
            let name = match label {
                Some(c) if *c < label_set.len() => label_set.name(*c),
                Some(_) => return Err(Error::validation(i, 0, "class id out of range")),
                None => ABSENT,
            };
            let _ = writeln!(out, "{token}\t{name}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_pseudo_labels(text: &str, label_set: &LabelSet) -> Result<(Vec<UnlabeledSentence>, PseudoHardLabels)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, PSEUDO_HEADER)) => {}
        Some((_, h)) if h.starts_with("# unitrans-pseudo") => {
            return Err(Error::Format(format!("unsupported pseudo-label header {h:?}")))
        }
        _ => return Err(Error::Format("not a pseudo-label file".into())),
    }
    let mut sentences = Vec::new();
    let mut pseudo = PseudoHardLabels::default();
    let (mut tokens, mut labels) = (Vec::new(), Vec::new());
    for (no, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            if !tokens.is_empty() {
                sentences.push(UnlabeledSentence {
                    tokens: std::mem::take(&mut tokens),
                });
                pseudo.sentences.push(std::mem::take(&mut labels));
            }
            continue;
        }
        let (token, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(no + 1, "expected token<TAB>label"))?;
        let label = label.trim();
        let id = if label == ABSENT {
            None
        } else {
            Some(label_set.id(label).ok_or_else(|| Error::Label {
                line: no + 1,
                label: label.to_string(),
            })?)
        };
        tokens.push(token.to_string());
        labels.push(id);
    }
    if !tokens.is_empty() {
        sentences.push(UnlabeledSentence { tokens });
        pseudo.sentences.push(labels);
    }
    Ok((sentences, pseudo))
}
