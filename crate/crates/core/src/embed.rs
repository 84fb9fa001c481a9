//! Monolingual word-embedding tables in the fastText text format.
//!
//! The first line of a file is `vocab_size dim`; each following line holds a
//! word and its `dim` coordinates separated by single spaces. Rows appear in
//! frequency order, which is also the vocabulary order kept here.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Default cap on the number of rows kept per language.
pub const DEFAULT_MAX_VOCAB: usize = 200_000;

/// A word together with its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVector {
    pub word: String,
    pub vector: Vec<f64>,
}

/// Vocabulary to `dim`-dimensional vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    normalized: bool,
}

/// Result of [`load_embeddings`]: the table and how many duplicate rows were dropped.
#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    pub duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from words and row-major vectors.
    ///
    /// Duplicate words and non-finite entries are rejected.
    pub fn new(dim: usize, vocab: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if data.len() != vocab.len() * dim {
            return Err(Error::config(format!(
                "expected {} values for {} words of dim {dim}, got {}",
                vocab.len() * dim,
                vocab.len(),
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, word) in vocab.iter().enumerate() {
            if word.is_empty() {
                return Err(Error::config(format!("empty word at row {i}")));
            }
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate word {word:?}")));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry for word {:?}",
                vocab[pos / dim]
            )));
        }
        Ok(Self {
            dim,
            vocab,
            index,
            data,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Row index (frequency rank) of `word`.
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.row(i))
    }

    /// Exact, case-sensitive lookup.
    pub fn lookup(&self, word: &str) -> Option<WordVector> {
        self.get(word).map(|v| WordVector {
            word: word.to_string(),
            vector: v.to_vec(),
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Divides every row by its Euclidean norm.
    pub fn normalize_rows(&self) -> Result<EmbeddingTable> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!(
                    "cannot normalize zero vector of word {:?}",
                    self.vocab[i]
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingTable {
            dim: self.dim,
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            data,
            normalized: true,
        })
    }

    /// Serializes in the same text format that [`load_embeddings`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.len(), self.dim);
        for (word, row) in self.vocab.iter().zip(self.rows()) {
            out.push_str(word);
            for v in row {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a fastText-style text embedding file.
///
/// At most `max_vocab` distinct words are kept, in file order. Repeated
/// words keep their first row and are counted in `duplicates`.
pub fn load_embeddings<R: BufRead>(reader: R, max_vocab: Option<usize>) -> Result<LoadedEmbeddings> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::parse(1, "missing header line")),
    };
    let mut fields = header.split_whitespace();
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(c), Some(d), None) => {
            let count: usize = c
                .parse()
                .map_err(|_| Error::parse(1, format!("invalid vocabulary size {c:?}")))?;
            let dim: usize = d
                .parse()
                .map_err(|_| Error::parse(1, format!("invalid dimension {d:?}")))?;
            (count, dim)
        }
        _ => return Err(Error::parse(1, "header must be \"vocab_size dim\"")),
    };
    if dim == 0 {
        return Err(Error::parse(1, "dimension must be positive"));
    }

    let limit = max_vocab.unwrap_or(usize::MAX);
    let mut vocab = Vec::with_capacity(count.min(limit));
    let mut index = HashMap::with_capacity(count.min(limit));
    let mut data = Vec::with_capacity(count.min(limit) * dim);
    let mut duplicates = 0;

    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        if vocab.len() >= limit {
            break;
        }
        let line = line?;
        let line = line.trim_end_matches(['\n', '\r', ' ']);
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        if word.is_empty() {
            return Err(Error::parse(line_no, "row starts with an empty word"));
        }
        let start = data.len();
        for part in parts {
            let value: f64 = part
                .parse()
                .map_err(|_| Error::parse(line_no, format!("non-numeric value {part:?}")))?;
            if !value.is_finite() {
                data.truncate(start);
                return Err(Error::parse(line_no, format!("non-finite value {part:?}")));
            }
            data.push(value);
        }
        let found = data.len() - start;
        if found != dim {
            return Err(Error::parse(
                line_no,
                format!("row for {word:?} has {found} values, header says {dim}"),
            ));
        }
        if index.contains_key(word) {
            duplicates += 1;
            data.truncate(start);
            continue;
        }
        index.insert(word.to_string(), vocab.len());
        vocab.push(word.to_string());
    }

    if duplicates > 0 {
        log::warn!("embedding file contained {duplicates} duplicate words; kept first occurrences");
    }

    Ok(LoadedEmbeddings {
        table: EmbeddingTable {
            dim,
            vocab,
            index,
            data,
            normalized: false,
        },
        duplicates,
    })
}

/// Cosine similarity. Returns `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(text: &str, max_vocab: Option<usize>) -> Result<LoadedEmbeddings> {
        load_embeddings(text.as_bytes(), max_vocab)
    }

    #[test]
    fn loads_small_table() {
        let loaded = load("2 3\na 1 0 0\nb 0 1 0\n", None).unwrap();
        assert_eq!(loaded.table.dim(), 3);
        assert_eq!(loaded.table.vocab(), ["a", "b"]);
        assert_eq!(loaded.table.get("b"), Some(&[0.0, 1.0, 0.0][..]));
        assert_eq!(loaded.duplicates, 0);
    }

    #[test]
    fn max_vocab_truncates_in_file_order() {
        let loaded = load("2 3\na 1 0 0\nb 0 1 0\n", Some(1)).unwrap();
        assert_eq!(loaded.table.vocab(), ["a"]);
        assert!(loaded.table.lookup("b").is_none());
    }

    #[test]
    fn trailing_space_is_accepted() {
        let loaded = load("1 2\nx 0.5 -0.25 \n", None).unwrap();
        assert_eq!(loaded.table.get("x"), Some(&[0.5, -0.25][..]));
    }

    #[test]
    fn row_length_mismatch_names_line() {
        let err = load("2 3\na 1 0 0\nb 0 1\n", None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_value_is_rejected() {
        let err = load("1 2\na 1 zz\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(load("3\n", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load("", None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicates_keep_first_and_are_counted() {
        let loaded = load("3 2\na 1 0\na 0 1\nb 1 1\n", None).unwrap();
        assert_eq!(loaded.duplicates, 1);
        assert_eq!(loaded.table.vocab(), ["a", "b"]);
        assert_eq!(loaded.table.get("a"), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn lookup_is_case_sensitive() {
        let loaded = load("1 2\nBerlin 1 0\n", None).unwrap();
        assert!(loaded.table.lookup("Berlin").is_some());
        assert!(loaded.table.lookup("berlin").is_none());
        let wv = loaded.table.lookup("Berlin").unwrap();
        assert_eq!(wv.vector, vec![1.0, 0.0]);
    }

    #[test]
    fn normalize_three_four_five() {
        let table = EmbeddingTable::new(2, vec!["w".into()], vec![3.0, 4.0]).unwrap();
        let n = table.normalize_rows().unwrap();
        assert!(n.is_normalized());
        assert!((n.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent() {
        let table = EmbeddingTable::new(2, vec!["w".into(), "v".into()], vec![3.0, 4.0, -1.0, 2.0]).unwrap();
        let once = table.normalize_rows().unwrap();
        let twice = once.normalize_rows().unwrap();
        for (a, b) in once.rows().flatten().zip(twice.rows().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_row_cannot_be_normalized() {
        let table = EmbeddingTable::new(2, vec!["a".into(), "zero".into()], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        match table.normalize_rows() {
            Err(Error::Numeric(msg)) => assert!(msg.contains("zero")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let table = EmbeddingTable::new(3, vec!["a".into(), "b".into()], vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0, 0.0, -1.0]).unwrap();
        let back = load(&table.to_text(), None).unwrap().table;
        assert_eq!(back, table);
    }

    proptest! {
        #[test]
        fn normalized_rows_have_unit_norm_and_keep_cosines(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 2..12)
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
            let vocab = (0..rows.len()).map(|i| format!("w{i}")).collect();
            let table = EmbeddingTable::new(5, vocab, rows.concat()).unwrap();
            let n = table.normalize_rows().unwrap();
            for row in n.rows() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    let before = cosine(table.row(i), table.row(j)).unwrap();
                    let after = cosine(n.row(i), n.row(j)).unwrap();
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }
    }
}
