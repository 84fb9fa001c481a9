//! Cross-lingual embedding alignment and word-to-word translation.
//!
//! A seed dictionary of identically spelled words supervises an orthogonal
//! map `P` (closed form from the SVD of `T Sᵀ`). Source words are then
//! translated to the target word with the highest CSLS score, and labeled
//! source sentences are translated token by token with their labels copied.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::corpus::LabeledSentence;
use crate::embed::{cosine, dot, EmbeddingTable};
use crate::error::{Error, Result};

const MAPPING_MAGIC: &str = "unitrans-mapping";
const MAPPING_VERSION: u32 = 1;

/// Neighbourhood size for the CSLS penalties.
pub const DEFAULT_K: usize = 10;

const SVD_EPS: f64 = 1e-14;
const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SeedDictionary {
    pairs: Vec<(String, String)>,
}

impl SeedDictionary {
    /// Keeps the first occurrence of each `(source, target)` pair.
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut seen = HashSet::new();
        let pairs = pairs
            .into_iter()
            .filter(|p| seen.insert(p.clone()))
            .collect();
        Self { pairs }
    }

    /// Parses `source\ttarget` lines.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(t), None) if !s.is_empty() && !t.is_empty() => {
                    pairs.push((s.to_string(), t.to_string()))
                }
                _ => return Err(Error::parse(i + 1, "expected \"source\\ttarget\"")),
            }
        }
        Ok(Self::new(pairs))
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedOptions {
    pub max_pairs: Option<usize>,
    /// Skip strings made only of digits and punctuation.
    pub skip_non_alphabetic: bool,
}

/// Identically spelled words of both vocabularies, in source frequency
/// order, truncated to `options.max_pairs`.
pub fn identical_pairs(src: &EmbeddingTable, tgt: &EmbeddingTable, options: &SeedOptions) -> Vec<(String, String)> {
    let limit = options.max_pairs.unwrap_or(usize::MAX);
    src.vocab()
        .iter()
        .filter(|w| tgt.index_of(w).is_some())
        .filter(|w| !options.skip_non_alphabetic || w.chars().any(char::is_alphabetic))
        .take(limit)
        .map(|w| (w.clone(), w.clone()))
        .collect()
}

/// [`identical_pairs`] as a dictionary; fewer than two pairs cannot
/// support an alignment.
pub fn build_seed_dictionary(src: &EmbeddingTable, tgt: &EmbeddingTable, options: &SeedOptions) -> Result<SeedDictionary> {
    let pairs = identical_pairs(src, tgt, options);
    if pairs.len() < 2 {
        return Err(Error::Infeasible(format!(
            "found {} identical strings between the vocabularies, need at least 2",
            pairs.len()
        )));
    }
    if pairs.len() < src.dim() {
        log::warn!(
            "seed dictionary has {} pairs for dimension {}; the mapping is underdetermined",
            pairs.len(),
            src.dim()
        );
    }
    Ok(SeedDictionary { pairs })
}

/// An orthogonal `d × d` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMapping {
    dim: usize,
    matrix: Vec<f64>,
    /// `‖P S − T‖_F` on the dictionary it was solved from.
    pub residual: f64,
}

impl OrthogonalMapping {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            dim,
            matrix,
            residual: 0.0,
        }
    }

    /// Wraps a row-major matrix. Orthogonality is checked to 1e-6.
    pub fn from_matrix(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 || matrix.len() != dim * dim {
            return Err(Error::config(format!("expected a {dim}x{dim} matrix")));
        }
        let mapping = Self {
            dim,
            matrix,
            residual: f64::NAN,
        };
        let defect = mapping.orthogonality_defect();
        if defect.is_nan() || defect >= 1e-6 {
            return Err(Error::Numeric(format!("matrix is not orthogonal (defect {defect:e})")));
        }
        Ok(mapping)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.chunks_exact(self.dim).map(|row| dot(row, v)).collect()
    }

    /// Maps every row of `table`, keeping vocabulary and order.
    pub fn map_table(&self, table: &EmbeddingTable) -> Result<EmbeddingTable> {
        if table.dim() != self.dim {
            return Err(Error::config(format!(
                "mapping has dimension {}, table has {}",
                self.dim,
                table.dim()
            )));
        }
        let data: Vec<f64> = table.rows().flat_map(|r| self.apply(r)).collect();
        let mapped = EmbeddingTable::new(self.dim, table.vocab().to_vec(), data)?;
        if table.is_normalized() {
            // Orthogonal maps preserve norms; renormalizing only removes rounding.
            mapped.normalize_rows()
        } else {
            Ok(mapped)
        }
    }

    /// `‖PᵀP − I‖_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim;
        let mut sum = 0.0;
        for i in 0..d {
            for j in 0..d {
                let v: f64 = (0..d).map(|k| self.matrix[k * d + i] * self.matrix[k * d + j]).sum();
                let e = v - if i == j { 1.0 } else { 0.0 };
                sum += e * e;
            }
        }
        sum.sqrt()
    }

    pub fn determinant(&self) -> f64 {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix).determinant()
    }

    /// Format tag line, a line holding `d`, then `d` rows of `d`
    /// space-separated decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAPPING_MAGIC} {MAPPING_VERSION}\n{}\n", self.dim);
        for row in self.matrix.chunks_exact(self.dim) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next().and_then(|(_, l)| l.split_once(' ')) {
            Some((MAPPING_MAGIC, v)) if v.trim() == MAPPING_VERSION.to_string() => {}
            Some((MAPPING_MAGIC, v)) => return Err(Error::Format(format!("unsupported mapping version {}", v.trim()))),
            _ => return Err(Error::Format(format!("missing `{MAPPING_MAGIC}` header"))),
        }
        let (n, header) = lines.next().ok_or_else(|| Error::parse(2, "missing dimension line"))?;
        let dim: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::parse(n + 1, format!("invalid dimension {header:?}")))?;
        let mut matrix = Vec::with_capacity(dim * dim);
        let mut rows = 0;
        for (i, line) in lines {
            let before = matrix.len();
            for v in line.split_whitespace() {
                matrix.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(i + 1, format!("non-numeric value {v:?}")))?,
                );
            }
            if matrix.len() - before != dim {
                return Err(Error::parse(i + 1, format!("expected {dim} values")));
            }
            rows += 1;
        }
        if rows != dim {
            return Err(Error::parse(rows + 3, format!("expected {dim} rows, found {rows}")));
        }
        Self::from_matrix(dim, matrix)
    }
}

/// `‖P S − T‖_F` for paired columns `S[i]`, `T[i]`.
pub fn procrustes_objective(matrix: &[f64], dim: usize, source: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (s, t) in source.iter().zip(target) {
        for (row, ti) in matrix.chunks_exact(dim).zip(t) {
            let e = dot(row, s) - ti;
            sum += e * e;
        }
    }
    sum.sqrt()
}

/// Solves `min ‖P S − T‖_F` subject to `PᵀP = I` for paired vectors.
///
/// With `U Σ Vᵀ = SVD(T Sᵀ)` the minimizer is `P = U Vᵀ`.
pub fn procrustes(source: &[Vec<f64>], target: &[Vec<f64>]) -> Result<OrthogonalMapping> {
    let dim = source.first().map(Vec::len).unwrap_or(0);
    if dim == 0 || source.len() != target.len() {
        return Err(Error::config("procrustes needs equally many non-empty source and target vectors"));
    }
    if source.iter().chain(target).any(|v| v.len() != dim) {
        return Err(Error::config("all vectors must share one dimension"));
    }
    let mut cross = DMatrix::<f64>::zeros(dim, dim);
    for (s, t) in source.iter().zip(target) {
        for i in 0..dim {
            for j in 0..dim {
                cross[(i, j)] += t[i] * s[j];
            }
        }
    }
    let svd = cross
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numeric("SVD returned no singular vectors".into())),
    };
    let p = u * v_t;
    let matrix: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|ij| p[ij]).collect();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite mapping".into()));
    }
    let residual = procrustes_objective(&matrix, dim, source, target);
    Ok(OrthogonalMapping {
        dim,
        matrix,
        residual,
    })
}

/// Learns the mapping from the dictionary pairs of two embedding tables.
pub fn solve_procrustes(dict: &SeedDictionary, src: &EmbeddingTable, tgt: &EmbeddingTable) -> Result<OrthogonalMapping> {
    if src.dim() != tgt.dim() {
        return Err(Error::config(format!(
            "source dimension {} differs from target dimension {}",
            src.dim(),
            tgt.dim()
        )));
    }
    if !(src.is_normalized() && tgt.is_normalized()) {
        log::debug!("solving Procrustes on unnormalized embeddings");
    }
    let mut s = Vec::with_capacity(dict.len());
    let mut t = Vec::with_capacity(dict.len());
    for (sw, tw) in dict.pairs() {
        let sv = src
            .get(sw)
            .ok_or_else(|| Error::Lookup(format!("source word {sw:?} not in embeddings")))?;
        let tv = tgt
            .get(tw)
            .ok_or_else(|| Error::Lookup(format!("target word {tw:?} not in embeddings")))?;
        s.push(sv.to_vec());
        t.push(tv.to_vec());
    }
    procrustes(&s, &t)
}

/// Unit-normalized rows, so that cosine similarity is a dot product.
#[derive(Debug, Clone)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f64>,
}

impl VectorSet {
    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut data = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::config(format!("row {i} has dimension {}", row.len())));
            }
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!("row {i} has zero norm")));
            }
            data.extend(row.iter().map(|v| v / norm));
        }
        Ok(Self { dim, data })
    }

    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        Self::from_rows(table.dim(), table.rows())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn similarities(&self, query: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.data.chunks_exact(self.dim).map(|r| dot(r, query)));
    }
}

/// Mean of the `k` largest values. Reorders `values`.
fn top_k_mean(values: &mut [f64], k: usize) -> f64 {
    let desc = |a: &f64, b: &f64| b.total_cmp(a);
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, desc);
    }
    let top = &mut values[..k];
    top.sort_unstable_by(desc);
    top.iter().sum::<f64>() / k as f64
}

/// Hubness penalties of CSLS.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalties {
    /// `r_T(P s_i)`: mean cosine of each mapped source vector to its `K`
    /// nearest target vectors.
    pub source: Vec<f64>,
    /// `r_S(t_j)`: mean cosine of each target vector to its `K` nearest
    /// mapped source vectors.
    pub target: Vec<f64>,
}

/// Exact penalties, `O(V_s · V_t · d)`, parallel over words.
pub fn compute_penalties(mapped_src: &VectorSet, tgt: &VectorSet, k: usize) -> Result<Penalties> {
    if mapped_src.dim != tgt.dim {
        return Err(Error::config("source and target dimensions differ"));
    }
    if k == 0 || k > tgt.len() || k > mapped_src.len() {
        return Err(Error::config(format!(
            "K = {k} must lie in 1..={} (vocabulary sizes {} and {})",
            tgt.len().min(mapped_src.len()),
            mapped_src.len(),
            tgt.len()
        )));
    }
    let penalties = |queries: &VectorSet, keys: &VectorSet| -> Vec<f64> {
        (0..queries.len())
            .into_par_iter()
            .map_init(Vec::new, |sims, i| {
                keys.similarities(queries.row(i), sims);
                top_k_mean(sims, k)
            })
            .collect()
    };
    Ok(Penalties {
        source: penalties(mapped_src, tgt),
        target: penalties(tgt, mapped_src),
    })
}

#[inline]
fn csls(cos: f64, r_t: f64, r_s: f64) -> f64 {
    2.0 * cos - r_t - r_s
}

/// `2 cos(P s, t) − r_T(P s) − r_S(t)`.
pub fn csls_score(mapped_src: &[f64], tgt_vec: &[f64], r_t: f64, r_s: f64) -> Result<f64> {
    let cos = cosine(mapped_src, tgt_vec).ok_or_else(|| Error::Numeric("zero-norm vector in CSLS".into()))?;
    Ok(csls(cos, r_t, r_s))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Translation {
    Translated { target: String, score: f64 },
    /// The word is not in the source vocabulary and is copied unchanged.
    Passthrough(String),
}

impl Translation {
    pub fn word(&self) -> &str {
        match self {
            Translation::Translated { target, .. } => target,
            Translation::Passthrough(w) => w,
        }
    }
}

/// Precomputed CSLS retrieval from a source table into a target table.
pub struct Translator<'a> {
    src: &'a EmbeddingTable,
    tgt: &'a EmbeddingTable,
    mapped: VectorSet,
    targets: VectorSet,
    penalties: Penalties,
    k: usize,
}

impl<'a> Translator<'a> {
    pub fn new(mapping: &OrthogonalMapping, src: &'a EmbeddingTable, tgt: &'a EmbeddingTable, k: usize) -> Result<Self> {
        let mapped_rows: Vec<Vec<f64>> = src.rows().map(|r| mapping.apply(r)).collect();
        let mapped = VectorSet::from_rows(mapping.dim(), mapped_rows.iter().map(Vec::as_slice))?;
        let targets = VectorSet::from_table(tgt)?;
        let penalties = compute_penalties(&mapped, &targets, k)?;
        Ok(Self {
            src,
            tgt,
            mapped,
            targets,
            penalties,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn penalties(&self) -> &Penalties {
        &self.penalties
    }

    /// Index and score of the CSLS-best target for source row `i`. Ties go
    /// to the lower target index.
    fn best_target(&self, i: usize, sims: &mut Vec<f64>) -> (usize, f64) {
        self.targets.similarities(self.mapped.row(i), sims);
        let r_t = self.penalties.source[i];
        let mut best = (0, f64::NEG_INFINITY);
        for (j, (&cos, &r_s)) in sims.iter().zip(&self.penalties.target).enumerate() {
            let score = csls(cos, r_t, r_s);
            if score > best.1 {
                best = (j, score);
            }
        }
        best
    }

    pub fn translate_word(&self, word: &str) -> Translation {
        match self.src.index_of(word) {
            Some(i) => {
                let (j, score) = self.best_target(i, &mut Vec::new());
                Translation::Translated {
                    target: self.tgt.vocab()[j].clone(),
                    score,
                }
            }
            None => Translation::Passthrough(word.to_string()),
        }
    }

    /// Translations of every source word, in source vocabulary order.
    pub fn translation_table(&self) -> TranslationTable {
        let entries = (0..self.src.len())
            .into_par_iter()
            .map_init(Vec::new, |sims, i| {
                let (j, score) = self.best_target(i, sims);
                (self.src.vocab()[i].clone(), self.tgt.vocab()[j].clone(), score)
            })
            .collect();
        TranslationTable { entries, k: self.k }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationTable {
    pub entries: Vec<(String, String, f64)>,
    pub k: usize,
}

impl TranslationTable {
    /// `src\ttgt\tscore` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, t, score) in &self.entries {
            let _ = writeln!(out, "{s}\t{t}\t{score}");
        }
        out
    }
}

/// Counts from [`transfer_corpus`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferStats {
    pub tokens: usize,
    pub passthrough: usize,
}

/// Translates every token and copies the labels unchanged.
pub fn transfer_corpus(corpus: &[LabeledSentence], translator: &Translator<'_>) -> (Vec<LabeledSentence>, TransferStats) {
    let mut cache: HashMap<&str, Translation> = HashMap::new();
    let mut stats = TransferStats::default();
    let out = corpus
        .iter()
        .map(|sentence| {
            let tokens = sentence
                .tokens
                .iter()
                .map(|tok| {
                    let t = cache
                        .entry(tok.as_str())
                        .or_insert_with(|| translator.translate_word(tok));
                    stats.tokens += 1;
                    if matches!(t, Translation::Passthrough(_)) {
                        stats.passthrough += 1;
                    }
                    t.word().to_string()
                })
                .collect();
            LabeledSentence {
                tokens,
                labels: sentence.labels.clone(),
            }
        })
        .collect();
    (out, stats)
}
