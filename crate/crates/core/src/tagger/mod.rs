//! The base NER model: a frozen-embedding window encoder with one tanh
//! layer, followed by a linear softmax classifier.
//!
//! Source-language text is embedded through the aligned (mapped) source
//! table and target-language text through the target table, so one model
//! reads both languages in a shared space.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::OrthogonalMapping;
use crate::corpus::{LabelSet, LabeledSentence};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};

mod decode;
pub(crate) mod network;
mod serial;
mod train;

pub use decode::{argmax_labels, sequence_score, viterbi_decode, PROBABILITY_FLOOR};
pub use network::{ce_loss, ce_loss_and_gradient, HardNormalizer};
pub use train::{finetune, train, TrainConfig, TrainLog};
pub(crate) use train::fit;

/// Shape of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Context radius: tokens on each side of the current one.
    pub window: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            window: 1,
            hidden_dim: 64,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Frozen lookup from words to vectors. OOV words embed as zeros.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    table: EmbeddingTable,
}

impl EmbeddingSpace {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }

    /// Source-language space: every row passed through the mapping.
    pub fn mapped(table: &EmbeddingTable, mapping: &OrthogonalMapping) -> Result<Self> {
        Ok(Self::new(mapping.map_table(table)?))
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn embed(&self, tokens: &[String]) -> TokenMatrix {
        let dim = self.dim();
        let mut data = vec![0.0; tokens.len() * dim];
        for (row, tok) in data.chunks_exact_mut(dim).zip(tokens) {
            if let Some(v) = self.table.get(tok) {
                row.copy_from_slice(v);
            }
        }
        TokenMatrix {
            len: tokens.len(),
            dim,
            data,
        }
    }

    pub fn example(&self, sentence: &LabeledSentence) -> Example {
        Example {
            inputs: self.embed(&sentence.tokens),
            labels: sentence.labels.clone(),
        }
    }
}

/// Per-token embeddings of one sentence, `len × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::config("token matrix data is not a whole number of rows"));
        }
        Ok(Self {
            len: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Embedded tokens with gold class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: TokenMatrix,
    pub labels: Vec<usize>,
}

/// Per-token class distributions, `len × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRows {
    classes: usize,
    data: Vec<f64>,
}

impl ProbRows {
    /// Checks every row is a probability vector (entries ≥ 0, sum 1 ± 1e-6).
    pub fn new(classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || !data.len().is_multiple_of(classes) {
            return Err(Error::config("probability data is not a whole number of rows"));
        }
        for (i, row) in data.chunks_exact(classes).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::validation(0, i, "probability row has negative or non-finite entries"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::validation(0, i, format!("probability row sums to {sum}")));
            }
        }
        Ok(Self { classes, data })
    }

    pub(crate) fn from_raw(classes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % classes, 0);
        Self { classes, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Which parameter tensor a flat index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    EncoderWeight,
    EncoderBias,
    ClassifierWeight,
    ClassifierBias,
}

impl Tensor {
    pub const ALL: [Tensor; 4] = [
        Tensor::EncoderWeight,
        Tensor::EncoderBias,
        Tensor::ClassifierWeight,
        Tensor::ClassifierBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::EncoderWeight => "encoder.weight",
            Tensor::EncoderBias => "encoder.bias",
            Tensor::ClassifierWeight => "classifier.weight",
            Tensor::ClassifierBias => "classifier.bias",
        }
    }

    pub(crate) fn is_weight(self) -> bool {
        matches!(self, Tensor::EncoderWeight | Tensor::ClassifierWeight)
    }
}

/// Dimensions of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    /// `(2w + 1) · d`
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ParamShape {
    /// `(rows, cols)` of a tensor.
    pub fn dims(&self, t: Tensor) -> (usize, usize) {
        match t {
            Tensor::EncoderWeight => (self.hidden, self.input),
            Tensor::EncoderBias => (self.hidden, 1),
            Tensor::ClassifierWeight => (self.classes, self.hidden),
            Tensor::ClassifierBias => (self.classes, 1),
        }
    }

    pub fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let mut start = 0;
        for other in Tensor::ALL {
            let (r, c) = self.dims(other);
            if other == t {
                return start..start + r * c;
            }
            start += r * c;
        }
        unreachable!()
    }

    pub fn total(&self) -> usize {
        Tensor::ALL.iter().map(|&t| self.dims(t).0 * self.dims(t).1).sum()
    }
}

/// Encoder and classifier parameters plus the label inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    encoder: EncoderConfig,
    embedding_dim: usize,
    label_set: LabelSet,
    shape: ParamShape,
    params: Vec<f64>,
}

impl TaggerModel {
    /// Xavier-uniform weights and zero biases, drawn from `seed`.
    pub fn new(encoder: EncoderConfig, embedding_dim: usize, label_set: LabelSet, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(encoder, embedding_dim, label_set)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in [Tensor::EncoderWeight, Tensor::ClassifierWeight] {
            let (rows, cols) = model.shape.dims(t);
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for v in model.tensor_mut(t) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(encoder: EncoderConfig, embedding_dim: usize, label_set: LabelSet) -> Result<Self> {
        encoder.validate()?;
        if embedding_dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if label_set.is_empty() {
            return Err(Error::config("label set is empty"));
        }
        let shape = ParamShape {
            input: (2 * encoder.window + 1) * embedding_dim,
            hidden: encoder.hidden_dim,
            classes: label_set.len(),
        };
        Ok(Self {
            encoder,
            embedding_dim,
            label_set,
            params: vec![0.0; shape.total()],
            shape,
        })
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn shape(&self) -> ParamShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.params[self.shape.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let range = self.shape.range(t);
        &mut self.params[range]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// Whether `other` could be used in place of `self` (same dims and labels).
    pub fn compatible_with(&self, other: &TaggerModel) -> bool {
        self.shape == other.shape
            && self.embedding_dim == other.embedding_dim
            && self.encoder.window == other.encoder.window
            && self.label_set == other.label_set
    }

    pub(crate) fn check_inputs(&self, inputs: &TokenMatrix) -> Result<()> {
        if inputs.dim() != self.embedding_dim {
            return Err(Error::config(format!(
                "model expects embeddings of dimension {}, got {}",
                self.embedding_dim,
                inputs.dim()
            )));
        }
        Ok(())
    }

    /// Hidden features `h_i = tanh(A [e_{i−w}; …; e_{i+w}] + c)`, `len × H`.
    ///
    /// With an RNG, inverted dropout is applied to `h` (training mode).
    pub fn encode(&self, inputs: &TokenMatrix, dropout: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let fwd = network::forward(self, inputs, inputs.len(), dropout);
        Ok(fwd.dropped_hidden().to_vec())
    }

    /// `softmax(W h_i + b)` per token, inference mode.
    pub fn predict_proba(&self, inputs: &TokenMatrix) -> Result<ProbRows> {
        self.check_inputs(inputs)?;
        let fwd = network::forward(self, inputs, inputs.len(), None);
        if fwd.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(ProbRows::from_raw(self.shape.classes, fwd.probs))
    }

    /// Constrained Viterbi decoding of [`Self::predict_proba`].
    pub fn decode(&self, inputs: &TokenMatrix) -> Result<Vec<usize>> {
        viterbi_decode(&self.predict_proba(inputs)?, &self.label_set)
    }

    /// Versioned text serialization.
    pub fn to_text(&self) -> String {
        serial::to_text(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serial::from_text(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn identity_model(dim: usize) -> TaggerModel {
        let encoder = EncoderConfig {
            window: 0,
            hidden_dim: dim,
            dropout: 0.0,
        };
        let mut m = TaggerModel::zeros(encoder, dim, LabelSet::conll()).unwrap();
        let w = m.tensor_mut(Tensor::EncoderWeight);
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        m
    }

    fn space() -> EmbeddingSpace {
        let table = EmbeddingTable::new(2, vec!["a".into(), "b".into()], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        EmbeddingSpace::new(table)
    }

    #[test]
    fn identity_encoder_is_tanh_of_embedding() {
        let m = identity_model(2);
        let x = space().embed(&["a".into(), "b".into()]);
        let h = m.encode(&x, None).unwrap();
        let expected = [0.5f64.tanh(), (-1.0f64).tanh(), 2.0f64.tanh(), 0.25f64.tanh()];
        for (a, b) in h.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn oov_tokens_see_only_the_bias() {
        let mut m = TaggerModel::new(
            EncoderConfig {
                window: 1,
                hidden_dim: 3,
                dropout: 0.0,
            },
            2,
            LabelSet::conll(),
            1,
        )
        .unwrap();
        m.tensor_mut(Tensor::EncoderBias).copy_from_slice(&[0.3, -0.2, 1.1]);
        let x = space().embed(&["zz".into(), "qq".into(), "xx".into()]);
        let h = m.encode(&x, None).unwrap();
        for row in h.chunks_exact(3) {
            assert_eq!(row, [0.3f64.tanh(), (-0.2f64).tanh(), 1.1f64.tanh()]);
        }
    }

    #[test]
    fn dropout_is_seeded_and_unbiased() {
        let m = TaggerModel::new(
            EncoderConfig {
                window: 1,
                hidden_dim: 4,
                dropout: 0.1,
            },
            2,
            LabelSet::conll(),
            3,
        )
        .unwrap();
        let x = space().embed(&["a".into(), "b".into()]);
        let clean = m.encode(&x, None).unwrap();
        let once = m.encode(&x, Some(&mut ChaCha8Rng::seed_from_u64(5))).unwrap();
        let again = m.encode(&x, Some(&mut ChaCha8Rng::seed_from_u64(5))).unwrap();
        assert_eq!(once, again);
        assert_ne!(once, clean);
        let runs = 10_000;
        let mut mean = vec![0.0; clean.len()];
        for seed in 0..runs {
            let h = m.encode(&x, Some(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
            mean.iter_mut().zip(h).for_each(|(a, b)| *a += b / runs as f64);
        }
        for (m, c) in mean.iter().zip(&clean) {
            assert!((m - c).abs() <= 0.02 * c.abs().max(1e-3) + 1e-3, "{m} vs {c}");
        }
    }

    #[test]
    fn zero_classifier_gives_uniform_rows() {
        let m = TaggerModel::new(EncoderConfig::default(), 2, LabelSet::conll(), 0).unwrap();
        let mut z = m.clone();
        z.tensor_mut(Tensor::ClassifierWeight).fill(0.0);
        let p = z.predict_proba(&space().embed(&["a".into(), "b".into()])).unwrap();
        for row in p.rows() {
            for v in row {
                assert!((v - 1.0 / 9.0).abs() < 1e-15);
            }
        }
        z.tensor_mut(Tensor::ClassifierBias)[0] = 10.0;
        let p = z.predict_proba(&space().embed(&["a".into()])).unwrap();
        assert!(p.row(0)[0] > 0.999);
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let m = TaggerModel::new(EncoderConfig::default(), 3, LabelSet::conll(), 0).unwrap();
        let x = space().embed(&["a".into()]);
        assert!(matches!(m.predict_proba(&x), Err(Error::Config(_))));
    }

    #[test]
    fn prob_rows_validation() {
        assert!(ProbRows::new(2, vec![0.5, 0.5, 1.0, 0.0]).is_ok());
        assert!(ProbRows::new(2, vec![0.5, 0.6]).is_err());
        assert!(ProbRows::new(2, vec![1.5, -0.5]).is_err());
        assert!(ProbRows::new(2, vec![0.5]).is_err());
    }

    #[test]
    fn invalid_encoder_configs() {
        let bad = [
            EncoderConfig {
                hidden_dim: 0,
                ..EncoderConfig::default()
            },
            EncoderConfig {
                dropout: 1.0,
                ..EncoderConfig::default()
            },
        ];
        for enc in bad {
            assert!(TaggerModel::new(enc, 2, LabelSet::conll(), 0).is_err());
        }
    }
}
