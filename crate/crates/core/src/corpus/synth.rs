//! Synthetic bilingual NER benchmark.
//!
//! Every word is the surface form of a latent concept with a unit vector
//! `z`. Source embeddings are `z` itself; target embeddings are `R z` plus
//! Gaussian noise, where `R` is a random orthogonal matrix. A configurable
//! share of concepts is spelled identically in both languages, which seeds
//! the alignment. The two languages also differ in word order: a target
//! sentence may place an entity's trigger word after the mention instead of
//! before it, and some entity names only exist in the target language.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{write_conll, write_unlabeled, LabelSet, LabeledSentence, UnlabeledSentence};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub entity_types: Vec<String>,
    pub context_words: usize,
    pub triggers_per_type: usize,
    pub names_per_type: usize,
    /// Names shared by two neighbouring entity types; context decides.
    pub ambiguous_names: usize,
    /// Share of entity names that exist only in the target language.
    pub target_only_fraction: f64,
    /// Share of concepts spelled identically in both languages.
    pub identical_fraction: f64,
    pub source_sentences: usize,
    pub unlabeled_sentences: usize,
    pub test_sentences: usize,
    pub mean_length: f64,
    /// Probability that a slot opens an entity mention.
    pub entity_rate: f64,
    /// Probability that a mention comes with a trigger word.
    pub trigger_rate: f64,
    /// Probability that a target-language trigger follows its mention.
    pub reorder_rate: f64,
    /// Probability that a mention uses an ambiguous name.
    pub ambiguity_rate: f64,
    /// Spread of name vectors around their type centroid.
    pub type_spread: f64,
    /// Standard deviation of the noise added to rotated target vectors,
    /// relative to unit-norm vectors.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 24,
            entity_types: super::CONLL_ENTITY_TYPES.iter().map(|s| s.to_string()).collect(),
            context_words: 300,
            triggers_per_type: 3,
            names_per_type: 60,
            ambiguous_names: 16,
            target_only_fraction: 0.2,
            identical_fraction: 0.3,
            source_sentences: 500,
            unlabeled_sentences: 500,
            test_sentences: 300,
            mean_length: 8.0,
            entity_rate: 0.2,
            trigger_rate: 0.6,
            reorder_rate: 0.5,
            ambiguity_rate: 0.15,
            type_spread: 0.8,
            noise: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fraction = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.dim == 0 {
            return Err(Error::config("dim must be positive"));
        }
        if self.entity_types.is_empty() {
            return Err(Error::config("at least one entity type is required"));
        }
        if self.context_words == 0 || self.names_per_type == 0 {
            return Err(Error::config("context and name vocabularies must be non-empty"));
        }
        if self.mean_length < 1.0 || !self.mean_length.is_finite() {
            return Err(Error::config("mean_length must be at least 1"));
        }
        if self.noise < 0.0 || self.type_spread < 0.0 {
            return Err(Error::config("noise and type_spread must be non-negative"));
        }
        fraction("target_only_fraction", self.target_only_fraction)?;
        fraction("identical_fraction", self.identical_fraction)?;
        fraction("entity_rate", self.entity_rate)?;
        fraction("trigger_rate", self.trigger_rate)?;
        fraction("reorder_rate", self.reorder_rate)?;
        fraction("ambiguity_rate", self.ambiguity_rate)?;
        Ok(())
    }
}

/// Everything [`generate_synthetic_bilingual`] produces.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub label_set: LabelSet,
    pub source: Vec<LabeledSentence>,
    /// Held out for evaluation only.
    pub target_test: Vec<LabeledSentence>,
    pub target_unlabeled: Vec<UnlabeledSentence>,
    /// Gold translation pairs `(source word, target word)`.
    pub dictionary: Vec<(String, String)>,
    pub source_embeddings: EmbeddingTable,
    pub target_embeddings: EmbeddingTable,
    /// The planted rotation, row-major `dim × dim`.
    pub rotation: Vec<f64>,
}

pub const SOURCE_FILE: &str = "source.conll";
pub const TARGET_TEST_FILE: &str = "target_test.conll";
pub const TARGET_UNLABELED_FILE: &str = "target_unlabeled.txt";
pub const DICTIONARY_FILE: &str = "dictionary.tsv";
pub const SOURCE_VECTORS_FILE: &str = "source.vec";
pub const TARGET_VECTORS_FILE: &str = "target.vec";

impl SyntheticBenchmark {
    pub fn dictionary_tsv(&self) -> String {
        let mut out = String::new();
        for (s, t) in &self.dictionary {
            out.push_str(s);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Writes corpora, dictionary and embeddings under `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SOURCE_FILE), write_conll(&self.source, &self.label_set))?;
        fs::write(dir.join(TARGET_TEST_FILE), write_conll(&self.target_test, &self.label_set))?;
        fs::write(dir.join(TARGET_UNLABELED_FILE), write_unlabeled(&self.target_unlabeled))?;
        fs::write(dir.join(DICTIONARY_FILE), self.dictionary_tsv())?;
        fs::write(dir.join(SOURCE_VECTORS_FILE), self.source_embeddings.to_text())?;
        fs::write(dir.join(TARGET_VECTORS_FILE), self.target_embeddings.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Context,
    Trigger(usize),
    Name(usize),
    /// Name that belongs to both types.
    Ambiguous(usize, usize),
}

struct Concept {
    kind: Kind,
    latent: Vec<f64>,
    source: Option<String>,
    target: String,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvzh";
const SHARED_VOWELS: &[u8] = b"ai";
const SOURCE_VOWELS: &[u8] = b"eo";
const TARGET_VOWELS: &[u8] = b"uy";

/// Three fixed-width syllables; distinct ids give distinct words and the
/// vowel inventories keep the three spelling classes disjoint.
fn spell(id: usize, vowels: &[u8], capitalize: bool) -> String {
    let base = CONSONANTS.len() * vowels.len();
    let mut n = id;
    let mut word = String::with_capacity(6);
    for _ in 0..3 {
        let digit = n % base;
        n /= base;
        word.push(CONSONANTS[digit / vowels.len()] as char);
        word.push(vowels[digit % vowels.len()] as char);
    }
    debug_assert_eq!(n, 0, "concept id {id} exceeds the spelling space");
    if capitalize {
        word[..1].to_ascii_uppercase() + &word[1..]
    } else {
        word
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g * scale
        })
        .collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian rows.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for r in &rows {
                let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

/// Zipf-like draw over `0..n` with weight `1 / (rank + 1)`.
fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let mut u = rng.random::<f64>() * total;
    for k in 0..n {
        u -= 1.0 / (k + 1) as f64;
        if u <= 0.0 {
            return k;
        }
    }
    n - 1
}

/// Language-independent sentence skeleton.
enum Slot {
    Word(usize),
    Mention {
        entity_type: usize,
        names: Vec<usize>,
        trigger: Option<usize>,
    },
}

struct Lexicon {
    concepts: Vec<Concept>,
    context: Vec<usize>,
    triggers: Vec<Vec<usize>>,
    /// Per type: names usable in source text, then all names for target text.
    source_names: Vec<Vec<usize>>,
    target_names: Vec<Vec<usize>>,
    ambiguous: Vec<Vec<usize>>,
}

fn build_lexicon(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Lexicon {
    let types = config.entity_types.len();
    let centroids: Vec<Vec<f64>> = (0..types).map(|_| unit(gaussian(rng, config.dim))).collect();
    let mut concepts = Vec::new();
    let push = |concepts: &mut Vec<Concept>, rng: &mut ChaCha8Rng, kind: Kind, latent: Vec<f64>, target_only: bool| {
        let id = concepts.len();
        let capitalize = matches!(kind, Kind::Name(_) | Kind::Ambiguous(..));
        let identical = rng.random::<f64>() < config.identical_fraction;
        let (source, target) = if target_only {
            (None, spell(id, TARGET_VOWELS, capitalize))
        } else if identical {
            let w = spell(id, SHARED_VOWELS, capitalize);
            (Some(w.clone()), w)
        } else {
            (
                Some(spell(id, SOURCE_VOWELS, capitalize)),
                spell(id, TARGET_VOWELS, capitalize),
            )
        };
        concepts.push(Concept {
            kind,
            latent,
            source,
            target,
        });
        id
    };

    let context: Vec<usize> = (0..config.context_words)
        .map(|_| {
            let z = unit(gaussian(rng, config.dim));
            push(&mut concepts, rng, Kind::Context, z, false)
        })
        .collect();
    let triggers: Vec<Vec<usize>> = (0..types)
        .map(|t| {
            (0..config.triggers_per_type)
                .map(|_| {
                    let z = unit(gaussian(rng, config.dim));
                    push(&mut concepts, rng, Kind::Trigger(t), z, false)
                })
                .collect()
        })
        .collect();
    let mut source_names = vec![Vec::new(); types];
    let mut target_names = vec![Vec::new(); types];
    for t in 0..types {
        for _ in 0..config.names_per_type {
            let z: Vec<f64> = centroids[t]
                .iter()
                .zip(gaussian(rng, config.dim))
                .map(|(c, g)| c + config.type_spread * g)
                .collect();
            let target_only = rng.random::<f64>() < config.target_only_fraction;
            let id = push(&mut concepts, rng, Kind::Name(t), unit(z), target_only);
            if !target_only {
                source_names[t].push(id);
            }
            target_names[t].push(id);
        }
    }
    let mut ambiguous = vec![Vec::new(); types];
    if types > 1 {
        for k in 0..config.ambiguous_names {
            let (a, b) = (k % types, (k + 1) % types);
            let z: Vec<f64> = centroids[a]
                .iter()
                .zip(&centroids[b])
                .zip(gaussian(rng, config.dim))
                .map(|((x, y), g)| 0.5 * (x + y) + config.type_spread * g)
                .collect();
            let id = push(&mut concepts, rng, Kind::Ambiguous(a, b), unit(z), false);
            ambiguous[a].push(id);
            ambiguous[b].push(id);
        }
    }
    Lexicon {
        concepts,
        context,
        triggers,
        source_names,
        target_names,
        ambiguous,
    }
}

fn sample_skeleton(config: &SynthConfig, lex: &Lexicon, target: bool, rng: &mut ChaCha8Rng) -> Vec<Slot> {
    let types = config.entity_types.len();
    let extra = config.mean_length - 1.0;
    let length = 1 + if extra > 0.0 {
        Poisson::new(extra).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    let mut slots = Vec::new();
    let mut used = 0;
    while used < length {
        let remaining = length - used;
        if rng.random::<f64>() < config.entity_rate {
            let entity_type = rng.random_range(0..types);
            let wanted = match rng.random::<f64>() {
                u if u < 0.6 => 1,
                u if u < 0.9 => 2,
                _ => 3,
            };
            let span = wanted.min(remaining);
            let pool = if target {
                &lex.target_names[entity_type]
            } else {
                &lex.source_names[entity_type]
            };
            let names: Vec<usize> = (0..span)
                .map(|_| {
                    let amb = &lex.ambiguous[entity_type];
                    if !amb.is_empty() && rng.random::<f64>() < config.ambiguity_rate {
                        amb[rng.random_range(0..amb.len())]
                    } else if pool.is_empty() {
                        lex.target_names[entity_type][0]
                    } else {
                        pool[zipf(rng, pool.len())]
                    }
                })
                .collect();
            let triggers = &lex.triggers[entity_type];
            let trigger = (remaining > span && !triggers.is_empty() && rng.random::<f64>() < config.trigger_rate)
                .then(|| triggers[rng.random_range(0..triggers.len())]);
            used += span + usize::from(trigger.is_some());
            slots.push(Slot::Mention {
                entity_type,
                names,
                trigger,
            });
        } else {
            slots.push(Slot::Word(lex.context[zipf(rng, lex.context.len())]));
            used += 1;
        }
    }
    slots
}

fn realize(
    slots: &[Slot],
    lex: &Lexicon,
    label_set: &LabelSet,
    target: bool,
    reorder_rate: f64,
    rng: &mut ChaCha8Rng,
) -> LabeledSentence {
    let word = |id: usize| -> String {
        let c = &lex.concepts[id];
        if target {
            c.target.clone()
        } else {
            c.source.clone().expect("source text only uses source words")
        }
    };
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    for slot in slots {
        match slot {
            Slot::Word(id) => {
                tokens.push(word(*id));
                labels.push(0);
            }
            Slot::Mention {
                entity_type,
                names,
                trigger,
            } => {
                let after = target && trigger.is_some() && rng.random::<f64>() < reorder_rate;
                if let (Some(t), false) = (trigger, after) {
                    tokens.push(word(*t));
                    labels.push(0);
                }
                for (k, &n) in names.iter().enumerate() {
                    tokens.push(word(n));
                    labels.push(if k == 0 {
                        label_set.begin(*entity_type)
                    } else {
                        label_set.inside(*entity_type)
                    });
                }
                if let (Some(t), true) = (trigger, after) {
                    tokens.push(word(*t));
                    labels.push(0);
                }
            }
        }
    }
    LabeledSentence { tokens, labels }
}

fn embedding_table(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<EmbeddingTable> {
    let (vocab, data): (Vec<String>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    EmbeddingTable::new(dim, vocab, data.concat())
}

/// Builds a deterministic bilingual benchmark from `(config, seed)`.
pub fn generate_synthetic_bilingual(config: &SynthConfig, seed: u64) -> Result<SyntheticBenchmark> {
    config.validate()?;
    let label_set = LabelSet::new(config.entity_types.iter().cloned())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = config.dim;
    let rotation = random_orthogonal(&mut rng, dim);
    let lex = build_lexicon(config, &mut rng);

    let mut source_rows = Vec::new();
    let mut target_rows = Vec::new();
    let mut dictionary = Vec::new();
    for c in &lex.concepts {
        let rotated: Vec<f64> = rotation
            .chunks_exact(dim)
            .map(|row| row.iter().zip(&c.latent).map(|(r, z)| r * z).sum::<f64>())
            .collect();
        let noisy: Vec<f64> = if config.noise > 0.0 {
            rotated
                .iter()
                .zip(gaussian(&mut rng, dim))
                .map(|(r, g)| r + config.noise * g)
                .collect()
        } else {
            rotated
        };
        target_rows.push((c.target.clone(), noisy));
        if let Some(s) = &c.source {
            source_rows.push((s.clone(), c.latent.clone()));
            dictionary.push((s.clone(), c.target.clone()));
        }
    }
    debug_assert!(lex.concepts.iter().all(|c| !matches!(c.kind, Kind::Context) || c.source.is_some()));

    let corpus = |count: usize, target: bool, rng: &mut ChaCha8Rng| -> Vec<LabeledSentence> {
        (0..count)
            .map(|_| {
                let slots = sample_skeleton(config, &lex, target, rng);
                realize(&slots, &lex, &label_set, target, config.reorder_rate, rng)
            })
            .collect()
    };
    let source = corpus(config.source_sentences, false, &mut rng);
    let target_unlabeled = corpus(config.unlabeled_sentences, true, &mut rng)
        .iter()
        .map(LabeledSentence::unlabeled)
        .collect();
    let target_test = corpus(config.test_sentences, true, &mut rng);

    Ok(SyntheticBenchmark {
        source_embeddings: embedding_table(dim, source_rows)?,
        target_embeddings: embedding_table(dim, target_rows)?,
        label_set,
        source,
        target_test,
        target_unlabeled,
        dictionary,
        rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_conll, write_conll};

    fn small() -> SynthConfig {
        SynthConfig {
            source_sentences: 60,
            unlabeled_sentences: 40,
            test_sentences: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn spelling_is_injective_and_classes_disjoint() {
        let mut seen = std::collections::HashSet::new();
        for id in 0..2000 {
            for vowels in [SHARED_VOWELS, SOURCE_VOWELS, TARGET_VOWELS] {
                assert!(seen.insert(spell(id, vowels, false)));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let config = SynthConfig {
            noise: 0.0,
            identical_fraction: 0.3,
            ..small()
        };
        let a = generate_synthetic_bilingual(&config, 7).unwrap();
        let b = generate_synthetic_bilingual(&config, 7).unwrap();
        assert_eq!(write_conll(&a.source, &a.label_set), write_conll(&b.source, &b.label_set));
        assert_eq!(a.source_embeddings.to_text(), b.source_embeddings.to_text());
        assert_eq!(a.target_embeddings.to_text(), b.target_embeddings.to_text());
        assert_eq!(a.dictionary_tsv(), b.dictionary_tsv());
        assert_eq!(a.target_unlabeled, b.target_unlabeled);
        let c = generate_synthetic_bilingual(&config, 8).unwrap();
        assert_ne!(a.source_embeddings.to_text(), c.source_embeddings.to_text());
    }

    #[test]
    fn corpora_are_valid_and_round_trip() {
        let bench = generate_synthetic_bilingual(&small(), 3).unwrap();
        for corpus in [&bench.source, &bench.target_test] {
            let text = write_conll(corpus, &bench.label_set);
            assert_eq!(&read_conll(&text, &bench.label_set).unwrap(), corpus);
        }
    }

    #[test]
    fn source_text_uses_source_vocabulary() {
        let bench = generate_synthetic_bilingual(&small(), 5).unwrap();
        for s in &bench.source {
            for tok in &s.tokens {
                assert!(bench.source_embeddings.index_of(tok).is_some(), "{tok}");
            }
        }
        for s in &bench.target_unlabeled {
            for tok in &s.tokens {
                assert!(bench.target_embeddings.index_of(tok).is_some(), "{tok}");
            }
        }
    }

    #[test]
    fn identical_fraction_controls_shared_spellings() {
        let config = SynthConfig {
            context_words: 1000,
            names_per_type: 10,
            ambiguous_names: 0,
            target_only_fraction: 0.0,
            identical_fraction: 0.3,
            ..small()
        };
        let bench = generate_synthetic_bilingual(&config, 11).unwrap();
        let shared = bench.dictionary.iter().filter(|(s, t)| s == t).count();
        let total = bench.dictionary.len() as f64;
        // Binomial(1052, 0.3): mean 315.6, sd ~14.9.
        assert!((shared as f64 - 0.3 * total).abs() < 60.0, "{shared} of {total}");
    }

    #[test]
    fn token_count_tracks_mean_length() {
        let config = SynthConfig {
            source_sentences: 500,
            mean_length: 8.0,
            ..small()
        };
        let bench = generate_synthetic_bilingual(&config, 1).unwrap();
        let tokens: usize = bench.source.iter().map(|s| s.len()).sum();
        // Length is 1 + Poisson(7); 500 draws give sd ~ sqrt(3500) ~ 59.
        assert!((tokens as i64 - 4000).abs() < 300, "{tokens}");
    }

    #[test]
    fn noiseless_targets_are_exact_rotations() {
        let config = SynthConfig {
            noise: 0.0,
            ..small()
        };
        let bench = generate_synthetic_bilingual(&config, 9).unwrap();
        let d = config.dim;
        for (s, t) in bench.dictionary.iter().take(50) {
            let sv = bench.source_embeddings.get(s).unwrap();
            let tv = bench.target_embeddings.get(t).unwrap();
            for i in 0..d {
                let r: f64 = (0..d).map(|j| bench.rotation[i * d + j] * sv[j]).sum();
                assert!((r - tv[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            SynthConfig { dim: 0, ..small() },
            SynthConfig { context_words: 0, ..small() },
            SynthConfig { entity_types: vec![], ..small() },
            SynthConfig { noise: -1.0, ..small() },
            SynthConfig { identical_fraction: 1.5, ..small() },
        ] {
            assert!(matches!(generate_synthetic_bilingual(&bad, 0), Err(Error::Config(_))));
        }
    }
}
