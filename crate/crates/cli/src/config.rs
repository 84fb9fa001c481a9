//! Flat `section.key = value` configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! paths.source = data/source.conll
//! encoder.hidden_dim = 64
//! run.seeds = 1..5
//! ```
//!
//! Relative paths in a file resolve against the file's directory; values
//! set on the command line resolve against the working directory and
//! replace file values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use unitrans::corpus::{LabelSet, SynthConfig};
use unitrans::distill::{DistillConfig, VoteMode};
use unitrans::pipeline::{AlignConfig, PipelineSettings, Variant};
use unitrans::tagger::{EncoderConfig, HardNormalizer, TrainConfig};
use unitrans::{Error, Result};

const TRAIN_KEYS: [&str; 5] = ["epochs", "batch_size", "learning_rate", "weight_decay", "max_sequence_length"];
const TRAIN_SECTIONS: [&str; 5] = ["train", "source", "finetune", "translated", "student"];
const SYNTH_KEYS: [&str; 20] = [
    "seed",
    "dim",
    "entity_types",
    "context_words",
    "triggers_per_type",
    "names_per_type",
    "ambiguous_names",
    "target_only_fraction",
    "identical_fraction",
    "source_sentences",
    "unlabeled_sentences",
    "test_sentences",
    "mean_length",
    "entity_rate",
    "trigger_rate",
    "reorder_rate",
    "ambiguity_rate",
    "type_spread",
    "noise",
    "write_data",
];
const OTHER_KEYS: [&str; 22] = [
    "labels.types",
    "paths.source",
    "paths.source_vectors",
    "paths.target_vectors",
    "paths.unlabeled",
    "paths.test",
    "paths.out_dir",
    "align.k",
    "align.max_vocab",
    "align.max_pairs",
    "align.skip_non_alphabetic",
    "encoder.window",
    "encoder.hidden_dim",
    "encoder.dropout",
    "distill.eta",
    "distill.use_soft",
    "distill.use_hard",
    "distill.warm_start",
    "distill.normalizer",
    "distill.vote",
    "run.variants",
    "run.seeds",
];
const RUN_ENSEMBLE: &str = "run.ensemble";

fn known_key(key: &str) -> bool {
    if OTHER_KEYS.contains(&key) || key == RUN_ENSEMBLE {
        return true;
    }
    match key.split_once('.') {
        Some(("synth", k)) => SYNTH_KEYS.contains(&k),
        Some((section, k)) => TRAIN_SECTIONS.contains(&section) && TRAIN_KEYS.contains(&k),
        None => false,
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    /// Directory that relative paths in this value resolve against.
    base: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text, None)
    }

    fn parse_with_base(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse {
                    line: no + 1,
                    message: "expected key = value".into(),
                })?;
            let key = key.trim();
            if !known_key(key) {
                return Err(Error::Parse {
                    line: no + 1,
                    message: format!("unknown key {key:?}"),
                });
            }
            let entry = Entry {
                value: value.trim().to_string(),
                base: base.map(Path::to_path_buf),
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(Error::Parse {
                    line: no + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_with_base(&text, Some(path.parent().unwrap_or(Path::new(""))))
    }

    /// Sets `key` from the command line.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known_key(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                base: None,
            },
        );
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
        }
    }

    fn update<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn flag(&self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *slot = match v {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
            };
        }
        Ok(())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|e| match &e.base {
            Some(base) => base.join(&e.value),
            None => PathBuf::from(&e.value),
        })
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("missing required setting {key}")))
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match self.raw("labels.types") {
            None => Ok(LabelSet::conll()),
            Some(v) => LabelSet::new(list(v)),
        }
    }

    /// Training settings from `section.*`, on top of `defaults`.
    pub fn train_config(&self, section: &str, defaults: TrainConfig) -> Result<TrainConfig> {
        let mut c = defaults;
        self.update(&format!("{section}.epochs"), &mut c.epochs)?;
        self.update(&format!("{section}.batch_size"), &mut c.batch_size)?;
        self.update(&format!("{section}.learning_rate"), &mut c.learning_rate)?;
        self.update(&format!("{section}.weight_decay"), &mut c.weight_decay)?;
        self.update(&format!("{section}.max_sequence_length"), &mut c.max_sequence_length)?;
        c.validate()?;
        Ok(c)
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let mut e = EncoderConfig::default();
        self.update("encoder.window", &mut e.window)?;
        self.update("encoder.hidden_dim", &mut e.hidden_dim)?;
        self.update("encoder.dropout", &mut e.dropout)?;
        e.validate()?;
        Ok(e)
    }

    pub fn distill(&self) -> Result<DistillConfig> {
        let mut d = DistillConfig::default();
        d.train = self.train_config("student", d.train)?;
        self.update("distill.eta", &mut d.eta)?;
        self.flag("distill.use_soft", &mut d.use_soft)?;
        self.flag("distill.use_hard", &mut d.use_hard)?;
        self.flag("distill.warm_start", &mut d.warm_start)?;
        if let Some(v) = self.raw("distill.normalizer") {
            d.normalizer = match v {
                "all_tokens" => HardNormalizer::AllTokens,
                "labeled_tokens" => HardNormalizer::LabeledTokens,
                _ => return Err(Error::Config(format!("unknown normalizer {v:?}"))),
            };
        }
        if let Some(v) = self.raw("distill.vote") {
            d.vote_mode = match v {
                "argmax" => VoteMode::Argmax,
                "viterbi" => VoteMode::Viterbi,
                _ => return Err(Error::Config(format!("unknown vote mode {v:?}"))),
            };
        }
        d.validate()?;
        Ok(d)
    }

    pub fn align(&self) -> Result<AlignConfig> {
        let mut a = AlignConfig::default();
        self.update("align.k", &mut a.k)?;
        a.seed.max_pairs = self.get("align.max_pairs")?;
        self.flag("align.skip_non_alphabetic", &mut a.seed.skip_non_alphabetic)?;
        Ok(a)
    }

    pub fn max_vocab(&self) -> Result<Option<usize>> {
        Ok(Some(self.get("align.max_vocab")?.unwrap_or(unitrans::embed::DEFAULT_MAX_VOCAB)))
    }

    pub fn pipeline_settings(&self) -> Result<PipelineSettings> {
        let defaults = TrainConfig::default();
        let settings = PipelineSettings {
            align: self.align()?,
            encoder: self.encoder()?,
            source: self.train_config("source", defaults.clone())?,
            finetune: self.train_config("finetune", defaults.clone())?,
            translated: self.train_config("translated", defaults)?,
            distill: self.distill()?,
            ensemble: self.get(RUN_ENSEMBLE)?.unwrap_or(1),
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        match self.raw("run.variants") {
            None | Some("all") => Ok(Variant::ALL.to_vec()),
            Some(v) => list(v).into_iter().map(|s| s.parse()).collect(),
        }
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        match self.raw("run.seeds") {
            None => Ok(vec![1, 2, 3, 4, 5]),
            Some(v) => parse_seeds(v),
        }
    }

    /// The synthetic benchmark and its seed, when `synth.seed` is set.
    pub fn synth(&self) -> Result<Option<(SynthConfig, u64)>> {
        let Some(seed) = self.get::<u64>("synth.seed")? else {
            return Ok(None);
        };
        let mut c = SynthConfig::default();
        self.update("synth.dim", &mut c.dim)?;
        if let Some(v) = self.raw("synth.entity_types") {
            c.entity_types = list(v);
        }
        self.update("synth.context_words", &mut c.context_words)?;
        self.update("synth.triggers_per_type", &mut c.triggers_per_type)?;
        self.update("synth.names_per_type", &mut c.names_per_type)?;
        self.update("synth.ambiguous_names", &mut c.ambiguous_names)?;
        self.update("synth.target_only_fraction", &mut c.target_only_fraction)?;
        self.update("synth.identical_fraction", &mut c.identical_fraction)?;
        self.update("synth.source_sentences", &mut c.source_sentences)?;
        self.update("synth.unlabeled_sentences", &mut c.unlabeled_sentences)?;
        self.update("synth.test_sentences", &mut c.test_sentences)?;
        self.update("synth.mean_length", &mut c.mean_length)?;
        self.update("synth.entity_rate", &mut c.entity_rate)?;
        self.update("synth.trigger_rate", &mut c.trigger_rate)?;
        self.update("synth.reorder_rate", &mut c.reorder_rate)?;
        self.update("synth.ambiguity_rate", &mut c.ambiguity_rate)?;
        self.update("synth.type_spread", &mut c.type_spread)?;
        self.update("synth.noise", &mut c.noise)?;
        c.validate()?;
        Ok(Some((c, seed)))
    }

    pub fn synth_write_data(&self) -> Result<bool> {
        let mut write = false;
        self.flag("synth.write_data", &mut write)?;
        Ok(write)
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// `3`, `1,2,7` or the inclusive range `1..5`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed list {v:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        list(v).iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    Ok(seeds)
}
