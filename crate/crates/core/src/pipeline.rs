//! End-to-end transfer: align, translate, train the base taggers, distill,
//! and score every variant on the target test set.
//!
//! Alignment, translation and embedding lookups do not depend on the seed
//! and are done once in [`Pipeline::prepare`]. The source, teacher and
//! translated taggers of one seed are shared by all variants run with it.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::align::{build_seed_dictionary, solve_procrustes, transfer_corpus, OrthogonalMapping, SeedDictionary, SeedOptions, TransferStats, Translator, DEFAULT_K};
use crate::corpus::{LabelSet, LabeledSentence, UnlabeledSentence};
use crate::distill::{train_student, DistillConfig, Ensemble, Voters};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate, EvalReport};
use crate::tagger::{finetune, train, EmbeddingSpace, EncoderConfig, Example, TaggerModel, TokenMatrix, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Student distilled with soft labels and voted hard labels.
    Full,
    /// Student trained on voted hard labels only.
    NoSoft,
    /// Student trained on the teacher's soft labels only.
    NoHard,
    /// Student distilled from the source model's soft labels.
    TeacherSrc,
    /// Student distilled from the translated-data model's soft labels.
    TeacherTrans,
    /// Source model fine-tuned on translated data.
    TeacherOnly,
    /// Source model applied to target text directly.
    ModelTransfer,
    /// Model trained on translated data alone.
    DataTransfer,
    /// One model trained on source and translated data together.
    DataCombination,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::NoSoft,
        Variant::NoHard,
        Variant::TeacherSrc,
        Variant::TeacherTrans,
        Variant::TeacherOnly,
        Variant::ModelTransfer,
        Variant::DataTransfer,
        Variant::DataCombination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSoft => "no_soft",
            Variant::NoHard => "no_hard",
            Variant::TeacherSrc => "teacher_src",
            Variant::TeacherTrans => "teacher_trans",
            Variant::TeacherOnly => "teacher_only",
            Variant::ModelTransfer => "model_transfer",
            Variant::DataTransfer => "data_transfer",
            Variant::DataCombination => "data_combination",
        }
    }

    pub fn is_student(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::NoSoft | Variant::NoHard | Variant::TeacherSrc | Variant::TeacherTrans
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    /// Neighbourhood size for CSLS.
    pub k: usize,
    pub seed: SeedOptions,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: SeedOptions::default(),
        }
    }
}

/// Everything except data and seeds. Seeds inside the train configs are
/// replaced by the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub align: AlignConfig,
    pub encoder: EncoderConfig,
    /// Source model, and the combined-data model.
    pub source: TrainConfig,
    /// Fine-tuning the source model into the teacher.
    pub finetune: TrainConfig,
    /// Model trained on translated data.
    pub translated: TrainConfig,
    pub distill: DistillConfig,
    /// Number of independently seeded members in each base model.
    pub ensemble: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            align: AlignConfig::default(),
            encoder: EncoderConfig::default(),
            source: TrainConfig::default(),
            finetune: TrainConfig::default(),
            translated: TrainConfig::default(),
            distill: DistillConfig::default(),
            ensemble: 1,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble == 0 {
            return Err(Error::config("ensemble size must be at least 1"));
        }
        if self.align.k == 0 {
            return Err(Error::config("CSLS neighbourhood size must be at least 1"));
        }
        self.encoder.validate()?;
        self.source.validate()?;
        self.finetune.validate()?;
        self.translated.validate()?;
        self.distill.validate()
    }
}

/// Seed of ensemble member `m`; member 0 keeps the run seed.
pub fn member_seed(seed: u64, member: usize) -> u64 {
    seed ^ (member as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub label_set: LabelSet,
    pub source: Vec<LabeledSentence>,
    pub source_embeddings: EmbeddingTable,
    pub target_embeddings: EmbeddingTable,
    pub unlabeled: Vec<UnlabeledSentence>,
    /// Gold target-language sentences; runs are unscored without them.
    pub test: Option<Vec<LabeledSentence>>,
}

/// Final predictor of one variant and seed, with its score.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub model: Ensemble,
    /// Viterbi-decoded test predictions.
    pub predictions: Vec<Vec<usize>>,
    pub report: Option<EvalReport>,
}

#[derive(Default)]
struct BaseModels {
    source: Option<Ensemble>,
    teacher: Option<Ensemble>,
    translated: Option<Ensemble>,
}

pub struct Pipeline {
    settings: PipelineSettings,
    label_set: LabelSet,
    dictionary: SeedDictionary,
    mapping: OrthogonalMapping,
    translated: Vec<LabeledSentence>,
    transfer: TransferStats,
    source_examples: Vec<Example>,
    translated_examples: Vec<Example>,
    unlabeled: Vec<TokenMatrix>,
    test: Option<(Vec<LabeledSentence>, Vec<TokenMatrix>)>,
}

impl Pipeline {
    /// Aligns the embeddings, translates the source corpus and embeds every
    /// corpus. Rows are unit-normalized before alignment.
    pub fn prepare(inputs: &PipelineInputs, settings: PipelineSettings) -> Result<Self> {
        settings.validate()?;
        if inputs.source.is_empty() {
            return Err(Error::config("source corpus is empty"));
        }
        if inputs.unlabeled.is_empty() {
            return Err(Error::config("unlabeled target corpus is empty"));
        }
        let src = inputs.source_embeddings.normalize_rows()?;
        let tgt = inputs.target_embeddings.normalize_rows()?;
        let dictionary = build_seed_dictionary(&src, &tgt, &settings.align.seed)?;
        let mapping = solve_procrustes(&dictionary, &src, &tgt)?;
        log::info!(
            "aligned {} seed pairs, residual {:.6}, orthogonality defect {:.2e}",
            dictionary.len(),
            mapping.residual,
            mapping.orthogonality_defect()
        );
        let translator = Translator::new(&mapping, &src, &tgt, settings.align.k)?;
        let (translated, transfer) = transfer_corpus(&inputs.source, &translator);
        log::info!(
            "translated {} tokens, {} passed through",
            transfer.tokens,
            transfer.passthrough
        );

        let source_space = EmbeddingSpace::mapped(&src, &mapping)?;
        let target_space = EmbeddingSpace::new(tgt);
        let source_examples = inputs.source.iter().map(|s| source_space.example(s)).collect();
        let translated_examples = translated.iter().map(|s| target_space.example(s)).collect();
        let unlabeled = inputs.unlabeled.iter().map(|s| target_space.embed(&s.tokens)).collect();
        let test = inputs.test.as_ref().map(|gold| {
            let x = gold.iter().map(|s| target_space.embed(&s.tokens)).collect();
            (gold.clone(), x)
        });
        Ok(Self {
            settings,
            label_set: inputs.label_set.clone(),
            dictionary,
            mapping,
            translated,
            transfer,
            source_examples,
            translated_examples,
            unlabeled,
            test,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn mapping(&self) -> &OrthogonalMapping {
        &self.mapping
    }

    pub fn dictionary(&self) -> &SeedDictionary {
        &self.dictionary
    }

    /// The word-translated source corpus.
    pub fn translated(&self) -> &[LabeledSentence] {
        &self.translated
    }

    pub fn transfer_stats(&self) -> TransferStats {
        self.transfer
    }

    fn train_members(&self, examples: &[Example], config: &TrainConfig, seed: u64) -> Result<Ensemble> {
        let members = (0..self.settings.ensemble)
            .map(|m| {
                let config = TrainConfig {
                    seed: member_seed(seed, m),
                    ..config.clone()
                };
                Ok(train(examples, &self.settings.encoder, &self.label_set, &config)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members)
    }

    fn source_model<'b>(&self, bases: &'b mut BaseModels, seed: u64) -> Result<&'b Ensemble> {
        if bases.source.is_none() {
            log::info!("seed {seed}: training source model");
            bases.source = Some(self.train_members(&self.source_examples, &self.settings.source, seed)?);
        }
        Ok(bases.source.as_ref().expect("just set"))
    }

    fn translated_model<'b>(&self, bases: &'b mut BaseModels, seed: u64) -> Result<&'b Ensemble> {
        if bases.translated.is_none() {
            log::info!("seed {seed}: training translated-data model");
            bases.translated = Some(self.train_members(&self.translated_examples, &self.settings.translated, seed)?);
        }
        Ok(bases.translated.as_ref().expect("just set"))
    }

    fn teacher_model<'b>(&self, bases: &'b mut BaseModels, seed: u64) -> Result<&'b Ensemble> {
        if bases.teacher.is_none() {
            let source = self.source_model(bases, seed)?.clone();
            log::info!("seed {seed}: fine-tuning teacher");
            let members = source
                .members()
                .iter()
                .enumerate()
                .map(|(m, model)| {
                    let config = TrainConfig {
                        seed: member_seed(seed, m),
                        ..self.settings.finetune.clone()
                    };
                    Ok(finetune(model, &self.translated_examples, &config)?.0)
                })
                .collect::<Result<Vec<_>>>()?;
            bases.teacher = Some(Ensemble::new(members)?);
        }
        Ok(bases.teacher.as_ref().expect("just set"))
    }

    fn student(&self, bases: &mut BaseModels, variant: Variant, seed: u64) -> Result<TaggerModel> {
        let mut config = DistillConfig {
            train: TrainConfig {
                seed,
                ..self.settings.distill.train.clone()
            },
            ..self.settings.distill.clone()
        };
        match variant {
            Variant::Full => {}
            Variant::NoSoft => {
                config.use_soft = false;
                config.use_hard = true;
            }
            Variant::NoHard | Variant::TeacherSrc | Variant::TeacherTrans => {
                config.use_soft = true;
                config.use_hard = false;
            }
            _ => unreachable!("not a student variant"),
        }
        let source = self.source_model(bases, seed)?.clone();
        let translated = self.translated_model(bases, seed)?.clone();
        let teacher = match variant {
            Variant::TeacherSrc => source.clone(),
            Variant::TeacherTrans => translated.clone(),
            _ => self.teacher_model(bases, seed)?.clone(),
        };
        let voters = Voters {
            source: &source,
            teacher: &teacher,
            translated: &translated,
        };
        log::info!("seed {seed}: distilling student for {variant}");
        Ok(train_student(&self.unlabeled, &teacher, Some(&voters), &self.settings.encoder, &config)?.0)
    }

    fn run_with(&self, bases: &mut BaseModels, variant: Variant, seed: u64) -> Result<VariantRun> {
        let model = match variant {
            Variant::ModelTransfer => self.source_model(bases, seed)?.clone(),
            Variant::DataTransfer => self.translated_model(bases, seed)?.clone(),
            Variant::TeacherOnly => self.teacher_model(bases, seed)?.clone(),
            Variant::DataCombination => {
                log::info!("seed {seed}: training on combined data");
                let combined: Vec<Example> = self
                    .source_examples
                    .iter()
                    .chain(&self.translated_examples)
                    .cloned()
                    .collect();
                self.train_members(&combined, &self.settings.source, seed)?
            }
            _ => Ensemble::single(self.student(bases, variant, seed)?),
        };
        let (predictions, report) = match &self.test {
            Some((gold, inputs)) => {
                let predictions = inputs
                    .par_iter()
                    .map(|x| model.decode(x))
                    .collect::<Result<Vec<_>>>()?;
                let report = evaluate(gold, &predictions, &self.label_set)?;
                log::info!("seed {seed}: {variant} F1 {:.2}", 100.0 * report.f1);
                (predictions, Some(report))
            }
            None => (Vec::new(), None),
        };
        Ok(VariantRun {
            variant,
            seed,
            model,
            predictions,
            report,
        })
    }

    pub fn run(&self, variant: Variant, seed: u64) -> Result<VariantRun> {
        self.run_with(&mut BaseModels::default(), variant, seed)
    }

    /// Every variant under every seed. Seeds run in parallel; results come
    /// back in (seed, variant) order regardless of scheduling.
    pub fn run_all(&self, variants: &[Variant], seeds: &[u64]) -> Result<Vec<VariantRun>> {
        if seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let per_seed = seeds
            .par_iter()
            .map(|&seed| {
                let mut bases = BaseModels::default();
                variants
                    .iter()
                    .map(|&v| self.run_with(&mut bases, v, seed))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_seed.into_iter().flatten().collect())
    }
}

/// Runs one variant from scratch.
pub fn run_pipeline(
    variant: Variant,
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<VariantRun> {
    Pipeline::prepare(inputs, settings.clone())?.run(variant, seed)
}

/// Per-variant aggregates over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub rows: Vec<(Variant, EvalReport)>,
}

impl PipelineReport {
    /// Groups scored runs by variant, in first-seen variant order.
    pub fn from_runs(runs: &[VariantRun]) -> Result<Self> {
        let mut order: Vec<Variant> = Vec::new();
        for r in runs {
            if !order.contains(&r.variant) {
                order.push(r.variant);
            }
        }
        let rows = order
            .into_iter()
            .map(|v| {
                let reports: Vec<EvalReport> = runs
                    .iter()
                    .filter(|r| r.variant == v)
                    .map(|r| r.report.clone().ok_or_else(|| Error::config("runs were not scored; a test corpus is required")))
                    .collect::<Result<_>>()?;
                Ok((v, aggregate(&reports)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn get(&self, variant: Variant) -> Option<&EvalReport> {
        self.rows.iter().find(|(v, _)| *v == variant).map(|(_, r)| r)
    }

    pub fn to_key_values(&self) -> String {
        self.rows
            .iter()
            .map(|(v, r)| r.to_key_values(&format!("{}.", v.name())))
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>8} {:>8} {:>8} {:>8} {:>5}", "variant", "mean F1", "std", "P", "R", "runs");
        for (v, r) in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>5}",
                v.name(),
                100.0 * r.mean_f1,
                100.0 * r.std_f1,
                100.0 * r.precision,
                100.0 * r.recall,
                r.runs.len()
            );
        }
        out
    }
}
