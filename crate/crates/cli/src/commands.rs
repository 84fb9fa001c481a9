use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use unitrans::align::{build_seed_dictionary, solve_procrustes, transfer_corpus, OrthogonalMapping, Translator};
use unitrans::corpus::{
    generate_synthetic_bilingual, read_conll, read_unlabeled, write_conll, LabeledSentence, UnlabeledSentence,
};
use unitrans::distill::{fit_student, soft_labels, vote_hard_labels, write_pseudo_labels, Ensemble, Voters};
use unitrans::embed::{load_embeddings, EmbeddingTable};
use unitrans::metrics::evaluate;
use unitrans::pipeline::{Pipeline, PipelineInputs, PipelineReport};
use unitrans::tagger::{finetune, train, EmbeddingSpace, TaggerModel, TrainConfig, TrainLog};

use crate::args::*;
use crate::config::{parse_seeds, Config};

pub type Result<T> = anyhow::Result<T>;

const REPORT_HEADER: &str = "# unitrans-report 1";

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => Config::default(),
    };
    config.apply_overrides(&common.overrides)?;
    Ok(config)
}

fn out_dir(common: &CommonArgs, config: &Config) -> Result<PathBuf> {
    let dir = common
        .out_dir
        .clone()
        .or_else(|| config.path("paths.out_dir"))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Reads an embedding file and unit-normalizes its rows.
pub fn load_vectors(path: &Path, max_vocab: Option<usize>) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let loaded =
        load_embeddings(BufReader::new(file), max_vocab).with_context(|| format!("loading {}", path.display()))?;
    if loaded.duplicates > 0 {
        log::warn!("{}: skipped {} duplicate words", path.display(), loaded.duplicates);
    }
    Ok(loaded.table.normalize_rows()?)
}

fn load_mapping(path: &Path) -> Result<OrthogonalMapping> {
    OrthogonalMapping::from_text(&read_text(path)?).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<TaggerModel> {
    TaggerModel::from_text(&read_text(path)?).with_context(|| format!("loading {}", path.display()))
}

fn load_ensemble(paths: &[PathBuf]) -> Result<Ensemble> {
    let members = paths.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    Ok(Ensemble::new(members)?)
}

fn space(args: &EmbeddingArgs, config: &Config) -> Result<EmbeddingSpace> {
    let table = load_vectors(&args.vectors, config.max_vocab()?)?;
    Ok(match &args.mapping {
        Some(m) => EmbeddingSpace::mapped(&table, &load_mapping(m)?)?,
        None => EmbeddingSpace::new(table),
    })
}

fn read_labeled(path: &Path, config: &Config) -> Result<Vec<LabeledSentence>> {
    read_conll(&read_text(path)?, &config.label_set()?).with_context(|| format!("parsing {}", path.display()))
}

fn read_plain(path: &Path) -> Result<Vec<UnlabeledSentence>> {
    read_unlabeled(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn report(lines: &[(&str, String)]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for (k, v) in lines {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

fn log_report(log: &TrainLog) -> String {
    let lines: Vec<(String, String)> = log
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(e, l)| (format!("epoch.{}.loss", e + 1), format!("{l:.8}")))
        .collect();
    report(&lines.iter().map(|(k, v)| (k.as_str(), v.clone())).collect::<Vec<_>>())
}

fn path_or_config(flag: &Option<PathBuf>, config: &Config, key: &str) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => Ok(config.require_path(key)?),
    }
}

pub fn cmd_align(args: &AlignArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.max_vocab {
        config.set("align.max_vocab", n.to_string())?;
    }
    if let Some(n) = args.max_pairs {
        config.set("align.max_pairs", n.to_string())?;
    }
    let out = out_dir(&args.common, &config)?;
    let max_vocab = config.max_vocab()?;
    let src = load_vectors(&path_or_config(&args.source_vectors, &config, "paths.source_vectors")?, max_vocab)?;
    let tgt = load_vectors(&path_or_config(&args.target_vectors, &config, "paths.target_vectors")?, max_vocab)?;
    let align = config.align()?;
    let dictionary = build_seed_dictionary(&src, &tgt, &align.seed)?;
    let mapping = solve_procrustes(&dictionary, &src, &tgt)?;
    let mut pairs = String::new();
    for (s, t) in dictionary.pairs() {
        let _ = writeln!(pairs, "{s}\t{t}");
    }
    write_file(&out.join("mapping.txt"), mapping.to_text())?;
    write_file(&out.join("dictionary.tsv"), pairs)?;
    let text = report(&[
        ("pairs", dictionary.len().to_string()),
        ("dim", mapping.dim().to_string()),
        ("residual", format!("{:.9e}", mapping.residual)),
        ("orthogonality_defect", format!("{:.3e}", mapping.orthogonality_defect())),
        ("determinant", format!("{:.6}", mapping.determinant())),
    ]);
    write_file(&out.join("align_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_translate(args: &TranslateArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(k) = args.k {
        config.set("align.k", k.to_string())?;
    }
    let out = out_dir(&args.common, &config)?;
    let max_vocab = config.max_vocab()?;
    let src = load_vectors(&path_or_config(&args.source_vectors, &config, "paths.source_vectors")?, max_vocab)?;
    let tgt = load_vectors(&path_or_config(&args.target_vectors, &config, "paths.target_vectors")?, max_vocab)?;
    let corpus = read_labeled(&path_or_config(&args.corpus, &config, "paths.source")?, &config)?;
    let mapping = load_mapping(&args.mapping)?;
    let translator = Translator::new(&mapping, &src, &tgt, config.align()?.k)?;
    let (translated, stats) = transfer_corpus(&corpus, &translator);
    write_file(&out.join("translated.conll"), write_conll(&translated, &config.label_set()?))?;
    write_file(&out.join("translation_table.tsv"), translator.translation_table().to_tsv())?;
    let text = report(&[
        ("sentences", translated.len().to_string()),
        ("tokens", stats.tokens.to_string()),
        ("passthrough", stats.passthrough.to_string()),
        ("k", translator.k().to_string()),
    ]);
    write_file(&out.join("translate_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = out_dir(&args.common, &config)?;
    let space = space(&args.embeddings, &config)?;
    let corpus = read_labeled(&args.corpus, &config)?;
    let examples: Vec<_> = corpus.iter().map(|s| space.example(s)).collect();
    let train_config = TrainConfig {
        seed: args.seed,
        ..config.train_config(&args.section, TrainConfig::default())?
    };
    let (model, log) = train(&examples, &config.encoder()?, &config.label_set()?, &train_config)?;
    write_file(&out.join("model.txt"), model.to_text())?;
    write_file(&out.join("train_log.txt"), log_report(&log))?;
    Ok(())
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = out_dir(&args.common, &config)?;
    let space = space(&args.embeddings, &config)?;
    let model = load_model(&args.model)?;
    let corpus = read_labeled(&args.corpus, &config)?;
    let examples: Vec<_> = corpus.iter().map(|s| space.example(s)).collect();
    let train_config = TrainConfig {
        seed: args.seed,
        ..config.train_config(&args.section, TrainConfig::default())?
    };
    let (tuned, log) = finetune(&model, &examples, &train_config)?;
    write_file(&out.join("model.txt"), tuned.to_text())?;
    write_file(&out.join("train_log.txt"), log_report(&log))?;
    Ok(())
}

pub fn cmd_distill(args: &DistillArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = out_dir(&args.common, &config)?;
    let mut distill = config.distill()?;
    distill.train.seed = args.seed;
    let target = EmbeddingSpace::new(load_vectors(&args.vectors, config.max_vocab()?)?);
    let sentences = read_plain(&args.unlabeled)?;
    let inputs: Vec<_> = sentences.iter().map(|s| target.embed(&s.tokens)).collect();
    let teacher = load_ensemble(&args.teachers)?;

    let soft = if distill.use_soft {
        let soft = soft_labels(&inputs, &teacher)?;
        write_file(&out.join("soft_labels.bin"), soft.to_bytes())?;
        Some(soft)
    } else {
        None
    };
    let pseudo = if distill.needs_votes() {
        if args.source_models.is_empty() || args.translated_models.is_empty() {
            bail!("the hard loss needs --source-model and --translated-model voters");
        }
        let source = load_ensemble(&args.source_models)?;
        let translated = load_ensemble(&args.translated_models)?;
        let voters = Voters {
            source: &source,
            teacher: &teacher,
            translated: &translated,
        };
        let votes = vote_hard_labels(&inputs, &voters, distill.vote_mode)?;
        write_file(
            &out.join("pseudo_labels.conll"),
            write_pseudo_labels(&sentences, &votes, teacher.label_set())?,
        )?;
        Some(votes)
    } else {
        None
    };
    let mut student = if distill.warm_start {
        teacher.members()[0].clone()
    } else {
        TaggerModel::new(
            config.encoder()?,
            teacher.embedding_dim(),
            teacher.label_set().clone(),
            distill.train.seed,
        )?
    };
    let log = fit_student(&mut student, &inputs, soft.as_ref(), pseudo.as_ref(), &distill)?;
    write_file(&out.join("model.txt"), student.to_text())?;
    write_file(&out.join("train_log.txt"), log_report(&log))?;
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = out_dir(&args.common, &config)?;
    let model = load_ensemble(&args.models)?;
    let space = space(&args.embeddings, &config)?;
    let sentences = read_plain(&args.input)?;
    let tagged = sentences
        .into_iter()
        .map(|s| {
            let labels = model.decode(&space.embed(&s.tokens))?;
            Ok(LabeledSentence {
                tokens: s.tokens,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(&out.join("predictions.conll"), write_conll(&tagged, model.label_set()))?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = out_dir(&args.common, &config)?;
    let gold = read_labeled(&args.gold, &config)?;
    let predicted = read_labeled(&args.predicted, &config)?;
    for (i, (g, p)) in gold.iter().zip(&predicted).enumerate() {
        if g.tokens != p.tokens {
            bail!("sentence {i}: predicted tokens differ from gold tokens");
        }
    }
    let labels: Vec<Vec<usize>> = predicted.into_iter().map(|s| s.labels).collect();
    let result = evaluate(&gold, &labels, &config.label_set()?)?;
    write_file(&out.join("report.txt"), format!("{REPORT_HEADER}\n{}", result.to_key_values("")))?;
    print!("{}", result.to_table());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(seed) = args.seed {
        config.set("synth.seed", seed.to_string())?;
    } else if !config.contains("synth.seed") {
        config.set("synth.seed", "0")?;
    }
    let out = out_dir(&args.common, &config)?;
    let (synth, seed) = config.synth()?.expect("seed is set");
    let bench = generate_synthetic_bilingual(&synth, seed)?;
    bench.write_to_dir(&out)?;
    println!(
        "wrote {} source, {} unlabeled and {} test sentences to {}",
        bench.source.len(),
        bench.target_unlabeled.len(),
        bench.target_test.len(),
        out.display()
    );
    Ok(())
}

/// Data for `pipeline`: generated when `synth.seed` is set and no source
/// corpus is configured, otherwise read from `paths.*`.
fn pipeline_inputs(config: &Config, out: &Path) -> Result<PipelineInputs> {
    if !config.contains("paths.source") {
        if let Some((synth, seed)) = config.synth()? {
            let bench = generate_synthetic_bilingual(&synth, seed)?;
            if config.synth_write_data()? {
                bench.write_to_dir(&out.join("data"))?;
            }
            return Ok(PipelineInputs {
                label_set: bench.label_set,
                source: bench.source,
                source_embeddings: bench.source_embeddings,
                target_embeddings: bench.target_embeddings,
                unlabeled: bench.target_unlabeled,
                test: Some(bench.target_test),
            });
        }
    }
    let label_set = config.label_set()?;
    let max_vocab = config.max_vocab()?;
    let test = match config.path("paths.test") {
        Some(p) => Some(read_labeled(&p, config)?),
        None => None,
    };
    let load_raw = |key: &str| -> Result<EmbeddingTable> {
        let path = config.require_path(key)?;
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        Ok(load_embeddings(BufReader::new(file), max_vocab)
            .with_context(|| format!("loading {}", path.display()))?
            .table)
    };
    Ok(PipelineInputs {
        source: read_labeled(&config.require_path("paths.source")?, config)?,
        source_embeddings: load_raw("paths.source_vectors")?,
        target_embeddings: load_raw("paths.target_vectors")?,
        unlabeled: read_plain(&config.require_path("paths.unlabeled")?)?,
        test,
        label_set,
    })
}

fn model_files(model: &Ensemble) -> Vec<(String, String)> {
    match model.members() {
        [single] => vec![("model.txt".into(), single.to_text())],
        members => members
            .iter()
            .enumerate()
            .map(|(m, model)| (format!("model-{m}.txt"), model.to_text()))
            .collect(),
    }
}

pub fn cmd_pipeline(args: &PipelineArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if !args.variants.is_empty() {
        config.set("run.variants", args.variants.join(","))?;
    }
    if let Some(seeds) = &args.seeds {
        parse_seeds(seeds)?;
        config.set("run.seeds", seeds.clone())?;
    }
    if let Some(m) = args.ensemble {
        config.set("run.ensemble", m.to_string())?;
    }
    let out = out_dir(&args.common, &config)?;
    let settings = config.pipeline_settings()?;
    let variants = config.variants()?;
    let seeds = config.seeds()?;
    let inputs = pipeline_inputs(&config, &out)?;
    let pipeline = Pipeline::prepare(&inputs, settings)?;

    write_file(&out.join("mapping.txt"), pipeline.mapping().to_text())?;
    write_file(&out.join("translated.conll"), write_conll(pipeline.translated(), &inputs.label_set))?;

    let runs = pipeline.run_all(&variants, &seeds)?;
    for run in &runs {
        let dir = out.join("runs").join(run.variant.name()).join(format!("seed-{}", run.seed));
        for (name, text) in model_files(&run.model) {
            write_file(&dir.join(name), text)?;
        }
        if let Some(test) = &inputs.test {
            let tagged: Vec<LabeledSentence> = test
                .iter()
                .zip(&run.predictions)
                .map(|(s, p)| LabeledSentence {
                    tokens: s.tokens.clone(),
                    labels: p.clone(),
                })
                .collect();
            write_file(&dir.join("predictions.conll"), write_conll(&tagged, &inputs.label_set))?;
        }
    }

    if inputs.test.is_none() {
        log::warn!("no test corpus configured; runs are not scored");
        return Ok(());
    }
    let summary = PipelineReport::from_runs(&runs)?;
    let seeds_text: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut text = report(&[
        ("variants", variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(",")),
        ("seeds", seeds_text.join(",")),
        ("ensemble", pipeline.settings().ensemble.to_string()),
        ("seed_pairs", pipeline.dictionary().len().to_string()),
        ("alignment_residual", format!("{:.9e}", pipeline.mapping().residual)),
        ("translated_tokens", pipeline.transfer_stats().tokens.to_string()),
        ("passthrough_tokens", pipeline.transfer_stats().passthrough.to_string()),
    ]);
    text.push_str(&summary.to_key_values());
    write_file(&out.join("report.txt"), &text)?;
    let table = summary.to_table();
    write_file(&out.join("report_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use unitrans::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Infeasible(_) => 3,
                E::Parse { .. }
                | E::Label { .. }
                | E::Validation { .. }
                | E::Config(_)
                | E::Lookup(_)
                | E::Format(_) => 4,
                E::Numeric(_) | E::Training { .. } => 5,
                E::Io(_) => 6,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 6;
        }
    }
    1
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Align(a) => cmd_align(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}
