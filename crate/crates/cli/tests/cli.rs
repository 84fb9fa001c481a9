use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
synth.seed = 11
synth.source_sentences = 80
synth.unlabeled_sentences = 60
synth.test_sentences = 40
synth.names_per_type = 20
synth.context_words = 80
source.epochs = 2
translated.epochs = 2
finetune.epochs = 1
student.epochs = 1
";

fn unitrans(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_unitrans"));
    cmd.args(args).env_remove("UNITRANS_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = unitrans(args, &[]);
    assert!(
        out.status.success(),
        "unitrans {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _tmp: TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("small.conf");
        fs::write(&config, SMALL).unwrap();
        Self { _tmp: tmp, root, config }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self) -> PathBuf {
        let data = self.dir("data");
        ok(&["synth", "--config", s(&self.config), "--out-dir", s(&data)]);
        data
    }
}

/// Runs the individual commands that make up the pipeline for one seed and
/// returns the directories holding the source, translated, teacher and
/// student models.
fn manual_chain(ws: &Workspace, data: &Path, seed: &str) -> [PathBuf; 4] {
    let conf = s(&ws.config);
    let (src_vec, tgt_vec) = (data.join("source.vec"), data.join("target.vec"));
    let align = ws.dir("align");
    ok(&["align", "--config", conf, "--out-dir", s(&align), "--source-vectors", s(&src_vec), "--target-vectors", s(&tgt_vec)]);
    let mapping = align.join("mapping.txt");
    let translate = ws.dir("translate");
    ok(&[
        "translate", "--config", conf, "--out-dir", s(&translate), "--mapping", s(&mapping),
        "--corpus", s(&data.join("source.conll")), "--source-vectors", s(&src_vec), "--target-vectors", s(&tgt_vec),
    ]);
    let translated = translate.join("translated.conll");

    let src = ws.dir("m_src");
    ok(&[
        "train", "--config", conf, "--out-dir", s(&src), "--vectors", s(&src_vec), "--mapping", s(&mapping),
        "--corpus", s(&data.join("source.conll")), "--seed", seed, "--section", "source",
    ]);
    let trans = ws.dir("m_trans");
    ok(&[
        "train", "--config", conf, "--out-dir", s(&trans), "--vectors", s(&tgt_vec),
        "--corpus", s(&translated), "--seed", seed, "--section", "translated",
    ]);
    let teach = ws.dir("m_teach");
    ok(&[
        "finetune", "--config", conf, "--out-dir", s(&teach), "--vectors", s(&tgt_vec),
        "--model", s(&src.join("model.txt")), "--corpus", s(&translated), "--seed", seed,
    ]);
    let stu = ws.dir("m_stu");
    ok(&[
        "distill", "--config", conf, "--out-dir", s(&stu), "--vectors", s(&tgt_vec),
        "--unlabeled", s(&data.join("target_unlabeled.txt")), "--teacher", s(&teach.join("model.txt")),
        "--source-model", s(&src.join("model.txt")), "--translated-model", s(&trans.join("model.txt")), "--seed", seed,
    ]);
    [src, trans, teach, stu]
}

#[test]
fn command_chain_matches_pipeline_and_scores_itself() {
    let ws = Workspace::new();
    let data = ws.synth();
    for f in ["source.conll", "target_test.conll", "target_unlabeled.txt", "source.vec", "target.vec", "dictionary.tsv"] {
        assert!(data.join(f).is_file(), "synth did not write {f}");
    }
    let [src, trans, teach, stu] = manual_chain(&ws, &data, "3");
    for dir in [&src, &trans, &teach, &stu] {
        assert!(dir.join("train_log.txt").is_file());
    }
    assert!(stu.join("soft_labels.bin").is_file());
    assert!(fs::read_to_string(stu.join("pseudo_labels.conll")).unwrap().starts_with("# unitrans-pseudo 1"));

    // Pipeline over the same files and seed.
    let pipe_conf = ws.dir("pipe.conf");
    fs::write(
        &pipe_conf,
        format!(
            "{SMALL}paths.source = data/source.conll\npaths.source_vectors = data/source.vec\n\
             paths.target_vectors = data/target.vec\npaths.unlabeled = data/target_unlabeled.txt\n\
             paths.test = data/target_test.conll\n"
        ),
    )
    .unwrap();
    let pipe = ws.dir("pipe");
    ok(&[
        "pipeline", "--config", s(&pipe_conf), "--out-dir", s(&pipe), "--seeds", "3",
        "--variant", "model_transfer", "--variant", "data_transfer", "--variant", "teacher_only", "--variant", "full",
    ]);
    for (variant, dir) in [("model_transfer", &src), ("data_transfer", &trans), ("teacher_only", &teach), ("full", &stu)] {
        let piped = fs::read(pipe.join("runs").join(variant).join("seed-3").join("model.txt")).unwrap();
        let manual = fs::read(dir.join("model.txt")).unwrap();
        assert!(piped == manual, "{variant}: pipeline model differs from the manual command chain");
    }
    assert_eq!(
        fs::read(pipe.join("mapping.txt")).unwrap(),
        fs::read(ws.dir("align").join("mapping.txt")).unwrap()
    );
    assert_eq!(
        fs::read(pipe.join("translated.conll")).unwrap(),
        fs::read(ws.dir("translate").join("translated.conll")).unwrap()
    );

    // Predict with the student, then score the predictions against themselves.
    let pred = ws.dir("pred");
    ok(&[
        "predict", "--config", s(&ws.config), "--out-dir", s(&pred), "--vectors", s(&data.join("target.vec")),
        "--model", s(&stu.join("model.txt")), "--input", s(&data.join("target_test.conll")),
    ]);
    let predictions = pred.join("predictions.conll");
    let piped_predictions = pipe.join("runs").join("full").join("seed-3").join("predictions.conll");
    assert_eq!(fs::read(&predictions).unwrap(), fs::read(piped_predictions).unwrap());
    let eval = ws.dir("eval");
    let out = ok(&["eval", "--out-dir", s(&eval), "--gold", s(&predictions), "--predicted", s(&predictions)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall"));
    let report = fs::read_to_string(eval.join("report.txt")).unwrap();
    assert!(report.starts_with("# unitrans-report 1\n"));
    assert!(report.lines().any(|l| l == "f1=1.000000"), "{report}");

    // Scoring against the real gold works the same way.
    let out = ok(&["eval", "--out-dir", s(&eval), "--gold", s(&data.join("target_test.conll")), "--predicted", s(&predictions)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall"));
}

#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::new();
    let data = ws.synth();
    let run = |name: &str| {
        let out = ws.dir(name);
        ok(&[
            "train", "--config", s(&ws.config), "--out-dir", s(&out), "--vectors", s(&data.join("target.vec")),
            "--corpus", s(&data.join("target_test.conll")), "--seed", "5",
        ]);
        (fs::read(out.join("model.txt")).unwrap(), fs::read(out.join("train_log.txt")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
    let again = ws.dir("data2");
    ok(&["synth", "--config", s(&ws.config), "--out-dir", s(&again)]);
    for f in ["source.conll", "target.vec", "target_unlabeled.txt"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn out_dir_comes_from_the_environment() {
    let ws = Workspace::new();
    let target = ws.dir("from_env");
    let out = unitrans(&["synth", "--config", s(&ws.config)], &[("UNITRANS_OUT_DIR", &target)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("source.conll").is_file());
}

#[test]
fn disjoint_vocabularies_exit_with_infeasible() {
    let ws = Workspace::new();
    let (a, b) = (ws.dir("a.vec"), ws.dir("b.vec"));
    fs::write(&a, "2 2\nhouse 1 0\ntree 0 1\n").unwrap();
    fs::write(&b, "2 2\nHaus 1 0\nBaum 0 1\n").unwrap();
    let out = unitrans(
        &["align", "--out-dir", s(&ws.dir("o")), "--source-vectors", s(&a), "--target-vectors", s(&b)],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_invocations_fail() {
    let ws = Workspace::new();
    let out = unitrans(&["synth", "--no-such-flag"], &[]);
    assert!(!out.status.success());
    let out = unitrans(&["synth", "--config", s(&ws.config), "--set", "synth.no_such_key=1", "--out-dir", s(&ws.dir("x"))], &[]);
    assert_eq!(out.status.code(), Some(4));
    let out = unitrans(&["eval", "--gold", s(&ws.dir("missing.conll")), "--predicted", s(&ws.dir("missing.conll")), "--out-dir", s(&ws.dir("x"))], &[]);
    assert_eq!(out.status.code(), Some(6));
}
