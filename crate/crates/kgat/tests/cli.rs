//! End-to-end tests of the `kgat` binary: every subcommand, the exit-code
//! contract, and rerun determinism, all on corpora small enough to keep
//! the whole file fast.
//!
//! Exit codes under test: 0 success (including `--help`/`--version`),
//! 1 usage error, 2 data or file-format error. Code 3 (numeric failure)
//! guards internal invariants — empty attention support, gradient
//! mismatches — that well-formed inputs cannot trigger from the command
//! line, so it has no test here; the mapping itself is covered by unit
//! tests on the error type.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Workspace with a generated corpus, reused by the heavier tests.
struct Workspace {
    dir: tempfile::TempDir,
    train: PathBuf,
    dev: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(&[
        "gen-synth",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--seed",
        "11",
        "--train",
        "40",
        "--dev",
        "16",
    ]);
    assert_eq!(code(&out), 0, "gen-synth failed: {}", stderr(&out));
    Workspace {
        train: dir.path().join("train.jsonl"),
        dev: dir.path().join("dev.jsonl"),
        dir,
    }
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(
        &path,
        "dim = 8\nkernels = 5\nmax_len = 64\nbatch_size = 4\n\
         accumulate_steps = 2\nlearning_rate = 0.01\nepochs = 2\n",
    )
    .expect("write config");
    path
}

#[test]
fn help_and_version_succeed() {
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = stdout(&help);
    for sub in [
        "gen-synth",
        "train",
        "eval",
        "train-ranker",
        "rank",
        "gradcheck",
        "analyze",
    ] {
        assert!(text.contains(sub), "--help must list {sub}:\n{text}");
    }

    let version = run(&["--version"]);
    assert_eq!(code(&version), 0);
    assert!(stdout(&version).contains("kgat"));

    let sub_help = run(&["train", "--help"]);
    assert_eq!(code(&sub_help), 0);
    assert!(stdout(&sub_help).contains("--config"));
}

#[test]
fn usage_errors_exit_one() {
    // No subcommand at all.
    assert_eq!(code(&run(&[])), 1);
    // Unknown subcommand and unknown flag.
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["gen-synth", "--bogus-flag", "1"])), 1);
    // Missing required arguments.
    assert_eq!(code(&run(&["train"])), 1);
    assert_eq!(code(&run(&["eval", "--model", "x.ckpt"])), 1);
    // Invalid values for typed flags.
    assert_eq!(code(&run(&["gen-synth", "--out-dir", "/tmp/x", "--seed", "pony"])), 1);
    assert_eq!(code(&run(&["--threads", "0", "gradcheck"])), 1);
    // Unknown attention mode reaches the run itself but is still usage.
    let ws = workspace();
    let out = run(&[
        "train",
        "--train",
        ws.train.to_str().unwrap(),
        "--dev",
        ws.dev.to_str().unwrap(),
        "--mode",
        "bogus",
        "--out",
        ws.dir.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("unknown mode"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let missing = dir.path().join("missing.jsonl");
    let ckpt = dir.path().join("m.ckpt");

    // Nonexistent inputs.
    let out = run(&[
        "train",
        "--train",
        missing.to_str().unwrap(),
        "--dev",
        missing.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = run(&[
        "eval",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // Broken JSON.
    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, "{not json\n").unwrap();
    let out = run(&[
        "train",
        "--train",
        garbled.to_str().unwrap(),
        "--dev",
        garbled.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // Valid JSON violating the record rules: a verifiable claim without
    // golden evidence.
    let invalid = dir.path().join("invalid.jsonl");
    std::fs::write(
        &invalid,
        concat!(
            r#"{"claim_id":"c1","claim":"e1 was a1","label":"SUPPORTS","#,
            r#""candidates":[{"doc_id":"e1","sent_idx":0,"title":"e1","text":"e1 was a1"}],"#,
            r#""golden":[]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = run(&[
        "train",
        "--train",
        invalid.to_str().unwrap(),
        "--dev",
        invalid.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("golden"), "{}", stderr(&out));

    // Malformed config file.
    let ws = workspace();
    let bad_config = dir.path().join("bad.conf");
    std::fs::write(&bad_config, "dim = eight\n").unwrap();
    let out = run(&[
        "train",
        "--train",
        ws.train.to_str().unwrap(),
        "--dev",
        ws.dev.to_str().unwrap(),
        "--config",
        bad_config.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn gen_synth_is_deterministic_and_reports_counts() {
    let a = workspace();
    let b = workspace();
    assert_eq!(read(&a.train), read(&b.train), "same seed, same train bytes");
    assert_eq!(read(&a.dev), read(&b.dev), "same seed, same dev bytes");

    let text = stdout(&run(&[
        "gen-synth",
        "--out-dir",
        a.dir.path().join("again").to_str().unwrap(),
        "--seed",
        "11",
        "--train",
        "40",
        "--dev",
        "16",
    ]));
    assert!(text.contains("train=40"), "{text}");
    assert!(text.contains("dev=16"), "{text}");
    assert!(text.contains("train_supports="), "{text}");

    // A different seed must change the corpus.
    let c = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-synth",
        "--out-dir",
        c.path().to_str().unwrap(),
        "--seed",
        "12",
        "--train",
        "40",
        "--dev",
        "16",
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(read(&a.train), read(&c.path().join("train.jsonl")));
}

#[test]
fn gradcheck_covers_every_mode() {
    let out = run(&["gradcheck", "--dim", "6", "--kernels", "5", "--stride", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for mode in ["mode=full", "mode=node", "mode=edge", "mode=gat"] {
        assert!(text.contains(mode), "missing {mode}:\n{text}");
    }
    assert!(!text.contains("FAIL"), "{text}");

    let single = run(&["gradcheck", "--mode", "edge", "--stride", "9"]);
    assert_eq!(code(&single), 0, "{}", stderr(&single));
    assert!(stdout(&single).contains("mode=edge"));
    assert!(!stdout(&single).contains("mode=full"));
}

#[test]
fn full_workflow_round_trips() {
    let ws = workspace();
    let dir = ws.dir.path();
    let config = write_config(dir);
    let ckpt = dir.join("model.ckpt");
    let history = dir.join("history.tsv");

    // Train.
    let out = run(&[
        "train",
        "--train",
        ws.train.to_str().unwrap(),
        "--dev",
        ws.dev.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        ckpt.to_str().unwrap(),
        "--history",
        history.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mode=full"), "{text}");
    assert!(text.contains("best_epoch="), "{text}");
    assert!(ckpt.exists() && history.exists());

    // Eval: stdout matches the written report, and a rerun is identical.
    let report = dir.join("report.txt");
    let eval_args = [
        "eval",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        ws.dev.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ];
    let first = run(&eval_args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(stdout(&first).as_bytes(), read(&report).as_slice());
    for key in [
        "label_accuracy=",
        "strict_score=",
        "evidence_recall=",
        "selection_recall1_micro=",
    ] {
        assert!(stdout(&first).contains(key), "missing {key}");
    }
    let second = run(&eval_args);
    assert_eq!(stdout(&first), stdout(&second), "eval must be deterministic");

    // Golden-evidence mode is a distinct report.
    let golden = run(&[
        "eval",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        ws.dev.to_str().unwrap(),
        "--golden-evidence",
    ]);
    assert_eq!(code(&golden), 0, "{}", stderr(&golden));
    assert!(stdout(&golden).contains("evidence_mode=golden"));

    // Analyze: entropy report, histogram, and a case export.
    let analysis = dir.join("analysis.txt");
    let out = run(&[
        "analyze",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        ws.dev.to_str().unwrap(),
        "--out",
        analysis.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for key in ["selection_entropy=", "edge_entropy=", "max_selection_histogram="] {
        assert!(text.contains(key), "missing {key}:\n{text}");
    }
    assert_eq!(text.as_bytes(), read(&analysis).as_slice());

    // Asking for a claim that is not there is a data error.
    let out = run(&[
        "analyze",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        ws.dev.to_str().unwrap(),
        "--claim",
        "no-such-claim",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn ranker_workflow_round_trips() {
    let ws = workspace();
    let dir = ws.dir.path();
    let ranker = dir.join("ranker.bin");

    let out = run(&[
        "train-ranker",
        "--train",
        ws.train.to_str().unwrap(),
        "--out",
        ranker.to_str().unwrap(),
        "--dim",
        "8",
        "--kernels",
        "5",
        "--epochs",
        "2",
        "--seed",
        "11",
    ]);
    assert_eq!(code(&out), 0, "train-ranker failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("epoch=1"), "{text}");
    assert!(text.contains("train_recall5="), "{text}");

    let ranked = dir.join("dev.ranked.jsonl");
    let out = run(&[
        "rank",
        "--ranker",
        ranker.to_str().unwrap(),
        "--data",
        ws.dev.to_str().unwrap(),
        "--out",
        ranked.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "rank failed: {}", stderr(&out));
    assert!(stdout(&out).contains("claims=16"), "{}", stdout(&out));

    // Same number of claims, same ids, scores rewritten by the ranker.
    let before = String::from_utf8(read(&ws.dev)).unwrap();
    let after = String::from_utf8(read(&ranked)).unwrap();
    assert_eq!(before.lines().count(), after.lines().count());
    assert_ne!(before, after, "reranking must reorder candidate lists");

    // Reranked output must itself load and evaluate.
    let config = write_config(dir);
    let ckpt = dir.join("model.ckpt");
    let out = run(&[
        "train",
        "--train",
        ws.train.to_str().unwrap(),
        "--dev",
        ranked.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
