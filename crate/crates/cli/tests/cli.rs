use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn selkd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selkd"))
        .current_dir(dir)
        .env_remove("SELKD_OUT")
        .args(args)
        .output()
        .expect("run selkd")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = selkd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    selkd(dir, args).status.code().unwrap()
}

const CORPUS: [&str; 6] = ["--src", "o/train.src", "--raw", "o/train.raw", "--kd", "o/train.kd"];

fn with_corpus<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(CORPUS.iter()).chain(tail).copied().collect()
}

/// A small synthetic corpus plus a quickly trained evaluator and scores.
fn prepared() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "o", "--n", "150", "--heldout", "20"]);
    ok(d, &with_corpus(&["train-evaluator", "--out", "o"], &["--epochs", "2", "--hidden-dim", "12"]));
    ok(d, &with_corpus(&["score", "--out", "o"], &["--checkpoint", "o/evaluator.ckpt.json"]));
    tmp
}

#[test]
fn help_documents_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = selkd(tmp.path(), &["--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    assert!(help.contains("Exit codes"));
    assert!(help.contains("checksum"));
    assert_eq!(code(tmp.path(), &["synth", "--bogus"]), 2);
    assert_eq!(code(tmp.path(), &["synth", "--out", "x", "--mode-weights", "0.5,-1"]), 2);
}

#[test]
fn degenerate_selection_copies_one_side() {
    let tmp = prepared();
    let d = tmp.path();
    ok(d, &with_corpus(&["select", "--out", "hi"], &["--scores", "o/scores.tsv", "--fixed-threshold", "1.01"]));
    assert_eq!(fs::read(d.join("hi/selected.tgt")).unwrap(), fs::read(d.join("o/train.kd")).unwrap());
    assert_eq!(fs::read(d.join("hi/selected.src")).unwrap(), fs::read(d.join("o/train.src")).unwrap());
    ok(d, &with_corpus(&["select", "--out", "lo"], &["--scores", "o/scores.tsv", "--fixed-threshold", "0"]));
    assert_eq!(fs::read(d.join("lo/selected.tgt")).unwrap(), fs::read(d.join("o/train.raw")).unwrap());
    let decisions = fs::read_to_string(d.join("lo/decisions.tsv")).unwrap();
    assert_eq!(decisions.lines().count(), 150);
    assert!(decisions.lines().all(|l| l.split('\t').nth(1) == Some("RAW")));
}

#[test]
fn scores_are_identical_for_any_thread_count() {
    let tmp = prepared();
    let d = tmp.path();
    ok(d, &with_corpus(&["score", "--out", "t4", "--threads", "4"], &["--checkpoint", "o/evaluator.ckpt.json"]));
    assert_eq!(fs::read(d.join("t4/scores.tsv")).unwrap(), fs::read(d.join("o/scores.tsv")).unwrap());
    ok(d, &with_corpus(&["metrics", "--out", "m1"], &["--scores", "o/scores.tsv", "--pharaoh"]));
    ok(d, &with_corpus(&["metrics", "--out", "m3", "--threads", "3"], &["--scores", "o/scores.tsv", "--pharaoh"]));
    for f in ["metrics.tsv", "metrics.json", "alignments.raw.txt"] {
        assert_eq!(fs::read(d.join("m1").join(f)).unwrap(), fs::read(d.join("m3").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn student_and_decode_stages() {
    let tmp = prepared();
    let d = tmp.path();
    let student = with_corpus(
        &["train-student", "--out", "o"],
        &["--scores", "o/scores.tsv", "--updates", "30", "--hidden-dim", "12", "--init", "o/evaluator.init.ckpt.json"],
    );
    ok(d, &student);
    let log = fs::read_to_string(d.join("o/student.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 31);
    ok(d, &["decode", "--out", "o", "--checkpoint", "o/student.ckpt.json", "--input", "o/test.src", "--reference", "o/test.ref"]);
    assert_eq!(fs::read_to_string(d.join("o/decode.hyp")).unwrap().lines().count(), 20);
    assert!(d.join("o/decode.eval.json").exists());
    ok(d, &["report", "--out", "o"]);
    let report = fs::read_to_string(d.join("o/report.md")).unwrap();
    assert!(report.contains("## Scores") && report.contains("decode"));

    // architecture differs from the initializing checkpoint
    let mut bad = student.clone();
    bad.extend(["--embed-dim", "3", "--name", "bad"]);
    assert_eq!(code(d, &bad), 2);
    assert!(!d.join("o/bad.ckpt.json").exists());
    // schedule without scores
    let no_scores = with_corpus(&["train-student", "--out", "o"], &["--updates", "5"]);
    assert_eq!(code(d, &no_scores), 2);
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = prepared();
    let d = tmp.path();
    // missing input
    assert_eq!(code(d, &["score", "--out", "x", "--src", "nope", "--raw", "nope", "--kd", "nope", "--checkpoint", "nope"]), 3);
    // input edited after the manifest recorded it
    fs::copy(d.join("o/train.raw"), d.join("raw.bak")).unwrap();
    let mut raw = fs::read_to_string(d.join("o/train.raw")).unwrap();
    raw.insert_str(0, "t3 ");
    fs::write(d.join("o/train.raw"), raw).unwrap();
    assert_eq!(code(d, &with_corpus(&["score", "--out", "x"], &["--checkpoint", "o/evaluator.ckpt.json"])), 4);
    assert_eq!(code(d, &["rerun", "o/manifest.score.json", "--into", "x"]), 4);
    fs::copy(d.join("raw.bak"), d.join("o/train.raw")).unwrap();
    ok(d, &["rerun", "o/manifest.score.json", "--into", "x"]);
    assert_eq!(fs::read(d.join("x/scores.tsv")).unwrap(), fs::read(d.join("o/scores.tsv")).unwrap());

    // line counts disagree
    fs::create_dir(d.join("bad")).unwrap();
    fs::write(d.join("bad/s"), "a b\nc\n").unwrap();
    fs::write(d.join("bad/r"), "x y\n").unwrap();
    fs::write(d.join("bad/k"), "x y\nz\n").unwrap();
    assert_eq!(code(d, &["train-evaluator", "--out", "bad", "--src", "bad/s", "--raw", "bad/r", "--kd", "bad/k"]), 5);
    // a checkpoint trained on another vocabulary
    fs::write(d.join("bad/r"), "x y\nz\n").unwrap();
    assert_eq!(code(d, &["score", "--out", "bad", "--src", "bad/s", "--raw", "bad/r", "--kd", "bad/k", "--checkpoint", "o/evaluator.ckpt.json"]), 5);
    // no target fits its frames
    fs::write(d.join("bad/s"), "a\nb\n").unwrap();
    fs::write(d.join("bad/r"), "x x x\ny y y\n").unwrap();
    fs::write(d.join("bad/k"), "x x x\ny y y\n").unwrap();
    assert_eq!(code(d, &["train-evaluator", "--out", "bad", "--src", "bad/s", "--raw", "bad/r", "--kd", "bad/k"]), 6);
    assert!(!d.join("bad/evaluator.ckpt.json").exists());
    assert!(!d.join("bad/manifest.train-evaluator.json").exists());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_selkd"))
        .current_dir(tmp.path())
        .env("SELKD_OUT", "envdir")
        .args(["synth", "--n", "10", "--heldout", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("envdir/train.src").exists());
    assert!(tmp.path().join("envdir/manifest.synth.json").exists());
    assert!(!tmp.path().join("envdir/test.src").exists());
}
