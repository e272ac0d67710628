//! Harness pieces for the acceptance suite: per-criterion PASS/FAIL lines,
//! a runner for the shipped binary, and the shared overfit pipeline.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

/// Run a criterion body and print exactly one PASS/FAIL line for it.
pub fn criterion<F: FnOnce()>(id: u32, name: &str, body: F) {
    let outcome = catch_unwind(AssertUnwindSafe(body));
    match &outcome {
        Ok(()) => println!("ACCEPTANCE {id:02} ({name}): PASS"),
        Err(_) => println!("ACCEPTANCE {id:02} ({name}): FAIL"),
    }
    if let Err(panic) = outcome {
        resume_unwind(panic);
    }
}

/// Run the `radsum` binary, asserting success; returns captured stdout.
pub fn radsum_cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_radsum"))
        .args(args)
        .output()
        .expect("spawn radsum");
    assert!(
        out.status.success(),
        "radsum {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub struct OverfitArtifacts {
    // owns the tempdir so the checkpoint outlives the run
    _dir: tempfile::TempDir,
    pub ckpt: PathBuf,
    pub final_l_ge: f32,
    pub eval_r1: f64,
    pub train_secs: f64,
}

/// The criterion-6 pipeline, driven through the CLI exactly as a user would:
/// synth 32 records, build a vocabulary, train 300 steps at d = 64 with
/// 2-layer text encoder and decoder, then evaluate with greedy decoding.
pub fn run_overfit_pipeline() -> OverfitArtifacts {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let corpus = path("c32.jsonl");
    radsum_cli(&["synth", "--out", &s(&corpus), "--count", "32", "--seed", "0"]);

    let vocab = path("vocab.txt");
    radsum_cli(&[
        "build-vocab",
        "--corpus",
        &s(&corpus),
        "--out",
        &s(&vocab),
        "--max-size",
        "2048",
    ]);

    let config = path("train.cfg");
    std::fs::write(
        &config,
        "d = 64\ntext_layers = 2\nheads = 4\nff = 256\ngat_layers = 2\ngat_heads = 4\n\
         ce_layers = 2\ndec_layers = 2\ndec_heads = 4\ndec_ff = 256\n\
         max_steps = 300\nbatch_size = 8\nlr = 1e-3\nseed = 0\n",
    )
    .unwrap();

    let ckpt = path("model.ckpt");
    let log = path("train.log");
    let start = Instant::now();
    radsum_cli(&[
        "train",
        "--corpus",
        &s(&corpus),
        "--vocab",
        &s(&vocab),
        "--config",
        &s(&config),
        "--out",
        &s(&ckpt),
        "--log",
        &s(&log),
    ]);
    let train_secs = start.elapsed().as_secs_f64();

    let log_text = std::fs::read_to_string(&log).unwrap();
    let last: serde_json::Value =
        serde_json::from_str(log_text.lines().last().expect("non-empty log")).unwrap();
    assert_eq!(last["step"], 300);
    let final_l_ge = last["l_ge"].as_f64().unwrap() as f32;

    let report = path("eval.jsonl");
    radsum_cli(&[
        "evaluate",
        "--ckpt",
        &s(&ckpt),
        "--corpus",
        &s(&corpus),
        "--report",
        &s(&report),
        "--beam",
        "1",
    ]);
    let report_text = std::fs::read_to_string(&report).unwrap();
    let aggregate: serde_json::Value =
        serde_json::from_str(report_text.lines().next().expect("non-empty report")).unwrap();
    assert_eq!(aggregate["kind"], "aggregate");
    let eval_r1 = aggregate["r1"].as_f64().unwrap();

    OverfitArtifacts {
        _dir: dir,
        ckpt,
        final_l_ge,
        eval_r1,
        train_secs,
    }
}
