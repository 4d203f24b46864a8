use std::process::{Command, Output};

fn run(bin: &str, args: &[&str]) -> Output {
    let out = Command::new(bin).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{bin} {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn generated_model_drives_a_simulated_edge_run() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("tiny.celm");
    let prompts = dir.path().join("p.txt");
    let m = model.to_str().unwrap();
    run(
        env!("CARGO_BIN_EXE_ce-genmodel"),
        &["--out", m, "--seed", "3", "--layers", "4", "--hidden-dim", "32", "--heads", "4", "--ffn-dim", "64", "--max-seq-len", "64", "--exits", "1,2", "--split-layer", "2"],
    );
    run(env!("CARGO_BIN_EXE_bench"), &["prompts", "--count", "3", "--min-len", "4", "--max-len", "8", "--seed", "1", "--out", prompts.to_str().unwrap()]);

    let edge = |mode: &str| {
        let trace = dir.path().join(format!("{mode}.jsonl"));
        stdout(&run(
            env!("CARGO_BIN_EXE_ce-edge"),
            &["--model", m, "--mode", mode, "--theta", "1.01", "--max-new-tokens", "6", "--prompts", prompts.to_str().unwrap(), "--sim", "--trace-out", trace.to_str().unwrap()],
        ))
    };
    // Above-one threshold sends every token to the cloud, so both modes reproduce the full model.
    let collab = edge("collaborative");
    assert_eq!(collab.lines().count(), 3);
    assert_eq!(collab, edge("cloud-only"));
    let trace = dir.path().join("collaborative.jsonl");
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 3);

    let hist = stdout(&run(env!("CARGO_BIN_EXE_bench"), &["hist", trace.to_str().unwrap()]));
    assert!(!hist.is_empty());
}

#[test]
fn byte_calculator_reports_the_reduction() {
    let out = stdout(&run(env!("CARGO_BIN_EXE_bench"), &["bytes", "--prompt-len", "30", "--new-tokens", "100", "--hidden-dim", "4096"]));
    let payload = |strategy: &str| -> f64 {
        let line = out.lines().find(|l| l.starts_with(strategy)).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert_eq!(payload("naive-split"), 130_252_800.0);
    assert_eq!(payload("collaborative"), 1_064_960.0);
    let reduction = 1.0 - payload("collaborative") / payload("naive-split");
    assert!((reduction - 0.9918).abs() < 5e-5, "{reduction}");
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_ce-edge")).args(["--theta", "nan", "--sim", "--prompts", "/nonexistent"]).output().unwrap();
    assert!(!out.status.success());
}
