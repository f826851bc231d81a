use std::path::Path;
use std::process::{Command, Output};

use ckptmerge::io::container::read_container;
use ckptmerge::io::manifest::read_merge_manifest;
use ckptmerge::naming::parse_model_name;
use ckptmerge::pipeline::ProcedureReport;

fn ckptmerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckptmerge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ckptmerge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let out = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", out, "--steps", "600", "--every", "50"];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("run.json").to_str().unwrap().to_owned()
}

#[test]
fn synth_writes_run_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = synth(tmp.path(), &["--seed", "4"]);
    assert!(Path::new(&run).exists());
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);
    let theta = read_container(tmp.path().join("checkpoints/checkpoint-600.safetensors")).unwrap();
    assert_eq!(theta.get("theta").unwrap().shape(), &[64]);
}

#[test]
fn merge_every_method() {
    let tmp = tempfile::tempdir().unwrap();
    let run = synth(&tmp.path().join("run"), &[]);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let cases: [(&[&str], &str); 6] = [
        (&["--method", "uniform", "--k", "4"], "last_4_unweighted"),
        (
            &["--method", "mwa", "--metric", "loss", "--penalty", "0.7", "--k", "5", "--interval", "2"],
            "last_5_2_loss_pf-0_7",
        ),
        (&["--method", "mwa", "--metric", "steps", "--penalty", "1.05", "--k", "3"], "last_3_steps_pf-1_05"),
        (&["--method", "ties", "--k", "3", "--base", "last"], "ties_last_3_base_last"),
        (&["--method", "dare_ties", "--k", "4", "--seed", "9"], "dare_ties_last_4_base_first"),
        (&["--method", "slerp", "--k", "2", "--slerp-t", "0.25"], "slerp_last_2_base_first"),
    ];
    for (flags, name) in cases {
        let mut args = vec!["merge", "--run-manifest", &run, "--out", out];
        args.extend_from_slice(flags);
        let stdout = ok(&args);
        assert!(stdout.starts_with(name), "{stdout}");
        let dir = Path::new(out).join(name);
        let manifest = read_merge_manifest(dir.join("manifest.json")).unwrap();
        assert_eq!(manifest.name, name);
        parse_model_name(name).unwrap();
        if let Some(sum) = manifest.weight_sum() {
            assert!((sum - 1.0).abs() < 1e-9);
        }
        read_container(dir.join(&manifest.container)).unwrap();
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = synth(&tmp.path().join("run"), &[]);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let missing = ckptmerge(&["merge", "--run-manifest", "/no/such/run.json", "--k", "2", "--out", out]);
    assert_eq!(missing.status.code(), Some(3));

    let too_deep = ckptmerge(&["merge", "--run-manifest", &run, "--k", "40", "--out", out]);
    assert_eq!(too_deep.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&too_deep.stderr).contains("40"));

    let bad_penalty = ckptmerge(&["merge", "--run-manifest", &run, "--k", "2", "--penalty", "-1", "--out", out]);
    assert_eq!(bad_penalty.status.code(), Some(2));

    let bad_name = ckptmerge(&["name", "parse", "last_01_unweighted"]);
    assert_eq!(bad_name.status.code(), Some(2));

    let unstable = ckptmerge(&["synth", "--lr", "0.5", "--out", out]);
    assert_eq!(unstable.status.code(), Some(2));
}

#[test]
fn name_subcommand() {
    let parsed = ok(&["name", "parse", "last_4_3_loss_pf-0_8"]);
    assert_eq!(parsed.trim(), r#"{"k":4,"interval":3,"scheme":"loss","penalty":0.8}"#);
    let formatted = ok(&["name", "format", "--k", "10", "--metric", "steps", "--penalty", "1.05"]);
    assert_eq!(formatted.trim(), "last_10_steps_pf-1_05");
    let plain = ok(&["name", "format", "--k", "5", "--interval", "3"]);
    assert_eq!(plain.trim(), "last_5_3_unweighted");
}

#[test]
fn sweep_with_synthetic_evaluator() {
    let tmp = tempfile::tempdir().unwrap();
    let run = synth(&tmp.path().join("run"), &["--seed", "2"]);
    let report_path = tmp.path().join("report.json");
    ok(&[
        "sweep",
        "--run-manifest",
        &run,
        "--ks",
        "2,3,5",
        "--ms",
        "2",
        "--penalties",
        "0.7,0.9,1.0",
        "--shortlist",
        "1",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    let report: ProcedureReport =
        serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report.uniform.rows.len(), 3);
    assert_eq!(report.shortlist.len(), 1);
    // one uniform reference plus 2 metrics x 3 penalties
    assert_eq!(report.weighted.rows.len(), 7);
    for row in report.uniform.rows.iter().chain(&report.weighted.rows) {
        parse_model_name(&row.name).unwrap();
    }
}

#[cfg(unix)]
#[test]
fn sweep_with_external_command() {
    let tmp = tempfile::tempdir().unwrap();
    let run = synth(&tmp.path().join("run"), &["--seed", "5"]);
    let out = ok(&[
        "sweep",
        "--run-manifest",
        &run,
        "--ks",
        "2,4",
        "--ms",
        "2",
        "--penalties",
        "1.0",
        "--evaluator",
        "external-command",
        "--eval-command",
        "sh",
        "--eval-arg=-c",
        "--eval-arg",
        "wc -c < \"$1\"",
        "--eval-arg",
        "score",
        "--orientation",
        "lower",
        "--skip-initial-validation",
    ]);
    let report: ProcedureReport = serde_json::from_str(&out).unwrap();
    assert!(report.initial_validation.is_none());
    assert!(report.evaluator.contains("sh"));
    assert!(report.weighted.rows.iter().all(|r| r.score > 0.0));
}
