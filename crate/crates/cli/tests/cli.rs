use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use punet::checkpoint::load_model;
use punet::eval::params_report;
use punet::model::FineTuneMode;
use punet::ParamGroup;
use punet_cli::{CliError, RunConfig, RESOLVED_CONFIG};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn punet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_punet"))
        .current_dir(dir)
        .env_remove("PUNET_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = punet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_smoke<'a>(args: &[&'a str], cfg: &'a str) -> Vec<&'a str> {
    let mut v = vec!["--config", cfg];
    v.extend_from_slice(args);
    v
}

/// Relative path → contents of every file below `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn seed_precedence_is_cli_then_file_then_env_then_zero() {
    let mut c = RunConfig {
        seed: Some(5),
        ..RunConfig::default()
    };
    assert_eq!(c.clone().resolve_seed(Some(9), Some("7")).unwrap(), 9);
    assert_eq!(c.clone().resolve_seed(None, Some("7")).unwrap(), 5);
    c.seed = None;
    assert_eq!(c.clone().resolve_seed(None, Some("7")).unwrap(), 7);
    assert_eq!(c.clone().resolve_seed(None, None).unwrap(), 0);
    let err = c.resolve_seed(None, Some("seven")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = RunConfig::from_json(r#"{"height": 32, "hieght": 32}"#, Path::new("c.json")).unwrap_err();
    assert!(matches!(err, CliError::ConfigFile { .. }));
    assert_eq!(err.exit_code(), 2);
    let cfg = RunConfig::from_json(r#"{"height": 32}"#, Path::new("c.json")).unwrap();
    assert_eq!(cfg.height, 32);
    assert_eq!(cfg.width, RunConfig::default().width);
}

#[test]
fn resolved_config_round_trips() {
    let cfg = RunConfig::load(Some(&smoke())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cfg.write_resolved(dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(RunConfig::from_json(&text, Path::new("r.json")).unwrap(), cfg);
}

#[test]
fn bad_config_and_missing_files_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(punet(dir.path(), &["--config", "bad.json", "gradcheck"]).status.code(), Some(2));
    assert_eq!(punet(dir.path(), &["--config", "absent.json", "gradcheck"]).status.code(), Some(4));
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let out = punet(dir.path(), &with_smoke(&["eval", "--from", "nowhere", "--data", "nowhere"], cfg));
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
    let out = punet(dir.path(), &["--seed", "-1", "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_seed_that_is_not_a_number_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_punet"))
        .current_dir(dir.path())
        .env("PUNET_SEED", "abc")
        .args(["synth", "--out", "d"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        ok(dir.path(), &with_smoke(&["--seed", "7", "synth", "--domain", "target", "--out", name], cfg));
    }
    ok(dir.path(), &with_smoke(&["--seed", "8", "synth", "--domain", "target", "--out", "c"], cfg));
    let (a, b, c) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")), tree(&dir.path().join("c")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(dir.path().join("a/train").is_dir() && dir.path().join("a/test").is_dir());
    assert!(dir.path().join("a").join(RESOLVED_CONFIG).is_file());
}

#[test]
fn env_seed_is_used_when_no_other_seed_is_given() {
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_smoke(&["--seed", "3", "synth", "--out", "flag"], cfg));
    let out = Command::new(env!("CARGO_BIN_EXE_punet"))
        .current_dir(dir.path())
        .env("PUNET_SEED", "3")
        .args(["--config", cfg, "synth", "--out", "env"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(tree(&dir.path().join("flag")), tree(&dir.path().join("env")));
}

#[test]
fn synth_prints_sample_counts() {
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &with_smoke(&["synth", "--out", "s"], cfg));
    // 6 scenes × (6 raters + 1 aggregate).
    assert!(text.contains("source: 6 scenes, 6 raters, 42 samples"), "{text}");
}

fn param_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    tree(&dir.join("params"))
}

#[test]
fn interrupted_pretraining_resumes_to_the_same_weights() {
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_smoke(&["synth", "--out", "src"], cfg));
    ok(dir.path(), &with_smoke(&["pretrain", "--data", "src", "--out", "whole"], cfg));
    let stopped = ok(dir.path(), &with_smoke(&["pretrain", "--data", "src", "--out", "split", "--stop-after", "1"], cfg));
    assert!(stopped.contains("stopped after 1 of 2 epochs"), "{stopped}");
    ok(dir.path(), &with_smoke(&["pretrain", "--data", "src", "--out", "split", "--resume"], cfg));
    let (w, s) = (dir.path().join("whole"), dir.path().join("split"));
    assert_eq!(param_files(&w), param_files(&s));
    assert_eq!(fs::read(w.join("train_log.csv")).unwrap(), fs::read(s.join("train_log.csv")).unwrap());
}

#[test]
fn finetune_modes_train_the_expected_parameters() {
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_smoke(&["synth", "--out", "src"], cfg));
    ok(dir.path(), &with_smoke(&["synth", "--domain", "target", "--out", "tgt"], cfg));
    ok(dir.path(), &with_smoke(&["pretrain", "--data", "src", "--out", "pre"], cfg));
    let (_, pre) = load_model::<f32>(&dir.path().join("pre")).unwrap();

    ok(dir.path(), &with_smoke(&["finetune", "--from", "pre", "--data", "tgt/train", "--out", "head", "--mode", "head"], cfg));
    let (net, head) = load_model::<f32>(&dir.path().join("head")).unwrap();
    let c = net.config();
    assert_eq!(head.count_trainable(), c.channels(0) * c.classes + c.classes);
    for (name, p) in pre.iter().filter(|(_, p)| p.group != ParamGroup::Head) {
        assert_eq!(p.value, head.get(name).unwrap().value, "{name}");
    }

    let text = ok(
        dir.path(),
        &with_smoke(&["finetune", "--from", "pre", "--data", "tgt/train", "--out", "prompt", "--mode", "prompt"], cfg),
    );
    assert!(text.starts_with("trainable "), "{text}");
    let (net, prompt) = load_model::<f32>(&dir.path().join("prompt")).unwrap();
    let report = params_report(&net, &prompt);
    assert_eq!(prompt.count_trainable(), report.trainable(FineTuneMode::PromptAndHead));
    assert_eq!(prompt.count_trainable(), report.prompt_formula);

    let text = ok(dir.path(), &with_smoke(&["eval", "--from", "prompt", "--data", "tgt/test", "--out", "rep"], cfg));
    assert!(text.contains("P_c"));
    let csv = fs::read_to_string(dir.path().join("rep/eval_matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 49);
    assert!(dir.path().join("rep/params.txt").is_file());
    // One test scene with seven prompts.
    assert_eq!(fs::read_dir(dir.path().join("rep/overlays")).unwrap().count(), 7);
}

#[test]
fn prompt_mode_refuses_models_where_prompts_exceed_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("tiny.json"),
        r#"{"height":32,"width":32,"base_channels":4,"source_scenes":2,"train_scenes":2,"test_scenes":1,
           "pretrain_epochs":1,"pretrain_drops":[],"finetune_epochs":1,"finetune_drops":[]}"#,
    )
    .unwrap();
    let args = |a: &[&'static str]| {
        let mut v = vec!["--config", "tiny.json"];
        v.extend_from_slice(a);
        v
    };
    ok(dir.path(), &args(&["synth", "--out", "src"]));
    ok(dir.path(), &args(&["synth", "--domain", "target", "--out", "tgt"]));
    ok(dir.path(), &args(&["pretrain", "--data", "src", "--out", "pre"]));
    let out = punet(
        dir.path(),
        &args(&["finetune", "--from", "pre", "--data", "tgt/train", "--out", "ft", "--mode", "prompt"]),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("ft/manifest.json").exists());
}

#[test]
fn ablate_locations_writes_a_three_row_table() {
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_smoke(&["ablate", "locations", "--seeds", "1", "--out", "abl"], cfg));
    let csv = fs::read_to_string(dir.path().join("abl/ablation_locations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(dir.path().join("abl/ablation_locations_runs.csv").is_file());
    assert!(dir.path().join("abl/ablation_locations_summary.txt").is_file());
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--help"]);
    for cmd in ["synth", "pretrain", "finetune", "eval", "ablate", "gradcheck"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
