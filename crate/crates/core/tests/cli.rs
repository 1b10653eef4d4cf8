mod common;

use std::path::Path;

use clap::CommandFactory;
use common::{emomatch, ok, snapshot};
use emomatch::cli::Cli;

fn bundle(root: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["gen-synthetic", "--out", name, "--seed", "1"];
    for (flag, default) in [("--per-class", "12"), ("--dim", "8")] {
        if !extra.contains(&flag) {
            args.extend([flag, default]);
        }
    }
    args.extend_from_slice(extra);
    ok(&emomatch(root, &args));
}

fn code(root: &Path, args: &[&str]) -> Option<i32> {
    emomatch(root, args).status.code()
}

#[test]
fn train_report_names_objective_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    ok(&emomatch(
        &dir,
        &["train", "--config", "config.toml", "--objective", "triplet-emosim", "--seed", "7", "--max-epochs", "2"],
    ));
    let report: toml::Table = std::fs::read_to_string(dir.join("train_report.toml")).unwrap().parse().unwrap();
    let run = report["runs"].as_array().unwrap()[0].as_table().unwrap();
    assert_eq!(run["objective"].as_str(), Some("triplet-emosim"));
    assert_eq!(run["seed"].as_integer(), Some(7));
    assert_eq!(report["config"]["loss"]["objective"].as_str(), Some("triplet-emosim"));
    assert!(run["test"]["MRR"].as_float().is_some());
    assert!(dir.join("model.ckpt").is_file());
}

#[test]
fn missing_feature_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    std::fs::remove_file(dir.join("music.emf")).unwrap();
    assert_eq!(code(&dir, &["train", "--config", "config.toml", "--max-epochs", "1"]), Some(2));
    assert_eq!(code(&dir, &["train", "--config", "absent.toml"]), Some(2));
}

#[test]
fn seed_sweep_writes_one_checkpoint_per_seed_and_an_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    let out = ok(&emomatch(
        &dir,
        &["train", "--config", "config.toml", "--seeds", "1,2,3,4,5", "--max-epochs", "1", "--checkpoint", "runs/m.ckpt"],
    ));
    let ckpts: Vec<String> = snapshot(&dir.join("runs")).into_keys().collect();
    assert_eq!(ckpts, ["m.seed1.ckpt", "m.seed2.ckpt", "m.seed3.ckpt", "m.seed4.ckpt", "m.seed5.ckpt"]);
    let report: toml::Table = std::fs::read_to_string(dir.join("train_report.toml")).unwrap().parse().unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 5);
    let agg = report["aggregate"].as_table().unwrap();
    assert_eq!(agg["runs"].as_integer(), Some(5));
    let runs: Vec<f64> = report["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["test"]["MRR"].as_float().unwrap())
        .collect();
    let mean = runs.iter().sum::<f64>() / 5.0;
    let std = (runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    assert!((agg["MRR"]["mean"].as_float().unwrap() - mean).abs() < 1e-12);
    assert!((agg["MRR"]["std"].as_float().unwrap() - std).abs() < 1e-12);
    assert!(out.contains("MRR\t") && out.contains('±'), "{out}");
}

#[test]
fn cli_resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    let base = ["train", "--config", "config.toml", "--seed", "3", "--patience", "0"];
    let with = |extra: &[&'static str]| -> Vec<&str> { base.iter().chain(extra).copied().collect() };
    ok(&emomatch(&dir, &with(&["--max-epochs", "4", "--checkpoint", "full.ckpt", "--report", "full.toml"])));
    ok(&emomatch(&dir, &with(&["--max-epochs", "2", "--checkpoint", "part.ckpt", "--report", "part.toml"])));
    ok(&emomatch(
        &dir,
        &with(&["--max-epochs", "4", "--checkpoint", "part.ckpt", "--report", "part.toml", "--resume"]),
    ));
    let files = snapshot(&dir);
    assert_eq!(files["full.ckpt"], files["part.ckpt"]);
    let strip = |name: &str| -> toml::Value {
        let mut t: toml::Table = String::from_utf8(files[name].clone()).unwrap().parse().unwrap();
        t.remove("config");
        let mut runs = t["runs"].clone();
        runs.as_array_mut().unwrap()[0].as_table_mut().unwrap().remove("checkpoint");
        runs
    };
    assert_eq!(strip("full.toml"), strip("part.toml"));
}

#[test]
fn evaluate_reports_p_at_k_under_its_name() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    ok(&emomatch(&dir, &["train", "--config", "config.toml", "--max-epochs", "1"]));
    let out = ok(&emomatch(&dir, &["evaluate", "--config", "config.toml", "--k", "1"]));
    assert!(out.lines().any(|l| l.starts_with("P@1\t")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("NDCG@1\t")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("MRR\t")), "{out}");
    let report: toml::Table = std::fs::read_to_string(dir.join("eval_report.toml")).unwrap().parse().unwrap();
    assert!(report["metrics"]["P@1"].as_float().is_some());
    assert!(report["metrics"].get("P@5").is_none());
}

#[test]
fn evaluate_rejects_bad_checkpoints_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    bundle(tmp.path(), "narrow", &["--dim", "6"]);
    let dir = tmp.path().join("b");
    assert_eq!(code(&dir, &["evaluate", "--config", "config.toml", "--checkpoint", "nope.ckpt"]), Some(2));
    ok(&emomatch(&dir, &["train", "--config", "config.toml", "--max-epochs", "1"]));
    let ckpt = dir.join("model.ckpt");
    let narrow = tmp.path().join("narrow");
    assert_eq!(
        code(&narrow, &["evaluate", "--config", "config.toml", "--checkpoint", ckpt.to_str().unwrap()]),
        Some(2)
    );
    std::fs::write(dir.join("junk.ckpt"), b"NOPE0000").unwrap();
    assert_eq!(code(&dir, &["evaluate", "--config", "config.toml", "--checkpoint", "junk.ckpt"]), Some(2));
}

#[test]
fn retrieve_prints_ranked_ids() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    ok(&emomatch(&dir, &["train", "--config", "config.toml", "--max-epochs", "1"]));

    let query = ["retrieve", "--config", "config.toml", "--query", "speech_audio.emf", "--id", "s00000"];
    let with_k = |k: &'static str, split: Option<&'static str>| -> Vec<&str> {
        let mut v: Vec<&str> = query.to_vec();
        v.extend(["--k", k]);
        if let Some(s) = split {
            v.extend(["--split", s]);
        }
        v
    };
    let lines = |out: String| -> Vec<(String, f64)> {
        out.lines()
            .map(|l| {
                let (id, score) = l.split_once('\t').expect("tab-separated");
                (id.to_string(), score.parse().unwrap())
            })
            .collect()
    };
    let top = lines(ok(&emomatch(&dir, &with_k("25", None))));
    assert_eq!(top.len(), 25);
    assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
    let test_music = std::fs::read_to_string(dir.join("splits.tsv"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with('m') && l.ends_with("\ttest"))
        .count();
    let all_test = lines(ok(&emomatch(&dir, &with_k("1000", Some("test")))));
    assert!(test_music > 0);
    assert_eq!(all_test.len(), test_music);
    assert!(all_test.windows(2).all(|w| w[0].1 >= w[1].1));

    assert_eq!(code(&dir, &["retrieve", "--config", "config.toml", "--query", "speech_audio.emf"]), Some(2));
    bundle(tmp.path(), "narrow", &["--dim", "6"]);
    let narrow_query = tmp.path().join("narrow/speech_audio.emf");
    assert_eq!(
        code(
            &dir,
            &["retrieve", "--config", "config.toml", "--query", narrow_query.to_str().unwrap(), "--id", "s00000"]
        ),
        Some(2)
    );
}

#[test]
fn retrieve_on_a_one_item_corpus_returns_that_item() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "b", &[]);
    let dir = tmp.path().join("b");
    ok(&emomatch(&dir, &["train", "--config", "config.toml", "--max-epochs", "1"]));
    bundle(
        tmp.path(),
        "single",
        &["--per-class", "1", "--speech-labels", "happy", "--music-labels", "happy", "--no-noise-class"],
    );
    let single = tmp.path().join("single");
    let ckpt = dir.join("model.ckpt");
    let out = ok(&emomatch(
        &single,
        &[
            "retrieve", "--config", "config.toml", "--checkpoint", ckpt.to_str().unwrap(), "--query",
            "speech_audio.emf", "--k", "1",
        ],
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("m00000\t"), "{out}");
}

#[test]
fn gen_synthetic_is_deterministic_and_rejects_empty_class_lists() {
    let tmp = tempfile::tempdir().unwrap();
    bundle(tmp.path(), "a", &["--text-dim", "4"]);
    bundle(tmp.path(), "b", &["--text-dim", "4"]);
    let a = snapshot(&tmp.path().join("a"));
    assert!(a.contains_key("speech_text.emf"));
    assert_eq!(a, snapshot(&tmp.path().join("b")));
    assert_eq!(code(tmp.path(), &["gen-synthetic", "--out", "c", "--speech-labels", ""]), Some(2));
    assert_eq!(code(tmp.path(), &["gen-synthetic", "--out", "c", "--music-labels", ""]), Some(2));
    assert_eq!(code(tmp.path(), &["gen-synthetic", "--out", "c", "--per-class", "0"]), Some(2));
}

#[test]
fn gradcheck_passes_by_default_and_fails_at_zero_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&emomatch(tmp.path(), &["gradcheck"]));
    let names: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["hinge", "triplet", "triplet-sp", "triplet-emosim"]);
    for line in out.lines() {
        let err: f64 = line.split('\t').nth(1).unwrap().trim_start_matches("max_rel_error ").parse().unwrap();
        assert!(err < 1e-6, "{line}");
    }
    assert_eq!(code(tmp.path(), &["gradcheck", "--configs", "2", "--tolerance", "0"]), Some(1));
}

#[test]
fn help_documents_every_flag_and_unknown_flags_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let name = sub.get_name();
        let help = ok(&emomatch(tmp.path(), &[name, "--help"]));
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "`{name} --help` lacks --{long}");
            }
        }
        assert_eq!(code(tmp.path(), &[name, "--no-such-flag"]), Some(2));
    }
}
