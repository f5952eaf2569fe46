use std::path::Path;
use std::process::{Command, Output};

fn brainage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brainage"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = brainage(args);
    assert!(
        out.status.success(),
        "{args:?}\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(brainage(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(brainage(&[]).status.code(), Some(2));
}

#[test]
fn missing_data_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = brainage(&[
        "train",
        "--data",
        s(&dir.path().join("nowhere")),
        "--modality",
        "t2_ac",
        "--out",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.conf");
    std::fs::write(&cfg, "# cohort\nsubjects = 7\nside = 24\nseed = 3\n").unwrap();
    let a = dir.path().join("a");
    ok(&[
        "synth",
        "--config",
        s(&cfg),
        "--subjects",
        "5",
        "--out",
        s(&a),
    ]);
    let meta = std::fs::read_to_string(a.join("metadata.csv")).unwrap();
    assert_eq!(meta.lines().count(), 6);

    let b = dir.path().join("b");
    ok(&["synth", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(
        std::fs::read_to_string(b.join("metadata.csv"))
            .unwrap()
            .lines()
            .count(),
        8
    );

    assert_eq!(
        brainage(&["synth", "--config", s(&dir.path().join("absent.conf"))])
            .status
            .code(),
        Some(1)
    );
    std::fs::write(&cfg, "subjects 7\n").unwrap();
    assert_eq!(
        brainage(&["synth", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
}

fn snapshot(dir: &Path) -> Snapshot {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

type Snapshot = Vec<(String, Vec<u8>)>;

/// Runs the whole chain into `root`; returns the cohort and model
/// directories as they stood before the downstream stages ran.
fn study(root: &Path) -> (Snapshot, Snapshot) {
    let data = root.join("data");
    let models = root.join("models");
    ok(&[
        "synth",
        "--subjects",
        "40",
        "--side",
        "32",
        "--seed",
        "2",
        "--out",
        s(&data),
    ]);
    for m in ["flair_ac", "flair_lv", "t2_ac", "t2_lv"] {
        ok(&[
            "train",
            "--data",
            s(&data),
            "--modality",
            m,
            "--side",
            "32",
            "--epochs",
            "1",
            "--seed",
            "1",
            "--out",
            s(&models),
        ]);
    }
    let before = (snapshot(&data), snapshot(&models));
    ok(&[
        "ensemble-fit",
        "--data",
        s(&data),
        "--models",
        s(&models),
        "--out",
        s(&root.join("ens")),
    ]);
    ok(&[
        "cv-select",
        "--preds",
        s(&root.join("ens/base_predictions.csv")),
        "--folds",
        "3",
        "--out",
        s(&root.join("cv")),
    ]);
    ok(&[
        "analyze",
        "--data",
        s(&data),
        "--models",
        s(&models),
        "--folds",
        "3",
        "--out",
        s(&root.join("analysis")),
    ]);
    ok(&[
        "report",
        "--input",
        s(&root.join("analysis")),
        "--out",
        s(&root.join("rerender")),
    ]);
    ok(&[
        "bvd",
        "--source",
        "constant",
        "--repeats",
        "20",
        "--eval-points",
        "10",
        "--out",
        s(&root.join("bvd")),
    ]);
    before
}

#[test]
fn full_chain_is_deterministic_and_leaves_inputs_alone() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (data_before, models_before) = study(a.path());
    study(b.path());

    for (dir, manifest) in [
        ("data", "manifest_synth.json"),
        ("models", "manifest_train_t2_lv.json"),
        ("ens", "manifest_ensemble_fit.json"),
        ("cv", "manifest_cv_select.json"),
        ("analysis", "manifest_analyze.json"),
        ("rerender", "manifest_report.json"),
        ("bvd", "manifest_bvd.json"),
    ] {
        let text = std::fs::read_to_string(a.path().join(dir).join(manifest)).unwrap();
        assert!(text.contains("sha256"), "{dir}/{manifest}");
        // everything except timing-bearing manifests matches byte for byte
        let strip = |v: Snapshot| -> Snapshot {
            v.into_iter()
                .filter(|(n, _)| !n.contains("manifest") && !n.contains("history"))
                .collect()
        };
        assert_eq!(
            strip(snapshot(&a.path().join(dir))),
            strip(snapshot(&b.path().join(dir))),
            "{dir}"
        );
    }

    let analysed = std::fs::read_to_string(a.path().join("analysis/report.json")).unwrap();
    let rerendered = std::fs::read_to_string(a.path().join("rerender/report.json")).unwrap();
    assert_eq!(analysed, rerendered);

    // later stages only read the cohort and the models
    assert_eq!(snapshot(&a.path().join("data")), data_before);
    assert_eq!(snapshot(&a.path().join("models")), models_before);
}

#[test]
fn out_of_fold_mode_replaces_only_training_rows() {
    let root = tempfile::tempdir().unwrap();
    let (data, models) = (root.path().join("data"), root.path().join("models"));
    ok(&[
        "synth",
        "--subjects",
        "24",
        "--side",
        "24",
        "--seed",
        "4",
        "--out",
        s(&data),
    ]);
    for m in ["flair_ac", "flair_lv", "t2_ac", "t2_lv"] {
        ok(&[
            "train",
            "--data",
            s(&data),
            "--modality",
            m,
            "--side",
            "24",
            "--epochs",
            "1",
            "--out",
            s(&models),
        ]);
    }
    let (plain, oof) = (root.path().join("plain"), root.path().join("oof"));
    ok(&[
        "ensemble-fit",
        "--data",
        s(&data),
        "--models",
        s(&models),
        "--ensemble",
        "linear",
        "--out",
        s(&plain),
    ]);
    ok(&[
        "ensemble-fit",
        "--data",
        s(&data),
        "--models",
        s(&models),
        "--ensemble",
        "linear",
        "--out-of-fold",
        "2",
        "--out",
        s(&oof),
    ]);
    let rows = |d: &Path| -> Vec<(String, String)> {
        std::fs::read_to_string(d.join("base_predictions.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| (l.split(',').nth(2).unwrap().to_string(), l.to_string()))
            .collect()
    };
    let (a, b) = (rows(&plain), rows(&oof));
    assert_eq!(a.len(), b.len());
    let mut train_changed = 0;
    for ((split, x), (_, y)) in a.iter().zip(&b) {
        if split == "test" {
            assert_eq!(x, y);
        } else {
            train_changed += usize::from(x != y);
        }
    }
    assert!(train_changed > 0);
    assert_eq!(
        brainage(&[
            "ensemble-fit",
            "--data",
            s(&data),
            "--models",
            s(&models),
            "--out-of-fold",
            "1",
            "--out",
            s(&oof)
        ])
        .status
        .code(),
        Some(1)
    );
}
