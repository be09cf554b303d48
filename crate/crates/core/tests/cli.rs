// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use cosur::repstore::{load_representations, load_vocab_head, Format};
use tempfile::TempDir;

fn cosur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosur"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cosur(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32, kind: &str) -> serde_json::Value {
    let out = cosur(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["error"], kind);
    assert_eq!(err["exit_code"], code);
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, preset: &str) -> PathBuf {
    ok(&["synth", "--preset", preset, "--out", s(dir)]);
    dir.join("manifest.json")
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Two categories on exact coordinate axes of R³, written as CSV and ingested.
fn axis_manifest(dir: &Path) -> PathBuf {
    let a: String = (1..=20).map(|i| format!("{},0,0\n", i as f64 * 0.5)).collect();
    let b: String = (1..=20).map(|i| format!("0,{},0\n", -(i as f64))).collect();
    fs::write(dir.join("a.csv"), a).unwrap();
    fs::write(dir.join("b.csv"), b).unwrap();
    let out = dir.join("axes");
    ok(&[
        "ingest",
        "--input",
        &format!("self={}", s(&dir.join("a.csv"))),
        "--input",
        &format!("other={}", s(&dir.join("b.csv"))),
        "--out",
        s(&out),
    ]);
    out.join("manifest.json")
}

#[test]
fn pipeline_writes_complete_bundle_and_report() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(&dir.path().join("data"), "orthogonal-lines");
    let bundle = dir.path().join("bundle");
    ok(&[
        "pipeline", "--manifest", s(&manifest), "--self", "self", "--k", "1",
        "--tokens", "self=Yes,other=No", "--out", s(&bundle),
    ]);
    let files = tree(&bundle);
    for f in [
        "summary.json", "similarity.csv", "subspace_distances.csv", "accuracy.csv", "diagnostics.json",
        "decisions/other.jsonl", "edits/other.jsonl", "edits/other.repb",
    ] {
        assert!(files.contains_key(Path::new(f)), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&files[Path::new("summary.json")]).unwrap();
    assert_eq!(summary["pairs"][0]["eval"]["accuracy"], 1.0);

    let table = ok(&["report", "--bundle", s(&bundle)]);
    assert!(table.contains("self vs other"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["report", "--bundle", s(&bundle), "--json"])).unwrap();
    assert_eq!(json, summary);
}

#[test]
fn pipeline_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(&dir.path().join("data"), "orthogonal-lines");
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--threads", threads, "pipeline", "--manifest", s(&manifest), "--self", "self",
            "--k", "1", "--tokens", "self=Yes,other=No", "--out", s(&out),
        ]);
        tree(&out)
    };
    assert_eq!(run("1", "one"), run("4", "four"));
}

#[test]
fn inputs_are_never_modified() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let manifest = synth(&data, "orthogonal-lines");
    let before = tree(&data);
    ok(&[
        "pipeline", "--manifest", s(&manifest), "--self", "self", "--k", "1",
        "--tokens", "self=Yes,other=No", "--out", s(&dir.path().join("b")),
    ]);
    ok(&["diagnose", "--manifest", s(&manifest), "--k", "1", "--out", s(&dir.path().join("d"))]);
    assert_eq!(before, tree(&data));
}

#[test]
fn tokens_without_head_fail_before_writing() {
    let dir = TempDir::new().unwrap();
    let manifest = axis_manifest(dir.path());
    let out = dir.path().join("never");
    let err = fails_with(
        &[
            "pipeline", "--manifest", s(&manifest), "--self", "self", "--k", "1",
            "--tokens", "self=Yes,other=No", "--out", s(&out),
        ],
        13,
        "missing_head",
    );
    assert!(err["message"].as_str().unwrap().len() > 3);
    assert!(!out.exists());
}

#[test]
fn k_sweep_on_exact_axes() {
    let dir = TempDir::new().unwrap();
    let manifest = axis_manifest(dir.path());
    let csv = ok(&["sweep-k", "--manifest", s(&manifest), "--self", "self", "--ks", "1"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,self-other,mean_acc");
    assert_eq!(lines[1], "1,1,1");

    let err = fails_with(
        &["sweep-k", "--manifest", s(&manifest), "--self", "self", "--ks", "1,2"],
        9,
        "rank_deficient",
    );
    assert!(err["message"].as_str().unwrap().contains("k = 2"), "{err}");
}

#[test]
fn classify_emits_one_line_per_sample() {
    let dir = TempDir::new().unwrap();
    let manifest = axis_manifest(dir.path());
    let report = dir.path().join("report.json");
    let text = ok(&[
        "classify", "--manifest", s(&manifest), "--self", "self", "--k", "1",
        "--report", s(&report),
    ]);
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 40);
    for l in &lines {
        let id = l["id"].as_str().unwrap();
        let truth = id.split('/').next().unwrap();
        assert_eq!(l["verdict"], truth);
        assert!(l["energies"]["self"].is_number() && l["energies"]["other"].is_number());
    }
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["accuracy"], 1.0);
}

#[test]
fn build_then_classify_from_territory_files() {
    let dir = TempDir::new().unwrap();
    let manifest = axis_manifest(dir.path());
    let terr = dir.path().join("t");
    ok(&["build", "--manifest", s(&manifest), "--k", "1", "--out", s(&terr)]);
    let text = ok(&[
        "classify",
        "--territory", s(&terr.join("self.territory.repb")),
        "--territory", s(&terr.join("other.territory.repb")),
        "--input", s(&dir.path().join("b.csv")),
        "--self", "self",
    ]);
    assert_eq!(text.lines().count(), 20);
    assert!(text.lines().all(|l| l.contains("\"verdict\":\"other\"")));
}

/// Greedy token index by explicit loop: first maximum of `Wh + b`.
fn greedy(head: &cosur::VocabHead, h: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..head.vocab_size() {
        let l = dot(&head.row_f64(t), h) + head.bias()[t];
        if l > best.1 {
            best = (t, l);
        }
    }
    best.0
}

#[test]
fn alpha_sweep_starts_at_unedited_agreement_and_grows() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let manifest = synth(&data, "orthogonal-lines");
    let common = [
        "--manifest", s(&manifest), "--self", "self", "--k", "1", "--no-split",
        "--tokens", "self=Yes,other=No",
    ];
    let mut args = vec!["sweep-alpha"];
    args.extend(common);
    args.extend(["--alphas", "0,50,200"]);
    let csv = ok(&args);
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();

    let verdicts = ok(&["classify", "--manifest", s(&manifest), "--self", "self", "--k", "1"]);
    let verdicts: BTreeMap<String, String> = verdicts
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["id"].as_str().unwrap().into(), v["verdict"].as_str().unwrap().into())
        })
        .collect();
    let head = load_vocab_head(&data.join("head.repb")).unwrap();
    let yes = head.token_names().iter().position(|t| t == "Yes").unwrap();
    let no = head.token_names().iter().position(|t| t == "No").unwrap();
    let mut agree = 0;
    let mut total = 0;
    for cat in ["self", "other"] {
        let set = load_representations(&data.join(format!("{cat}.repb")), Format::Repb).unwrap();
        for (i, h) in set.rows_f64().iter().enumerate() {
            let v = &verdicts[&format!("{cat}/{}", set.sample_ids()[i])];
            let target = if v == "self" { yes } else { no };
            agree += usize::from(greedy(&head, h) == target);
            total += 1;
        }
    }
    assert!((rows[0][1] - agree as f64 / total as f64).abs() < 1e-12, "{csv}");
    assert!(rows[2][1] >= rows[1][1], "{csv}");
}

#[test]
fn edit_command_moves_every_vector_by_alpha() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let manifest = synth(&data, "orthogonal-lines");
    let verdicts = dir.path().join("v.jsonl");
    ok(&[
        "classify", "--manifest", s(&manifest), "--self", "self", "--k", "1",
        "--input", s(&data.join("other.repb")), "--out", s(&verdicts),
    ]);
    let out = dir.path().join("edited");
    ok(&[
        "edit", "--input", s(&data.join("other.repb")), "--head", s(&data.join("head.repb")),
        "--verdicts", s(&verdicts), "--self", "self", "--tokens", "self=Yes,other=No",
        "--alpha", "25", "--out", s(&out),
    ]);
    let before = load_representations(&data.join("other.repb"), Format::Repb).unwrap().rows_f64();
    let after = load_representations(&out.join("edited.repb"), Format::Repb).unwrap().rows_f64();
    for (a, b) in before.iter().zip(&after) {
        let disp: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        assert!((norm(&disp) - 25.0).abs() < 1e-4);
    }
    let effects = fs::read_to_string(out.join("effects.jsonl")).unwrap();
    assert_eq!(effects.lines().count(), before.len());
    assert!(effects.lines().all(|l| l.contains("\"target_token\":\"No\"")));
}

#[test]
fn errors_are_json_with_stable_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    fails_with(&["diagnose", "--manifest", s(&missing), "--out", s(dir.path())], 3, "io");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    fails_with(&["diagnose", "--manifest", s(&bad), "--out", s(dir.path())], 4, "format");
    let manifest = axis_manifest(dir.path());
    fails_with(
        &["sweep-k", "--manifest", s(&manifest), "--self", "ghost", "--ks", "1"],
        12,
        "unknown_category",
    );
    fails_with(&["synth", "--preset", "nonsense", "--out", s(dir.path())], 16, "config");
    assert_eq!(cosur(&["pipeline"]).status.code(), Some(2));
}
