// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end runs: split, build territories, classify, edit, diagnose, and
//! the k/α sweeps.
//!
//! Everything is computed in memory into a [`Bundle`] before a single byte is
//! written, so a failing run leaves no partial output. Work is parallel over
//! category pairs and samples; results are assembled in manifest order and
//! every reduction runs serially, so bundles are byte-identical for any
//! worker count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    category_js, holdout_split, pairwise_metrics, probe_gap, JsMode, JsReport,
    PairwiseMetricReport, ProbeGapReport,
};
use crate::discriminator::{
    classify_set, classify_set_centroid, evaluate, qualified, Decision, EvalReport,
};
use crate::editor::{apply_edit, make_edit_spec};
use crate::error::{Error, Result};
use crate::repstore::{write_bytes, Manifest, RepresentationSet, VocabHead};
use crate::territory::{
    build_centroid, subspace_nfd, subspace_ngd, Decomposition, Method, TerritoryBasis,
};

pub const DEFAULT_K: usize = 64;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Svd,
    Pca,
    Cs,
}

impl Variant {
    fn method(self) -> Option<Method> {
        match self {
            Variant::Svd => Some(Method::Svd),
            Variant::Pca => Some(Method::Pca),
            Variant::Cs => None,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Variant::Svd),
            "pca" => Ok(Variant::Pca),
            "cs" => Ok(Variant::Cs),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Svd => "svd",
            Variant::Pca => "pca",
            Variant::Cs => "cs",
        })
    }
}

/// Answer tokens. `self` and `other` are roles; any other key names a
/// category explicitly and takes precedence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMap(pub BTreeMap<String, String>);

impl FromStr for TokenMap {
    type Err = Error;

    /// `self=Yes,other=No`.
    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("token mapping '{part}' lacks '='")))?;
            if k.is_empty() || v.is_empty() {
                return Err(Error::Config(format!("empty side in token mapping '{part}'")));
            }
            map.insert(k.to_string(), v.to_string());
        }
        if map.is_empty() {
            return Err(Error::Config("empty token map".into()));
        }
        Ok(TokenMap(map))
    }
}

impl TokenMap {
    pub fn token_for(&self, category: &str, self_category: &str) -> Result<&str> {
        if let Some(t) = self.0.get(category) {
            return Ok(t);
        }
        let role = if category == self_category {
            "self"
        } else {
            "other"
        };
        self.0
            .get(role)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("no token for category '{category}'")))
    }

    /// Category → token for every listed category.
    pub fn resolve(&self, categories: &[&str], self_category: &str) -> Result<HashMap<String, String>> {
        categories
            .iter()
            .map(|c| Ok((c.to_string(), self.token_for(c, self_category)?.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub self_category: String,
    pub k: usize,
    pub alpha: f64,
    pub variant: Variant,
    /// Editing runs only when tokens are configured.
    pub tokens: Option<TokenMap>,
    pub seed: u64,
    pub split: bool,
    pub test_fraction: f64,
    pub normalize_rows: bool,
    /// Generalization: classify remaining categories with {self, known}.
    pub known: Option<String>,
    pub diagnostics: bool,
}

impl RunConfig {
    pub fn new(self_category: impl Into<String>) -> Self {
        Self {
            self_category: self_category.into(),
            k: DEFAULT_K,
            alpha: crate::editor::DEFAULT_ALPHA,
            variant: Variant::Svd,
            tokens: None,
            seed: 0,
            split: true,
            test_fraction: DEFAULT_TEST_FRACTION,
            normalize_rows: false,
            known: None,
            diagnostics: true,
        }
    }
}

/// Loaded inputs of a run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub sets: Vec<RepresentationSet>,
    pub head: Option<VocabHead>,
}

impl Inputs {
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        Ok(Self {
            sets: manifest.load_sets()?,
            head: manifest.load_head()?,
        })
    }

    pub fn set(&self, category: &str) -> Result<&RepresentationSet> {
        self.sets
            .iter()
            .find(|s| s.category() == category)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }
}

/// Per-category train/test partition (possibly normalized for building and
/// classification; editing always sees the raw rows).
struct Split {
    train: RepresentationSet,
    test: RepresentationSet,
    test_raw: RepresentationSet,
}

fn split_all(inputs: &Inputs, config: &RunConfig) -> Result<Vec<Split>> {
    inputs
        .sets
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let view = if config.normalize_rows {
                s.normalized_rows()
            } else {
                s.clone()
            };
            if !config.split {
                return Ok(Split {
                    train: view.clone(),
                    test: view,
                    test_raw: s.clone(),
                });
            }
            if s.n() < 2 {
                return Err(Error::InsufficientSamples(format!(
                    "category '{}' has {} sample(s); a train/test split needs 2",
                    s.category(),
                    s.n()
                )));
            }
            let (train, test) = holdout_split(s.n(), config.test_fraction, config.seed, c as u32);
            Ok(Split {
                train: view.select(&train)?,
                test: view.select(&test)?,
                test_raw: s.select(&test)?,
            })
        })
        .collect()
}

fn validate(inputs: &Inputs, config: &RunConfig) -> Result<usize> {
    let self_idx = inputs
        .sets
        .iter()
        .position(|s| s.category() == config.self_category)
        .ok_or_else(|| Error::UnknownCategory(config.self_category.clone()))?;
    if inputs.sets.len() < 2 {
        return Err(Error::InsufficientSamples(
            "need the self category and at least one other".into(),
        ));
    }
    let d = inputs.sets[0].d();
    for s in &inputs.sets {
        if s.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: s.d(),
            });
        }
    }
    if let Some(k) = &config.known {
        if k == &config.self_category {
            return Err(Error::Config("known category must differ from self".into()));
        }
        inputs.set(k)?;
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::Config("test fraction must lie in (0, 1)".into()));
    }
    if let Some(tokens) = &config.tokens {
        let head = inputs.head.as_ref().ok_or(Error::MissingHead)?;
        if head.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: head.d(),
            });
        }
        let cats: Vec<&str> = inputs.sets.iter().map(|s| s.category()).collect();
        for tok in tokens.resolve(&cats, &config.self_category)?.values() {
            if head.token_index(tok).is_none() {
                return Err(Error::UnknownToken(tok.clone()));
            }
        }
    }
    Ok(self_idx)
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair: (String, String),
    pub n_test: usize,
    pub eval: EvalReport,
    /// Share of test samples whose unedited greedy token is the true label's token.
    pub base_acc: Option<f64>,
    /// Same after editing toward the verdict.
    pub cosur_acc: Option<f64>,
    pub ngd: Option<f64>,
    pub nfd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationResult {
    pub category: String,
    pub known: String,
    pub n: usize,
    /// Fraction of samples not attributed to self.
    pub other_rate: f64,
    pub verdicts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub pairs: Vec<PairwiseMetricReport>,
    pub js: Vec<JsReport>,
    pub probe: Option<ProbeGapReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfig,
    pub pairs: Vec<PairResult>,
    pub average_acc: f64,
    pub average_f1: f64,
    pub average_base_acc: Option<f64>,
    pub average_cosur_acc: Option<f64>,
    pub generalization: Vec<GeneralizationResult>,
}

/// In-memory report bundle: relative path → bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub summary: Summary,
    pub diagnostics: Option<DiagnosticsReport>,
    pub files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        for rel in self.files.keys() {
            if let Some(parent) = dir.join(rel).parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        for (rel, bytes) in &self.files {
            write_bytes(&dir.join(rel), bytes)?;
        }
        Ok(())
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

fn json_lines<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn labels_for(sets: &[&RepresentationSet]) -> HashMap<String, String> {
    sets.iter()
        .flat_map(|s| {
            s.sample_ids()
                .iter()
                .map(move |id| (qualified(Some(s.category()), id), s.category().to_string()))
        })
        .collect()
}

/// Territories (or centroids) built from the training split.
enum Model {
    Territory(TerritoryBasis),
    Centroid(crate::territory::Centroid),
}

fn build_model(train: &RepresentationSet, config: &RunConfig) -> Result<Model> {
    match config.variant.method() {
        Some(m) => Ok(Model::Territory(
            Decomposition::compute(train, m)?.territory(config.k)?,
        )),
        None => Ok(Model::Centroid(build_centroid(train))),
    }
}

/// (id, verdict) pairs plus the serialized decision records.
fn classify(
    test: &RepresentationSet,
    models: &[&Model],
    self_category: &str,
) -> Result<(Vec<(String, String)>, Vec<u8>)> {
    let prefix = Some(test.category());
    match models[0] {
        Model::Territory(_) => {
            let ts: Vec<&TerritoryBasis> = models
                .iter()
                .map(|m| match m {
                    Model::Territory(t) => t,
                    Model::Centroid(_) => unreachable!("models share a variant"),
                })
                .collect();
            let ds = classify_set(test, &ts, Some(self_category), prefix)?;
            let v = ds
                .iter()
                .map(|d| (d.sample_id().to_string(), d.verdict().to_string()))
                .collect();
            Ok((v, json_lines(&ds)))
        }
        Model::Centroid(_) => {
            let cs: Vec<&crate::territory::Centroid> = models
                .iter()
                .map(|m| match m {
                    Model::Centroid(c) => c,
                    Model::Territory(_) => unreachable!("models share a variant"),
                })
                .collect();
            let ds = classify_set_centroid(test, &cs, Some(self_category), prefix)?;
            let v = ds
                .iter()
                .map(|d| (d.sample_id().to_string(), d.verdict().to_string()))
                .collect();
            Ok((v, json_lines(&ds)))
        }
    }
}

/// Minimal decision record used for scoring once verdicts are known.
struct Verdict<'a> {
    id: &'a str,
    verdict: &'a str,
    candidates: [&'a str; 2],
}

impl Decision for Verdict<'_> {
    fn sample_id(&self) -> &str {
        self.id
    }
    fn verdict(&self) -> &str {
        self.verdict
    }
    fn candidates(&self) -> Vec<&str> {
        self.candidates.to_vec()
    }
}

#[derive(Serialize)]
struct EditRecord<'a> {
    id: &'a str,
    label: &'a str,
    verdict: &'a str,
    target_token: &'a str,
    greedy_before: &'a str,
    greedy_after: &'a str,
    logit_delta_target: f64,
}

struct PairOutput {
    result: PairResult,
    decisions: Vec<u8>,
    edits: Option<(Vec<u8>, RepresentationSet)>,
}

fn run_pair(
    self_split: &Split,
    other_split: &Split,
    self_model: &Model,
    other_model: &Model,
    head: Option<&VocabHead>,
    config: &RunConfig,
) -> Result<PairOutput> {
    let self_cat = self_split.test.category();
    let other_cat = other_split.test.category();
    let models = [self_model, other_model];
    let (mut verdicts, mut decisions) = classify(&self_split.test, &models, self_cat)?;
    let (v2, d2) = classify(&other_split.test, &models, self_cat)?;
    verdicts.extend(v2);
    decisions.extend(d2);

    let labels = labels_for(&[&self_split.test, &other_split.test]);
    let records: Vec<Verdict> = verdicts
        .iter()
        .map(|(id, v)| Verdict {
            id,
            verdict: v,
            candidates: [self_cat, other_cat],
        })
        .collect();
    let eval = evaluate(&records, &labels, self_cat)?;

    let (ngd, nfd) = match (self_model, other_model) {
        (Model::Territory(a), Model::Territory(b)) => {
            (Some(subspace_ngd(a, b)?), Some(subspace_nfd(a, b)?))
        }
        _ => (None, None),
    };

    let mut base_acc = None;
    let mut cosur_acc = None;
    let mut edits = None;
    if let (Some(tokens), Some(head)) = (&config.tokens, head) {
        let token_map = tokens.resolve(&[self_cat, other_cat], self_cat)?;
        let raw_rows: Vec<(&RepresentationSet, usize)> = [&self_split.test_raw, &other_split.test_raw]
            .into_iter()
            .flat_map(|s| (0..s.n()).map(move |i| (s, i)))
            .collect();
        let outcomes: Vec<_> = raw_rows
            .par_iter()
            .zip(verdicts.par_iter())
            .map(|(&(set, i), (_, verdict))| {
                let spec = make_edit_spec(head, verdict, &token_map, config.alpha)?;
                apply_edit(&set.row_f64(i), &spec, head).map(|o| (spec.target_token, o))
            })
            .collect::<Result<_>>()?;

        let mut base = 0usize;
        let mut after = 0usize;
        let mut lines = Vec::with_capacity(outcomes.len());
        let mut edited = Vec::with_capacity(outcomes.len() * head.d());
        let mut ids = Vec::with_capacity(outcomes.len());
        for (((set, _), (id, verdict)), (target, o)) in
            raw_rows.iter().zip(&verdicts).zip(&outcomes)
        {
            let truth = &token_map[set.category()];
            base += usize::from(&o.greedy_before == truth);
            after += usize::from(&o.greedy_after == truth);
            lines.push(EditRecord {
                id,
                label: set.category(),
                verdict,
                target_token: target,
                greedy_before: &o.greedy_before,
                greedy_after: &o.greedy_after,
                logit_delta_target: o.logit_delta_target,
            });
            edited.extend(o.edited.iter().map(|&v| v as f32));
            ids.push(id.clone());
        }
        let n = outcomes.len() as f64;
        base_acc = Some(base as f64 / n);
        cosur_acc = Some(after as f64 / n);
        let edited_set = RepresentationSet::new(
            format!("{self_cat}-{other_cat}-edited"),
            ids.len(),
            head.d(),
            edited,
            ids,
        )?;
        edits = Some((json_lines(&lines), edited_set));
    }

    Ok(PairOutput {
        result: PairResult {
            pair: (self_cat.to_string(), other_cat.to_string()),
            n_test: verdicts.len(),
            eval,
            base_acc,
            cosur_acc,
            ngd,
            nfd,
        },
        decisions,
        edits,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Run the full pipeline in memory.
pub fn run_pipeline(inputs: &Inputs, config: &RunConfig) -> Result<Bundle> {
    let self_idx = validate(inputs, config)?;
    let splits = split_all(inputs, config)?;
    let models: Vec<Model> = splits
        .par_iter()
        .map(|s| build_model(&s.train, config))
        .collect::<Result<_>>()?;

    let others: Vec<usize> = (0..splits.len()).filter(|&i| i != self_idx).collect();
    let outputs: Vec<PairOutput> = others
        .par_iter()
        .map(|&o| {
            run_pair(
                &splits[self_idx],
                &splits[o],
                &models[self_idx],
                &models[o],
                inputs.head.as_ref(),
                config,
            )
        })
        .collect::<Result<_>>()?;

    let mut generalization = Vec::new();
    if let Some(known) = &config.known {
        let known_idx = inputs
            .sets
            .iter()
            .position(|s| s.category() == known)
            .expect("validated");
        for (c, split) in splits.iter().enumerate() {
            if c == self_idx || c == known_idx {
                continue;
            }
            let (verdicts, _) = classify(
                &split.test,
                &[&models[self_idx], &models[known_idx]],
                &config.self_category,
            )?;
            let mut counts = BTreeMap::new();
            for (_, v) in &verdicts {
                *counts.entry(v.clone()).or_insert(0usize) += 1;
            }
            let not_self = verdicts
                .iter()
                .filter(|(_, v)| v != &config.self_category)
                .count();
            generalization.push(GeneralizationResult {
                category: split.test.category().to_string(),
                known: known.clone(),
                n: verdicts.len(),
                other_rate: not_self as f64 / verdicts.len() as f64,
                verdicts: counts,
            });
        }
    }

    let diagnostics = if config.diagnostics {
        Some(run_diagnostics(inputs, &splits, self_idx, config.seed)?)
    } else {
        None
    };

    let pairs: Vec<PairResult> = outputs.iter().map(|o| o.result.clone()).collect();
    let has_edits = pairs.iter().all(|p| p.cosur_acc.is_some());
    let summary = Summary {
        config: config.clone(),
        average_acc: mean(pairs.iter().map(|p| p.eval.accuracy)),
        average_f1: mean(pairs.iter().map(|p| p.eval.f1)),
        average_base_acc: has_edits.then(|| mean(pairs.iter().filter_map(|p| p.base_acc))),
        average_cosur_acc: has_edits.then(|| mean(pairs.iter().filter_map(|p| p.cosur_acc))),
        pairs,
        generalization,
    };

    let mut files = BTreeMap::new();
    files.insert(PathBuf::from("summary.json"), json_bytes(&summary));
    let mut accuracy_csv = String::from("pair,acc,f1,macro_f1,base_acc,cosur_acc\n");
    let mut distance_csv = String::from("pair,ngd,nfd\n");
    for o in &outputs {
        let r = &o.result;
        let label = format!("{}-{}", r.pair.0, r.pair.1);
        files.insert(
            PathBuf::from("decisions").join(format!("{}.jsonl", r.pair.1)),
            o.decisions.clone(),
        );
        if let Some((lines, edited)) = &o.edits {
            files.insert(
                PathBuf::from("edits").join(format!("{}.jsonl", r.pair.1)),
                lines.clone(),
            );
            files.insert(
                PathBuf::from("edits").join(format!("{}.repb", r.pair.1)),
                edited.to_repb_bytes(),
            );
        }
        accuracy_csv.push_str(&format!(
            "{label},{},{},{},{},{}\n",
            r.eval.accuracy,
            r.eval.f1,
            r.eval.macro_f1,
            opt(r.base_acc),
            opt(r.cosur_acc)
        ));
        if let (Some(g), Some(f)) = (r.ngd, r.nfd) {
            distance_csv.push_str(&format!("{label},{g},{f}\n"));
        }
    }
    files.insert(PathBuf::from("accuracy.csv"), accuracy_csv.into_bytes());
    if config.variant != Variant::Cs {
        files.insert(PathBuf::from("subspace_distances.csv"), distance_csv.into_bytes());
    }
    if let Some(diag) = &diagnostics {
        add_diagnostic_files(&mut files, diag);
    }
    Ok(Bundle {
        summary,
        diagnostics,
        files,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_diagnostics(
    inputs: &Inputs,
    splits: &[Split],
    self_idx: usize,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let self_train = &splits[self_idx].train;
    let others: Vec<usize> = (0..splits.len()).filter(|&i| i != self_idx).collect();
    let pairs = others
        .par_iter()
        .map(|&o| pairwise_metrics(self_train, &splits[o].train))
        .collect::<Result<Vec<_>>>()?;
    let (js, probe) = match &inputs.head {
        Some(head) => {
            let js = others
                .par_iter()
                .map(|&o| {
                    category_js(
                        &inputs.sets[self_idx],
                        &inputs.sets[o],
                        head,
                        JsMode::MeanDistribution,
                        seed,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let probe = if inputs.sets.iter().all(|s| s.n() >= 10) {
                Some(probe_gap(&inputs.sets, head, DEFAULT_TEST_FRACTION, DEFAULT_RIDGE, seed)?)
            } else {
                None
            };
            (js, probe)
        }
        None => (Vec::new(), None),
    };
    Ok(DiagnosticsReport { pairs, js, probe })
}

fn add_diagnostic_files(files: &mut BTreeMap<PathBuf, Vec<u8>>, diag: &DiagnosticsReport) {
    files.insert(PathBuf::from("diagnostics.json"), json_bytes(diag));
    let mut similarity_csv = String::from("pair,cs,mmd,cka\n");
    for p in &diag.pairs {
        similarity_csv.push_str(&format!("{}-{},{},{},{}\n", p.pair.0, p.pair.1, p.cs, p.mmd, p.cka));
    }
    files.insert(PathBuf::from("similarity.csv"), similarity_csv.into_bytes());
}

/// Diagnostics alone, over whole sets: pairwise metrics against `self_category`
/// (or all pairs when `None`), territory distances at `k`, JS and probe gap
/// when a head is present.
pub fn run_diagnose(
    inputs: &Inputs,
    self_category: Option<&str>,
    k: usize,
    seed: u64,
) -> Result<(DiagnosticsReport, BTreeMap<PathBuf, Vec<u8>>)> {
    let n = inputs.sets.len();
    let pairs_idx: Vec<(usize, usize)> = match self_category {
        Some(s) => {
            let si = inputs
                .sets
                .iter()
                .position(|x| x.category() == s)
                .ok_or_else(|| Error::UnknownCategory(s.to_string()))?;
            (0..n).filter(|&o| o != si).map(|o| (si, o)).collect()
        }
        None => (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect(),
    };
    let sets = &inputs.sets;
    let pairs = pairs_idx
        .par_iter()
        .map(|&(a, b)| pairwise_metrics(&sets[a], &sets[b]))
        .collect::<Result<Vec<_>>>()?;
    let territories: Vec<TerritoryBasis> = sets
        .par_iter()
        .map(|s| Decomposition::compute(s, Method::Svd)?.territory(k))
        .collect::<Result<_>>()?;
    let distances = pairs_idx
        .iter()
        .map(|&(a, b)| {
            Ok((
                a,
                b,
                subspace_ngd(&territories[a], &territories[b])?,
                subspace_nfd(&territories[a], &territories[b])?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (js, probe) = match &inputs.head {
        Some(head) => {
            let js = pairs_idx
                .par_iter()
                .map(|&(a, b)| category_js(&sets[a], &sets[b], head, JsMode::MeanDistribution, seed))
                .collect::<Result<Vec<_>>>()?;
            let probe = if sets.iter().all(|s| s.n() >= 10) {
                Some(probe_gap(sets, head, DEFAULT_TEST_FRACTION, DEFAULT_RIDGE, seed)?)
            } else {
                None
            };
            (js, probe)
        }
        None => (Vec::new(), None),
    };
    let report = DiagnosticsReport { pairs, js, probe };
    let mut files = BTreeMap::new();
    add_diagnostic_files(&mut files, &report);
    let mut distance_csv = String::from("pair,ngd,nfd\n");
    for (a, b, g, f) in distances {
        distance_csv.push_str(&format!("{}-{},{g},{f}\n", sets[a].category(), sets[b].category()));
    }
    files.insert(PathBuf::from("subspace_distances.csv"), distance_csv.into_bytes());
    Ok((report, files))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    /// (other category, accuracy) in manifest order.
    pub accuracies: Vec<(String, f64)>,
    pub mean_acc: f64,
}

/// Re-classify every self/other pair for each k.
pub fn sweep_k(inputs: &Inputs, config: &RunConfig, ks: &[usize]) -> Result<Vec<KSweepRow>> {
    let method = config
        .variant
        .method()
        .ok_or_else(|| Error::Config("k sweep needs a territory variant (svd or pca)".into()))?;
    let self_idx = validate(inputs, config)?;
    let splits = split_all(inputs, config)?;
    let decomps: Vec<Decomposition> = splits
        .par_iter()
        .map(|s| Decomposition::compute(&s.train, method))
        .collect::<Result<_>>()?;
    let others: Vec<usize> = (0..splits.len()).filter(|&i| i != self_idx).collect();
    ks.iter()
        .map(|&k| {
            let models: Vec<Model> = decomps
                .iter()
                .map(|d| d.territory(k).map(Model::Territory))
                .collect::<Result<_>>()?;
            let accuracies = others
                .par_iter()
                .map(|&o| {
                    let acc = pair_accuracy(&splits[self_idx], &splits[o], &models[self_idx], &models[o])?;
                    Ok((splits[o].test.category().to_string(), acc))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KSweepRow {
                k,
                mean_acc: mean(accuracies.iter().map(|(_, a)| *a)),
                accuracies,
            })
        })
        .collect()
}

fn pair_accuracy(s: &Split, o: &Split, sm: &Model, om: &Model) -> Result<f64> {
    let self_cat = s.test.category();
    let (mut v, _) = classify(&s.test, &[sm, om], self_cat)?;
    v.extend(classify(&o.test, &[sm, om], self_cat)?.0);
    let labels = labels_for(&[&s.test, &o.test]);
    let correct = v.iter().filter(|(id, verdict)| &labels[id] == verdict).count();
    Ok(correct as f64 / v.len() as f64)
}

pub fn k_sweep_csv(rows: &[KSweepRow], self_category: &str) -> String {
    let mut s = String::from("k");
    if let Some(first) = rows.first() {
        for (o, _) in &first.accuracies {
            s.push_str(&format!(",{self_category}-{o}"));
        }
    }
    s.push_str(",mean_acc\n");
    for r in rows {
        s.push_str(&r.k.to_string());
        for (_, a) in &r.accuracies {
            s.push_str(&format!(",{a}"));
        }
        s.push_str(&format!(",{}\n", r.mean_acc));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepRow {
    pub alpha: f64,
    /// Share of samples whose greedy token equals the verdict's token.
    pub flip_rate: f64,
    /// Share whose greedy token equals the true label's token.
    pub mean_acc: f64,
}

/// Classify once at `config.k`, then edit every test sample at each α.
pub fn sweep_alpha(inputs: &Inputs, config: &RunConfig, alphas: &[f64]) -> Result<Vec<AlphaSweepRow>> {
    let tokens = config
        .tokens
        .as_ref()
        .ok_or_else(|| Error::Config("alpha sweep needs --tokens".into()))?;
    let head = inputs.head.as_ref().ok_or(Error::MissingHead)?;
    let self_idx = validate(inputs, config)?;
    let splits = split_all(inputs, config)?;
    let models: Vec<Model> = splits
        .par_iter()
        .map(|s| build_model(&s.train, config))
        .collect::<Result<_>>()?;
    let cats: Vec<&str> = inputs.sets.iter().map(|s| s.category()).collect();
    let token_map = tokens.resolve(&cats, &config.self_category)?;

    // (raw vector, verdict token, truth token) for every test sample of every pair.
    let mut samples: Vec<(Vec<f64>, String, String)> = Vec::new();
    for o in (0..splits.len()).filter(|&i| i != self_idx) {
        let pair = [&models[self_idx], &models[o]];
        for split in [&splits[self_idx], &splits[o]] {
            let (verdicts, _) = classify(&split.test, &pair, &config.self_category)?;
            for (i, (_, v)) in verdicts.iter().enumerate() {
                samples.push((
                    split.test_raw.row_f64(i),
                    v.clone(),
                    token_map[split.test.category()].clone(),
                ));
            }
        }
    }
    alphas
        .iter()
        .map(|&alpha| {
            let hits: Vec<(bool, bool)> = samples
                .par_iter()
                .map(|(h, verdict, truth)| {
                    let spec = make_edit_spec(head, verdict, &token_map, alpha)?;
                    let out = apply_edit(h, &spec, head)?;
                    Ok((out.greedy_after == spec.target_token, &out.greedy_after == truth))
                })
                .collect::<Result<_>>()?;
            let n = hits.len() as f64;
            Ok(AlphaSweepRow {
                alpha,
                flip_rate: hits.iter().filter(|h| h.0).count() as f64 / n,
                mean_acc: hits.iter().filter(|h| h.1).count() as f64 / n,
            })
        })
        .collect()
}

pub fn alpha_sweep_csv(rows: &[AlphaSweepRow]) -> String {
    let mut s = String::from("alpha,flip_rate,mean_acc\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.alpha, r.flip_rate, r.mean_acc));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_map_parsing_and_resolution() {
        let t: TokenMap = "self=Yes, other=No, chatgpt=Nope".parse().unwrap();
        assert_eq!(t.token_for("me", "me").unwrap(), "Yes");
        assert_eq!(t.token_for("human", "me").unwrap(), "No");
        assert_eq!(t.token_for("chatgpt", "me").unwrap(), "Nope");
        assert!("self".parse::<TokenMap>().is_err());
        assert!("".parse::<TokenMap>().is_err());
        let only_self: TokenMap = "self=Yes".parse().unwrap();
        assert!(only_self.token_for("human", "me").is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("cs".parse::<Variant>().unwrap(), Variant::Cs);
        assert!("lda".parse::<Variant>().is_err());
    }
}
