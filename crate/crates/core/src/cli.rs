// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end: argument definitions and command runners.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::discriminator::{classify_set, classify_set_centroid, evaluate, qualified};
use crate::editor::{apply_edit, make_edit_spec, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::pipeline::{
    alpha_sweep_csv, k_sweep_csv, run_diagnose, run_pipeline, sweep_alpha, sweep_k, Inputs,
    RunConfig, Summary, TokenMap, Variant, DEFAULT_K, DEFAULT_TEST_FRACTION,
};
use crate::repstore::{
    load_representations, load_vocab_head, write_bytes, write_representations, write_vocab_head,
    Format, Manifest, ManifestEntry, RepresentationSet,
};
use crate::synthgen::{generate, preset, write_output, SynthConfig};
use crate::territory::{
    build_centroid, load_territory, write_territory, Decomposition, Method, TerritoryBasis,
};

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   1  internal error (panic)
   2  invalid command-line arguments
   3  I/O error
   4  malformed file
   5  non-finite value in input
   6  dimension mismatch
   7  invalid input value
   8  k out of range
   9  rank deficient (k above effective rank)
  10  unknown token
  11  zero-norm head row
  12  unknown category
  13  missing vocabulary head
  14  insufficient samples
  15  degenerate input
  16  configuration error

Errors are written to stderr as one JSON object:
  {\"error\": <kind>, \"message\": <text>, \"exit_code\": <code>}";

#[derive(Debug, Parser)]
#[command(
    name = "cosur",
    version,
    about = "Subspace authorship attribution and vocabulary-direction editing of hidden states",
    after_help = EXIT_CODES
)]
pub struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic manifest from a JSON config or a named preset.
    Synth(SynthArgs),
    /// Convert CSV/REPB representation files into a REPB manifest directory.
    Ingest(IngestArgs),
    /// Build territory files for manifest categories.
    Build(BuildArgs),
    /// Classify samples; one JSON line per sample.
    Classify(ClassifyArgs),
    /// Edit vectors toward their verdict's answer token.
    Edit(EditArgs),
    /// Representation diagnostics: CS, MMD, CKA, NGD/NFD, JS and probe gap.
    Diagnose(DiagnoseArgs),
    /// Accuracy as a function of territory dimension k.
    SweepK(SweepKArgs),
    /// Flip rate and accuracy as a function of editing strength α.
    SweepAlpha(SweepAlphaArgs),
    /// Split, build, classify, edit and diagnose in one run.
    Pipeline(PipelineArgs),
    /// Print a pipeline bundle's summary.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic config.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// paper-regime | mean-offset | generalization | orthogonal-lines
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the config's seed; presets default to 42.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CATEGORY=PATH; format follows the extension (.csv or REPB otherwise).
    #[arg(long = "input", required = true, value_parser = parse_category_path)]
    pub inputs: Vec<(String, PathBuf)>,
    /// Head file to copy into the output.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by commands that build territories.
#[derive(Debug, Args, Clone)]
pub struct TerritoryArgs {
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// svd | pca | cs
    #[arg(long, default_value = "svd")]
    pub variant: Variant,
    /// L2-normalize rows before building and classifying.
    #[arg(long)]
    pub normalize_rows: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Categories to build (default: all).
    #[arg(long = "category")]
    pub categories: Vec<String>,
    #[command(flatten)]
    pub territory: TerritoryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Manifest whose categories supply the territories (and default inputs).
    #[arg(long, required_unless_present = "territories")]
    pub manifest: Option<PathBuf>,
    /// Prebuilt territory files, used instead of building from the manifest.
    #[arg(long = "territory")]
    pub territories: Vec<PathBuf>,
    /// File to classify (default: every manifest sample, ids as category/id).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long = "self")]
    pub self_category: Option<String>,
    #[command(flatten)]
    pub territory: TerritoryArgs,
    /// Decisions output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write an evaluation report (manifest inputs only; needs --self).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// Vectors to edit.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    /// JSON lines from `classify`.
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long = "self")]
    pub self_category: String,
    /// self=NAME,other=NAME (category=NAME overrides a role).
    #[arg(long)]
    pub tokens: TokenMap,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Output directory for edited.repb and effects.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Compare this category against every other (default: all pairs).
    #[arg(long = "self")]
    pub self_category: Option<String>,
    /// Territory dimension for NGD/NFD.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by pipeline and sweeps.
#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "self")]
    pub self_category: String,
    #[command(flatten)]
    pub territory: TerritoryArgs,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// self=NAME,other=NAME; enables editing.
    #[arg(long)]
    pub tokens: Option<TokenMap>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Build and classify on the full sets instead of an 80/20 split.
    #[arg(long)]
    pub no_split: bool,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        let mut c = RunConfig::new(self.self_category.clone());
        c.k = self.territory.k;
        c.variant = self.territory.variant;
        c.normalize_rows = self.territory.normalize_rows;
        c.alpha = self.alpha;
        c.tokens = self.tokens.clone();
        c.seed = self.seed;
        c.split = !self.no_split;
        c.test_fraction = self.test_fraction;
        c
    }
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ks: Vec<usize>,
    /// CSV output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepAlphaArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated α values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also classify the remaining categories with territories {self, KNOWN}.
    #[arg(long)]
    pub known: Option<String>,
    /// Skip CS/MMD/CKA/JS/probe diagnostics.
    #[arg(long)]
    pub no_diagnostics: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Pipeline output directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Print the summary JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

fn parse_category_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((c, p)) if !c.is_empty() && !p.is_empty() => Ok((c.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected CATEGORY=PATH, got '{s}'")),
    }
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Build(a) => cmd_build(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::SweepK(a) => cmd_sweep_k(a),
        Command::SweepAlpha(a) => cmd_sweep_alpha(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_bytes(p, bytes),
        None => io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_inputs(manifest: &Path) -> Result<Inputs> {
    Inputs::from_manifest(&Manifest::load(manifest)?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut config = match (&a.config, &a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::format(path, format!("malformed synthetic config: {e}")))?
        }
        (None, Some(name)) => preset(name, 42)?,
        (None, None) => return Err(Error::Config("need --config or --preset".into())),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let out = generate(&config)?;
    write_output(&out, &a.out)?;
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let sets = a
        .inputs
        .iter()
        .map(|(c, p)| Ok(load_representations(p, Format::from_path(p))?.with_category(c.clone())))
        .collect::<Result<Vec<_>>>()?;
    let head = a.head.as_deref().map(load_vocab_head).transpose()?;
    let mut entries = Vec::with_capacity(sets.len());
    for s in &sets {
        entries.push(ManifestEntry {
            category: s.category().to_string(),
            path: PathBuf::from(format!("{}.repb", s.category())),
            format: Format::Repb,
        });
    }
    let manifest = Manifest::new(entries, head.as_ref().map(|_| PathBuf::from("head.repb")))?;
    create_dir(&a.out)?;
    for s in &sets {
        write_representations(s, &a.out.join(format!("{}.repb", s.category())), Format::Repb)?;
    }
    if let Some(h) = &head {
        write_vocab_head(h, &a.out.join("head.repb"))?;
    }
    manifest.save(&a.out.join("manifest.json"))
}

fn territory_method(variant: Variant) -> Result<Method> {
    match variant {
        Variant::Svd => Ok(Method::Svd),
        Variant::Pca => Ok(Method::Pca),
        Variant::Cs => Err(Error::Config(
            "the cs variant has no territory; use svd or pca".into(),
        )),
    }
}

fn prepared(set: RepresentationSet, normalize: bool) -> RepresentationSet {
    if normalize {
        set.normalized_rows()
    } else {
        set
    }
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let method = territory_method(a.territory.variant)?;
    let inputs = load_inputs(&a.manifest)?;
    let wanted: Vec<&RepresentationSet> = if a.categories.is_empty() {
        inputs.sets.iter().collect()
    } else {
        a.categories
            .iter()
            .map(|c| inputs.set(c))
            .collect::<Result<_>>()?
    };
    let territories = wanted
        .iter()
        .map(|s| {
            let s = prepared((*s).clone(), a.territory.normalize_rows);
            Decomposition::compute(&s, method)?.territory(a.territory.k)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    for t in &territories {
        write_territory(t, &a.out.join(format!("{}.territory.repb", t.category())))?;
    }
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let inputs = a.manifest.as_deref().map(load_inputs).transpose()?;
    let normalize = a.territory.normalize_rows;
    let targets: Vec<(RepresentationSet, bool)> = match (&a.input, &inputs) {
        (Some(p), _) => vec![(prepared(load_representations(p, Format::from_path(p))?, normalize), false)],
        (None, Some(inp)) => inp
            .sets
            .iter()
            .map(|s| (prepared(s.clone(), normalize), true))
            .collect(),
        (None, None) => return Err(Error::Config("need --input or --manifest".into())),
    };
    if a.report.is_some() && (a.input.is_some() || a.self_category.is_none()) {
        return Err(Error::Config(
            "--report needs manifest inputs and --self".into(),
        ));
    }
    let self_cat = a.self_category.as_deref();

    let mut lines = Vec::new();
    let mut verdicts: Vec<(String, String, Vec<String>)> = Vec::new();
    if a.territory.variant == Variant::Cs {
        let inp = inputs
            .as_ref()
            .ok_or_else(|| Error::Config("the cs variant needs --manifest".into()))?;
        let centroids: Vec<_> = inp
            .sets
            .iter()
            .map(|s| build_centroid(&prepared(s.clone(), normalize)))
            .collect();
        let refs: Vec<_> = centroids.iter().collect();
        for (set, qualify) in &targets {
            let prefix = qualify.then(|| set.category());
            for d in classify_set_centroid(set, &refs, self_cat, prefix)? {
                push_line(&mut lines, &d);
                verdicts.push((d.sample_id, d.verdict, d.cosines.into_keys().collect()));
            }
        }
    } else {
        let territories: Vec<TerritoryBasis> = if a.territories.is_empty() {
            let method = territory_method(a.territory.variant)?;
            let inp = inputs.as_ref().expect("manifest required without --territory");
            inp.sets
                .iter()
                .map(|s| Decomposition::compute(&prepared(s.clone(), normalize), method)?.territory(a.territory.k))
                .collect::<Result<_>>()?
        } else {
            a.territories
                .iter()
                .map(|p| load_territory(p))
                .collect::<Result<_>>()?
        };
        let refs: Vec<_> = territories.iter().collect();
        for (set, qualify) in &targets {
            let prefix = qualify.then(|| set.category());
            for d in classify_set(set, &refs, self_cat, prefix)? {
                push_line(&mut lines, &d);
                verdicts.push((d.sample_id, d.verdict, d.energies.into_keys().collect()));
            }
        }
    }

    if let (Some(report), Some(positive)) = (&a.report, self_cat) {
        let labels: HashMap<String, String> = targets
            .iter()
            .flat_map(|(s, _)| {
                s.sample_ids()
                    .iter()
                    .map(move |id| (qualified(Some(s.category()), id), s.category().to_string()))
            })
            .collect();
        let records: Vec<Scored> = verdicts
            .iter()
            .map(|(id, v, c)| Scored { id, verdict: v, candidates: c })
            .collect();
        let eval = evaluate(&records, &labels, positive)?;
        let mut bytes = serde_json::to_vec_pretty(&eval).expect("report serializes");
        bytes.push(b'\n');
        write_bytes(report, &bytes)?;
    }
    emit(a.out.as_deref(), &lines)
}

struct Scored<'a> {
    id: &'a str,
    verdict: &'a str,
    candidates: &'a [String],
}

impl crate::discriminator::Decision for Scored<'_> {
    fn sample_id(&self) -> &str {
        self.id
    }
    fn verdict(&self) -> &str {
        self.verdict
    }
    fn candidates(&self) -> Vec<&str> {
        self.candidates.iter().map(String::as_str).collect()
    }
}

fn push_line<T: serde::Serialize>(out: &mut Vec<u8>, item: &T) {
    serde_json::to_writer(&mut *out, item).expect("record serializes");
    out.push(b'\n');
}

#[derive(Deserialize)]
struct VerdictLine {
    id: String,
    verdict: String,
}

#[derive(serde::Serialize)]
struct EffectLine<'a> {
    id: &'a str,
    verdict: &'a str,
    target_token: &'a str,
    alpha: f64,
    logit_delta_target: f64,
    greedy_before: &'a str,
    greedy_after: &'a str,
}

fn cmd_edit(a: EditArgs) -> Result<()> {
    let set = load_representations(&a.input, Format::from_path(&a.input))?;
    let head = load_vocab_head(&a.head)?;
    let text = fs::read_to_string(&a.verdicts).map_err(|e| Error::io(&a.verdicts, e))?;
    let mut verdicts = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: VerdictLine = serde_json::from_str(line)
            .map_err(|e| Error::format(&a.verdicts, format!("line {}: {e}", i + 1)))?;
        verdicts.insert(v.id, v.verdict);
    }
    let mut edited = Vec::with_capacity(set.n() * set.d());
    let mut effects = Vec::new();
    for i in 0..set.n() {
        let id = &set.sample_ids()[i];
        let verdict = verdicts
            .get(id)
            .or_else(|| verdicts.get(&qualified(Some(set.category()), id)))
            .ok_or_else(|| Error::Invalid(format!("no verdict for sample '{id}'")))?;
        let token_map: HashMap<String, String> = [(
            verdict.clone(),
            a.tokens.token_for(verdict, &a.self_category)?.to_string(),
        )]
        .into();
        let spec = make_edit_spec(&head, verdict, &token_map, a.alpha)?;
        let out = apply_edit(&set.row_f64(i), &spec, &head)?;
        push_line(
            &mut effects,
            &EffectLine {
                id,
                verdict,
                target_token: &spec.target_token,
                alpha: a.alpha,
                logit_delta_target: out.logit_delta_target,
                greedy_before: &out.greedy_before,
                greedy_after: &out.greedy_after,
            },
        );
        edited.extend(out.edited.iter().map(|&v| v as f32));
    }
    let edited = RepresentationSet::new(
        set.category().to_string(),
        set.n(),
        set.d(),
        edited,
        set.sample_ids().to_vec(),
    )?;
    create_dir(&a.out)?;
    write_representations(&edited, &a.out.join("edited.repb"), Format::Repb)?;
    write_bytes(&a.out.join("effects.jsonl"), &effects)
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let inputs = load_inputs(&a.manifest)?;
    let (_, files) = run_diagnose(&inputs, a.self_category.as_deref(), a.k, a.seed)?;
    create_dir(&a.out)?;
    for (rel, bytes) in &files {
        write_bytes(&a.out.join(rel), bytes)?;
    }
    Ok(())
}

fn cmd_sweep_k(a: SweepKArgs) -> Result<()> {
    let inputs = load_inputs(&a.run.manifest)?;
    let rows = sweep_k(&inputs, &a.run.config(), &a.ks)?;
    emit(a.out.as_deref(), k_sweep_csv(&rows, &a.run.self_category).as_bytes())
}

fn cmd_sweep_alpha(a: SweepAlphaArgs) -> Result<()> {
    let inputs = load_inputs(&a.run.manifest)?;
    let rows = sweep_alpha(&inputs, &a.run.config(), &a.alphas)?;
    emit(a.out.as_deref(), alpha_sweep_csv(&rows).as_bytes())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let manifest = Manifest::load(&a.run.manifest)?;
    if a.run.tokens.is_some() && manifest.head.is_none() {
        return Err(Error::MissingHead);
    }
    let inputs = Inputs::from_manifest(&manifest)?;
    let mut config = a.run.config();
    config.known = a.known;
    config.diagnostics = !a.no_diagnostics;
    let bundle = run_pipeline(&inputs, &config)?;
    bundle.write(&a.out)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let path = a.bundle.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: Summary = serde_json::from_str(&text)
        .map_err(|e| Error::format(&path, format!("malformed summary: {e}")))?;
    if a.json {
        return emit(None, text.as_bytes());
    }
    emit(None, render_summary(&summary).as_bytes())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Plain-text table of a pipeline summary.
pub fn render_summary(s: &Summary) -> String {
    let c = &s.config;
    let mut out = format!(
        "self={} variant={} k={} alpha={} seed={} split={}\n\n",
        c.self_category, c.variant, c.k, c.alpha, c.seed, c.split
    );
    out.push_str(&format!(
        "{:<28} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "pair", "n", "acc", "f1", "base", "cosur", "ngd", "nfd"
    ));
    for p in &s.pairs {
        out.push_str(&format!(
            "{:<28} {:>6} {:>8.4} {:>8.4} {:>8} {:>8} {:>8} {:>8}\n",
            format!("{} vs {}", p.pair.0, p.pair.1),
            p.n_test,
            p.eval.accuracy,
            p.eval.f1,
            fmt_opt(p.base_acc),
            fmt_opt(p.cosur_acc),
            fmt_opt(p.ngd),
            fmt_opt(p.nfd),
        ));
    }
    out.push_str(&format!(
        "{:<28} {:>6} {:>8.4} {:>8.4} {:>8} {:>8}\n",
        "average",
        "",
        s.average_acc,
        s.average_f1,
        fmt_opt(s.average_base_acc),
        fmt_opt(s.average_cosur_acc)
    ));
    for g in &s.generalization {
        out.push_str(&format!(
            "\nunseen {} (territories {{{}, {}}}): other rate {:.4} over {} samples\n",
            g.category, c.self_category, g.known, g.other_rate, g.n
        ));
    }
    out
}
