// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic representation sets and vocabulary heads.
//!
//! Samples of class c are
//!
//! ```text
//! h = mean_norm·u + offset_c + B_c·(signal_scale·z) + noise_sigma·ε
//! ```
//!
//! with `u` a unit direction shared by all classes, `B_c` a d×r orthonormal
//! private basis and `z`, `ε` standard normal. `B_0` is drawn freely; column i
//! of every later class is `cos θ_i·B_0[:, i] + sin θ_i·f`, where `f` is a fresh
//! frame direction, so the principal angles to class 0 are exactly the
//! configured `θ_i`. All directions are columns of one orthonormal frame.
//!
//! Streams: frame = 0, class c samples = c + 1, head = [`HEAD_STREAM`].

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::{
    write_representations, write_vocab_head, Format, Manifest, ManifestEntry, RepresentationSet,
    VocabHead,
};
use crate::rng::PhiloxStream;

pub const HEAD_STREAM: u32 = 0xFFFF_FFFF;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanOffset {
    /// Explicit length-d offset.
    Vector(Vec<f64>),
    /// Offset of this norm along a fresh frame direction.
    Axis(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub category: String,
    pub private_rank: usize,
    /// Principal angles (radians, in [0, π/2]) to class 0's private basis.
    /// Missing entries mean orthogonal. Ignored for class 0.
    #[serde(default)]
    pub angles: Option<Vec<f64>>,
    #[serde(default)]
    pub mean_offset: Option<MeanOffset>,
    #[serde(default = "one")]
    pub signal_scale: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub vocab_size: usize,
    pub rank: usize,
    /// With rank = d ≤ vocab_size, use orthonormal columns (injective head).
    #[serde(default)]
    pub orthogonal: bool,
    /// Names for the first rows; the rest are `tok<i>`.
    #[serde(default)]
    pub token_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    pub n_per_class: usize,
    #[serde(default)]
    pub mean_norm: f64,
    pub classes: Vec<ClassSpec>,
    pub seed: u64,
    #[serde(default)]
    pub head: Option<HeadSpec>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sets: Vec<RepresentationSet>,
    pub head: Option<VocabHead>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_per_class == 0 || self.classes.is_empty() {
            return Err(Error::Config("d, n_per_class and classes must be non-empty".into()));
        }
        for (c, spec) in self.classes.iter().enumerate() {
            if spec.private_rank > self.d {
                return Err(Error::Config(format!(
                    "class '{}' rank {} exceeds d = {}",
                    spec.category, spec.private_rank, self.d
                )));
            }
            if !(spec.noise_sigma >= 0.0) || !spec.signal_scale.is_finite() {
                return Err(Error::Config(format!(
                    "class '{}' needs noise_sigma ≥ 0 and finite signal_scale",
                    spec.category
                )));
            }
            if let Some(angles) = &spec.angles {
                if c > 0 && angles.iter().any(|a| !(0.0..=FRAC_PI_2).contains(a)) {
                    return Err(Error::Config(format!(
                        "class '{}' angles must lie in [0, π/2]",
                        spec.category
                    )));
                }
            }
            if let Some(MeanOffset::Vector(v)) = &spec.mean_offset {
                if v.len() != self.d {
                    return Err(Error::Config(format!(
                        "class '{}' mean_offset has length {}, expected {}",
                        spec.category,
                        v.len(),
                        self.d
                    )));
                }
            }
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.category.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate class category".into()));
        }
        Ok(())
    }
}

/// Orthonormalize the columns of `m` in place (modified Gram–Schmidt, two
/// passes).
fn orthonormalize(m: &mut DMatrix<f64>) -> Result<()> {
    for _ in 0..2 {
        for j in 0..m.ncols() {
            for p in 0..j {
                let dot = m.column(p).dot(&m.column(j));
                let prev = m.column(p).clone_owned();
                m.column_mut(j).axpy(-dot, &prev, 1.0);
            }
            let norm = m.column(j).norm();
            if norm < 1e-10 {
                return Err(Error::Degenerate("random frame lost rank".into()));
            }
            m.column_mut(j).unscale_mut(norm);
        }
    }
    Ok(())
}

/// d×m matrix with orthonormal columns from a Gaussian fill (column-major draw order).
fn random_frame(d: usize, m: usize, rng: &mut PhiloxStream) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(d, m);
    for j in 0..m {
        for i in 0..d {
            g[(i, j)] = rng.next_normal();
        }
    }
    orthonormalize(&mut g)?;
    Ok(g)
}

/// Plan of frame columns: mean direction, class bases, axis offsets.
struct Layout {
    bases: Vec<Vec<BasisColumn>>,
    offset_axes: Vec<Option<usize>>,
    columns: usize,
}

enum BasisColumn {
    Frame(usize),
    Rotated { base: usize, fresh: usize, angle: f64 },
}

fn plan(config: &SynthConfig) -> Result<Layout> {
    let mut next = 1usize; // column 0 is the shared mean direction
    let r0 = config.classes[0].private_rank;
    let base0: Vec<usize> = (next..next + r0).collect();
    next += r0;
    let mut bases = vec![base0.iter().map(|&c| BasisColumn::Frame(c)).collect::<Vec<_>>()];
    for spec in &config.classes[1..] {
        let angles = spec.angles.clone().unwrap_or_default();
        let mut cols = Vec::with_capacity(spec.private_rank);
        for i in 0..spec.private_rank {
            let angle = if i < r0 {
                angles.get(i).copied().unwrap_or(FRAC_PI_2)
            } else {
                FRAC_PI_2
            };
            if i < r0 && angle == 0.0 {
                cols.push(BasisColumn::Frame(base0[i]));
            } else if i < r0 && angle < FRAC_PI_2 {
                cols.push(BasisColumn::Rotated {
                    base: base0[i],
                    fresh: next,
                    angle,
                });
                next += 1;
            } else {
                cols.push(BasisColumn::Frame(next));
                next += 1;
            }
        }
        bases.push(cols);
    }
    let mut offset_axes = Vec::with_capacity(config.classes.len());
    for spec in &config.classes {
        if let Some(MeanOffset::Axis(_)) = spec.mean_offset {
            offset_axes.push(Some(next));
            next += 1;
        } else {
            offset_axes.push(None);
        }
    }
    if next > config.d {
        return Err(Error::Config(format!(
            "configuration needs {next} orthogonal directions but d = {}",
            config.d
        )));
    }
    Ok(Layout {
        bases,
        offset_axes,
        columns: next,
    })
}

/// Generate all classes (and the head, when configured).
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let layout = plan(config)?;
    let d = config.d;
    let frame = random_frame(d, layout.columns, &mut PhiloxStream::new(config.seed, 0))?;

    let mut sets = Vec::with_capacity(config.classes.len());
    for (c, spec) in config.classes.iter().enumerate() {
        let basis = DMatrix::from_fn(d, spec.private_rank, |i, j| match layout.bases[c][j] {
            BasisColumn::Frame(col) => frame[(i, col)],
            BasisColumn::Rotated { base, fresh, angle } => {
                angle.cos() * frame[(i, base)] + angle.sin() * frame[(i, fresh)]
            }
        });
        let mut center: Vec<f64> = (0..d).map(|i| config.mean_norm * frame[(i, 0)]).collect();
        match (&spec.mean_offset, layout.offset_axes[c]) {
            (Some(MeanOffset::Vector(v)), _) => {
                for (m, o) in center.iter_mut().zip(v) {
                    *m += o;
                }
            }
            (Some(MeanOffset::Axis(norm)), Some(col)) => {
                for (i, m) in center.iter_mut().enumerate() {
                    *m += norm * frame[(i, col)];
                }
            }
            _ => {}
        }

        let mut rng = PhiloxStream::new(config.seed, c as u32 + 1);
        let n = config.n_per_class;
        let mut data = Vec::with_capacity(n * d);
        let mut z = vec![0.0; spec.private_rank];
        for _ in 0..n {
            for zj in z.iter_mut() {
                *zj = spec.signal_scale * rng.next_normal();
            }
            for (i, m) in center.iter().enumerate() {
                let signal: f64 = (0..spec.private_rank).map(|j| basis[(i, j)] * z[j]).sum();
                let noise = spec.noise_sigma * rng.next_normal();
                data.push((m + signal + noise) as f32);
            }
        }
        let ids = (0..n).map(|i| format!("{}-{i:05}", spec.category)).collect();
        sets.push(RepresentationSet::new(spec.category.clone(), n, d, data, ids)?);
    }

    let head = config
        .head
        .as_ref()
        .map(|h| generate_head_on(d, h, &mut PhiloxStream::new(config.seed, HEAD_STREAM)))
        .transpose()?;
    Ok(SynthOutput { sets, head })
}

/// Head with `W = A·B` (A: |V|×rank, B: rank×d, standard normal entries),
/// rows rescaled to unit norm, zero bias.
pub fn generate_head(d: usize, vocab_size: usize, rank: usize, seed: u64) -> Result<VocabHead> {
    let spec = HeadSpec {
        vocab_size,
        rank,
        orthogonal: false,
        token_names: Vec::new(),
    };
    generate_head_on(d, &spec, &mut PhiloxStream::new(seed, HEAD_STREAM))
}

pub fn generate_head_with(d: usize, spec: &HeadSpec, seed: u64) -> Result<VocabHead> {
    generate_head_on(d, spec, &mut PhiloxStream::new(seed, HEAD_STREAM))
}

fn generate_head_on(d: usize, spec: &HeadSpec, rng: &mut PhiloxStream) -> Result<VocabHead> {
    let v = spec.vocab_size;
    if spec.rank == 0 || spec.rank > v.min(d) {
        return Err(Error::Config(format!(
            "head rank {} outside 1..={}",
            spec.rank,
            v.min(d)
        )));
    }
    let mut w = if spec.orthogonal {
        if spec.rank != d {
            return Err(Error::Config("orthogonal head requires rank = d ≤ vocab_size".into()));
        }
        random_frame(v, d, rng)?
    } else {
        let mut a = DMatrix::zeros(v, spec.rank);
        for i in 0..v {
            for j in 0..spec.rank {
                a[(i, j)] = rng.next_normal();
            }
        }
        let mut b = DMatrix::zeros(spec.rank, d);
        for i in 0..spec.rank {
            for j in 0..d {
                b[(i, j)] = rng.next_normal();
            }
        }
        a * b
    };
    for mut row in w.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row.unscale_mut(n);
        }
    }
    if spec.token_names.len() > v {
        return Err(Error::Config("more token names than vocabulary rows".into()));
    }
    let names: Vec<String> = (0..v)
        .map(|i| {
            spec.token_names
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("tok{i}"))
        })
        .collect();
    let weights: Vec<f64> = (0..v)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| w[(i, j)])
        .collect();
    VocabHead::from_f64(v, d, weights, None, names)
}

/// Write every set (`<category>.repb`), the head (`head.repb`) and
/// `manifest.json` into `dir`. Returns the manifest path.
pub fn write_output(out: &SynthOutput, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(out.sets.len());
    for s in &out.sets {
        let name = format!("{}.repb", s.category());
        write_representations(s, &dir.join(&name), Format::Repb)?;
        entries.push(ManifestEntry {
            category: s.category().to_string(),
            path: PathBuf::from(name),
            format: Format::Repb,
        });
    }
    let head = match &out.head {
        Some(h) => {
            write_vocab_head(h, &dir.join("head.repb"))?;
            Some(PathBuf::from("head.repb"))
        }
        None => None,
    };
    let manifest = Manifest::new(entries, head)?;
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Named fixtures
// ---------------------------------------------------------------------------

fn class(category: &str, rank: usize, angles: Option<Vec<f64>>, sigma: f64) -> ClassSpec {
    ClassSpec {
        category: category.into(),
        private_rank: rank,
        angles,
        mean_offset: None,
        signal_scale: 1.0,
        noise_sigma: sigma,
    }
}

fn yes_no_head(vocab_size: usize, rank: usize) -> HeadSpec {
    HeadSpec {
        vocab_size,
        rank,
        orthogonal: false,
        token_names: vec!["Yes".into(), "No".into()],
    }
}

/// Shared mean of norm 10, orthogonal rank-4 privates, d = 64, σ = 0.1,
/// 400 per class. High centroid cosine, low CKA.
pub fn paper_regime(seed: u64) -> SynthConfig {
    SynthConfig {
        d: 64,
        n_per_class: 400,
        mean_norm: 10.0,
        classes: vec![class("self", 4, None, 0.1), class("other", 4, None, 0.1)],
        seed,
        head: Some(yes_no_head(128, 64)),
    }
}

/// Both classes share one private subspace; only their (uncentered) means
/// differ, each shifted by 3 along its own axis.
pub fn mean_offset(seed: u64) -> SynthConfig {
    let mut s = class("self", 4, None, 0.1);
    s.mean_offset = Some(MeanOffset::Axis(3.0));
    let mut o = class("other", 4, Some(vec![0.0; 4]), 0.1);
    o.mean_offset = Some(MeanOffset::Axis(3.0));
    SynthConfig {
        d: 64,
        n_per_class: 400,
        mean_norm: 10.0,
        classes: vec![s, o],
        seed,
        head: Some(yes_no_head(128, 64)),
    }
}

/// Three classes: `chatgpt` (reference), `self` orthogonal to it, and
/// `llama` at 0.3 rad from `chatgpt` on every private direction.
pub fn generalization(seed: u64) -> SynthConfig {
    SynthConfig {
        d: 64,
        n_per_class: 400,
        mean_norm: 10.0,
        classes: vec![
            class("chatgpt", 4, None, 0.1),
            class("self", 4, None, 0.1),
            class("llama", 4, Some(vec![0.3; 4]), 0.1),
        ],
        seed,
        head: Some(yes_no_head(128, 64)),
    }
}

/// Two noiseless classes on orthogonal lines through the origin.
pub fn orthogonal_lines(seed: u64) -> SynthConfig {
    SynthConfig {
        d: 8,
        n_per_class: 50,
        mean_norm: 0.0,
        classes: vec![class("self", 1, None, 0.0), class("other", 1, None, 0.0)],
        seed,
        head: Some(yes_no_head(16, 8)),
    }
}

pub fn preset(name: &str, seed: u64) -> Result<SynthConfig> {
    match name {
        "paper-regime" => Ok(paper_regime(seed)),
        "mean-offset" => Ok(mean_offset(seed)),
        "generalization" => Ok(generalization(seed)),
        "orthogonal-lines" => Ok(orthogonal_lines(seed)),
        other => Err(Error::Config(format!("unknown preset '{other}'"))),
    }
}

/// Two classes separated only along a direction in the null space of a
/// rank-2 head. Returns the sets, the rank-2 head and a full-rank head of the
/// same vocabulary for comparison.
#[derive(Debug, Clone)]
pub struct BottleneckFixture {
    pub sets: Vec<RepresentationSet>,
    pub low_rank_head: VocabHead,
    pub full_rank_head: VocabHead,
}

pub fn bottleneck_fixture(
    d: usize,
    vocab_size: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<BottleneckFixture> {
    if vocab_size < d || d < 3 {
        return Err(Error::Config("bottleneck fixture needs vocab_size ≥ d ≥ 3".into()));
    }
    let low = generate_head(d, vocab_size, 2, seed)?;
    let full = generate_head(d, vocab_size, d, seed.wrapping_add(1))?;

    // Row space of the rank-2 head, then one null direction orthogonal to it.
    let svd = low.weight_matrix().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite")
    });
    let mut frame = DMatrix::zeros(d, 3);
    for (dst, &src) in order.iter().take(2).enumerate() {
        frame.set_column(dst, &v_t.row(src).transpose());
    }
    let mut rng = PhiloxStream::new(seed, 0);
    for i in 0..d {
        frame[(i, 2)] = rng.next_normal();
    }
    orthonormalize(&mut frame)?;

    let mut sets = Vec::with_capacity(2);
    for (c, name) in ["self", "other"].iter().enumerate() {
        let sign = if c == 0 { 0.5 } else { -0.5 };
        let mut rng = PhiloxStream::new(seed, c as u32 + 1);
        let mut data = Vec::with_capacity(n_per_class * d);
        for _ in 0..n_per_class {
            let z0 = 2.0 * rng.next_normal();
            let z1 = 2.0 * rng.next_normal();
            let along = sign * separation + 0.5 * rng.next_normal();
            for i in 0..d {
                let noise = 0.05 * rng.next_normal();
                let v = z0 * frame[(i, 0)] + z1 * frame[(i, 1)] + along * frame[(i, 2)] + noise;
                data.push(v as f32);
            }
        }
        let ids = (0..n_per_class).map(|i| format!("{name}-{i:05}")).collect();
        sets.push(RepresentationSet::new(*name, n_per_class, d, data, ids)?);
    }
    Ok(BottleneckFixture {
        sets,
        low_rank_head: low,
        full_rank_head: full,
    })
}
