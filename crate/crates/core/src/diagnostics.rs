// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature-distance metrics (CS, MMD, CKA), Jensen–Shannon divergence through
//! the vocabulary head, and the linear-probe gap between hidden states and
//! their softmax distributions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discriminator::cosine;
use crate::editor::{greedy_index, vocab_distribution};
use crate::error::{Error, Result};
use crate::repstore::{RepresentationSet, VocabHead};
use crate::rng::PhiloxStream;
use crate::territory::build_centroid;

/// Cap on aligned pairs examined by [`JsMode::MeanPairwise`].
pub const MAX_JS_PAIRS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMetricReport {
    pub pair: (String, String),
    pub cs: f64,
    pub mmd: f64,
    pub cka: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JsMode {
    MeanDistribution,
    MeanPairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsReport {
    pub pair: (String, String),
    pub mode: JsMode,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGapReport {
    pub probe_acc_hidden: f64,
    pub probe_acc_dist: f64,
    pub gap: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn check_same_d(a: &RepresentationSet, b: &RepresentationSet) -> Result<()> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            expected: a.d(),
            actual: b.d(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cosine similarity
// ---------------------------------------------------------------------------

/// Cosine between the two class centroids.
pub fn centroid_cosine(a: &RepresentationSet, b: &RepresentationSet) -> Result<f64> {
    check_same_d(a, b)?;
    cosine(&build_centroid(a).mean, &build_centroid(b).mean)
        .map_err(|_| Error::Degenerate("zero-norm centroid".into()))
}

/// Mean cosine over all cross pairs of rows.
pub fn mean_pairwise_cosine(a: &RepresentationSet, b: &RepresentationSet) -> Result<f64> {
    check_same_d(a, b)?;
    let ra = a.rows_f64();
    let rb = b.rows_f64();
    let mut total = 0.0;
    for x in &ra {
        for y in &rb {
            total += cosine(x, y)?;
        }
    }
    Ok(total / (ra.len() * rb.len()) as f64)
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise Euclidean distance over the pooled sample.
    Median,
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of pairwise distances over `x ∪ y`.
pub fn median_heuristic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

/// Unbiased U-statistic estimate of MMD² with an RBF kernel
/// `exp(−‖x−y‖²/(2σ²))`.
pub fn mmd_unbiased_rows(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "MMD needs at least two samples per side (got {m} and {n})"
        )));
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_heuristic(x, y),
    };
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Degenerate(format!("kernel bandwidth σ = {sigma}")));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |a: &[f64], b: &[f64]| (-gamma * sq_dist(a, b)).exp();
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                t += k(&s[i], &s[j]);
            }
        }
        2.0 * t / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += k(a, b);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (m * n) as f64)
}

pub fn mmd_unbiased(
    a: &RepresentationSet,
    b: &RepresentationSet,
    bandwidth: Bandwidth,
) -> Result<f64> {
    check_same_d(a, b)?;
    mmd_unbiased_rows(&a.rows_f64(), &b.rows_f64(), bandwidth)
}

// ---------------------------------------------------------------------------
// Linear CKA
// ---------------------------------------------------------------------------

fn center_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// `‖ȲᵀX̄‖²_F / (‖X̄ᵀX̄‖_F·‖ȲᵀȲ‖_F)` on column-centered matrices with equal
/// row counts. Uses the feature-space or sample-space Gram form, whichever is
/// smaller.
pub fn linear_cka_matrices(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    let mut xc = x.clone();
    let mut yc = y.clone();
    center_columns(&mut xc);
    center_columns(&mut yc);
    let n = x.nrows();
    let (num, dx, dy) = if n <= x.ncols().max(y.ncols()) {
        let k = &xc * xc.transpose();
        let l = &yc * yc.transpose();
        (k.component_mul(&l).sum(), k.norm(), l.norm())
    } else {
        let cross = yc.transpose() * &xc;
        let gx = xc.transpose() * &xc;
        let gy = yc.transpose() * &yc;
        (cross.norm_squared(), gx.norm(), gy.norm())
    };
    if dx == 0.0 || dy == 0.0 {
        return Err(Error::Degenerate("zero-variance input to CKA".into()));
    }
    Ok((num / (dx * dy)).clamp(0.0, 1.0))
}

pub fn linear_cka(a: &RepresentationSet, b: &RepresentationSet) -> Result<f64> {
    linear_cka_matrices(&a.to_matrix(), &b.to_matrix())
}

/// CS, MMD (median bandwidth) and CKA for one pair. CKA compares the first
/// `min(N_a, N_b)` rows of each set.
pub fn pairwise_metrics(a: &RepresentationSet, b: &RepresentationSet) -> Result<PairwiseMetricReport> {
    let cs = centroid_cosine(a, b)?;
    let mmd = mmd_unbiased(a, b, Bandwidth::Median)?;
    let n = a.n().min(b.n());
    let xa = a.to_matrix().rows(0, n).clone_owned();
    let xb = b.to_matrix().rows(0, n).clone_owned();
    let cka = linear_cka_matrices(&xa, &xb)?;
    Ok(PairwiseMetricReport {
        pair: (a.category().to_string(), b.category().to_string()),
        cs,
        mmd,
        cka,
    })
}

// ---------------------------------------------------------------------------
// Jensen–Shannon
// ---------------------------------------------------------------------------

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Invalid("probability entries must be finite and ≥ 0".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// JS divergence in bits; `0·log 0 = 0`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    check_simplex(p)?;
    check_simplex(q)?;
    Ok(js_unchecked(p, q))
}

fn js_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

fn mean_distribution(set: &RepresentationSet, head: &VocabHead) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; head.vocab_size()];
    for i in 0..set.n() {
        let p = vocab_distribution(&set.row_f64(i), head, 1.0)?;
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let n = set.n() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// JS divergence between two categories after projecting through `head`.
/// The pairwise mode averages over index-aligned pairs `(a_i, b_i)` of the
/// first `min(N_a, N_b)` rows; `seed` drives its subsample when there are
/// more than [`MAX_JS_PAIRS`].
pub fn category_js(
    a: &RepresentationSet,
    b: &RepresentationSet,
    head: &VocabHead,
    mode: JsMode,
    seed: u64,
) -> Result<JsReport> {
    check_same_d(a, b)?;
    if a.d() != head.d() {
        return Err(Error::DimensionMismatch {
            expected: head.d(),
            actual: a.d(),
        });
    }
    let value = match mode {
        JsMode::MeanDistribution => {
            js_divergence(&mean_distribution(a, head)?, &mean_distribution(b, head)?)?
        }
        JsMode::MeanPairwise => {
            let n = a.n().min(b.n());
            let mut idx: Vec<usize> = if n <= MAX_JS_PAIRS {
                (0..n).collect()
            } else {
                let mut p = PhiloxStream::new(seed, 0x4a53).permutation(n);
                p.truncate(MAX_JS_PAIRS);
                p
            };
            idx.sort_unstable();
            let mut sum = 0.0;
            for &i in &idx {
                let p = vocab_distribution(&a.row_f64(i), head, 1.0)?;
                let q = vocab_distribution(&b.row_f64(i), head, 1.0)?;
                sum += js_unchecked(&p, &q);
            }
            sum / idx.len() as f64
        }
    };
    Ok(JsReport {
        pair: (a.category().to_string(), b.category().to_string()),
        mode,
        value,
    })
}

// ---------------------------------------------------------------------------
// Probe gap
// ---------------------------------------------------------------------------

/// Stratified split: per category, a seeded permutation whose first
/// `round(n·fraction)` rows (at least one) are held out.
pub fn holdout_split(n: usize, fraction: f64, seed: u64, stream: u32) -> (Vec<usize>, Vec<usize>) {
    let perm = PhiloxStream::new(seed, stream).permutation(n);
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Closed-form one-vs-rest ridge classifier on standardized features.
struct RidgeProbe {
    mean: DVector<f64>,
    scale: DVector<f64>,
    weights: DMatrix<f64>,
    offset: DVector<f64>,
}

impl RidgeProbe {
    fn fit(x: &DMatrix<f64>, labels: &[usize], classes: usize, ridge: f64) -> Result<Self> {
        let (n, f) = (x.nrows(), x.ncols());
        let mean = DVector::from_fn(f, |j, _| x.column(j).sum() / n as f64);
        let scale = DVector::from_fn(f, |j, _| {
            let m = mean[j];
            let var = x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                1.0 / var.sqrt()
            } else {
                0.0
            }
        });
        let xs = standardize(x, &mean, &scale);
        let mut y = DMatrix::zeros(n, classes);
        for (i, &c) in labels.iter().enumerate() {
            y[(i, c)] = 1.0;
        }
        let offset = DVector::from_fn(classes, |c, _| y.column(c).sum() / n as f64);
        for mut row in y.row_iter_mut() {
            row -= offset.transpose();
        }
        let weights = if f <= n {
            let mut gram = xs.transpose() * &xs;
            for i in 0..f {
                gram[(i, i)] += ridge;
            }
            let rhs = xs.transpose() * &y;
            gram.cholesky()
                .ok_or_else(|| Error::Degenerate("ridge system not positive definite".into()))?
                .solve(&rhs)
        } else {
            let mut gram = &xs * xs.transpose();
            for i in 0..n {
                gram[(i, i)] += ridge;
            }
            let dual = gram
                .cholesky()
                .ok_or_else(|| Error::Degenerate("ridge system not positive definite".into()))?
                .solve(&y);
            xs.transpose() * dual
        };
        Ok(Self {
            mean,
            scale,
            weights,
            offset,
        })
    }

    fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let scores = standardize(x, &self.mean, &self.scale) * &self.weights;
        let correct = scores
            .row_iter()
            .zip(labels)
            .filter(|(row, &c)| {
                let s: Vec<f64> = row.iter().zip(self.offset.iter()).map(|(a, b)| a + b).collect();
                greedy_index(&s) == c
            })
            .count();
        correct as f64 / labels.len() as f64
    }
}

fn standardize(x: &DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[j]) * scale[j])
}

/// Held-out accuracy of the same linear probe on `h` and on `softmax(Wh+b)`.
pub fn probe_gap(
    sets: &[RepresentationSet],
    head: &VocabHead,
    holdout_fraction: f64,
    ridge: f64,
    seed: u64,
) -> Result<ProbeGapReport> {
    if sets.len() < 2 {
        return Err(Error::InsufficientSamples(
            "probe needs at least two categories".into(),
        ));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "holdout fraction {holdout_fraction} outside (0, 1)"
        )));
    }
    if !(ridge > 0.0) {
        return Err(Error::Invalid(format!("ridge {ridge} must be > 0")));
    }
    for s in sets {
        if s.n() < 10 {
            return Err(Error::InsufficientSamples(format!(
                "category '{}' has {} samples, need ≥ 10",
                s.category(),
                s.n()
            )));
        }
        if s.d() != head.d() {
            return Err(Error::DimensionMismatch {
                expected: head.d(),
                actual: s.d(),
            });
        }
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (c, s) in sets.iter().enumerate() {
        let (train, test) = holdout_split(s.n(), holdout_fraction, seed, c as u32);
        train_rows.extend(train.into_iter().map(|i| (c, s.row_f64(i))));
        test_rows.extend(test.into_iter().map(|i| (c, s.row_f64(i))));
    }
    let hidden = |rows: &[(usize, Vec<f64>)]| {
        DMatrix::from_fn(rows.len(), head.d(), |i, j| rows[i].1[j])
    };
    let dist = |rows: &[(usize, Vec<f64>)]| -> Result<DMatrix<f64>> {
        let ps: Vec<Vec<f64>> = rows
            .iter()
            .map(|(_, h)| vocab_distribution(h, head, 1.0))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(rows.len(), head.vocab_size(), |i, j| ps[i][j]))
    };
    let y_train: Vec<usize> = train_rows.iter().map(|(c, _)| *c).collect();
    let y_test: Vec<usize> = test_rows.iter().map(|(c, _)| *c).collect();

    let probe_h = RidgeProbe::fit(&hidden(&train_rows), &y_train, sets.len(), ridge)?;
    let acc_h = probe_h.accuracy(&hidden(&test_rows), &y_test);
    let probe_p = RidgeProbe::fit(&dist(&train_rows)?, &y_train, sets.len(), ridge)?;
    let acc_p = probe_p.accuracy(&dist(&test_rows)?, &y_test);
    Ok(ProbeGapReport {
        probe_acc_hidden: acc_h,
        probe_acc_dist: acc_p,
        gap: acc_h - acc_p,
        n_train: y_train.len(),
        n_test: y_test.len(),
    })
}
