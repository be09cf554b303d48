// SPDX-License-Identifier: MIT OR Apache-2.0

//! Territory subspaces and subspace distances.
//!
//! A territory is the span of the top-k right singular vectors of a
//! category's (uncentered) representation matrix. The PCA variant centers the
//! rows first; the centroid variant keeps only the class mean.
//!
//! Singular vectors are sign-normalized so the largest-magnitude entry of each
//! column is positive (first index wins ties), which makes bases bitwise
//! reproducible.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::{encode_repb, read_repb, write_bytes, RepbHeader, RepresentationSet};

/// σ_k below this fraction of σ_1 counts as rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-12;
/// Maximum deviation of `VᵀV` from the identity accepted for a basis.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Pca,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Svd => "svd",
            Method::Pca => "pca",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Method::Svd),
            "pca" => Ok(Method::Pca),
            other => Err(Error::Config(format!("unknown territory method '{other}'"))),
        }
    }
}

/// d×k orthonormal basis of one category's territory.
#[derive(Debug, Clone, PartialEq)]
pub struct TerritoryBasis {
    category: String,
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
    method: Method,
}

impl TerritoryBasis {
    /// Wrap an existing basis, checking the orthonormality and ordering
    /// invariants.
    pub fn from_parts(
        category: impl Into<String>,
        basis: DMatrix<f64>,
        singular_values: Vec<f64>,
        method: Method,
    ) -> Result<Self> {
        let k = basis.ncols();
        if k == 0 || k > basis.nrows() {
            return Err(Error::KOutOfRange {
                k,
                max: basis.nrows(),
            });
        }
        if singular_values.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: singular_values.len(),
            });
        }
        if singular_values.iter().any(|s| !(*s >= 0.0) || !s.is_finite())
            || singular_values.windows(2).any(|w| w[0] < w[1])
        {
            return Err(Error::Invalid(
                "singular values must be finite, non-negative and non-increasing".into(),
            ));
        }
        let dev = orthonormality_error(&basis);
        if !(dev < ORTHONORMAL_TOLERANCE) {
            return Err(Error::Invalid(format!(
                "basis is not orthonormal (max |VᵀV − I| = {dev:e})"
            )));
        }
        Ok(Self {
            category: category.into(),
            basis,
            singular_values,
            method,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn d(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Coordinates `Vᵀh`.
    pub fn coordinates(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: h.len(),
            });
        }
        Ok(self
            .basis
            .column_iter()
            .map(|c| c.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Payload is k rows of length d (one basis vector per row).
    pub fn to_repb_bytes(&self) -> Vec<u8> {
        let header = RepbHeader {
            kind: Some("territory".into()),
            n: self.k(),
            d: self.d(),
            category: Some(self.category.clone()),
            k: Some(self.k()),
            method: Some(self.method.to_string()),
            singular_values: Some(self.singular_values.clone()),
            ..Default::default()
        };
        let payload: Vec<f32> = self
            .basis
            .column_iter()
            .flat_map(|c| c.iter().map(|&v| v as f32).collect::<Vec<_>>())
            .collect();
        encode_repb(&header, &payload)
    }
}

/// max |VᵀV − I|.
pub fn orthonormality_error(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.transpose() * basis;
    let k = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn write_territory(t: &TerritoryBasis, path: &Path) -> Result<()> {
    write_bytes(path, &t.to_repb_bytes())
}

/// Load a territory. The f32 payload is re-orthonormalized (modified
/// Gram–Schmidt, two passes, column order and orientation kept).
pub fn load_territory(path: &Path) -> Result<TerritoryBasis> {
    let (h, values) = read_repb(path, |h| h.n * h.d)?;
    if h.kind.as_deref() != Some("territory") {
        return Err(Error::format(path, "header kind is not 'territory'"));
    }
    let (k, d) = (h.n, h.d);
    if h.k.is_some_and(|hk| hk != k) {
        return Err(Error::format(path, "header k disagrees with row count"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite basis entry"));
    }
    let mut basis = DMatrix::from_fn(d, k, |i, j| f64::from(values[j * d + i]));
    for _ in 0..2 {
        for j in 0..k {
            for p in 0..j {
                let dot = basis.column(p).dot(&basis.column(j));
                let prev = basis.column(p).clone_owned();
                basis.column_mut(j).axpy(-dot, &prev, 1.0);
            }
            let norm = basis.column(j).norm();
            if norm == 0.0 {
                return Err(Error::format(path, format!("basis column {j} is zero")));
            }
            basis.column_mut(j).unscale_mut(norm);
        }
    }
    let method = h
        .method
        .as_deref()
        .unwrap_or("svd")
        .parse()
        .map_err(|e: Error| Error::format(path, e.to_string()))?;
    let sv = h.singular_values.unwrap_or_else(|| vec![0.0; k]);
    TerritoryBasis::from_parts(h.category.unwrap_or_default(), basis, sv, method)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// All right singular vectors of a set, computed once and sliced per k.
#[derive(Debug, Clone)]
pub struct Decomposition {
    category: String,
    method: Method,
    /// d×r, columns sorted by singular value, sign-normalized.
    vectors: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl Decomposition {
    pub fn compute(set: &RepresentationSet, method: Method) -> Result<Self> {
        let mut h = set.to_matrix();
        if method == Method::Pca {
            let mean = column_means(&h);
            for mut row in h.row_iter_mut() {
                row -= mean.transpose();
            }
        }
        Self::from_matrix(set.category(), h, method)
    }

    /// Decompose an already prepared N×d matrix.
    pub fn from_matrix(category: &str, h: DMatrix<f64>, method: Method) -> Result<Self> {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("matrix has non-finite entries".into()));
        }
        let d = h.ncols();
        let svd = h.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("finite singular values")
                .then(a.cmp(&b))
        });
        let mut vectors = DMatrix::zeros(d, order.len());
        let mut singular_values = Vec::with_capacity(order.len());
        for (dst, &src) in order.iter().enumerate() {
            let mut col: DVector<f64> = v_t.row(src).transpose();
            fix_sign(&mut col);
            vectors.set_column(dst, &col);
            singular_values.push(svd.singular_values[src].max(0.0));
        }
        Ok(Self {
            category: category.to_string(),
            method,
            vectors,
            singular_values,
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Number of singular values at or above `RANK_TOLERANCE · σ_1`.
    pub fn effective_rank(&self) -> usize {
        let s1 = self.singular_values.first().copied().unwrap_or(0.0);
        if s1 <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .take_while(|&&s| s >= RANK_TOLERANCE * s1)
            .count()
    }

    /// Top-k territory.
    pub fn territory(&self, k: usize) -> Result<TerritoryBasis> {
        let max = self.singular_values.len();
        if k == 0 || k > max {
            return Err(Error::KOutOfRange { k, max });
        }
        let rank = self.effective_rank();
        if rank < k {
            return Err(Error::RankDeficient {
                k,
                effective_rank: rank,
            });
        }
        TerritoryBasis::from_parts(
            self.category.clone(),
            self.vectors.columns(0, k).clone_owned(),
            self.singular_values[..k].to_vec(),
            self.method,
        )
    }
}

/// Flip so the largest-|·| entry is positive; the lowest index wins ties.
fn fix_sign(col: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}

fn column_means(h: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(h.ncols(), |j, _| {
        pairwise_sum(h.column(j).as_slice()) / h.nrows() as f64
    })
}

/// Territory from the top-k right singular vectors of the uncentered matrix.
pub fn build_territory_svd(set: &RepresentationSet, k: usize) -> Result<TerritoryBasis> {
    check_k(set, k)?;
    Decomposition::compute(set, Method::Svd)?.territory(k)
}

/// Territory from the top-k principal components (rows mean-centered).
pub fn build_territory_pca(set: &RepresentationSet, k: usize) -> Result<TerritoryBasis> {
    check_k(set, k)?;
    Decomposition::compute(set, Method::Pca)?.territory(k)
}

pub fn build_territory(set: &RepresentationSet, k: usize, method: Method) -> Result<TerritoryBasis> {
    match method {
        Method::Svd => build_territory_svd(set, k),
        Method::Pca => build_territory_pca(set, k),
    }
}

fn check_k(set: &RepresentationSet, k: usize) -> Result<()> {
    let max = set.n().min(set.d());
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    Ok(())
}

/// Class center used by the cosine-similarity variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub category: String,
    pub mean: Vec<f64>,
}

pub fn build_centroid(set: &RepresentationSet) -> Centroid {
    let n = set.n();
    let d = set.d();
    let mut column = Vec::with_capacity(n);
    let mean = (0..d)
        .map(|j| {
            column.clear();
            column.extend((0..n).map(|i| f64::from(set.data()[i * d + j])));
            pairwise_sum(&column) / n as f64
        })
        .collect();
    Centroid {
        category: set.category().to_string(),
        mean,
    }
}

pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

// ---------------------------------------------------------------------------
// Subspace distances
// ---------------------------------------------------------------------------

fn check_pair(a: &TerritoryBasis, b: &TerritoryBasis) -> Result<()> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            expected: a.d(),
            actual: b.d(),
        });
    }
    if a.k() != b.k() {
        return Err(Error::DimensionMismatch {
            expected: a.k(),
            actual: b.k(),
        });
    }
    Ok(())
}

/// Principal angles between two equal-dimension territories, ascending.
///
/// Cosines come from σ(AᵀB) and sines from σ(B − AAᵀB); each angle uses
/// whichever is better conditioned (acos for θ ≥ π/4, asin below).
pub fn principal_angles(a: &TerritoryBasis, b: &TerritoryBasis) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    let (va, vb) = (a.basis(), b.basis());
    let cross = va.transpose() * vb;
    let mut cos: Vec<f64> = cross.singular_values().iter().copied().collect();
    cos.sort_by(|x, y| y.partial_cmp(x).expect("finite"));
    let residual = vb - va * &cross;
    let mut sin: Vec<f64> = residual.singular_values().iter().copied().collect();
    sin.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| {
            let c = c.clamp(-1.0, 1.0);
            if c * c <= 0.5 {
                c.acos()
            } else {
                s.clamp(0.0, 1.0).asin()
            }
        })
        .collect())
}

/// Normalized Grassmann distance `sqrt(Σθ²) / (sqrt(k)·π/2)`, in [0, 1].
pub fn subspace_ngd(a: &TerritoryBasis, b: &TerritoryBasis) -> Result<f64> {
    let theta = principal_angles(a, b)?;
    let k = theta.len() as f64;
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    Ok((norm / (k.sqrt() * FRAC_PI_2)).clamp(0.0, 1.0))
}

/// Normalized projector Frobenius distance `‖AAᵀ − BBᵀ‖_F / sqrt(2k)`,
/// evaluated as `sqrt(Σ sin²θ / k)`.
pub fn subspace_nfd(a: &TerritoryBasis, b: &TerritoryBasis) -> Result<f64> {
    let theta = principal_angles(a, b)?;
    let k = theta.len() as f64;
    let s = theta.iter().map(|t| t.sin().powi(2)).sum::<f64>();
    Ok((s / k).sqrt().clamp(0.0, 1.0))
}
