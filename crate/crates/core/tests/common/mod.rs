// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent reference computations used as test oracles. Everything here
//! is written with explicit loops and shares no code with the library's
//! numerical paths.

#![allow(dead_code)]

use cosur::rng::PhiloxStream;
use cosur::RepresentationSet;

pub type Mat = Vec<Vec<f64>>;

pub fn gaussian_rows(seed: u64, stream: u32, n: usize, d: usize) -> Mat {
    let mut rng = PhiloxStream::new(seed, stream);
    (0..n)
        .map(|_| (0..d).map(|_| rng.next_normal()).collect())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|t| row[t] * b[t][j]).sum())
                .collect()
        })
        .collect()
}

/// `HᵀH` by explicit triple loop.
pub fn gram(rows: &Mat) -> Mat {
    let d = rows[0].len();
    let mut g = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    g
}

/// Rows minus their column means.
pub fn centered(rows: &Mat) -> Mat {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    rows.iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order with their unit eigenvectors.
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.clone();
    let mut v: Mat = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (a[p][k], a[q][k]);
                    a[p][k] = c * x - s * y;
                    a[q][k] = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| v.iter().map(|row| row[i]).collect())
        .collect();
    (values, vectors)
}

/// Singular values of `m` via the Gram eigenvalues, descending.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let g = gram(m);
    jacobi_eigen(&g).0.into_iter().map(|x| x.max(0.0).sqrt()).collect()
}

/// Columns of a library basis as vectors.
pub fn columns(t: &cosur::TerritoryBasis) -> Vec<Vec<f64>> {
    (0..t.k())
        .map(|j| t.basis().column(j).iter().copied().collect())
        .collect()
}

/// ‖(I − AAᵀ)B‖_F for orthonormal column sets `a`, `b` of equal size. This
/// bounds the sine of the largest principal angle from above.
pub fn subspace_residual(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for bj in b {
        let mut r = bj.clone();
        for ai in a {
            let c = dot(ai, bj);
            for (x, y) in r.iter_mut().zip(ai) {
                *x -= c * y;
            }
        }
        total += dot(&r, &r);
    }
    total.sqrt()
}

/// ‖AAᵀ − BBᵀ‖_F / √(2k), from explicit projector matrices.
pub fn projector_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let pa: f64 = a.iter().map(|v| v[i] * v[j]).sum();
            let pb: f64 = b.iter().map(|v| v[i] * v[j]).sum();
            total += (pa - pb) * (pa - pb);
        }
    }
    (total / (2.0 * a.len() as f64)).sqrt()
}

/// `sqrt(Σ_j (v_jᵀh)²)` column by column.
pub fn energy(h: &[f64], cols: &[Vec<f64>]) -> f64 {
    cols.iter().map(|c| dot(c, h).powi(2)).sum::<f64>().sqrt()
}

/// Unbiased MMD² with RBF kernel `exp(−‖x−y‖²/(2σ²))` by direct double sums.
pub fn mmd_oracle(x: &Mat, y: &Mat, sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                xx += k(&x[i], &x[j]);
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                yy += k(&y[i], &y[j]);
            }
        }
    }
    let mut xy = 0.0;
    for a in x {
        for b in y {
            xy += k(a, b);
        }
    }
    xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n)
}

/// Linear CKA as an HSIC ratio over Gram matrices: tr(KHLH) normalized.
pub fn cka_oracle(x: &Mat, y: &Mat) -> f64 {
    let n = x.len();
    let k = matmul(x, &transpose(x));
    let l = matmul(y, &transpose(y));
    let h: Mat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64)
                .collect()
        })
        .collect();
    let hsic = |a: &Mat, b: &Mat| {
        let m = matmul(&matmul(&matmul(a, &h), b), &h);
        (0..n).map(|i| m[i][i]).sum::<f64>()
    };
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

/// JS divergence in bits via the two KL sums.
pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let kl = |a: &[f64]| -> f64 {
        a.iter()
            .zip(&m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    0.5 * kl(p) + 0.5 * kl(q)
}

/// Rows as stored (f32-rounded) in f64.
pub fn stored_rows(set: &RepresentationSet) -> Mat {
    set.rows_f64()
}

/// Singular values by one-sided (Hestenes) Jacobi on the columns of `m`,
/// descending. Small singular values keep absolute accuracy near ε·σ₁.
pub fn hestenes_singular_values(m: &Mat) -> Vec<f64> {
    let mut cols = transpose(m);
    let n = cols.len();
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}
