// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vocabulary-direction editing of a single hidden vector.
//!
//! The edit adds `alpha` times the unit-normalized unembedding row of the
//! target token: `h̃ = h + α·w_t/‖w_t‖`. Directions use weight rows only; the
//! bias enters logits and greedy checks but never the direction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::VocabHead;

pub const DEFAULT_ALPHA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub target_token: String,
    pub target_index: usize,
    /// Unit-norm copy of the target row.
    pub direction: Vec<f64>,
    /// ‖w_target‖₂ before normalization.
    pub target_norm: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub edited: Vec<f64>,
    /// logit_target(h̃) − logit_target(h), measured.
    pub logit_delta_target: f64,
    pub greedy_before: String,
    pub greedy_after: String,
}

/// Unit direction of a head row plus its original norm.
pub fn unit_row(head: &VocabHead, token: &str) -> Result<(usize, Vec<f64>, f64)> {
    let idx = head
        .token_index(token)
        .ok_or_else(|| Error::UnknownToken(token.to_string()))?;
    let row = head.row_f64(idx);
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNormRow(token.to_string()));
    }
    Ok((idx, row.iter().map(|v| v / norm).collect(), norm))
}

/// Pick the target row from the verdict and normalize it.
pub fn make_edit_spec(
    head: &VocabHead,
    verdict: &str,
    token_map: &HashMap<String, String>,
    alpha: f64,
) -> Result<EditSpec> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Invalid(format!("editing strength {alpha} must be ≥ 0")));
    }
    let token = token_map
        .get(verdict)
        .ok_or_else(|| Error::UnknownCategory(verdict.to_string()))?;
    let (target_index, direction, target_norm) = unit_row(head, token)?;
    Ok(EditSpec {
        target_token: token.clone(),
        target_index,
        direction,
        target_norm,
        alpha,
    })
}

/// Index of the largest logit; lowest index wins ties.
pub fn greedy_index(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn apply_edit(h: &[f64], spec: &EditSpec, head: &VocabHead) -> Result<EditOutcome> {
    if h.len() != spec.direction.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.direction.len(),
            actual: h.len(),
        });
    }
    let edited: Vec<f64> = h
        .iter()
        .zip(&spec.direction)
        .map(|(x, d)| x + spec.alpha * d)
        .collect();
    let before = head.logits(h)?;
    let after = head.logits(&edited)?;
    let names = head.token_names();
    Ok(EditOutcome {
        logit_delta_target: after[spec.target_index] - before[spec.target_index],
        greedy_before: names[greedy_index(&before)].clone(),
        greedy_after: names[greedy_index(&after)].clone(),
        edited,
    })
}

/// Max-subtracted softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `softmax((W·h + b) / T)`.
pub fn vocab_distribution(h: &[f64], head: &VocabHead, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Invalid(format!("temperature {temperature} must be > 0")));
    }
    let logits = head.logits(h)?;
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    Ok(softmax(&logits, temperature))
}

/// Smallest α ≤ `alpha_max` (to within `1e-3·alpha_max`) whose edit makes
/// `target_token` the greedy token, or `None` if no such α exists.
///
/// Each competitor j gives a linear margin `a_j + α·s_j`, so the set of
/// flipping α is an interval. Its upper end (capped at `alpha_max`) seeds a
/// bisection on the part of the interval where the predicate is monotone.
pub fn minimal_flip_alpha(
    h: &[f64],
    head: &VocabHead,
    target_token: &str,
    alpha_max: f64,
) -> Result<Option<f64>> {
    if !(alpha_max > 0.0) || !alpha_max.is_finite() {
        return Err(Error::Invalid(format!("alpha_max {alpha_max} must be > 0")));
    }
    let (t, dir, _) = unit_row(head, target_token)?;
    let base = head.logits(h)?;
    if greedy_index(&base) == t {
        return Ok(Some(0.0));
    }
    let wins = |alpha: f64| -> Result<bool> {
        let x: Vec<f64> = h.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
        Ok(greedy_index(&head.logits(&x)?) == t)
    };

    let slope_t: f64 = head.row_f64(t).iter().zip(&dir).map(|(w, d)| w * d).sum();
    let mut lower = 0.0f64;
    let mut upper = f64::INFINITY;
    for j in 0..head.vocab_size() {
        if j == t {
            continue;
        }
        let a = base[t] - base[j];
        let s = slope_t - head.row_f64(j).iter().zip(&dir).map(|(w, d)| w * d).sum::<f64>();
        if s > 0.0 {
            lower = lower.max(-a / s);
        } else if s < 0.0 {
            upper = upper.min(-a / s);
        } else if a < 0.0 || (a == 0.0 && j < t) {
            return Ok(None);
        }
    }
    if lower > upper || lower > alpha_max {
        return Ok(None);
    }
    let mut hi = upper.min(alpha_max);
    if !wins(hi)? {
        hi = 0.5 * (lower + hi);
        if !wins(hi)? {
            return Ok(None);
        }
    }
    let tol = 1e-3 * alpha_max;
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if wins(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
