// SPDX-License-Identifier: MIT OR Apache-2.0

//! Projection energies, the authorship rule and accuracy/F1 scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::RepresentationSet;
use crate::territory::{Centroid, TerritoryBasis};

/// Anything that carries a sample id, a verdict and the candidate categories.
pub trait Decision {
    fn sample_id(&self) -> &str;
    fn verdict(&self) -> &str;
    fn candidates(&self) -> Vec<&str>;
}

/// Per-sample energies and the resulting verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecision {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub energies: BTreeMap<String, f64>,
    pub verdict: String,
}

impl Decision for EnergyDecision {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn verdict(&self) -> &str {
        &self.verdict
    }
    fn candidates(&self) -> Vec<&str> {
        self.energies.keys().map(String::as_str).collect()
    }
}

/// Verdict of the centroid-cosine variant. Scores are cosines, so they are
/// kept apart from energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineDecision {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub cosines: BTreeMap<String, f64>,
    pub verdict: String,
}

impl Decision for CosineDecision {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn verdict(&self) -> &str {
        &self.verdict
    }
    fn candidates(&self) -> Vec<&str> {
        self.cosines.keys().map(String::as_str).collect()
    }
}

fn check_vector(h: &[f64], d: usize) -> Result<()> {
    if h.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: h.len(),
        });
    }
    if let Some(col) = h.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col });
    }
    Ok(())
}

/// `‖Vᵀh‖₂`, capped at `‖h‖₂` so rounding never breaks the Bessel bound.
pub fn projection_energy(h: &[f64], territory: &TerritoryBasis) -> Result<f64> {
    check_vector(h, territory.d())?;
    let coords = territory.coordinates(h)?;
    let energy = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
    let length = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(energy.min(length))
}

/// Two-territory rule: self wins only when its energy is strictly larger.
pub fn decide(
    sample_id: &str,
    h: &[f64],
    self_territory: &TerritoryBasis,
    other_territory: &TerritoryBasis,
) -> Result<EnergyDecision> {
    if self_territory.category() == other_territory.category() {
        return Err(Error::Invalid(format!(
            "self and other territories share category '{}'",
            self_territory.category()
        )));
    }
    let e_s = projection_energy(h, self_territory)?;
    let e_o = projection_energy(h, other_territory)?;
    let verdict = if e_s > e_o {
        self_territory.category()
    } else {
        other_territory.category()
    };
    let mut energies = BTreeMap::new();
    energies.insert(self_territory.category().to_string(), e_s);
    energies.insert(other_territory.category().to_string(), e_o);
    Ok(EnergyDecision {
        sample_id: sample_id.to_string(),
        energies,
        verdict: verdict.to_string(),
    })
}

/// Order candidates for tie-breaking: list order, with `self_category` moved
/// to the end so a tie never goes to self.
fn tie_order<'a, T>(
    items: &'a [&'a T],
    category: impl Fn(&T) -> &str,
    self_category: Option<&str>,
) -> Result<Vec<&'a T>> {
    if items.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least two candidates, got {}",
            items.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for t in items {
        if !seen.insert(category(t)) {
            return Err(Error::Invalid(format!(
                "category '{}' appears twice",
                category(t)
            )));
        }
    }
    if let Some(s) = self_category {
        if !seen.contains(s) {
            return Err(Error::UnknownCategory(s.to_string()));
        }
    }
    let mut ordered: Vec<&T> = items
        .iter()
        .copied()
        .filter(|t| Some(category(t)) != self_category)
        .collect();
    ordered.extend(
        items
            .iter()
            .copied()
            .filter(|t| Some(category(t)) == self_category),
    );
    Ok(ordered)
}

/// Argmax-energy rule over any number of territories.
pub fn decide_multi(
    sample_id: &str,
    h: &[f64],
    territories: &[&TerritoryBasis],
    self_category: Option<&str>,
) -> Result<EnergyDecision> {
    let ordered = tie_order(territories, |t| t.category(), self_category)?;
    let mut energies = BTreeMap::new();
    let mut best: Option<(&str, f64)> = None;
    for t in ordered {
        let e = projection_energy(h, t)?;
        energies.insert(t.category().to_string(), e);
        if best.is_none_or(|(_, b)| e > b) {
            best = Some((t.category(), e));
        }
    }
    Ok(EnergyDecision {
        sample_id: sample_id.to_string(),
        energies,
        verdict: best.expect("at least two territories").0.to_string(),
    })
}

/// Cosine-to-class-center rule, same tie semantics as [`decide_multi`].
pub fn decide_centroid(
    sample_id: &str,
    h: &[f64],
    centroids: &[&Centroid],
    self_category: Option<&str>,
) -> Result<CosineDecision> {
    let ordered = tie_order(centroids, |c| c.category.as_str(), self_category)?;
    let mut cosines = BTreeMap::new();
    let mut best: Option<(&str, f64)> = None;
    for c in ordered {
        check_vector(h, c.mean.len())?;
        let cos = cosine(h, &c.mean)?;
        cosines.insert(c.category.clone(), cos);
        if best.is_none_or(|(_, b)| cos > b) {
            best = Some((c.category.as_str(), cos));
        }
    }
    Ok(CosineDecision {
        sample_id: sample_id.to_string(),
        cosines,
        verdict: best.expect("at least two centroids").0.to_string(),
    })
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// Classify every row of `set`, qualifying ids as `prefix/id` when a prefix
/// is given. Rows are processed in parallel; output order follows the set.
pub fn classify_set(
    set: &RepresentationSet,
    territories: &[&TerritoryBasis],
    self_category: Option<&str>,
    id_prefix: Option<&str>,
) -> Result<Vec<EnergyDecision>> {
    (0..set.n())
        .into_par_iter()
        .map(|i| {
            let id = qualified(id_prefix, &set.sample_ids()[i]);
            decide_multi(&id, &set.row_f64(i), territories, self_category)
        })
        .collect()
}

pub fn classify_set_centroid(
    set: &RepresentationSet,
    centroids: &[&Centroid],
    self_category: Option<&str>,
    id_prefix: Option<&str>,
) -> Result<Vec<CosineDecision>> {
    (0..set.n())
        .into_par_iter()
        .map(|i| {
            let id = qualified(id_prefix, &set.sample_ids()[i]);
            decide_centroid(&id, &set.row_f64(i), centroids, self_category)
        })
        .collect()
}

pub(crate) fn qualified(prefix: Option<&str>, id: &str) -> String {
    match prefix {
        Some(p) => format!("{p}/{id}"),
        None => id.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    /// Binary F1 with `positive_class` as the positive label.
    pub f1: f64,
    pub macro_f1: f64,
    pub positive_class: String,
    /// actual → predicted → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn evaluate<D: Decision>(
    decisions: &[D],
    labels: &HashMap<String, String>,
    positive_class: &str,
) -> Result<EvalReport> {
    if decisions.is_empty() {
        return Err(Error::InsufficientSamples("no decisions to evaluate".into()));
    }
    let mut known: BTreeSet<&str> = BTreeSet::new();
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut correct = 0usize;
    for d in decisions {
        let actual = labels
            .get(d.sample_id())
            .ok_or_else(|| Error::Invalid(format!("sample '{}' has no label", d.sample_id())))?;
        known.extend(d.candidates());
        known.insert(actual.as_str());
        if actual == d.verdict() {
            correct += 1;
        }
        *confusion
            .entry(actual.clone())
            .or_default()
            .entry(d.verdict().to_string())
            .or_default() += 1;
    }
    if !known.contains(positive_class) {
        return Err(Error::UnknownCategory(positive_class.to_string()));
    }
    let count = |actual_is: &dyn Fn(&str) -> bool, pred_is: &dyn Fn(&str) -> bool| -> usize {
        confusion
            .iter()
            .filter(|(a, _)| actual_is(a))
            .flat_map(|(_, row)| row.iter())
            .filter(|(p, _)| pred_is(p))
            .map(|(_, c)| *c)
            .sum()
    };
    let per_class_f1 = |class: &str| {
        let tp = count(&|a| a == class, &|p| p == class);
        let fp = count(&|a| a != class, &|p| p == class);
        let fn_ = count(&|a| a == class, &|p| p != class);
        f1_from_counts(tp, fp, fn_)
    };
    let mut present: BTreeSet<&str> = confusion.keys().map(String::as_str).collect();
    for row in confusion.values() {
        present.extend(row.keys().map(String::as_str));
    }
    let macro_f1 = present.iter().map(|c| per_class_f1(c)).sum::<f64>() / present.len() as f64;
    Ok(EvalReport {
        n: decisions.len(),
        accuracy: correct as f64 / decisions.len() as f64,
        f1: per_class_f1(positive_class),
        macro_f1,
        positive_class: positive_class.to_string(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::territory::Method;
    use nalgebra::DMatrix;

    fn line(cat: &str, v: &[f64]) -> TerritoryBasis {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = DMatrix::from_fn(v.len(), 1, |i, _| v[i] / n);
        TerritoryBasis::from_parts(cat, m, vec![1.0], Method::Svd).unwrap()
    }

    fn dec(id: &str, verdict: &str) -> EnergyDecision {
        let mut energies = BTreeMap::new();
        energies.insert("self".to_string(), 0.0);
        energies.insert("other".to_string(), 0.0);
        EnergyDecision {
            sample_id: id.into(),
            energies,
            verdict: verdict.into(),
        }
    }

    #[test]
    fn energy_examples() {
        let t = line("s", &[1.0, 0.0, 0.0]);
        assert_eq!(projection_energy(&[0.0, 2.0, -1.0], &t).unwrap(), 0.0);
        assert_eq!(projection_energy(&[3.0, 0.0, 0.0], &t).unwrap(), 3.0);
        assert!(projection_energy(&[1.0, 0.0], &t).is_err());
        assert!(projection_energy(&[f64::NAN, 0.0, 0.0], &t).is_err());
    }

    #[test]
    fn decide_strict_and_tie() {
        let s = line("self", &[1.0, 0.0]);
        let o = line("other", &[0.0, 1.0]);
        assert_eq!(decide("x", &[2.0, 1.0], &s, &o).unwrap().verdict, "self");
        assert_eq!(decide("x", &[1.0, 1.0], &s, &o).unwrap().verdict, "other");
        let d = decide("x", &[0.0, 5.0], &s, &o).unwrap();
        assert_eq!(d.verdict, "other");
        assert_eq!(d.energies["self"], 0.0);
    }

    #[test]
    fn multi_examples() {
        let a = line("a", &[1.0, 0.0, 0.0]);
        let b = line("b", &[0.0, 1.0, 0.0]);
        let c = line("c", &[0.0, 0.0, 1.0]);
        let d = decide_multi("x", &[0.1, 2.0, 0.3], &[&a, &b, &c], None).unwrap();
        assert_eq!(d.verdict, "b");
        // tie between a and b: list order wins unless the winner is self
        let tie = [1.0, 1.0, 0.0];
        assert_eq!(decide_multi("x", &tie, &[&a, &b, &c], None).unwrap().verdict, "a");
        assert_eq!(
            decide_multi("x", &tie, &[&a, &b, &c], Some("a")).unwrap().verdict,
            "b"
        );
        assert!(decide_multi("x", &tie, &[&a], None).is_err());
        assert!(decide_multi("x", &tie, &[&a, &a], None).is_err());
        assert!(decide_multi("x", &tie, &[&a, &b], Some("zz")).is_err());
    }

    #[test]
    fn centroid_rule() {
        let s = Centroid {
            category: "self".into(),
            mean: vec![1.0, 0.0],
        };
        let o = Centroid {
            category: "other".into(),
            mean: vec![0.0, 1.0],
        };
        let d = decide_centroid("x", &[2.0, 1.0], &[&s, &o], Some("self")).unwrap();
        assert_eq!(d.verdict, "self");
        let d = decide_centroid("x", &[1.0, 1.0], &[&s, &o], Some("self")).unwrap();
        assert_eq!(d.verdict, "other");
    }

    #[test]
    fn evaluate_all_correct() {
        let ds = vec![dec("a", "self"), dec("b", "other")];
        let labels: HashMap<_, _> = [("a", "self"), ("b", "other")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let r = evaluate(&ds, &labels, "self").unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn evaluate_hand_counted_confusion() {
        // TP=2 FP=1 FN=1 TN=1
        let ds = vec![
            dec("1", "self"),
            dec("2", "self"),
            dec("3", "self"),
            dec("4", "other"),
            dec("5", "other"),
        ];
        let labels: HashMap<_, _> = [
            ("1", "self"),
            ("2", "self"),
            ("3", "other"),
            ("4", "self"),
            ("5", "other"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let r = evaluate(&ds, &labels, "self").unwrap();
        assert!((r.accuracy - 0.6).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        let total: usize = r.confusion.values().flat_map(|m| m.values()).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn evaluate_degenerate_and_errors() {
        let ds = vec![dec("a", "other"), dec("b", "other")];
        let labels: HashMap<_, _> = [("a", "other"), ("b", "other")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let r = evaluate(&ds, &labels, "self").unwrap();
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.accuracy, 1.0);
        assert!(evaluate(&ds, &labels, "nobody").is_err());
        let partial: HashMap<_, _> = [("a".to_string(), "other".to_string())].into();
        assert!(evaluate(&ds, &partial, "self").is_err());
    }
}
