// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::HashMap;

use common::*;
use cosur::discriminator::{decide, decide_multi, evaluate, projection_energy, EnergyDecision};
use cosur::territory::{Decomposition, Method, TerritoryBasis};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn territory(category: &str, seed: u64, n: usize, d: usize, k: usize) -> TerritoryBasis {
    let rows = gaussian_rows(seed, 3, n, d);
    let m = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    Decomposition::from_matrix(category, m, Method::Svd)
        .unwrap()
        .territory(k)
        .unwrap()
}

fn axis_territory(category: &str, d: usize, axes: &[usize]) -> TerritoryBasis {
    let m = DMatrix::from_fn(d, axes.len(), |i, j| if i == axes[j] { 1.0 } else { 0.0 });
    TerritoryBasis::from_parts(category, m, vec![1.0; axes.len()], Method::Svd).unwrap()
}

#[test]
fn energy_matches_column_loop() {
    let t = territory("s", 21, 80, 64, 16);
    let cols = columns(&t);
    for h in gaussian_rows(22, 0, 200, 64) {
        let e = projection_energy(&h, &t).unwrap();
        let oracle = energy(&h, &cols);
        assert!((e - oracle).abs() <= 1e-10 * oracle);
    }
}

#[test]
fn decision_grid_follows_strict_rule() {
    let s = axis_territory("self", 2, &[0]);
    let o = axis_territory("other", 2, &[1]);
    let grid = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    for &a in &grid {
        for &b in &grid {
            let d = decide("x", &[a, b], &s, &o).unwrap();
            let expected = if f64::abs(a) > f64::abs(b) { "self" } else { "other" };
            assert_eq!(d.verdict, expected, "h = ({a}, {b})");
            let m = decide_multi("x", &[a, b], &[&s, &o], Some("self")).unwrap();
            assert_eq!(m.verdict, expected);
            let m = decide_multi("x", &[a, b], &[&o, &s], Some("self")).unwrap();
            assert_eq!(m.verdict, expected);
        }
    }
}

#[test]
fn three_orthogonal_lines() {
    let ts: Vec<_> = ["a", "b", "c"]
        .iter()
        .enumerate()
        .map(|(i, c)| axis_territory(c, 3, &[i]))
        .collect();
    let refs: Vec<_> = ts.iter().collect();
    let d = decide_multi("x", &[0.0, 1.5, 0.0], &refs, None).unwrap();
    assert_eq!(d.verdict, "b");
    assert_eq!(d.energies["a"], 0.0);
}

#[test]
fn multi_matches_brute_force_argmax() {
    let ts: Vec<_> = ["p", "q", "r", "s"]
        .iter()
        .enumerate()
        .map(|(i, c)| territory(c, 30 + i as u64, 20, 12, 3))
        .collect();
    let refs: Vec<_> = ts.iter().collect();
    for (i, h) in gaussian_rows(40, 0, 200, 12).iter().enumerate() {
        let d = decide_multi(&i.to_string(), h, &refs, Some("q")).unwrap();
        let mut best = None;
        for t in ts.iter().filter(|t| t.category() != "q").chain(ts.iter().filter(|t| t.category() == "q")) {
            let e = energy(h, &columns(t));
            match best {
                Some((_, b)) if e <= b => {}
                _ => best = Some((t.category(), e)),
            }
        }
        assert_eq!(d.verdict, best.unwrap().0);
    }
}

#[test]
fn multi_on_pair_matches_decide_on_random_inputs() {
    let s = territory("self", 50, 30, 16, 4);
    let o = territory("other", 51, 30, 16, 4);
    for h in gaussian_rows(52, 0, 10_000, 16) {
        let a = decide("x", &h, &s, &o).unwrap();
        let b = decide_multi("x", &h, &[&s, &o], Some("self")).unwrap();
        assert_eq!(a.verdict, b.verdict);
    }
}

#[test]
fn hand_counted_confusion() {
    let mk = |id: &str, v: &str| EnergyDecision {
        sample_id: id.into(),
        energies: [("self".to_string(), 0.0), ("other".to_string(), 0.0)].into(),
        verdict: v.into(),
    };
    // TP=2, FP=1, FN=1, TN=1.
    let ds = vec![mk("1", "self"), mk("2", "self"), mk("3", "self"), mk("4", "other"), mk("5", "other")];
    let labels: HashMap<String, String> = [("1", "self"), ("2", "self"), ("3", "other"), ("4", "self"), ("5", "other")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let r = evaluate(&ds, &labels, "self").unwrap();
    assert!((r.accuracy - 0.6).abs() < 1e-15);
    assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    let total: usize = r.confusion.values().flat_map(|m| m.values()).sum();
    assert_eq!(total, 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn energy_obeys_bessel(seed in any::<u64>(), k in 1usize..=8) {
        let t = territory("s", seed, 12, 10, k);
        for h in gaussian_rows(seed, 9, 5, 10) {
            prop_assert!(projection_energy(&h, &t).unwrap() <= norm(&h));
        }
    }

    #[test]
    fn energy_grows_with_basis(seed in any::<u64>(), k in 1usize..8) {
        let rows = gaussian_rows(seed, 3, 12, 10);
        let dec = Decomposition::from_matrix("s", DMatrix::from_fn(12, 10, |i, j| rows[i][j]), Method::Svd).unwrap();
        let small = dec.territory(k).unwrap();
        let large = dec.territory(k + 1).unwrap();
        for h in gaussian_rows(seed, 9, 5, 10) {
            prop_assert!(projection_energy(&h, &large).unwrap() >= projection_energy(&h, &small).unwrap());
        }
    }

    #[test]
    fn verdict_invariant_to_positive_scaling(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let s = territory("self", seed, 10, 8, 3);
        let o = territory("other", seed ^ 1, 10, 8, 3);
        for h in gaussian_rows(seed, 9, 5, 8) {
            let scaled: Vec<f64> = h.iter().map(|x| c * x).collect();
            let a = decide("x", &h, &s, &o).unwrap();
            let b = decide("x", &scaled, &s, &o).unwrap();
            let (es, eo) = (a.energies["self"], a.energies["other"]);
            if (es - eo).abs() > 1e-9 * (es + eo) {
                prop_assert_eq!(a.verdict, b.verdict);
            }
        }
    }
}
