// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::fs;

use common::*;
use cosur::diagnostics::pairwise_metrics;
use cosur::synthgen::{
    generate, generate_head, generate_head_with, orthogonal_lines, paper_regime, write_output,
    ClassSpec, HeadSpec, MeanOffset, SynthConfig,
};
use cosur::territory::{build_territory, principal_angles, subspace_ngd, Method};

fn class(category: &str, rank: usize, angles: Option<Vec<f64>>) -> ClassSpec {
    ClassSpec {
        category: category.into(),
        private_rank: rank,
        angles,
        mean_offset: None,
        signal_scale: 1.0,
        noise_sigma: 0.0,
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let config = paper_regime(42);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_output(&generate(&config).unwrap(), a.path()).unwrap();
    write_output(&generate(&config).unwrap(), b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
    }
    let other = generate(&paper_regime(43)).unwrap();
    assert_ne!(other.sets[0].data(), generate(&config).unwrap().sets[0].data());
}

#[test]
fn paper_regime_is_close_in_space_but_structurally_different() {
    let out = generate(&paper_regime(42)).unwrap();
    let m = pairwise_metrics(&out.sets[0], &out.sets[1]).unwrap();
    assert!(m.cs > 0.99, "{m:?}");
    assert!(m.cka < 0.2, "{m:?}");
}

#[test]
fn noiseless_rank_one_classes_lie_on_orthogonal_lines() {
    let out = generate(&orthogonal_lines(3)).unwrap();
    let [a, b] = [&out.sets[0], &out.sets[1]];
    let a0 = a.row_f64(0);
    let b0 = b.row_f64(0);
    for i in 0..a.n() {
        let (x, y) = (a.row_f64(i), b.row_f64(i));
        assert!((dot(&x, &a0).abs() / (norm(&x) * norm(&a0)) - 1.0).abs() < 1e-6);
        assert!((dot(&y, &b0).abs() / (norm(&y) * norm(&b0)) - 1.0).abs() < 1e-6);
        assert!(dot(&x, &y).abs() / (norm(&x) * norm(&y)) < 1e-6);
    }
}

#[test]
fn configured_angles_are_recovered() {
    let angles = vec![0.1, 0.4, 0.8, 1.2];
    let config = SynthConfig {
        d: 32,
        n_per_class: 200,
        mean_norm: 0.0,
        classes: vec![class("a", 4, None), class("b", 4, Some(angles.clone()))],
        seed: 17,
        head: None,
    };
    let out = generate(&config).unwrap();
    let ta = build_territory(&out.sets[0], 4, Method::Svd).unwrap();
    let tb = build_territory(&out.sets[1], 4, Method::Svd).unwrap();
    let mut got = principal_angles(&ta, &tb).unwrap();
    got.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for (g, e) in got.iter().zip(&angles) {
        assert!((g - e).abs() < 1e-6, "{got:?}");
    }
    let expected_ngd = angles.iter().map(|t| t * t).sum::<f64>().sqrt() / (2.0 * std::f64::consts::FRAC_PI_2);
    assert!((subspace_ngd(&ta, &tb).unwrap() - expected_ngd).abs() < 1e-6);
}

#[test]
fn over_capacity_layout_is_rejected() {
    let mut b = class("b", 3, None);
    b.mean_offset = Some(MeanOffset::Axis(1.0));
    let config = SynthConfig {
        d: 6,
        n_per_class: 5,
        mean_norm: 1.0,
        classes: vec![class("a", 3, None), b],
        seed: 0,
        head: None,
    };
    assert!(generate(&config).is_err());
}

#[test]
fn rank_two_head_has_numerical_rank_two() {
    let head = generate_head(24, 40, 2, 5).unwrap();
    let w: Mat = (0..40).map(|i| head.row_f64(i)).collect();
    let sv = hestenes_singular_values(&w);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * sv[0]).count();
    assert_eq!(rank, 2, "{:?}", &sv[..4]);
    for i in 0..40 {
        assert!((norm(&head.row_f64(i)) - 1.0).abs() < 1e-12);
    }
    assert_eq!(head.weights(), generate_head(24, 40, 2, 5).unwrap().weights());
}

#[test]
fn orthogonal_square_head_is_invertible() {
    let spec = HeadSpec { vocab_size: 8, rank: 8, orthogonal: true, token_names: vec![] };
    let head = generate_head_with(8, &spec, 1).unwrap();
    let w: Mat = (0..8).map(|i| head.row_f64(i)).collect();
    let sv = hestenes_singular_values(&w);
    assert!(sv.iter().all(|s| (s - 1.0).abs() < 1e-12), "{sv:?}");
}
