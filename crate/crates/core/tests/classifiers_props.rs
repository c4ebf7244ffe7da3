use std::collections::{BTreeMap, BTreeSet};

use genekg_core::classifiers::*;
use genekg_core::expression::PatientProfile;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn loss_only(m: &MlpModel, x: &Array2<f64>, y: &[u8]) -> f64 {
    m.loss_and_gradients(x, y).0
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for case in 0..30 {
        let (n, d, h) = (rng.random_range(2..10), rng.random_range(1..6), rng.random_range(1..8));
        let activation = if case % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let params = MlpParams {
            hidden: vec![h],
            activation,
            alpha: 1e-2,
            ..MlpParams::default()
        };
        let mut model = MlpModel::new(d, params, case).unwrap();
        for b in &mut model.biases {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let (_, gw, gb) = model.loss_and_gradients(&x, &y);
        let rel = |a: &[f64], b: &[f64]| {
            let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let den = a.iter().map(|p| p * p).sum::<f64>().sqrt().max(b.iter().map(|q| q * q).sum::<f64>().sqrt());
            if den < 1e-9 { 0.0 } else { num / den }
        };
        for l in 0..model.weights.len() {
            let mut numeric = Array2::zeros(model.weights[l].raw_dim());
            for ((r, c), slot) in numeric.indexed_iter_mut() {
                let mut p = model.clone();
                p.weights[l][[r, c]] += eps;
                let mut m = model.clone();
                m.weights[l][[r, c]] -= eps;
                *slot = (loss_only(&p, &x, &y) - loss_only(&m, &x, &y)) / (2.0 * eps);
            }
            worst = worst.max(rel(gw[l].as_slice().unwrap(), numeric.as_slice().unwrap()));
            let mut nb = Array1::zeros(model.biases[l].len());
            for (k, slot) in nb.iter_mut().enumerate() {
                let mut p = model.clone();
                p.biases[l][k] += eps;
                let mut m = model.clone();
                m.biases[l][k] -= eps;
                *slot = (loss_only(&p, &x, &y) - loss_only(&m, &x, &y)) / (2.0 * eps);
            }
            worst = worst.max(rel(gb[l].as_slice().unwrap(), nb.as_slice().unwrap()));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn profiles(prefix: &str, genes: &[usize], n: usize) -> Vec<PatientProfile> {
    (0..n)
        .map(|i| PatientProfile {
            patient_id: format!("{prefix}{i}"),
            z_values: genes.iter().map(|&g| (format!("G{g}"), (i * g) as f64 * 0.01)).collect::<BTreeMap<_, _>>(),
            label: (i % 2) as u8,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn baseline_widths(
        a in proptest::collection::btree_set(0usize..30, 1..15),
        b in proptest::collection::btree_set(0usize..30, 1..15),
    ) {
        let pa = profiles("a", &a.iter().copied().collect::<Vec<_>>(), 3);
        let pb = profiles("b", &b.iter().copied().collect::<Vec<_>>(), 2);
        let sets = [pa.as_slice(), pb.as_slice()];
        let all = make_baseline_features(&sets, BaselineMode::All).unwrap();
        prop_assert_eq!(all.width(), a.union(&b).count());
        prop_assert_eq!(all.len(), 5);
        let common: BTreeSet<_> = a.intersection(&b).collect();
        match make_baseline_features(&sets, BaselineMode::Overlap) {
            Ok(f) => prop_assert_eq!(f.width(), common.len()),
            Err(genekg_core::Error::NoCommonGenes) => prop_assert!(common.is_empty()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn mlp_separates_and_persists() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let n = 80;
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x = Array2::from_shape_fn((n, 4), |(i, j)| {
        let shift = if j == 0 && y[i] == 1 { 2.0 } else { 0.0 };
        shift + rng.random_range(-0.5..0.5)
    });
    let ids = (0..n).map(|i| format!("p{i}")).collect();
    let data = FeatureDataset::new(ids, x.clone(), y.clone(), FeatureSpace::Embedding).unwrap();
    let model = train_mlp(&data, &MlpParams::default(), 3).unwrap();
    let (pred, proba) = predict_mlp(&model, &x).unwrap();
    let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
    assert!(acc >= 76, "accuracy {acc}/80");
    for row in proba.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mlp.bin");
    model.save(&path).unwrap();
    assert_eq!(MlpModel::load(&path).unwrap(), model);
    assert_eq!(train_mlp(&data, &MlpParams::default(), 3).unwrap(), model);
}

#[test]
fn grid_covers_every_combination() {
    let grid = MlpParams::grid(&MlpParams::default());
    assert_eq!(grid.len(), 72);
    for p in &grid {
        p.validate_grid().unwrap();
    }
    let bad = MlpParams {
        alpha: 0.5,
        ..MlpParams::default()
    };
    assert!(bad.validate_grid().is_err());
}
