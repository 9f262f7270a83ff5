use std::sync::OnceLock;

use orca_core::gradcheck::tiny_model_config;
use orca_core::model::Orca;
use orca_core::patch::{make_patches, patch_count};
use orca_core::train::{window_loss, Normalizer, Split, TrainData};
use orca_core::zorder::{bit_depth, morton, morton_decode, zorder_encode};
use orca_core::{synth_generate, Error, GridSpec, Graph, Synthetic};
use proptest::prelude::*;

fn scene() -> &'static Synthetic {
    static SCENE: OnceLock<Synthetic> = OnceLock::new();
    SCENE.get_or_init(|| synth_generate(3, 4, 4, 20, 2, 2).unwrap())
}

fn tiny_model(seed: u64) -> Orca<f64> {
    let ds = &scene().dataset;
    let mut c = tiny_model_config();
    c.seed = seed;
    Orca::new(c, ds.features(), ds.locations(), ds.interval_hours()).unwrap()
}

#[test]
fn zorder_matches_bitwise_interleave_exhaustively() {
    for rows in 1..=16usize {
        for cols in 1..=16usize {
            let depth = bit_depth(rows, cols);
            let cells: Vec<(usize, usize)> = (0..rows).flat_map(|u| (0..cols).map(move |v| (u, v))).collect();
            let code = zorder_encode(&cells, rows, cols).unwrap();
            let mut values: Vec<u64> = Vec::new();
            for (i, &(u, v)) in cells.iter().enumerate() {
                let mut want = Vec::new();
                for level in (0..depth / 2).rev() {
                    want.push(((u >> level) & 1) as u8);
                    want.push(((v >> level) & 1) as u8);
                }
                assert_eq!(code.row(i), want.as_slice(), "{}x{} ({}, {})", rows, cols, u, v);
                assert_eq!(code.decode(i), (u, v));
                values.push(code.row(i).iter().fold(0, |acc, &b| acc * 2 + b as u64));
            }
            values.sort_unstable();
            values.dedup();
            assert_eq!(values.len(), rows * cols);
        }
    }
}

#[test]
fn zorder_rejects_cells_outside_the_grid() {
    assert!(matches!(zorder_encode(&[(4, 0)], 4, 4), Err(Error::Range(_))));
    assert!(matches!(zorder_encode(&[(0, 7)], 4, 7), Err(Error::Range(_))));
}

#[test]
fn same_seed_same_parameters() {
    let a = tiny_model(5);
    let b = tiny_model(5);
    let c = tiny_model(6);
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn only_trainable_arrays_receive_gradients() {
    let model = tiny_model(0);
    let ds = &scene().dataset;
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let inputs: Vec<f64> = (0..ds.num_features() * ds.num_buoys() * 8).map(|i| (i as f64 * 0.3).sin()).collect();
    let y = model.forward(&mut g, &bound, &inputs).unwrap();
    let loss = g.mean_all(y).unwrap();
    g.backward(loss).unwrap();
    for (array, &var) in model.params().arrays().iter().zip(bound.vars()) {
        assert_eq!(g.grad(var).is_some(), array.trainable, "{}", array.name);
    }
}

#[test]
fn cell_of_returns_the_nearest_center() {
    use rand::{Rng, SeedableRng};
    let spec = GridSpec::gulf_of_mexico();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let lat = rng.random_range(spec.lat_south()..=spec.lat_north());
        let lon = rng.random_range(spec.lon_west()..=spec.lon_east());
        let (r, c) = spec.cell_of(lat, lon).unwrap();
        let (clat, clon) = spec.cell_center(r, c);
        assert!((clat - lat).abs() <= spec.cell_deg() / 2.0 + 1e-9, "{} -> row {}", lat, r);
        assert!((clon - lon).abs() <= spec.cell_deg() / 2.0 + 1e-9, "{} -> col {}", lon, c);
    }
    assert!(matches!(spec.cell_of(33.0, -90.0), Err(Error::Region(_))));
}

proptest! {
    #[test]
    fn morton_round_trips(u in 0u32..1 << 16, v in 0u32..1 << 16) {
        prop_assert_eq!(morton_decode(morton(u, v)), (u, v));
    }

    #[test]
    fn patches_cover_every_step(steps in 1usize..=32, len in 1usize..=16, stride in 1usize..=16) {
        prop_assume!(stride <= len && len <= steps + stride);
        let count = patch_count(steps, len, stride).unwrap();
        prop_assert_eq!(count as i64, (steps as i64 - len as i64).div_euclid(stride as i64) + 2);
        let series: Vec<f64> = (0..steps).map(|t| t as f64).collect();
        let p = make_patches(&series, 1, 1, steps, len, stride).unwrap();
        let mut covered = vec![false; steps];
        for s in 0..count {
            for &v in p.patch(s, 0, 0) {
                covered[v as usize] = true;
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn invalid_patch_parameters_are_rejected(steps in 1usize..=32, len in 1usize..=16, stride in 1usize..=16) {
        prop_assume!(stride > len || len > steps + stride);
        prop_assert!(matches!(patch_count(steps, len, stride), Err(Error::Contract(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn outputs_are_finite(inputs in prop::collection::vec(-50.0f64..50.0, 2 * 2 * 8)) {
        static MODEL: OnceLock<Orca<f64>> = OnceLock::new();
        let model = MODEL.get_or_init(|| tiny_model(1));
        let y = model.estimate_window(&inputs).unwrap();
        prop_assert_eq!(y.shape(), &[4, 4, 8]);
        prop_assert!(y.data().iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The total loss moves linearly with the regularizer weight.
    #[test]
    fn loss_is_linear_in_alpha(alpha in 0.01f64..5.0, start in 0usize..=8) {
        let model = tiny_model(2);
        let syn = scene();
        let split = Split::eight_one_one(syn.dataset.steps()).unwrap();
        let norm = Normalizer::fit(&syn.dataset, split.train.clone());
        let data = TrainData { dataset: &syn.dataset, surrogate: Some(&syn.surrogate), split: &split, normalizer: &norm };
        let (l0, l1, l2) = window_loss(&model, &data, start, 0.0).unwrap().unwrap();
        let (la, la1, la2) = window_loss(&model, &data, start, alpha).unwrap().unwrap();
        let (l2a, _, _) = window_loss(&model, &data, start, 2.0 * alpha).unwrap().unwrap();
        prop_assert_eq!((l1, l2), (la1, la2));
        prop_assert!((l0 - l1).abs() < 1e-12);
        prop_assert!((la - (l1 + alpha * l2)).abs() <= 1e-9 * la.abs().max(1.0));
        prop_assert!(((l2a - la) - (la - l0)).abs() <= 1e-9 * l2a.abs().max(1.0));
    }
}
