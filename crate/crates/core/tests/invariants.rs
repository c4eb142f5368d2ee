use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use structured_kfe::filter::{update, Measurement};
use structured_kfe::gaussian::{symmetrize_and_repair, NoiseModel};
use structured_kfe::innovation::{
    block_update, pair_difference_matrix, woodbury_solve, BlockMeasurement, StructuredInnovation,
};
use structured_kfe::random::{normal_matrix, normal_vector, permutation, random_gaussian, random_spd, rng_from_seed};
use structured_kfe::scenarios::{parse_run_config, RunConfig};
use structured_kfe::transforms::{AffineFunction, Transform};

fn rules(seed: u64) -> [Transform; 3] {
    [Transform::unscented(), Transform::Cubature, Transform::Randomized { rotations: 3, seed }]
}

fn with_noise(h: &DMatrix<f64>) -> AffineFunction {
    let (m, n) = h.shape();
    let mut full = DMatrix::zeros(m, n + m);
    full.view_mut((0, 0), (m, n)).copy_from(h);
    full.view_mut((0, n), (m, m)).fill_with_identity();
    AffineFunction::linear(full)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repair_returns_symmetric_psd(seed in any::<u64>(), n in 1usize..10, shift in -2.0f64..2.0) {
        let mut rng = rng_from_seed(seed);
        let a = normal_matrix(&mut rng, n, n);
        let m = &a * a.transpose() - DMatrix::identity(n, n) * shift;
        let (r, _) = symmetrize_and_repair(&m);
        prop_assert!((&r - r.transpose()).norm() == 0.0);
        let eig = r.clone().symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-12 * eig.max().abs().max(1.0));
    }

    #[test]
    fn point_sets_match_first_two_moments(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = rng_from_seed(seed);
        let z = random_gaussian(&mut rng, n);
        for tr in rules(seed) {
            let set = tr.points(&z).unwrap().unwrap();
            prop_assert_eq!(set.len(), tr.point_count(n));
            let w: f64 = set.mean_weights.iter().sum();
            prop_assert!((w - 1.0).abs() < 1e-12);
            prop_assert!((set.weighted_mean() - z.mean()).norm() <= 1e-10 * (1.0 + z.mean().norm()));
            prop_assert!((set.weighted_scatter(z.mean()) - z.cov()).norm() <= 1e-10 * z.cov().norm());
        }
    }

    #[test]
    fn woodbury_agrees_with_dense(seed in any::<u64>(), outer in 2usize..60, inner in 1usize..12, rhs in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let d = DVector::from_fn(outer, |i, _| 0.2 + (i % 5) as f64 * 0.3);
        let s = StructuredInnovation::new(d, normal_matrix(&mut rng, outer, inner), random_spd(&mut rng, inner)).unwrap();
        let b = normal_matrix(&mut rng, outer, rhs);
        let (x, _) = woodbury_solve(&s, &b).unwrap();
        let residual = s.to_dense() * &x - &b;
        prop_assert!(residual.norm() <= 1e-9 * b.norm());
    }

    #[test]
    fn linear_block_order_does_not_matter(seed in any::<u64>(), n in 1usize..6, k in 2usize..5) {
        let mut rng = rng_from_seed(seed);
        let state = random_gaussian(&mut rng, n);
        let mut blocks = BlockMeasurement::new();
        for _ in 0..k {
            let s = rng.random_range(1..=3);
            blocks.push(
                with_noise(&normal_matrix(&mut rng, s, n)).shared(),
                Measurement::new(normal_vector(&mut rng, s), NoiseModel::zero_mean(random_spd(&mut rng, s)).unwrap()),
            );
        }
        let (a, _) = block_update(&state, &blocks, Transform::unscented()).unwrap();
        let order = permutation(&mut rng, k);
        let (b, _) = block_update(&state, &blocks.reordered(&order).unwrap(), Transform::Cubature).unwrap();
        prop_assert!((a.mean() - b.mean()).norm() <= 1e-9 * (1.0 + a.mean().norm()));
        prop_assert!((a.cov() - b.cov()).norm() <= 1e-9 * a.cov().norm());
    }

    #[test]
    fn linear_update_never_increases_uncertainty(seed in any::<u64>(), n in 1usize..8, m in 1usize..5) {
        let mut rng = rng_from_seed(seed);
        let state = random_gaussian(&mut rng, n);
        let h = with_noise(&normal_matrix(&mut rng, m, n));
        let meas = Measurement::new(normal_vector(&mut rng, m), NoiseModel::zero_mean(random_spd(&mut rng, m)).unwrap());
        let (post, _) = update(&state, &h, &meas, Transform::unscented()).unwrap();
        let drop = state.cov() - post.cov();
        prop_assert!(drop.symmetric_eigenvalues().min() >= -1e-10 * state.cov().norm());
    }

    #[test]
    fn pair_differences_cancel_common_offsets(m in 2usize..15, offset in -10.0f64..10.0) {
        let d = pair_difference_matrix(m);
        prop_assert_eq!(d.shape(), (m * (m - 1) / 2, m));
        let y = &d * DVector::from_element(m, offset);
        prop_assert!(y.norm() == 0.0);
    }

    #[test]
    fn run_config_round_trips(seed in any::<u64>(), horizon in 1usize..500, which in 0usize..3) {
        let scenario = ["pdr", "tdoa", "ruf"][which];
        let text = format!(r#"{{"scenario":"{scenario}","filter":"ckf","mode":"all","seed":{seed},"horizon":{horizon}}}"#);
        let cfg: RunConfig = parse_run_config(&text).unwrap();
        let again = parse_run_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(serde_json::to_value(&cfg).unwrap(), serde_json::to_value(&again).unwrap());
        prop_assert_eq!(again.seed, seed);
        prop_assert_eq!(again.horizon, horizon);
    }
}
