mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use susd::density::{weight_from_nll, DensityConfig, GaussianCondModel, WeightFloor};
use susd::envs::{make_env, EnvConfig, Factor, FactorSpec, ENV_IDS};
use susd::eval::{bin_fraction, unique_state_count};
use susd::skills::{
    discrete_factor_reward, displacement_reward, scaled_displacement_reward, EmbeddingBank, SkillsConfig,
};
use susd::tensor::{load_checkpoint, save_checkpoint, Tensor};

/// Contiguous partition of `0..dim` from cut points.
fn spec_from_cuts(dim: usize, cuts: &[usize]) -> FactorSpec {
    let mut bounds: Vec<usize> = cuts
        .iter()
        .map(|c| 1 + c % dim.saturating_sub(1).max(1))
        .filter(|&c| c < dim)
        .collect();
    bounds.push(0);
    bounds.push(dim);
    bounds.sort_unstable();
    bounds.dedup();
    let factors = bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| Factor::new(format!("f{i}"), w[0]..w[1], i == 0))
        .collect();
    FactorSpec::new(factors, dim).unwrap()
}

fn density_model(dim: usize, seed: u64) -> GaussianCondModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DensityConfig {
        hidden: 8,
        ..Default::default()
    };
    let mut m = GaussianCondModel::new(dim, &cfg, &mut rng).unwrap();
    common::jitter_biases(m.net_mut().params_mut(), &mut rng);
    m.mark_fitted();
    m
}

fn states(rows: usize, dim: usize, seed: u64) -> Tensor<f64> {
    common::random_matrix(rows, dim, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factor_slices_partition_the_state(
        state in prop::collection::vec(-10.0f64..10.0, 1..16),
        cuts in prop::collection::vec(0usize..64, 0..6),
    ) {
        let spec = spec_from_cuts(state.len(), &cuts);
        let mut joined = Vec::new();
        for i in 0..spec.len() {
            joined.extend_from_slice(spec.slice(&state, i).unwrap());
        }
        prop_assert_eq!(joined, state.clone());
        prop_assert_eq!(spec.dims().iter().sum::<usize>(), state.len());
    }

    #[test]
    fn curiosity_weights_are_nonnegative_and_follow_row_order(
        dim in 1usize..8,
        rows in 2usize..12,
        cuts in prop::collection::vec(0usize..64, 0..4),
        seed in any::<u64>(),
        zero_floor in any::<bool>(),
    ) {
        let spec = spec_from_cuts(dim, &cuts);
        let floor = if zero_floor { WeightFloor::Zero } else { WeightFloor::LogvarClamp };
        let model = density_model(dim, seed).with_weight_floor(floor);
        let (s, s2) = (states(rows, dim, seed ^ 1), states(rows, dim, seed ^ 2));
        let w = model.curiosity_weights_batch(&spec, &s, &s2).unwrap();
        prop_assert!(w.data().iter().all(|&v| v >= 0.0 && v.is_finite()));

        let perm: Vec<usize> = (0..rows).rev().collect();
        let wp = model.curiosity_weights_batch(&spec, &s.gather_rows(&perm), &s2.gather_rows(&perm)).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            prop_assert_eq!(wp.row_slice(r), w.row_slice(p));
        }
    }

    #[test]
    fn weight_from_nll_is_monotone_and_nonnegative(a in -1e3f64..1e3, b in -1e3f64..1e3, floor in -50.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(weight_from_nll(lo, floor) >= 0.0);
        prop_assert!(weight_from_nll(lo, floor) <= weight_from_nll(hi, floor));
    }

    #[test]
    fn factor_nlls_sum_to_the_full_nll(
        dim in 1usize..10,
        rows in 1usize..6,
        cuts in prop::collection::vec(0usize..64, 0..5),
        seed in any::<u64>(),
    ) {
        let spec = spec_from_cuts(dim, &cuts);
        let model = density_model(dim, seed);
        let (s, s2) = (states(rows, dim, seed ^ 3), states(rows, dim, seed ^ 4));
        let per = model.factor_nll_batch(&spec, &s, &s2).unwrap();
        let full = model.nll_rows(&s, &s2).unwrap();
        for (r, total) in full.iter().enumerate() {
            let sum: f64 = per.row_slice(r).iter().sum();
            prop_assert!((sum - total).abs() <= 1e-9 * (1.0 + total.abs()), "{} vs {}", sum, total);
        }
    }

    #[test]
    fn discrete_rewards_sum_to_zero(delta in prop::collection::vec(-100.0f64..100.0, 2..12)) {
        let total: f64 = (0..delta.len()).map(|k| discrete_factor_reward(&delta, k).unwrap()).sum();
        let scale: f64 = delta.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(total.abs() <= 1e-12 * scale, "{}", total);
    }

    #[test]
    fn scaling_the_embedding_leaves_the_reward_unchanged(
        triple in (1usize..6).prop_flat_map(|n| (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-2.0f64..2.0, n),
        )),
        d in 1e-3f64..1e3,
    ) {
        let (a, b, z) = triple;
        let direct = displacement_reward(&a, &b, &z);
        let scaled = scaled_displacement_reward(&a, &b, &z, d);
        let scale: f64 = a.iter().zip(&b).zip(&z).map(|((x, y), c)| ((y - x) * c).abs()).sum::<f64>().max(1e-300);
        prop_assert!((direct - scaled).abs() <= 1e-12 * scale);
    }

    #[test]
    fn multipliers_never_go_negative(steps in prop::collection::vec((-1e6f64..1e6, 0.0f64..1.0), 1..40)) {
        let spec = FactorSpec::whole(3, true);
        let cfg = SkillsConfig { hidden: 4, ..Default::default() };
        let mut bank = EmbeddingBank::<f32>::new(&spec, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (g, lr) in steps {
            bank.ascend_lambda(0, g, lr);
            prop_assert!(bank.lambdas()[0] >= 0.0);
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        arrays in prop::collection::vec((1usize..5, 1usize..5, any::<u64>()), 1..5),
        wide in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let named: Vec<(String, Tensor<f64>)> = arrays
            .iter()
            .enumerate()
            .map(|(i, &(r, c, seed))| (format!("a{i}.w"), common::random_matrix(r, c, 1e3, &mut ChaCha8Rng::seed_from_u64(seed))))
            .collect();
        if wide {
            save_checkpoint(&stem, &named).unwrap();
            let back = load_checkpoint::<f64>(&stem).unwrap();
            prop_assert_eq!(back.len(), named.len());
            for ((n0, t0), (n1, t1)) in named.iter().zip(&back) {
                prop_assert_eq!(n0, n1);
                prop_assert_eq!(t0.shape(), t1.shape());
                let bits0: Vec<u64> = t0.data().iter().map(|v| v.to_bits()).collect();
                let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits0, bits1);
            }
        } else {
            let narrow: Vec<(String, Tensor<f32>)> = named.iter().map(|(n, t)| (n.clone(), t.cast::<f32>())).collect();
            save_checkpoint(&stem, &narrow).unwrap();
            let back = load_checkpoint::<f32>(&stem).unwrap();
            for ((_, t0), (_, t1)) in narrow.iter().zip(&back) {
                let bits0: Vec<u32> = t0.data().iter().map(|v| v.to_bits()).collect();
                let bits1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits0, bits1);
            }
        }
    }

    #[test]
    fn environments_are_deterministic_given_seed_and_actions(
        env_idx in 0usize..ENV_IDS.len(),
        seed in any::<u64>(),
        actions in prop::collection::vec(-2.0f64..2.0, 60),
    ) {
        let cfg = EnvConfig { id: ENV_IDS[env_idx].into(), ..Default::default() };
        let (mut a, mut b) = (make_env(&cfg).unwrap(), make_env(&cfg).unwrap());
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        let dim = a.action_dim();
        for chunk in actions.chunks(dim).filter(|c| c.len() == dim) {
            let (x, y) = (a.step(chunk).unwrap(), b.step(chunk).unwrap());
            prop_assert_eq!(&x.next_state, &y.next_state);
            prop_assert_eq!(x.task_reward, y.task_reward);
            prop_assert_eq!(x.done, y.done);
            prop_assert!(x.next_state.iter().all(|v| v.is_finite()));
            if x.done {
                break;
            }
        }
    }

    #[test]
    fn coverage_counts_are_bounded_and_order_free(
        track in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..200),
    ) {
        let pts: Vec<[f64; 2]> = track.iter().map(|&(x, y)| [x, y]).collect();
        let n = unique_state_count(&pts);
        prop_assert!(n >= 1 && n <= pts.len());
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert_eq!(unique_state_count(&rev), n);
        let mut doubled = pts.clone();
        doubled.extend_from_slice(&pts);
        prop_assert_eq!(unique_state_count(&doubled), n);

        let f = bin_fraction(&pts, [-1.0, -1.0], [1.0, 1.0], 50);
        prop_assert!((1.0 / 2500.0..=1.0).contains(&f));
        prop_assert!(f * 2500.0 <= pts.len() as f64 + 1e-9);
        prop_assert_eq!(bin_fraction(&rev, [-1.0, -1.0], [1.0, 1.0], 50), f);
    }
}
