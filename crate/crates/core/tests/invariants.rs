//! Property tests for the environment, network, discovery and agent invariants.

mod props;

use proptest::prelude::*;

use stagecause::agents::CausalActionSpace;
use stagecause::discovery::{min_max_normalize, select_causal_actions, SelectionThresholds};
use stagecause::nn::{gaussian_kl, GaussianPrediction};
use stagecause::CausalMatrix;

use props::names;

proptest! {
    #![proptest_config(props::config())]

    #[test]
    fn progress_rewards_telescope(case in props::distances()) {
        props::progress_rewards_telescope(case)?;
    }

    #[test]
    fn env_progress_terms_telescope(case in props::env_case()) {
        props::env_terms_telescope(case)?;
    }

    #[test]
    fn env_rollouts_are_deterministic(case in props::env_case()) {
        props::env_rollouts_deterministic(case)?;
    }

    #[test]
    fn network_updates_are_deterministic(case in props::net_case()) {
        props::network_updates_deterministic(case)?;
    }

    #[test]
    fn masked_pairs_get_no_policy_gradient(case in props::mask_case()) {
        props::masked_pairs_get_no_gradient(case)?;
    }

    #[test]
    fn embedded_actions_are_zero_outside_the_subspace(
        bits in prop::collection::vec(any::<bool>(), 6 * 3),
        local in prop::collection::vec(-1.0f64..=1.0, 6),
    ) {
        let mut rows: Vec<Vec<u8>> = bits.chunks(3).map(|c| c.iter().map(|&b| b as u8).collect()).collect();
        rows[0][0] = 1;
        let m = CausalMatrix::from_rows(2, names(6, "a"), names(3, "r"), rows).unwrap();
        let space = CausalActionSpace::from_matrix(&m, &names(2, "p")).unwrap();
        let a = space.embed(&local[..space.dim()]).unwrap();
        for k in 0..6 {
            if m.row_sum(k) == 0 {
                prop_assert_eq!(a.as_slice()[k], 0.0);
            }
        }
        prop_assert_eq!(space.n_columns(), 5);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_itself(
        m1 in -10.0f64..10.0, s1 in -5.0f64..2.0, m2 in -10.0f64..10.0, s2 in -5.0f64..2.0,
    ) {
        let p = GaussianPrediction::new(m1, s1);
        let q = GaussianPrediction::new(m2, s2);
        prop_assert_eq!(gaussian_kl(&p, &p), 0.0);
        prop_assert!(gaussian_kl(&p, &q) >= 0.0);
    }

    #[test]
    fn selection_is_scale_covariant_when_dispersed(
        row in prop::collection::vec(0.0f64..5.0, 2..8),
        c in 1e-3f64..1e3,
    ) {
        let (norm, degenerate) = min_max_normalize(&row);
        prop_assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
        if !degenerate {
            let hi = row.iter().cloned().fold(f64::MIN, f64::max);
            let lo = row.iter().cloned().fold(f64::MAX, f64::min);
            let i_hi = row.iter().position(|&v| v == hi).unwrap();
            let i_lo = row.iter().position(|&v| v == lo).unwrap();
            prop_assert_eq!(norm[i_hi], 1.0);
            prop_assert_eq!(norm[i_lo], 0.0);
        }
        let t = SelectionThresholds::default();
        let a = select_causal_actions(&row, &t).unwrap();
        let scaled: Vec<f64> = row.iter().map(|v| v * c).collect();
        let b = select_causal_actions(&scaled, &t).unwrap();
        if a.cv.is_some_and(|v| v > t.eps_cv * (1.0 + 1e-9)) {
            prop_assert_eq!(a.selected, b.selected);
        }
    }
}
