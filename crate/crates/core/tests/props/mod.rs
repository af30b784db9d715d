//! Telescoping, determinism and masking properties shared by the property
//! test suite and the acceptance run.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;

use stagecause::agents::{causal_pg_weights, policy, ppo_policy_grad, PgMode};
use stagecause::envs::{make_env, EnvConfig, Preset, GRASP_KINEMATIC, MOBILE_REACH_2D, REACH_RADIUS};
use stagecause::mdp::{progress_reward, segment_episode};
use stagecause::nn::{train_step, Adam, Mlp, NetworkSpec};
use stagecause::rng::Rng;
use stagecause::{ActionVector, CausalMatrix, StagedEnv, Transition};

pub const CASES: u32 = 1000;

pub fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

pub fn names(n: usize, p: &str) -> Vec<String> {
    (0..n).map(|i| format!("{p}{i}")).collect()
}

pub type EnvCase = (&'static str, Preset, u64, Vec<Vec<f64>>);

/// Env name, preset, seed and up to 40 seven-wide actions.
pub fn env_case() -> impl Strategy<Value = EnvCase> {
    (
        prop::sample::select(vec![MOBILE_REACH_2D, GRASP_KINEMATIC]),
        prop::sample::select(vec![Preset::Coupled, Preset::Decoupled]),
        any::<u64>(),
        prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 7), 1..40),
    )
}

/// Rolls `acts` from reset, stopping at the end of the episode.
fn rollout(env: &mut dyn StagedEnv, acts: &[Vec<f64>]) -> (Vec<f64>, Vec<Transition>) {
    let k = env.spec().n_actions();
    let first = env.reset();
    let mut out = Vec::new();
    for a in acts {
        let o = env.step(&ActionVector::new(a[..k].to_vec()).unwrap()).unwrap();
        let done = o.transition.terminal || o.truncated;
        out.push(o.transition);
        if done {
            break;
        }
    }
    (first, out)
}

type Distance = fn(&[f64]) -> f64;

/// (reward index, distance read from the observation) of each progress term.
fn progress_terms(name: &str) -> Vec<(usize, Distance)> {
    match name {
        MOBILE_REACH_2D => vec![(0, |o| o[0]), (1, |o| o[1].abs()), (4, |o| o[12].abs())],
        _ => vec![
            (0, |o| o[12].abs()),
            (1, |o| o[11].abs()),
            (2, |o| o[13].abs()),
            (3, |o| o[7].hypot(o[8])),
            (4, |o| o[14].abs()),
        ],
    }
}

pub fn distances() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(0.0f64..10.0, 2..50), 0.1f64..20.0)
}

pub fn progress_rewards_telescope((dists, lambda): (Vec<f64>, f64)) -> Result<(), TestCaseError> {
    let total: f64 = dists
        .windows(2)
        .map(|w| progress_reward(w[0], w[1], lambda).unwrap())
        .sum();
    let expect = lambda * (dists[0] - dists[dists.len() - 1]);
    prop_assert!((total - expect).abs() < 1e-9, "{total} vs {expect}");
    Ok(())
}

pub fn env_terms_telescope((name, preset, seed, acts): EnvCase) -> Result<(), TestCaseError> {
    let mut env = make_env(name, EnvConfig::new(preset, seed)).unwrap();
    let lambda = EnvConfig::default().params.lambda;
    let (first, traj) = rollout(env.as_mut(), &acts);
    let last = &traj[traj.len() - 1].next_state;
    for (j, d) in progress_terms(name) {
        let total: f64 = traj.iter().map(|t| t.reward[j]).sum();
        let expect = lambda * (d(&first) - d(last));
        prop_assert!((total - expect).abs() < 1e-9, "{name} term {j}: {total} vs {expect}");
    }
    Ok(())
}

pub fn env_rollouts_deterministic((name, preset, seed, acts): EnvCase) -> Result<(), TestCaseError> {
    let cfg = EnvConfig::new(preset, seed);
    let mut a = make_env(name, cfg.clone()).unwrap();
    let mut b = make_env(name, cfg).unwrap();
    let (fa, ta) = rollout(a.as_mut(), &acts);
    let (fb, tb) = rollout(b.as_mut(), &acts);
    prop_assert_eq!(fa, fb);
    prop_assert_eq!(&ta, &tb);
    for t in &ta {
        prop_assert_eq!(t.next_stage, a.stage_of(&t.next_state).unwrap());
        prop_assert_eq!(a.stage_of(&t.state).unwrap(), a.stage_of(&t.state).unwrap());
        prop_assert!(t.reward.as_slice().iter().all(|r| r.is_finite()));
        if name == GRASP_KINEMATIC {
            let p = &t.next_state[3..6];
            prop_assert!(p.iter().map(|v| v * v).sum::<f64>().sqrt() <= REACH_RADIUS + 1e-12);
            if t.stage < 4 {
                prop_assert!(t.reward[5] <= 0.0);
            }
        }
    }
    let parts = segment_episode(&ta);
    prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), ta.len());
    let flat: Vec<&Transition> = parts.iter().flat_map(|p| p.transitions.iter()).collect();
    prop_assert!(flat.iter().zip(&ta).all(|(x, y)| *x == y));
    for p in &parts {
        prop_assert!(p.transitions.iter().all(|t| t.stage == p.stage));
    }
    Ok(())
}

pub fn net_case() -> impl Strategy<Value = (u64, usize, f64)> {
    (any::<u64>(), 1usize..6, 1e-4f64..1e-2)
}

pub fn network_updates_deterministic((seed, rows, lr): (u64, usize, f64)) -> Result<(), TestCaseError> {
    let spec = NetworkSpec::gaussian(3, &[4], 1);
    let run = || {
        let mut rng = Rng::seed_from_u64(seed);
        let mut net = Mlp::new(spec.clone(), &mut rng).unwrap();
        let mut opt = Adam::new(net.n_params(), lr);
        let x = policy::standard_normal(&mut rng, rows * 3);
        for _ in 0..3 {
            train_step(&mut net, &mut opt, &x, rows, |out| {
                let loss = out.iter().map(|v| v * v).sum::<f64>();
                (loss, out.iter().map(|v| 2.0 * v).collect())
            })
            .unwrap();
        }
        net.params().to_vec()
    };
    prop_assert_eq!(run(), run());
    Ok(())
}

pub type MaskCase = (u64, usize, usize, usize, Vec<bool>, prop::sample::Index);

/// Seed, action dims, reward columns, batch rows, matrix bits, and a pick.
pub fn mask_case() -> impl Strategy<Value = MaskCase> {
    (
        any::<u64>(),
        1usize..5,
        1usize..5,
        1usize..8,
        prop::collection::vec(any::<bool>(), 16),
        any::<prop::sample::Index>(),
    )
}

/// With only column j's advantage non-zero, a dimension k with m[k, j] = 0
/// gets exactly zero weight and zero gradient on its own output parameters.
pub fn masked_pairs_get_no_gradient((seed, dim, cols, rows, bits, pick): MaskCase) -> Result<(), TestCaseError> {
    let mut rows_m: Vec<Vec<u8>> = (0..dim)
        .map(|k| (0..cols).map(|j| bits[k * 4 + j] as u8).collect())
        .collect();
    let zeros: Vec<(usize, usize)> = (0..dim)
        .flat_map(|k| (0..cols).map(move |j| (k, j)))
        .filter(|&(k, j)| rows_m[k][j] == 0)
        .collect();
    let (k0, j0) = if zeros.is_empty() {
        rows_m[0][0] = 0;
        (0, 0)
    } else {
        zeros[pick.index(zeros.len())]
    };
    let m = CausalMatrix::from_rows(1, names(dim, "a"), names(cols, "r"), rows_m).unwrap();
    let mask: Vec<f64> = m.rows().iter().flatten().map(|&v| v as f64).collect();

    let mut rng = Rng::seed_from_u64(seed);
    let hidden = 5;
    let net = Mlp::new(NetworkSpec::gaussian(3, &[hidden], dim), &mut rng).unwrap();
    let obs = policy::standard_normal(&mut rng, rows * 3);
    let acts = policy::standard_normal(&mut rng, rows * dim);
    let old: Vec<f64> = policy::standard_normal(&mut rng, rows * dim)
        .iter()
        .map(|x| 0.1 * x - 1.0)
        .collect();
    let noise = policy::standard_normal(&mut rng, rows * cols);
    let adv: Vec<f64> = (0..rows * cols)
        .map(|i| if i % cols == j0 { noise[i] } else { 0.0 })
        .collect();

    let (_, g, w) = ppo_policy_grad(&net, PgMode::Causal, &mask, cols, 0.2, &obs, rows, &acts, &old, &adv, 0.0).unwrap();
    for r in 0..rows {
        prop_assert_eq!(w[r * dim + k0], 0.0);
        let direct = causal_pg_weights(&m, &adv[r * cols..(r + 1) * cols]).unwrap();
        prop_assert_eq!(direct[k0], 0.0);
    }
    // output layer: hidden x 2*dim weights then 2*dim biases
    let out = 2 * dim;
    let off = net.n_params() - hidden * out - out;
    for c in [k0, dim + k0] {
        for i in 0..hidden {
            prop_assert_eq!(g[off + i * out + c], 0.0);
        }
        prop_assert_eq!(g[off + hidden * out + c], 0.0);
    }
    Ok(())
}
