mod common;

use common::*;
use lattrack::consensus::{Graph, RedchoBank, RedchoParams};
use lattrack::core_math::{
    build_redcho_structure, process_noise_covariance, signed_power, transition_matrix, Dimensions, SystemMatrices,
};
use lattrack::estimator::EstimatorKind;
use lattrack::harness::{run_ablation, simulate, ExperimentConfig};
use lattrack::Matrix;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn dims(n: usize, m: usize) -> Dimensions {
    Dimensions::new(n, m).unwrap()
}

fn spd(seed: u64, n: usize) -> Matrix {
    let mut r = rng(seed);
    let g = Matrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0));
    let mut w = g.mul_transpose(&g);
    w.axpy(0.1, &Matrix::identity(n));
    w
}

#[test]
fn output_stage_on_averaged_jets_is_the_closed_form() {
    for seed in 0..20 {
        for (n, agents) in [(1, 1), (1, 5), (2, 3), (2, 10)] {
            let gap = lemma_gap(seed, agents, dims(n, 2));
            assert!(gap < 1e-12, "seed {seed} n {n} agents {agents}: {gap:e}");
        }
    }
}

#[test]
fn blended_and_fused_jets_match_finite_differences() {
    for alpha in [0.1, 1.0, 10.0] {
        let gap = jet_fd_gap(alpha);
        assert!(gap < 1e-4, "alpha {alpha}: {gap:e}");
    }
}

#[test]
fn process_noise_matches_quadrature() {
    for (n, m) in [(1, 1), (1, 2), (1, 3), (2, 2), (3, 3)] {
        let w = spd(n as u64 * 10 + m as u64, n);
        for tau in [0.05, 0.5, 1.0, 2.5] {
            let gap = noise_quadrature_gap(dims(n, m), &w, tau);
            assert!(gap < 1e-8, "n {n} m {m} tau {tau}: {gap:e}");
        }
    }
}

#[test]
fn noiseless_simulation_follows_the_exact_flow() {
    let x0 = Matrix::column(&[0.3, -1.2, 0.7, 0.25]);
    let gap = zero_noise_flow_gap(dims(2, 2), &x0, 1e-4, 10.0);
    assert!(gap < 1e-8, "{gap:e}");
    let gap = zero_noise_flow_gap(dims(1, 1), &Matrix::column(&[2.0]), 1e-4, 10.0);
    assert_eq!(gap, 0.0);
}

#[test]
fn lone_consensus_agent_passes_its_jet_through() {
    assert_eq!(single_agent_redcho_gap(5000, 1e-4), 0.0);
}

#[test]
fn single_substep_advance_is_one_euler_step() {
    let mk = || {
        let mut bank = RedchoBank::new(&RedchoParams::default(), Graph::ring(4).unwrap(), 1, 2).unwrap();
        for i in 0..4 {
            bank.set_input(0, i, &[i as f64, 0.5 - i as f64, 0.1 * i as f64]);
        }
        bank.refresh_outputs();
        bank
    };
    let (mut a, mut b) = (mk(), mk());
    for _ in 0..100 {
        a.step(1e-4).unwrap();
        b.advance(1e-4, 1).unwrap();
        a.refresh_outputs();
        b.refresh_outputs();
    }
    for i in 0..4 {
        for mu in 0..=2 {
            assert_eq!(a.output(0, i, mu).to_bits(), b.output(0, i, mu).to_bits());
        }
    }
}

#[test]
fn substeps_keep_agreeing_agents_at_rest() {
    // Identical ramps stay identical along the Taylor extrapolation, so no
    // coupling ever acts.
    let mut bank = RedchoBank::new(&RedchoParams::default(), Graph::ring(3).unwrap(), 1, 2).unwrap();
    for i in 0..3 {
        bank.set_input(0, i, &[1.0, 2.0, 0.0]);
    }
    bank.refresh_outputs();
    bank.advance(1e-3, 10).unwrap();
    bank.refresh_outputs();
    for i in 0..3 {
        assert!(bank.internal(0, i, 0).abs() < 1e-15);
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.simulation.dt = 1e-3;
    cfg.simulation.horizon = 3.0;
    cfg.network.agents = 3;
    cfg
}

#[test]
fn seeded_runs_are_byte_identical() {
    let s = small_config().resolve().unwrap();
    let a = serde_json::to_string(&simulate(&s, 11, 2, false).unwrap().metrics).unwrap();
    let b = serde_json::to_string(&simulate(&s, 11, 2, false).unwrap().metrics).unwrap();
    assert_eq!(a, b);
    let cfg = small_config();
    let r1 = run_ablation(&cfg, 5, 2, true).unwrap().to_json();
    let r2 = run_ablation(&cfg, 5, 2, false).unwrap().to_json();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn averaged_jets_match_closed_form(seed in any::<u64>(), agents in 1usize..8, n in 1usize..3) {
        prop_assert!(lemma_gap(seed, agents, dims(n, 2)) < 1e-12);
    }

    #[test]
    fn process_noise_quadrature(seed in any::<u64>(), n in 1usize..3, m in 1usize..4, tau in 0.01f64..3.0) {
        let gap = noise_quadrature_gap(dims(n, m), &spd(seed, n), tau);
        prop_assert!(gap < 1e-8, "{:e}", gap);
    }

    #[test]
    fn transition_is_a_semigroup(n in 1usize..3, m in 1usize..4, s in 0.0f64..10.0, t in 0.0f64..10.0) {
        let d = dims(n, m);
        let lhs = transition_matrix(d, s + t);
        let rhs = &transition_matrix(d, s) * &transition_matrix(d, t);
        prop_assert!((&lhs - &rhs).max_abs() <= 1e-10 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn process_noise_is_symmetric_psd(seed in any::<u64>(), n in 1usize..3, m in 1usize..4, tau in 0.0f64..5.0) {
        let wd = process_noise_covariance(dims(n, m), &spd(seed, n), tau).unwrap();
        prop_assert!(wd.is_symmetric(1e-12));
        let eig = SymmetricEigen::new(to_na(&wd)).eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= -1e-12 * wd.max_abs().max(1.0)));
    }

    #[test]
    fn process_noise_rate_is_the_propagated_diffusion(seed in any::<u64>(), n in 1usize..3, m in 1usize..4, tau in 0.1f64..3.0) {
        let d = dims(n, m);
        let w = spd(seed, n);
        let h = 1e-4;
        let fd = (&process_noise_covariance(d, &w, tau + h).unwrap() - &process_noise_covariance(d, &w, tau - h).unwrap())
            .scale(0.5 / h);
        let sys = SystemMatrices::new(d);
        let rate = transition_matrix(d, tau).congruence(&sys.b.congruence(&w));
        prop_assert!((&fd - &rate).max_abs() <= 1e-6 * rate.max_abs());
    }

    #[test]
    fn consensus_structure_is_invertible(m in 1usize..4, g0 in 0.1f64..5.0, g1 in 0.1f64..5.0) {
        let gammas: Vec<f64> = (0..=m).map(|i| if i % 2 == 0 { g0 } else { g1 }).collect();
        let g = to_na(&build_redcho_structure(m, &gammas).unwrap().g);
        let inv = g.clone().try_inverse().expect("invertible");
        let eye = nalgebra::DMatrix::<f64>::identity(m + 1, m + 1);
        prop_assert!((&g * inv - eye).abs().max() < 1e-10);
    }

    #[test]
    fn signed_power_is_odd(x in -1e6f64..1e6, alpha in 0.0f64..3.0) {
        prop_assert_eq!(signed_power(-x, alpha), -signed_power(x, alpha));
    }

    #[test]
    fn blend_weights_are_convex_and_information_stays_pd(alpha in 0.05f64..20.0, t in 1.5f64..2.3) {
        let mut soe = soe_fixture(EstimatorKind::Soe { alpha });
        let mut w = [0.0; 3];
        soe.weight_jet(t, &mut w).unwrap();
        let lambda2 = w[0];
        prop_assert!((0.0..=1.0).contains(&lambda2));
        prop_assert_eq!((1.0 - lambda2) + lambda2, 1.0);
        let jet = soe.information_jet(t).unwrap();
        prop_assert!(jet.q[0].is_symmetric(1e-12));
        prop_assert!(jet.q[0].cholesky().is_ok());
    }

    #[test]
    fn noiseless_flow(x in prop::collection::vec(-5.0f64..5.0, 4)) {
        let gap = zero_noise_flow_gap(dims(2, 2), &Matrix::column(&x), 1e-3, 2.0);
        prop_assert!(gap < 1e-8, "{:e}", gap);
    }

    #[test]
    fn consensus_is_permutation_equivariant(perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(), steps in 1usize..200) {
        let graph = Graph::ring(5).unwrap();
        let input = |i: usize| [i as f64 * 0.7 - 1.0, 0.3 * i as f64, -0.1];
        let mut a = RedchoBank::new(&RedchoParams::default(), graph.clone(), 1, 2).unwrap();
        let mut b = RedchoBank::new(&RedchoParams::default(), graph.permuted(&perm).unwrap(), 1, 2).unwrap();
        for i in 0..5 {
            a.set_input(0, i, &input(i));
            b.set_input(0, perm[i], &input(i));
        }
        for _ in 0..steps {
            a.refresh_outputs();
            b.refresh_outputs();
            a.step(1e-3).unwrap();
            b.step(1e-3).unwrap();
        }
        a.refresh_outputs();
        b.refresh_outputs();
        for i in 0..5 {
            for mu in 0..=2 {
                prop_assert_eq!(a.output(0, i, mu).to_bits(), b.output(0, perm[i], mu).to_bits());
            }
        }
    }
}
