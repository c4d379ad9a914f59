//! Independent oracles shared by the oracle tests and the acceptance suite.
//! Each returns the worst discrepancy it found.

#![allow(dead_code)]

use lattrack::consensus::{Graph, RedchoBank, RedchoParams};
use lattrack::core_math::{process_noise_covariance, transition_matrix, Dimensions, SystemMatrices};
use lattrack::estimator::{initial_state, kalman_step, EstimatorKind, EstimatorModel, InformationJet, SoeState};
use lattrack::fusion::{average_jets, centralized_derivatives, output_stage};
use lattrack::target::{TargetConfig, TargetSimulator};
use lattrack::Matrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// `max |a - b| / max(1, max |b|)`.
pub fn rel_gap(a: &Matrix, b: &DMatrix<f64>) -> f64 {
    let scale = b.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    a.as_slice()
        .iter()
        .zip(b.transpose().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

fn random_spd(r: &mut ChaCha8Rng, d: usize, floor: f64) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    let mut s = g.mul_transpose(&g);
    s.axpy(floor, &Matrix::identity(d));
    s
}

fn random_sym(r: &mut ChaCha8Rng, d: usize, size: f64) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| r.random_range(-size..size));
    let mut s = &g + &g.transpose();
    s.scale_mut(0.5);
    s
}

/// Random information jets of `agents` agents.
pub fn random_jets(seed: u64, agents: usize, dims: Dimensions) -> Vec<InformationJet> {
    let mut r = rng(seed);
    let d = dims.state_dim();
    let m = dims.m;
    (0..agents)
        .map(|_| {
            let mut jet = InformationJet::zeros(d, m);
            jet.q[0] = random_spd(&mut r, d, 0.5);
            for mu in 1..=m {
                jet.q[mu] = random_sym(&mut r, d, 0.5);
            }
            for y in jet.y.iter_mut() {
                *y = Matrix::from_fn(d, 1, |_, _| r.random_range(-2.0..2.0));
            }
            jet
        })
        .collect()
}

/// Output stage on exactly averaged jets against the closed-form inverse
/// derivatives `P' = -P Q' P`, `P'' = -P Q'' P + 2 P Q' P Q' P` and the
/// Leibniz expansion of `x = P y`, in nalgebra. Also compares the
/// centralized recursion.
pub fn lemma_gap(seed: u64, agents: usize, dims: Dimensions) -> f64 {
    assert_eq!(dims.m, 2, "closed form written for second order");
    let jets = random_jets(seed, agents, dims);
    let c = SystemMatrices::new(dims).c;
    let nq = |mu: usize| jets.iter().map(|j| to_na(&j.q[mu])).sum::<DMatrix<f64>>() / agents as f64;
    let ny = |mu: usize| jets.iter().map(|j| to_na(&j.y[mu])).sum::<DMatrix<f64>>() / agents as f64;
    let (q0, q1, q2) = (nq(0), nq(1), nq(2));
    let p0 = q0.clone().try_inverse().expect("invertible");
    let p1 = -(&p0 * &q1 * &p0);
    let p2 = -(&p0 * &q2 * &p0) + 2.0 * (&p0 * &q1 * &p0 * &q1 * &p0);
    let (y0, y1, y2) = (ny(0), ny(1), ny(2));
    let x = [
        &p0 * &y0,
        &p1 * &y0 + &p0 * &y1,
        &p2 * &y0 + 2.0 * (&p1 * &y1) + &p0 * &y2,
    ];
    let cn = to_na(&c);
    let avg = average_jets(&jets).expect("average");
    let out = output_stage(0, &avg, &c).expect("output stage");
    let central = centralized_derivatives(&jets, &c).expect("central");
    let mut gap = 0.0f64;
    for (mu, p) in [&p0, &p1, &p2].into_iter().enumerate() {
        gap = gap.max(rel_gap(&out.covariance[mu], p));
    }
    for mu in 0..=2 {
        let want = &cn * &x[mu];
        gap = gap.max(rel_gap(&out.position[mu], &want));
        gap = gap.max(rel_gap(&central[mu], &want));
    }
    gap
}

/// An SOE with three processed detections of a correlated 2-D target;
/// the active blend covers `[1.5, 2.3)`.
pub fn soe_fixture(kind: EstimatorKind) -> SoeState {
    let dims = Dimensions::new(2, 2).unwrap();
    let w = Matrix::from_rows(&[&[0.5, 0.1], &[0.1, 0.3]]);
    let model = EstimatorModel::new(dims, w).unwrap();
    let r = Matrix::from_rows(&[&[0.05, 0.01], &[0.01, 0.08]]);
    let s0 = initial_state(dims, Some(&Matrix::column(&[0.4, -0.2])), 10.0).unwrap();
    let mut soe = SoeState::new(kind, &model, &s0, 0.0, 1.0).unwrap();
    let s1 = kalman_step(&model, &s0, &Matrix::column(&[1.0, 0.3]), 1.0, &r).unwrap().state;
    soe.advance(&model, &s1, 1.0, 0.5).unwrap();
    let s2 = kalman_step(&model, &s1, &Matrix::column(&[2.3, 0.9]), 0.5, &r).unwrap().state;
    soe.advance(&model, &s2, 1.5, 0.8).unwrap();
    soe
}

fn fd_rel(lo: &Matrix, hi: &Matrix, h: f64, analytic: &Matrix) -> f64 {
    let fd = (hi - lo).scale(0.5 / h);
    (&fd - analytic).max_abs() / analytic.max_abs().max(1e-12)
}

/// Analytic information jets and fused position jets against central
/// differences of the next lower order. Relative to the derivative's size.
pub fn jet_fd_gap(alpha: f64) -> f64 {
    let mut soe = soe_fixture(EstimatorKind::Soe { alpha });
    let c = SystemMatrices::new(Dimensions::new(2, 2).unwrap()).c;
    let h = 1e-5;
    let mut gap = 0.0f64;
    for &t in &[1.6, 1.9, 2.2] {
        let jet = soe.information_jet(t).unwrap();
        let lo = soe.information_jet(t - h).unwrap();
        let hi = soe.information_jet(t + h).unwrap();
        let out = output_stage(0, &jet, &c).unwrap();
        let out_lo = output_stage(0, &lo, &c).unwrap();
        let out_hi = output_stage(0, &hi, &c).unwrap();
        for mu in 1..=2 {
            gap = gap.max(fd_rel(&lo.y[mu - 1], &hi.y[mu - 1], h, &jet.y[mu]));
            gap = gap.max(fd_rel(&lo.q[mu - 1], &hi.q[mu - 1], h, &jet.q[mu]));
            gap = gap.max(fd_rel(&out_lo.position[mu - 1], &out_hi.position[mu - 1], h, &out.position[mu]));
            gap = gap.max(fd_rel(
                &out_lo.covariance[mu - 1],
                &out_hi.covariance[mu - 1],
                h,
                &out.covariance[mu],
            ));
        }
    }
    gap
}

/// Closed-form `W_d(τ)` against composite Simpson quadrature of
/// `∫₀^τ e^{As} B W Bᵀ e^{Aᵀs} ds`.
pub fn noise_quadrature_gap(dims: Dimensions, w: &Matrix, tau: f64) -> f64 {
    let sys = SystemMatrices::new(dims);
    let bwb = sys.b.congruence(w);
    let f = |s: f64| transition_matrix(dims, s).congruence(&bwb);
    let panels = 400;
    let h = tau / panels as f64;
    let mut acc = &f(0.0) + &f(tau);
    for i in 1..panels {
        acc.axpy(if i % 2 == 1 { 4.0 } else { 2.0 }, &f(i as f64 * h));
    }
    let quad = acc.scale(h / 3.0);
    let closed = process_noise_covariance(dims, w, tau).unwrap();
    (&closed - &quad).max_abs() / quad.max_abs().max(1e-300)
}

/// Zero-noise simulation against `e^{At} x0` over the whole horizon.
pub fn zero_noise_flow_gap(dims: Dimensions, x0: &Matrix, dt: f64, horizon: f64) -> f64 {
    let cfg = TargetConfig {
        x0: x0.clone(),
        ..TargetConfig::new(dims, Matrix::zeros(dims.n, dims.n), dt, horizon)
    };
    let mut sim = TargetSimulator::new(&cfg, 7).unwrap();
    let mut gap = 0.0f64;
    for _ in 0..cfg.steps() {
        sim.advance();
        let exact = &transition_matrix(dims, sim.time()) * x0;
        gap = gap.max((sim.state() - &exact).max_abs() / exact.max_abs().max(1.0));
    }
    gap
}

/// A lone agent's consensus bank started at `v = 0` fed a live SOE jet for
/// `steps` ticks spread over the active blend. Returns the largest
/// output/input mismatch.
pub fn single_agent_redcho_gap(steps: usize, dt: f64) -> f64 {
    let mut soe = soe_fixture(EstimatorKind::Soe { alpha: 1.0 });
    let mut bank = RedchoBank::new(&RedchoParams::default(), Graph::empty(1).unwrap(), 4, 2).unwrap();
    let mut out = InformationJet::zeros(4, 2);
    let mut gap = 0.0f64;
    for j in 0..steps {
        let t = 1.5 + 0.8 * j as f64 / steps as f64;
        let jet = soe.information_jet(t).unwrap();
        bank.set_agent_jet(0, &jet);
        bank.refresh_outputs();
        bank.agent_jet(0, &mut out);
        for mu in 0..=2 {
            gap = gap.max((&out.y[mu] - &jet.y[mu]).max_abs());
            gap = gap.max((&out.q[mu] - &jet.q[mu]).max_abs());
        }
        bank.step(dt).unwrap();
    }
    gap
}
