//! Time-derivative jets of matrix products and inverses.
//!
//! A jet of order `m` is the slice `[f, f', …, f⁽ᵐ⁾]` at a single instant.

use crate::core_math::binom;
use crate::error::Result;
use crate::matrix::Matrix;

/// Derivatives of `X⁻¹` from the jet of `X` and the value `X⁻¹`.
///
/// `Y⁽μ⁾ = -Y Σ_{ν<μ} C(μ,ν) X⁽μ-ν⁾ Y⁽ν⁾`, writing into `out[0..jet.len()]`.
/// `scratch` has the shape of `X`.
pub fn inverse_derivatives(jet: &[Matrix], inv: &Matrix, out: &mut [Matrix], scratch: &mut Matrix) {
    out[0].clone_from(inv);
    for mu in 1..jet.len() {
        scratch.fill(0.0);
        for nu in 0..mu {
            scratch.add_product(binom(mu, nu) as f64, &jet[mu - nu], &out[nu]);
        }
        out[mu].fill(0.0);
        out[mu].add_product(-1.0, inv, scratch);
    }
}

/// Leibniz rule: `out⁽μ⁾ = Σ_ν C(μ,ν) a⁽ν⁾ b⁽μ-ν⁾`.
pub fn product_derivatives(a: &[Matrix], b: &[Matrix], out: &mut [Matrix]) {
    debug_assert_eq!(a.len(), b.len());
    for mu in 0..a.len() {
        out[mu].fill(0.0);
        for nu in 0..=mu {
            out[mu].add_product(binom(mu, nu) as f64, &a[nu], &b[mu - nu]);
        }
    }
}

/// Leibniz rule for a scalar weight: `out⁽μ⁾ += Σ_ν C(μ,ν) w⁽ν⁾ a⁽μ-ν⁾`.
pub fn weighted_accumulate(w: &[f64], a: &[Matrix], out: &mut [Matrix]) {
    for mu in 0..a.len() {
        for nu in 0..=mu {
            let k = binom(mu, nu) as f64 * w[nu];
            if k != 0.0 {
                out[mu].axpy(k, &a[mu - nu]);
            }
        }
    }
}

/// Covariance and state jets from an information jet `(y, Q)`.
#[derive(Debug, Clone)]
pub struct StateJet {
    pub p: Vec<Matrix>,
    pub x: Vec<Matrix>,
}

impl StateJet {
    pub fn zeros(state_dim: usize, order: usize) -> Self {
        StateJet {
            p: vec![Matrix::zeros(state_dim, state_dim); order + 1],
            x: vec![Matrix::zeros(state_dim, 1); order + 1],
        }
    }
}

/// `P = Q⁻¹`, its derivatives, and `x⁽μ⁾ = Σ_ν C(μ,ν) P⁽ν⁾ y⁽μ-ν⁾`.
pub fn state_from_information(y: &[Matrix], q: &[Matrix]) -> Result<StateJet> {
    let mut out = StateJet::zeros(q[0].rows(), q.len() - 1);
    state_from_information_into(y, q, &mut out)?;
    Ok(out)
}

/// [`state_from_information`] into preallocated storage of matching shape.
pub fn state_from_information_into(y: &[Matrix], q: &[Matrix], out: &mut StateJet) -> Result<()> {
    let mut q0 = q[0].clone();
    q0.symmetrize();
    let p0 = q0.spd_inverse()?;
    inverse_derivatives(q, &p0, &mut out.p, &mut q0);
    product_derivatives(&out.p, y, &mut out.x);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // X(t) = X0 + t X1 + t² X2, so the jet at t = 0 is (X0, X1, 2 X2).
    fn quadratic(t: f64) -> Matrix {
        let x0 = Matrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let x1 = Matrix::from_rows(&[&[0.5, -0.2], &[-0.2, 0.1]]);
        let x2 = Matrix::from_rows(&[&[0.3, 0.1], &[0.1, -0.4]]);
        let mut m = x0;
        m.axpy(t, &x1);
        m.axpy(t * t, &x2);
        m
    }

    #[test]
    fn inverse_derivatives_match_finite_differences() {
        let h = 1e-4;
        let jet = [
            quadratic(0.0),
            Matrix::from_rows(&[&[0.5, -0.2], &[-0.2, 0.1]]),
            Matrix::from_rows(&[&[0.6, 0.2], &[0.2, -0.8]]),
        ];
        let inv = jet[0].spd_inverse().unwrap();
        let mut out = vec![Matrix::zeros(2, 2); 3];
        inverse_derivatives(&jet, &inv, &mut out, &mut Matrix::zeros(2, 2));
        let f = |t: f64| quadratic(t).spd_inverse().unwrap();
        let d1 = (&f(h) - &f(-h)).scale(0.5 / h);
        let d2 = (&(&f(h) + &f(-h)) - &f(0.0).scale(2.0)).scale(1.0 / (h * h));
        assert!((&d1 - &out[1]).max_abs() < 1e-7);
        assert!((&d2 - &out[2]).max_abs() < 1e-5);
    }

    #[test]
    fn product_rule_second_order() {
        let a = [Matrix::column(&[1.0]), Matrix::column(&[2.0]), Matrix::column(&[3.0])];
        let b = [Matrix::column(&[5.0]), Matrix::column(&[7.0]), Matrix::column(&[11.0])];
        let mut out = vec![Matrix::zeros(1, 1); 3];
        product_derivatives(&a, &b, &mut out);
        assert_eq!(out[0][0], 5.0);
        assert_eq!(out[1][0], 2.0 * 5.0 + 7.0);
        assert_eq!(out[2][0], 3.0 * 5.0 + 2.0 * 2.0 * 7.0 + 11.0);
    }

    #[test]
    fn state_recovers_x_from_information() {
        let q = [Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]), Matrix::zeros(2, 2)];
        let y = [Matrix::column(&[2.0, 8.0]), Matrix::column(&[0.0, 4.0])];
        let s = state_from_information(&y, &q).unwrap();
        assert!((s.x[0][0] - 1.0).abs() < 1e-15 && (s.x[0][1] - 2.0).abs() < 1e-15);
        assert!((s.x[1][1] - 1.0).abs() < 1e-15);
    }
}
