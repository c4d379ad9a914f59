//! Rational transition function `η(τ; α) = Φ(τ) / (Φ(τ) + Φ(α(1 - τ)))`
//! with `Φ(τ) = τ^(m+1)`.

use crate::error::{Error, Result};

/// `η⁽μ⁾(τ; α)` for `μ = 0..out.len()` with respect to `τ`.
pub fn eta_jet(tau: f64, alpha: f64, m: usize, out: &mut [f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("transition argument {tau} outside [0, 1]")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    eta_jet_unchecked(tau, alpha, m, out);
    Ok(())
}

/// `η` jet without argument checks; `D = Φ + Ψ > 0` on `[0, 1]`.
pub(crate) fn eta_jet_unchecked(tau: f64, alpha: f64, m: usize, out: &mut [f64]) {
    let e = m + 1;
    let am = alpha.powi(e as i32);
    // Φ⁽ʲ⁾ and D⁽ʲ⁾ = Φ⁽ʲ⁾ + Ψ⁽ʲ⁾ with Ψ(τ) = αᵉ (1 - τ)ᵉ.
    let mut phi = [0.0f64; 16];
    let mut den = [0.0f64; 16];
    let order = out.len();
    assert!(order <= phi.len(), "transition jet order too high");
    let mut fall = 1.0;
    for j in 0..order {
        if j <= e {
            let p = fall * tau.powi((e - j) as i32);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let q = sign * am * fall * (1.0 - tau).powi((e - j) as i32);
            phi[j] = p;
            den[j] = p + q;
            fall *= (e - j) as f64;
        }
    }
    for mu in 0..order {
        let mut num = phi[mu];
        for nu in 0..mu {
            num -= crate::core_math::binom(mu, nu) as f64 * out[nu] * den[mu - nu];
        }
        out[mu] = num / den[0];
    }
}

pub fn transition_eta(tau: f64, alpha: f64, m: usize, mu: usize) -> Result<f64> {
    let mut out = [0.0; 16];
    eta_jet(tau, alpha, m, &mut out[..=mu])?;
    Ok(out[mu])
}
