use super::{EstimatorModel, FilterState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Result of one filter recursion, with the quantities that make up the
/// correction term `L[k] (z[k] - C x*[k])`.
#[derive(Debug, Clone)]
pub struct KalmanUpdate {
    pub state: FilterState,
    pub gain: Matrix,
    pub innovation: Matrix,
}

/// Advances `(x*[k], P*[k])` to `(x*[k+1], P*[k+1])` using `z[k]`, which was
/// sampled at `τ_k` and becomes available at `τ_k + Δ_k`.
///
/// ```text
/// L      = A_d P Cᵀ (C P Cᵀ + R)⁻¹
/// x⁺     = A_d x + L (z - C x)
/// P⁺     = (A_d - L C) P (A_d - L C)ᵀ + L R Lᵀ + W_d(Δ)
/// ```
pub fn kalman_step(
    model: &EstimatorModel,
    state: &FilterState,
    z: &Matrix,
    delta: f64,
    r: &Matrix,
) -> Result<KalmanUpdate> {
    let n = model.dims.n;
    if z.shape() != (n, 1) || r.shape() != (n, n) {
        return Err(Error::Dimensions(format!("measurement must be {n}x1 with {n}x{n} noise")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("latency must be positive, got {delta}")));
    }
    r.cholesky()?;
    let c = &model.sys.c;
    let ad = model.transition(delta);
    let pct = state.p.mul_transpose(c);
    let mut s = &(c * &pct) + r;
    s.symmetrize();
    let gain = &(&ad * &pct) * &s.spd_inverse()?;
    let innovation = z - &(c * &state.x);
    let mut x = &ad * &state.x;
    x += &(&gain * &innovation);
    let closed = &ad - &(&gain * c);
    let mut p = closed.congruence(&state.p);
    p += &gain.congruence(r);
    p += &model.process_noise(delta);
    p.symmetrize();
    if !x.is_finite() || !p.is_finite() {
        return Err(Error::NonFinite("filter update"));
    }
    Ok(KalmanUpdate {
        state: FilterState { k: state.k + 1, x, p },
        gain,
        innovation,
    })
}
