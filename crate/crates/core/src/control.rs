//! Robot plant (integrator chain) and the formation tracking law
//!
//! ```text
//! u_i = p_{i,m} - κ_0 (p_i - p_{i,0} - d_i) - Σ_{μ=1}^{m-1} κ_μ (p_i⁽μ⁾ - p_{i,μ})
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core_math::Dimensions;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    /// `κ_0..κ_{m-1}`.
    pub kappa: Vec<f64>,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains { kappa: vec![1.0, 2.0] }
    }
}

impl ControllerGains {
    /// Requires `m` gains making `λᵐ + Σ κ_μ λ^μ` Hurwitz.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.kappa.len() != m {
            return Err(Error::Config(format!(
                "controller needs {m} gains, got {}",
                self.kappa.len()
            )));
        }
        // Coefficients from the leading power down: 1, κ_{m-1}, …, κ_0.
        let mut coeffs = vec![1.0];
        coeffs.extend(self.kappa.iter().rev());
        if !is_hurwitz(&coeffs) {
            return Err(Error::Config(format!(
                "controller gains {:?} do not give a Hurwitz polynomial",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Routh test on `a_0 λⁿ + a_1 λⁿ⁻¹ + … + a_n` with `a_0 > 0`.
pub fn is_hurwitz(coeffs: &[f64]) -> bool {
    if coeffs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return false;
    }
    let mut prev: Vec<f64> = coeffs.iter().step_by(2).copied().collect();
    let mut curr: Vec<f64> = coeffs.iter().skip(1).step_by(2).copied().collect();
    for _ in 1..coeffs.len() - 1 {
        let pivot = curr[0];
        if !(pivot > 0.0) {
            return false;
        }
        let next: Vec<f64> = (0..prev.len() - 1)
            .map(|j| {
                let c = curr.get(j + 1).copied().unwrap_or(0.0);
                (pivot * prev[j + 1] - prev[0] * c) / pivot
            })
            .collect();
        prev = curr;
        curr = next;
        if curr.is_empty() {
            break;
        }
    }
    curr.first().is_none_or(|&c| c > 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub id: usize,
    /// `[p, p', …, p⁽ᵐ⁻¹⁾]`, each block of length `n`.
    pub x: Matrix,
}

impl RobotState {
    pub fn at_rest(id: usize, dims: Dimensions, position: &[f64]) -> Self {
        let mut x = Matrix::zeros(dims.state_dim(), 1);
        x.as_mut_slice()[..dims.n].copy_from_slice(position);
        RobotState { id, x }
    }

    pub fn position(&self, n: usize) -> &[f64] {
        &self.x.as_slice()[..n]
    }

    pub fn derivative(&self, n: usize, mu: usize) -> &[f64] {
        &self.x.as_slice()[mu * n..(mu + 1) * n]
    }
}

/// Formation law with reference jet `p_ref[μ]`, `μ = 0..=m`, offset `d`.
pub fn formation_control(
    x: &RobotState,
    p_ref: &[Matrix],
    d: &[f64],
    gains: &ControllerGains,
    dims: Dimensions,
    u: &mut [f64],
) {
    tracking_law(x, p_ref, |c| d[c], gains, dims, u);
}

/// Single-robot tracking of `p_ref` (no displacement).
pub fn single_robot_control(
    x: &RobotState,
    p_ref: &[Matrix],
    gains: &ControllerGains,
    dims: Dimensions,
    u: &mut [f64],
) {
    tracking_law(x, p_ref, |_| 0.0, gains, dims, u);
}

fn tracking_law(
    x: &RobotState,
    p_ref: &[Matrix],
    d: impl Fn(usize) -> f64,
    gains: &ControllerGains,
    dims: Dimensions,
    u: &mut [f64],
) {
    let (n, m) = (dims.n, dims.m);
    for c in 0..n {
        let mut v = p_ref[m][c] - gains.kappa[0] * (x.x[c] - p_ref[0][c] - d(c));
        for mu in 1..m {
            v -= gains.kappa[mu] * (x.x[mu * n + c] - p_ref[mu][c]);
        }
        u[c] = v;
    }
}

/// Explicit Euler step of `ẋ = A x + B u`.
pub fn step_robot(x: &mut RobotState, u: &[f64], dt: f64, dims: Dimensions) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("control input"));
    }
    let (n, m) = (dims.n, dims.m);
    let s = x.x.as_mut_slice();
    for i in 0..(m - 1) * n {
        s[i] += dt * s[i + n];
    }
    for c in 0..n {
        s[(m - 1) * n + c] += dt * u[c];
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RobotTraceRow {
    pub t: f64,
    pub robot: usize,
    pub state: Vec<f64>,
    pub u: Vec<f64>,
}

/// Writes `t,robot,p_1..p_n,…,u_1..u_n` with one column per state entry.
pub fn write_robot_trace_csv(path: &Path, dims: Dimensions, rows: &[RobotTraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["t".to_string(), "robot".to_string()];
    for mu in 0..dims.m {
        let name = if mu == 0 { "p".to_string() } else { format!("p{mu}") };
        header.extend((1..=dims.n).map(|c| format!("{name}_{c}")));
    }
    header.extend((1..=dims.n).map(|c| format!("u_{c}")));
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        write!(out, "{},{}", r.t, r.robot)?;
        for v in r.state.iter().chain(&r.u) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d12() -> Dimensions {
        Dimensions::new(1, 2).unwrap()
    }

    #[test]
    fn hurwitz_checks() {
        assert!(ControllerGains::default().validate(2).is_ok());
        assert!(ControllerGains { kappa: vec![-1.0, 2.0] }.validate(2).is_err());
        assert!(ControllerGains { kappa: vec![1.0] }.validate(2).is_err());
        // λ³ + λ² + λ + 1 has roots on the imaginary axis.
        assert!(!is_hurwitz(&[1.0, 1.0, 1.0, 1.0]));
        // (λ+1)³.
        assert!(is_hurwitz(&[1.0, 3.0, 3.0, 1.0]));
        // λ³ + λ² + 2λ + 8 has a right-half-plane pair.
        assert!(!is_hurwitz(&[1.0, 1.0, 2.0, 8.0]));
        assert!(is_hurwitz(&[1.0, 2.0]));
    }

    #[test]
    fn zero_error_is_feedforward() {
        let x = RobotState {
            id: 0,
            x: Matrix::column(&[1.0, 0.5]),
        };
        let p_ref = [Matrix::column(&[0.0]), Matrix::column(&[0.5]), Matrix::column(&[0.25])];
        let mut u = [0.0];
        formation_control(&x, &p_ref, &[1.0], &ControllerGains::default(), d12(), &mut u);
        assert_eq!(u[0], 0.25);
    }

    #[test]
    fn static_reference_substitution() {
        let x = RobotState {
            id: 0,
            x: Matrix::column(&[2.0, 0.3]),
        };
        let p_ref = [Matrix::column(&[0.5]), Matrix::zeros(1, 1), Matrix::zeros(1, 1)];
        let mut u = [0.0];
        formation_control(&x, &p_ref, &[0.25], &ControllerGains::default(), d12(), &mut u);
        assert!((u[0] - (-(2.0 - 0.5 - 0.25) - 2.0 * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn robot_euler_examples() {
        let mut x = RobotState {
            id: 0,
            x: Matrix::column(&[0.0, 1.0]),
        };
        step_robot(&mut x, &[0.0], 0.1, d12()).unwrap();
        assert_eq!(x.x.as_slice(), &[0.1, 1.0]);
        let mut x = RobotState::at_rest(0, d12(), &[0.0]);
        let dt = 1e-5;
        for _ in 0..100_000 {
            step_robot(&mut x, &[1.0], dt, d12()).unwrap();
        }
        assert!((x.x[0] - 0.5).abs() < 1e-4);
        assert!(step_robot(&mut x, &[f64::NAN], dt, d12()).is_err());
    }

    #[test]
    fn closed_loop_decays_with_double_pole() {
        // e'' = -e - 2e' from e(0) = 1, e'(0) = 0 gives e(t) = (1 + t) e^{-t}.
        let dims = d12();
        let mut x = RobotState::at_rest(0, dims, &[1.0]);
        let p_ref = [Matrix::zeros(1, 1), Matrix::zeros(1, 1), Matrix::zeros(1, 1)];
        let dt = 1e-4;
        let mut u = [0.0];
        for _ in 0..50_000 {
            formation_control(&x, &p_ref, &[0.0], &ControllerGains::default(), dims, &mut u);
            step_robot(&mut x, &u, dt, dims).unwrap();
        }
        let exact = 6.0 * (-5.0f64).exp();
        assert!((x.x[0] - exact).abs() < 1e-3 * exact.max(1e-3) + 1e-4);
    }
}
