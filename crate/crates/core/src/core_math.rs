//! Constant system matrices of the integrator chain and their closed-form
//! time-dependent companions.
//!
//! The plant state is `[p, p', ..., p^(m-1)]` with each block of size `n`, so
//! every matrix here is a single-coordinate block Kronecker-multiplied by
//! `I_n`. The consensus structure matrices (`Γ`, `G`) carry `m + 1`
//! internal variables and are sized accordingly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Workspace dimension.
    pub n: usize,
    /// Integrator order.
    pub m: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Dimensions(format!(
                "workspace dimension and integrator order must be positive (n = {n}, m = {m})"
            )));
        }
        Ok(Dimensions { n, m })
    }

    pub fn state_dim(&self) -> usize {
        self.n * self.m
    }
}

/// Integrator-chain matrices `A = A0 ⊗ I_n`, `B = B0 ⊗ I_n`, `C = C0 ⊗ I_n`.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub dims: Dimensions,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl SystemMatrices {
    pub fn new(dims: Dimensions) -> Self {
        let m = dims.m;
        let eye = Matrix::identity(dims.n);
        let a0 = Matrix::from_fn(m, m, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        let b0 = Matrix::from_fn(m, 1, |i, _| if i + 1 == m { 1.0 } else { 0.0 });
        let c0 = Matrix::from_fn(1, m, |_, j| if j == 0 { 1.0 } else { 0.0 });
        SystemMatrices {
            dims,
            a: a0.kron(&eye),
            b: b0.kron(&eye),
            c: c0.kron(&eye),
        }
    }

    /// `exp(A τ)` in closed form: block `(i, j)` is `τ^(j-i) / (j-i)! · I_n`.
    pub fn transition(&self, tau: f64) -> Matrix {
        transition_matrix(self.dims, tau)
    }

    /// `W_d(τ)` for Wiener covariance `w`.
    pub fn process_noise(&self, w: &Matrix, tau: f64) -> Result<Matrix> {
        process_noise_covariance(self.dims, w, tau)
    }
}

pub fn build_system_matrices(dims: Dimensions) -> SystemMatrices {
    SystemMatrices::new(dims)
}

/// `Γ = A0 - diag(γ)` and the observability-like stack `G = [C0; C0 Γ; ...; C0 Γ^m]`
/// on `m + 1` internal variables.
#[derive(Debug, Clone)]
pub struct RedchoStructure {
    pub gamma_matrix: Matrix,
    pub g: Matrix,
    pub gammas: Vec<f64>,
}

impl RedchoStructure {
    pub fn new(m: usize, gammas: &[f64]) -> Result<Self> {
        if gammas.len() != m + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} forgetting gains, got {}",
                m + 1,
                gammas.len()
            )));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "forgetting gains must be positive, got {g}"
            )));
        }
        Ok(Self::new_unchecked(m, gammas))
    }

    /// Builds the structure without the positivity check; used for the
    /// vanishing-gain limit in tests and diagnostics.
    pub fn new_unchecked(m: usize, gammas: &[f64]) -> Self {
        let k = m + 1;
        let gamma_matrix = Matrix::from_fn(k, k, |i, j| {
            let shift = if j == i + 1 { 1.0 } else { 0.0 };
            let diag = if i == j { gammas[i] } else { 0.0 };
            shift - diag
        });
        let mut g = Matrix::zeros(k, k);
        let mut row = Matrix::from_fn(1, k, |_, j| if j == 0 { 1.0 } else { 0.0 });
        for mu in 0..k {
            g.row_mut(mu).copy_from_slice(row.as_slice());
            row = &row * &gamma_matrix;
        }
        RedchoStructure {
            gamma_matrix,
            g,
            gammas: gammas.to_vec(),
        }
    }
}

pub fn build_redcho_structure(m: usize, gammas: &[f64]) -> Result<RedchoStructure> {
    RedchoStructure::new(m, gammas)
}

/// `exp(A τ)` for a nilpotent `A` as the exact finite series.
pub fn matrix_exponential_nilpotent(a: &Matrix, tau: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Dimensions("exponential of a non-square matrix".into()));
    }
    let n = a.rows();
    let at = a.scale(tau);
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=n {
        term = (&term * &at).scale(1.0 / k as f64);
        if term.is_zero() {
            return Ok(result);
        }
        result += &term;
    }
    // A^n must vanish for a nilpotent n×n matrix (checked on A itself so that
    // τ = 0 is accepted for any nilpotent input).
    let mut power = Matrix::identity(n);
    for _ in 0..n {
        power = &power * a;
    }
    if power.max_abs() > 0.0 {
        return Err(Error::InvalidArgument("matrix is not nilpotent".into()));
    }
    Ok(result)
}

/// Closed-form chain transition, block `(i, j) = τ^(j-i)/(j-i)! I_n`.
pub fn transition_matrix(dims: Dimensions, tau: f64) -> Matrix {
    let n = dims.n;
    let mut out = Matrix::zeros(dims.state_dim(), dims.state_dim());
    let mut coeff = 1.0;
    for d in 0..dims.m {
        if d > 0 {
            coeff *= tau / d as f64;
        }
        for blk in 0..dims.m - d {
            for c in 0..n {
                out[(blk * n + c, (blk + d) * n + c)] = coeff;
            }
        }
    }
    out
}

/// Coefficient matrices `W_k` with `W_d(τ) = Σ_k W_k τ^k`, `k = 0..=2m-1`.
///
/// With `p = m-1-i`, `q = m-1-j` the `(i, j)` block of the integrand is
/// `s^(p+q) / (p! q!) W`, which integrates to `τ^(p+q+1) / ((p+q+1) p! q!) W`.
pub fn process_noise_coefficients(dims: Dimensions, w: &Matrix) -> Result<Vec<Matrix>> {
    let n = dims.n;
    if w.shape() != (n, n) {
        return Err(Error::Dimensions(format!(
            "diffusion covariance must be {n}x{n}, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    let m = dims.m;
    let sd = dims.state_dim();
    let mut coeffs = vec![Matrix::zeros(sd, sd); 2 * m];
    for i in 0..m {
        for j in 0..m {
            let p = m - 1 - i;
            let q = m - 1 - j;
            let deg = p + q + 1;
            let k = 1.0 / (deg as f64 * factorial(p) * factorial(q));
            for r in 0..n {
                for c in 0..n {
                    coeffs[deg][(i * n + r, j * n + c)] = k * w[(r, c)];
                }
            }
        }
    }
    Ok(coeffs)
}

pub fn process_noise_covariance(dims: Dimensions, w: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "process noise horizon must be non-negative, got {tau}"
        )));
    }
    let coeffs = process_noise_coefficients(dims, w)?;
    let mut acc = Matrix::zeros(dims.state_dim(), dims.state_dim());
    for c in coeffs.iter().rev() {
        acc.scale_mut(tau);
        acc += c;
    }
    Ok(acc)
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

pub fn binomial(mu: i64, nu: i64) -> Result<u64> {
    if mu < 0 || nu < 0 || nu > mu {
        return Err(Error::InvalidArgument(format!(
            "binomial({mu}, {nu}) requires 0 <= nu <= mu"
        )));
    }
    Ok(binom(mu as usize, nu as usize))
}

/// Unchecked binomial for internal loops; `nu <= mu` is the caller's job.
pub(crate) fn binom(mu: usize, nu: usize) -> u64 {
    let nu = nu.min(mu - nu);
    let mut acc: u64 = 1;
    for i in 0..nu {
        acc = acc * (mu - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// `⌈x⌋^α = |x|^α sign(x)`, with `⌈x⌋^0 = sign(x)` and `sign(0) = 0`.
pub fn signed_power(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if alpha == 0.0 {
        return x.signum();
    }
    x.abs().powf(alpha) * x.signum()
}

pub fn signed_power_slice(xs: &[f64], alpha: f64) -> Vec<f64> {
    xs.iter().map(|&x| signed_power(x, alpha)).collect()
}
