use super::{EstimatorModel, FilterState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Model-based prediction from `(x*[k], P*[k])` as polynomials in
/// `s = t - τ_k`:
/// `x*(t|k) = A_d(s) x*[k]`, `P*(t|k) = A_d(s) P*[k] A_d(s)ᵀ + W_d(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSegment {
    pub k: usize,
    pub anchor: f64,
    /// Degree `m - 1`.
    pub x_coeffs: Vec<Matrix>,
    /// Degree `2m - 1`.
    pub p_coeffs: Vec<Matrix>,
}

pub fn make_prediction_segment(model: &EstimatorModel, state: &FilterState, anchor: f64) -> PredictionSegment {
    let m = model.dims.m;
    let sd = model.dims.state_dim();
    let x_coeffs: Vec<Matrix> = model.exp_terms.iter().map(|e| e * &state.x).collect();
    let mut p_coeffs = model.w_terms.clone();
    debug_assert_eq!(p_coeffs.len(), 2 * m);
    let left: Vec<Matrix> = model.exp_terms.iter().map(|e| e * &state.p).collect();
    for (a, l) in left.iter().enumerate() {
        for (b, e) in model.exp_terms.iter().enumerate() {
            p_coeffs[a + b] += &l.mul_transpose(e);
        }
    }
    for c in &mut p_coeffs {
        c.symmetrize();
    }
    debug_assert!(p_coeffs.iter().all(|c| c.rows() == sd));
    PredictionSegment {
        k: state.k,
        anchor,
        x_coeffs,
        p_coeffs,
    }
}

/// `out[μ] = d^μ/ds^μ Σ_j c_j s^j` for `μ < out.len()`.
pub(crate) fn poly_jet(coeffs: &[Matrix], s: f64, out: &mut [Matrix]) {
    for (mu, o) in out.iter_mut().enumerate() {
        o.fill(0.0);
        for j in (mu..coeffs.len()).rev() {
            o.scale_mut(s);
            o.axpy(falling(j, mu), &coeffs[j]);
        }
    }
}

fn falling(j: usize, mu: usize) -> f64 {
    ((j - mu + 1)..=j).fold(1.0, |acc, i| acc * i as f64)
}

impl PredictionSegment {
    pub fn state_dim(&self) -> usize {
        self.x_coeffs[0].rows()
    }

    pub fn x_at(&self, t: f64) -> Matrix {
        let mut out = [Matrix::zeros(self.state_dim(), 1)];
        poly_jet(&self.x_coeffs, t - self.anchor, &mut out);
        let [x] = out;
        x
    }

    pub fn p_at(&self, t: f64) -> Matrix {
        let sd = self.state_dim();
        let mut out = [Matrix::zeros(sd, sd)];
        poly_jet(&self.p_coeffs, t - self.anchor, &mut out);
        let [p] = out;
        p
    }

    /// `x*(t|k)` and its first `out.len() - 1` derivatives.
    pub fn x_jet(&self, t: f64, out: &mut [Matrix]) {
        poly_jet(&self.x_coeffs, t - self.anchor, out);
    }

    /// `P*(t|k)` and its first `out.len() - 1` derivatives.
    pub fn p_jet(&self, t: f64, out: &mut [Matrix]) {
        poly_jet(&self.p_coeffs, t - self.anchor, out);
    }
}

/// Piecewise DOE: the segment whose anchor is the last one not after `t`.
/// Segments must be sorted by anchor.
pub fn doe_evaluate(segments: &[PredictionSegment], t: f64) -> Result<(Matrix, Matrix)> {
    let idx = segments.partition_point(|s| s.anchor <= t);
    if idx == 0 {
        return Err(Error::OutOfRange {
            t,
            start: segments.first().map_or(f64::NAN, |s| s.anchor),
            end: f64::INFINITY,
        });
    }
    let seg = &segments[idx - 1];
    Ok((seg.x_at(t), seg.p_at(t)))
}
