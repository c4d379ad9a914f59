//! Per-robot local estimation: the latency-aware Kalman recursion at the
//! processing instants, model-based prediction segments in between, and the
//! smooth blend of consecutive segments in information form.

mod kalman;
mod segment;
mod soe;
mod transition;

pub use kalman::{kalman_step, KalmanUpdate};
pub use segment::{doe_evaluate, make_prediction_segment, PredictionSegment};
pub use soe::{soe_advance, soe_information_jet, EstimatorKind, InformationJet, SoeState};
pub use transition::{eta_jet, transition_eta};

use serde::{Deserialize, Serialize};

use crate::core_math::{process_noise_coefficients, Dimensions, SystemMatrices};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default prior covariance scale, `P*[0] = 10 I`.
pub const DEFAULT_PRIOR_SCALE: f64 = 10.0;

/// Precomputed model quantities shared by every segment of one estimator.
#[derive(Debug, Clone)]
pub struct EstimatorModel {
    pub dims: Dimensions,
    pub sys: SystemMatrices,
    pub w: Matrix,
    /// `A^d / d!` for `d = 0..m`, so `A_d(s) = Σ_d s^d A^d / d!`.
    pub(crate) exp_terms: Vec<Matrix>,
    /// `W_d(s) = Σ_k s^k w_terms[k]`.
    pub(crate) w_terms: Vec<Matrix>,
}

impl EstimatorModel {
    pub fn new(dims: Dimensions, w: Matrix) -> Result<Self> {
        let w_terms = process_noise_coefficients(dims, &w)?;
        if !w.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("W must be symmetric".into()));
        }
        w.psd_factor()?;
        let sys = SystemMatrices::new(dims);
        let sd = dims.state_dim();
        let mut exp_terms = vec![Matrix::identity(sd)];
        for d in 1..dims.m {
            let next = (&sys.a * &exp_terms[d - 1]).scale(1.0 / d as f64);
            exp_terms.push(next);
        }
        Ok(EstimatorModel {
            dims,
            sys,
            w,
            exp_terms,
            w_terms,
        })
    }

    pub fn transition(&self, s: f64) -> Matrix {
        self.sys.transition(s)
    }

    pub fn process_noise(&self, s: f64) -> Matrix {
        let sd = self.dims.state_dim();
        let mut acc = Matrix::zeros(sd, sd);
        for c in self.w_terms.iter().rev() {
            acc.scale_mut(s);
            acc += c;
        }
        acc
    }
}

/// `(x*[k], P*[k])`: estimate of the state at `τ_k` given `z[0..k-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub k: usize,
    pub x: Matrix,
    pub p: Matrix,
}

impl FilterState {
    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() || !self.p.is_finite() {
            return Err(Error::NonFinite("filter state"));
        }
        if !self.p.is_symmetric(1e-9) {
            return Err(Error::InvalidArgument("filter covariance is not symmetric".into()));
        }
        self.p.cholesky().map(|_| ())
    }
}

/// How `x*[0]` is chosen before any measurement has been processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// `x*[0] = 0`.
    #[default]
    Zero,
    /// Position from a bootstrap detection at `t = 0`, derivatives zero.
    Detection,
}

/// Initial filter state with `P*[0] = scale · I`. `position` is lifted into
/// the first state block.
pub fn initial_state(dims: Dimensions, position: Option<&Matrix>, scale: f64) -> Result<FilterState> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("prior scale must be positive, got {scale}")));
    }
    let sd = dims.state_dim();
    let mut x = Matrix::zeros(sd, 1);
    if let Some(p) = position {
        if p.shape() != (dims.n, 1) {
            return Err(Error::Dimensions(format!("prior position must have {} entries", dims.n)));
        }
        x.as_mut_slice()[..dims.n].copy_from_slice(p.as_slice());
    }
    Ok(FilterState {
        k: 0,
        x,
        p: Matrix::identity(sd).scale(scale),
    })
}
