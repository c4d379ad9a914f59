use serde::{Deserialize, Serialize};

use super::segment::make_prediction_segment;
use super::transition::eta_jet_unchecked;
use super::{EstimatorModel, FilterState, PredictionSegment};
use crate::error::{Error, Result};
use crate::jets::{inverse_derivatives, product_derivatives, state_from_information, state_from_information_into, weighted_accumulate, StateJet};
use crate::matrix::Matrix;

/// Slack on the blend argument `(t - τ_k) / Δ_k` before it counts as outside
/// the interval.
const ARG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EstimatorKind {
    /// Smooth blend of consecutive segments with sharpness `alpha`.
    Soe { alpha: f64 },
    /// Piecewise optimal prediction, discontinuous at the processing instants.
    Doe,
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Soe { alpha } if !(alpha > 0.0) || !alpha.is_finite() => Err(
                Error::InvalidArgument(format!("alpha must be positive, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Soe { alpha } => format!("SOE(alpha={alpha})"),
            EstimatorKind::Doe => "DOE".into(),
        }
    }
}

/// Information vector `ŷ` and matrix `Q̂` with derivatives `0..=m` at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationJet {
    pub t: f64,
    pub y: Vec<Matrix>,
    pub q: Vec<Matrix>,
}

impl InformationJet {
    pub fn zeros(state_dim: usize, m: usize) -> Self {
        InformationJet {
            t: 0.0,
            y: vec![Matrix::zeros(state_dim, 1); m + 1],
            q: vec![Matrix::zeros(state_dim, state_dim); m + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.y.len() - 1
    }

    pub fn to_state(&self) -> Result<StateJet> {
        state_from_information(&self.y, &self.q)
    }

    pub fn to_state_into(&self, out: &mut StateJet) -> Result<()> {
        state_from_information_into(&self.y, &self.q, out)
    }
}

#[derive(Debug, Clone)]
struct Workspace {
    p: Vec<Matrix>,
    q: Vec<Matrix>,
    x: Vec<Matrix>,
    y: Vec<Matrix>,
    eta: Vec<f64>,
    scratch: Matrix,
}

/// Blend of `(t|k-1)` (continued past its own interval) and `(t|k)` over
/// `[τ_k, τ_k + Δ_k)`.
#[derive(Debug, Clone)]
pub struct SoeState {
    pub kind: EstimatorKind,
    pub prev: PredictionSegment,
    pub curr: PredictionSegment,
    pub delta: f64,
    /// At `k = 0` both segments coincide and the blend is the identity.
    bootstrap: bool,
    m: usize,
    ws: Workspace,
}

impl SoeState {
    /// Bootstrap at `τ_0 = anchor` from the prior.
    pub fn new(kind: EstimatorKind, model: &EstimatorModel, prior: &FilterState, anchor: f64, delta: f64) -> Result<Self> {
        kind.validate()?;
        prior.validate()?;
        check_delta(delta)?;
        let seg = make_prediction_segment(model, prior, anchor);
        let m = model.dims.m;
        let sd = model.dims.state_dim();
        Ok(SoeState {
            kind,
            prev: seg.clone(),
            curr: seg,
            delta,
            bootstrap: true,
            m,
            ws: Workspace {
                p: vec![Matrix::zeros(sd, sd); m + 1],
                q: vec![Matrix::zeros(sd, sd); m + 1],
                x: vec![Matrix::zeros(sd, 1); m + 1],
                y: vec![Matrix::zeros(sd, 1); m + 1],
                eta: vec![0.0; m + 1],
                scratch: Matrix::zeros(sd, sd),
            },
        })
    }

    pub fn tau(&self) -> f64 {
        self.curr.anchor
    }

    pub fn k(&self) -> usize {
        self.curr.k
    }

    /// Moves to sample `k + 1` at `anchor` with blend window `delta`.
    pub fn advance(&mut self, model: &EstimatorModel, next: &FilterState, anchor: f64, delta: f64) -> Result<()> {
        if next.k != self.curr.k + 1 {
            return Err(Error::OutOfOrder {
                expected: self.curr.k + 1,
                got: next.k,
            });
        }
        if !(anchor > self.curr.anchor) {
            return Err(Error::InvalidArgument(format!(
                "sampling instant {anchor} does not follow {}",
                self.curr.anchor
            )));
        }
        check_delta(delta)?;
        let seg = make_prediction_segment(model, next, anchor);
        self.prev = std::mem::replace(&mut self.curr, seg);
        self.delta = delta;
        self.bootstrap = false;
        Ok(())
    }

    /// Normalized blend argument, clamped within [`ARG_EPS`] of the interval.
    fn argument(&self, t: f64) -> Result<f64> {
        let arg = (t - self.curr.anchor) / self.delta;
        if !(-ARG_EPS..=1.0 + ARG_EPS).contains(&arg) {
            return Err(Error::OutOfRange {
                t,
                start: self.curr.anchor,
                end: self.curr.anchor + self.delta,
            });
        }
        Ok(arg.clamp(0.0, 1.0))
    }

    /// `λ₂ = η((t - τ_k)/Δ_k)` and its time derivatives; `λ₁ = 1 - λ₂`.
    pub fn weight_jet(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let arg = self.argument(t)?;
        match self.kind {
            EstimatorKind::Doe => {
                out.fill(0.0);
                out[0] = 1.0;
            }
            EstimatorKind::Soe { alpha } => {
                eta_jet_unchecked(arg, alpha, self.m, out);
                let mut scale = 1.0;
                for v in out.iter_mut().skip(1) {
                    scale /= self.delta;
                    *v *= scale;
                }
            }
        }
        Ok(())
    }

    pub fn information_jet(&mut self, t: f64) -> Result<InformationJet> {
        let mut out = InformationJet::zeros(self.curr.state_dim(), self.m);
        self.information_jet_into(t, &mut out)?;
        Ok(out)
    }

    pub fn information_jet_into(&mut self, t: f64, out: &mut InformationJet) -> Result<()> {
        let mut eta = std::mem::take(&mut self.ws.eta);
        let res = self.blend_into(t, &mut eta, out);
        self.ws.eta = eta;
        res
    }

    fn blend_into(&mut self, t: f64, eta: &mut [f64], out: &mut InformationJet) -> Result<()> {
        self.weight_jet(t, eta)?;
        out.t = t;
        for v in out.y.iter_mut().chain(out.q.iter_mut()) {
            v.fill(0.0);
        }
        let lam2_only = self.bootstrap || eta[0] == 1.0 && eta[1..].iter().all(|&v| v == 0.0);
        let lam1_only = !self.bootstrap && eta.iter().all(|&v| v == 0.0);
        if !lam1_only {
            segment_information(&self.curr, t, &mut self.ws)?;
            weighted_accumulate(eta_or_one(eta, lam2_only), &self.ws.y, &mut out.y);
            weighted_accumulate(eta_or_one(eta, lam2_only), &self.ws.q, &mut out.q);
        }
        if !lam2_only {
            segment_information(&self.prev, t, &mut self.ws)?;
            for (i, v) in eta.iter_mut().enumerate() {
                *v = if i == 0 { 1.0 - *v } else { -*v };
            }
            weighted_accumulate(eta, &self.ws.y, &mut out.y);
            weighted_accumulate(eta, &self.ws.q, &mut out.q);
        }
        for q in &mut out.q {
            q.symmetrize();
        }
        Ok(())
    }

    /// State-space estimate `x̂ = Q̂⁻¹ ŷ`, `P̂ = Q̂⁻¹` and their derivatives.
    pub fn state_jet(&mut self, t: f64) -> Result<StateJet> {
        self.information_jet(t)?.to_state()
    }
}

fn eta_or_one(eta: &[f64], identity: bool) -> &[f64] {
    const ONE: [f64; 16] = {
        let mut a = [0.0; 16];
        a[0] = 1.0;
        a
    };
    if identity {
        &ONE[..eta.len()]
    } else {
        eta
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("blend window must be positive, got {delta}")));
    }
    Ok(())
}

/// `Q*(t|·) = P*(t|·)⁻¹` and `y*(t|·) = Q* x*` with derivatives, into `ws.q`, `ws.y`.
fn segment_information(seg: &PredictionSegment, t: f64, ws: &mut Workspace) -> Result<()> {
    seg.p_jet(t, &mut ws.p);
    let q0 = ws.p[0].spd_inverse()?;
    inverse_derivatives(&ws.p, &q0, &mut ws.q, &mut ws.scratch);
    seg.x_jet(t, &mut ws.x);
    product_derivatives(&ws.q, &ws.x, &mut ws.y);
    Ok(())
}

pub fn soe_advance(
    soe: &mut SoeState,
    model: &EstimatorModel,
    next: &FilterState,
    anchor: f64,
    delta: f64,
) -> Result<()> {
    soe.advance(model, next, anchor, delta)
}

pub fn soe_information_jet(soe: &mut SoeState, t: f64) -> Result<InformationJet> {
    soe.information_jet(t)
}
