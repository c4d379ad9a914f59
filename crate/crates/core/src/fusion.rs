//! Fused target position and derivatives from consensus outputs, plus the
//! centralized information-averaging oracle.

use std::io::Write;
use std::path::Path;

use crate::core_math::binom;
use crate::error::{Error, Result};
use crate::estimator::InformationJet;
use crate::jets::state_from_information;
use crate::matrix::Matrix;

/// Fused position jet `p_{i,0..=m}` with the covariance jet `P_{i,0..=m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub position: Vec<Matrix>,
    pub covariance: Vec<Matrix>,
}

/// Output stage for one agent, step by step:
///
/// ```text
/// P_0 = Q_0⁻¹,  p_0 = C P_0 y_0
/// P_μ = -P_0 Σ_{ν<μ} C(μ,ν) Q_{μ-ν} P_ν
/// p_μ = C Σ_{ν≤μ} C(μ,ν) P_ν y_{μ-ν}
/// ```
pub fn output_stage(agent: usize, jet: &InformationJet, c: &Matrix) -> Result<FusionOutput> {
    let sd = jet.y[0].rows();
    let mut out = FusionOutput::zeros(c.rows(), sd, jet.order());
    output_stage_into(agent, jet, c, &mut out)?;
    Ok(out)
}

impl FusionOutput {
    pub fn zeros(n: usize, state_dim: usize, order: usize) -> Self {
        FusionOutput {
            position: vec![Matrix::zeros(n, 1); order + 1],
            covariance: vec![Matrix::zeros(state_dim, state_dim); order + 1],
        }
    }
}

/// [`output_stage`] into storage of matching shape.
pub fn output_stage_into(agent: usize, jet: &InformationJet, c: &Matrix, out: &mut FusionOutput) -> Result<()> {
    let order = jet.order();
    let mut q0 = jet.q[0].clone();
    q0.symmetrize();
    let (p0, cond) = q0
        .spd_inverse_with_condition()
        .map_err(|_| Error::AgentIllConditioned { agent, cond: f64::INFINITY })?;
    if !(cond <= crate::matrix::MAX_CONDITION) {
        return Err(Error::AgentIllConditioned { agent, cond });
    }
    let mut x_mu = Matrix::zeros(q0.rows(), 1);
    let cov = &mut out.covariance;
    cov[0].clone_from(&p0);
    for mu in 0..=order {
        if mu > 0 {
            q0.fill(0.0);
            for nu in 0..mu {
                q0.add_product(binom(mu, nu) as f64, &jet.q[mu - nu], &cov[nu]);
            }
            cov[mu].fill(0.0);
            cov[mu].add_product(-1.0, &p0, &q0);
        }
        x_mu.fill(0.0);
        for nu in 0..=mu {
            x_mu.add_product(binom(mu, nu) as f64, &cov[nu], &jet.y[mu - nu]);
        }
        out.position[mu].fill(0.0);
        out.position[mu].add_product(1.0, c, &x_mu);
    }
    Ok(())
}

/// Arithmetic mean of the agents' information jets.
pub fn average_jets(jets: &[InformationJet]) -> Result<InformationJet> {
    let first = jets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no jets to fuse".into()))?;
    let mut avg = InformationJet::zeros(first.y[0].rows(), first.order());
    avg.t = first.t;
    let w = 1.0 / jets.len() as f64;
    for j in jets {
        for mu in 0..=first.order() {
            avg.y[mu].axpy(w, &j.y[mu]);
            avg.q[mu].axpy(w, &j.q[mu]);
        }
    }
    Ok(avg)
}

#[derive(Debug, Clone)]
pub struct CentralFusion {
    pub q: Matrix,
    pub y: Matrix,
    pub x: Matrix,
    pub p: Matrix,
    /// `C x̄_G`.
    pub position: Matrix,
}

/// `Q̄ = mean Q̂_i`, `ȳ = mean ŷ_i`, `x̄ = Q̄⁻¹ ȳ`, `p̄ = C x̄`.
pub fn centralized_fusion(jets: &[InformationJet], c: &Matrix) -> Result<CentralFusion> {
    let avg = average_jets(jets)?;
    let mut q = avg.q[0].clone();
    q.symmetrize();
    let p = q.spd_inverse()?;
    let x = &p * &avg.y[0];
    let position = c * &x;
    Ok(CentralFusion {
        q,
        y: avg.y[0].clone(),
        x,
        p,
        position,
    })
}

/// `p̄_G⁽μ⁾`, `μ = 0..=m`, from the averaged jets.
pub fn centralized_derivatives(jets: &[InformationJet], c: &Matrix) -> Result<Vec<Matrix>> {
    let avg = average_jets(jets)?;
    let st = state_from_information(&avg.y, &avg.q)?;
    Ok(st.x.iter().map(|x| c * x).collect())
}

/// Output stage with zero-order hold on failure.
#[derive(Debug, Clone, Default)]
pub struct HeldOutputStage {
    last: Option<FusionOutput>,
    candidate: Option<FusionOutput>,
    held: bool,
    held_count: usize,
}

impl HeldOutputStage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs the output stage; on failure keeps the last valid output and
    /// sets the held flag. Fails only if no valid output exists yet.
    pub fn update(&mut self, agent: usize, jet: &InformationJet, c: &Matrix) -> Result<&FusionOutput> {
        let cand = self
            .candidate
            .get_or_insert_with(|| FusionOutput::zeros(c.rows(), jet.y[0].rows(), jet.order()));
        match output_stage_into(agent, jet, c, cand) {
            Ok(()) if cand.position.iter().all(Matrix::is_finite) => {
                std::mem::swap(&mut self.last, &mut self.candidate);
                if self.candidate.is_none() {
                    self.candidate = self.last.clone();
                }
                self.held = false;
            }
            Ok(()) if self.last.is_some() => self.hold(),
            Err(_) if self.last.is_some() => self.hold(),
            Ok(()) => return Err(Error::NonFinite("fusion output")),
            Err(e) => return Err(e),
        }
        Ok(self.last.as_ref().expect("set above"))
    }

    fn hold(&mut self) {
        self.held = true;
        self.held_count += 1;
    }

    pub fn held(&self) -> bool {
        self.held
    }

    pub fn held_count(&self) -> usize {
        self.held_count
    }

    pub fn last(&self) -> Option<&FusionOutput> {
        self.last.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct FusionTraceRow {
    pub t: f64,
    pub agent: usize,
    pub mu: usize,
    pub position: Vec<f64>,
    pub held: bool,
}

/// Writes `t,agent,mu,p_1..p_n,held_flag`.
pub fn write_fusion_trace_csv(path: &Path, rows: &[FusionTraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = rows.first().map_or(1, |r| r.position.len());
    let ps: Vec<String> = (1..=n).map(|i| format!("p_{i}")).collect();
    writeln!(out, "t,agent,mu,{},held_flag", ps.join(","))?;
    for r in rows {
        write!(out, "{},{},{}", r.t, r.agent, r.mu)?;
        for v in &r.position {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{}", u8::from(r.held))?;
    }
    out.flush()?;
    Ok(())
}
