//! Ground-truth target: an `m`-th order integrator chain driven by a Wiener
//! input, integrated with Euler–Maruyama on a uniform grid.

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::core_math::{Dimensions, SystemMatrices};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, SimRng};

/// Relative slack used when mapping a time onto the integration grid.
const GRID_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TargetConfig {
    pub dims: Dimensions,
    /// Diffusion covariance of the Wiener input (`n × n`).
    pub w: Matrix,
    /// Initial state (`nm × 1`).
    pub x0: Matrix,
    pub dt: f64,
    pub horizon: f64,
}

impl TargetConfig {
    /// Zero initial state with the given diffusion.
    pub fn new(dims: Dimensions, w: Matrix, dt: f64, horizon: f64) -> Self {
        TargetConfig {
            dims,
            w,
            x0: Matrix::zeros(dims.state_dim(), 1),
            dt,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dims.n;
        if self.w.shape() != (n, n) {
            return Err(Error::Dimensions(format!("W must be {n}x{n}")));
        }
        if self.x0.shape() != (self.dims.state_dim(), 1) {
            return Err(Error::Dimensions(format!(
                "x0 must have {} entries",
                self.dims.state_dim()
            )));
        }
        if !self.w.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("W must be symmetric".into()));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt and horizon must be positive (dt = {}, T = {})",
                self.dt, self.horizon
            )));
        }
        let steps = self.horizon / self.dt;
        if !(steps < (1u64 << 52) as f64) {
            return Err(Error::InvalidArgument("horizon/dt too large".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt + GRID_EPS).floor() as usize
    }
}

/// Streaming Euler–Maruyama integrator for one target realization.
#[derive(Debug, Clone)]
pub struct TargetSimulator {
    sys: SystemMatrices,
    noise_factor: Matrix,
    state: Matrix,
    step: usize,
    dt: f64,
    sqrt_dt: f64,
    rng: SimRng,
    xi: Matrix,
}

impl TargetSimulator {
    pub fn new(config: &TargetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let noise_factor = config.w.psd_factor()?;
        Ok(TargetSimulator {
            sys: SystemMatrices::new(config.dims),
            noise_factor,
            state: config.x0.clone(),
            step: 0,
            dt: config.dt,
            sqrt_dt: config.dt.sqrt(),
            rng: seeded(seed),
            xi: Matrix::zeros(config.dims.n, 1),
        })
    }

    pub fn state(&self) -> &Matrix {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// `x ← x + A x dt + B √dt L ξ`, `ξ ~ N(0, I)`.
    pub fn advance(&mut self) {
        for v in self.xi.as_mut_slice() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        let drift = &self.sys.a * &self.state;
        let kick = &self.sys.b * &(&self.noise_factor * &self.xi);
        self.state.axpy(self.dt, &drift);
        self.state.axpy(self.sqrt_dt, &kick);
        self.step += 1;
    }
}

#[derive(Debug, Clone)]
pub struct TargetTrajectory {
    pub dims: Dimensions,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Row-major `(steps + 1) × nm` states.
    states: Vec<f64>,
}

impl TargetTrajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dims.state_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |j| self.time(j))
    }

    pub fn state(&self, j: usize) -> &[f64] {
        let sd = self.dims.state_dim();
        &self.states[j * sd..(j + 1) * sd]
    }

    /// Zero-order hold lookup: the grid state at `floor(t / dt)`.
    pub fn state_at(&self, t: f64) -> Result<Matrix> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange {
                t,
                start: 0.0,
                end: self.horizon,
            });
        }
        let j = grid_index(t, self.dt).min(self.len() - 1);
        Ok(Matrix::column(self.state(j)))
    }

    /// Writes `t,x_1,...,x_{nm}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let sd = self.dims.state_dim();
        let header: Vec<String> = (1..=sd).map(|i| format!("x_{i}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for j in 0..self.len() {
            write!(out, "{}", self.time(j))?;
            for v in self.state(j) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Grid index of time `t`, robust to `t/dt` landing a hair below an integer.
pub fn grid_index(t: f64, dt: f64) -> usize {
    (t / dt + GRID_EPS).floor().max(0.0) as usize
}

pub fn simulate_target(config: &TargetConfig, seed: u64) -> Result<TargetTrajectory> {
    let mut sim = TargetSimulator::new(config, seed)?;
    let steps = config.steps();
    let sd = config.dims.state_dim();
    let mut states = Vec::with_capacity((steps + 1) * sd);
    states.extend_from_slice(sim.state().as_slice());
    for _ in 0..steps {
        sim.advance();
        states.extend_from_slice(sim.state().as_slice());
    }
    Ok(TargetTrajectory {
        dims: config.dims,
        dt: config.dt,
        horizon: config.horizon,
        seed,
        states,
    })
}
