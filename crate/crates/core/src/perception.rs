//! Latency-aware detection: per-robot schedules of processing instants and
//! the delayed noisy position measurements they produce.
//!
//! A detection started at `τ_k` with method `j` finishes after the method's
//! latency `Δ^j`, and the next detection starts right away, so
//! `τ_{k+1} = τ_k + Δ_k`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core_math::Dimensions;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, SimRng};
use crate::target::TargetTrajectory;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PerceptionMethod {
    pub latency: f64,
    /// Measurement noise covariance (`n × n`, positive definite).
    pub r: Matrix,
}

impl PerceptionMethod {
    pub fn new(latency: f64, r: Matrix) -> Result<Self> {
        if !(latency > 0.0) || !latency.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "perception latency must be positive, got {latency}"
            )));
        }
        if !r.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("R must be symmetric".into()));
        }
        r.cholesky()?;
        Ok(PerceptionMethod { latency, r })
    }

    /// Isotropic method `R = r·I_n`.
    pub fn isotropic(latency: f64, r: f64, n: usize) -> Result<Self> {
        Self::new(latency, Matrix::identity(n).scale(r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "sequence")]
pub enum SchedulePolicy {
    /// Replays the given method indices cyclically.
    Fixed(Vec<usize>),
    /// Draws each method uniformly from the method table.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionSchedule {
    pub robot: usize,
    /// Processing instants, `instants[0] = 0`.
    pub instants: Vec<f64>,
    /// Method index chosen at each instant.
    pub methods: Vec<usize>,
}

impl PerceptionSchedule {
    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }

    pub fn latency(&self, k: usize, methods: &[PerceptionMethod]) -> f64 {
        methods[self.methods[k]].latency
    }
}

pub fn generate_schedule(
    robot: usize,
    policy: &SchedulePolicy,
    methods: &[PerceptionMethod],
    horizon: f64,
    seed: u64,
) -> Result<PerceptionSchedule> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("perception method table is empty".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if let SchedulePolicy::Fixed(seq) = policy {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("fixed schedule sequence is empty".into()));
        }
        if let Some(&bad) = seq.iter().find(|&&j| j >= methods.len()) {
            return Err(Error::InvalidArgument(format!(
                "fixed schedule refers to method {bad}, table has {}",
                methods.len()
            )));
        }
    }
    let mut rng = seeded(seed);
    let mut choose = |k: usize| match policy {
        SchedulePolicy::Fixed(seq) => seq[k % seq.len()],
        SchedulePolicy::Random => rng.random_range(0..methods.len()),
    };
    let mut instants = vec![0.0];
    let mut chosen = vec![choose(0)];
    loop {
        let k = instants.len() - 1;
        let next = instants[k] + methods[chosen[k]].latency;
        if next > horizon + TIME_EPS {
            break;
        }
        instants.push(next);
        chosen.push(choose(k + 1));
    }
    Ok(PerceptionSchedule {
        robot,
        instants,
        methods: chosen,
    })
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub robot: usize,
    pub k: usize,
    pub z: Matrix,
    pub sampled_at: f64,
    pub available_at: f64,
    pub method: usize,
    pub r: Matrix,
}

impl Measurement {
    pub fn latency(&self) -> f64 {
        self.available_at - self.sampled_at
    }
}

/// Noise source for one robot (one coordinate pipeline). Draws happen in
/// sample order from a dedicated stream.
#[derive(Debug, Clone)]
pub struct Sensor {
    robot: usize,
    c: Matrix,
    methods: Vec<PerceptionMethod>,
    factors: Vec<Matrix>,
    rng: SimRng,
}

impl Sensor {
    pub fn new(robot: usize, dims: Dimensions, methods: &[PerceptionMethod], seed: u64) -> Result<Self> {
        let factors = methods
            .iter()
            .map(|m| {
                if m.r.shape() != (dims.n, dims.n) {
                    return Err(Error::Dimensions(format!("R must be {0}x{0}", dims.n)));
                }
                m.r.cholesky()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sensor {
            robot,
            c: crate::core_math::SystemMatrices::new(dims).c,
            methods: methods.to_vec(),
            factors,
            rng: seeded(seed),
        })
    }

    /// Detection of `C x` sampled at `sampled_at` with method `method`.
    pub fn measure(&mut self, k: usize, sampled_at: f64, method: usize, state: &Matrix) -> Measurement {
        let n = self.c.rows();
        let mut xi = Matrix::zeros(n, 1);
        for v in xi.as_mut_slice() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        let mut z = &self.c * state;
        z += &(&self.factors[method] * &xi);
        let m = &self.methods[method];
        Measurement {
            robot: self.robot,
            k,
            z,
            sampled_at,
            available_at: sampled_at + m.latency,
            method,
            r: m.r.clone(),
        }
    }
}

/// One measurement per scheduled instant, in `available_at` order.
pub fn sense(
    traj: &TargetTrajectory,
    schedule: &PerceptionSchedule,
    methods: &[PerceptionMethod],
    seed: u64,
) -> Result<Vec<Measurement>> {
    if let Some(&last) = schedule.instants.last() {
        if last > traj.horizon + TIME_EPS {
            return Err(Error::OutOfRange {
                t: last,
                start: 0.0,
                end: traj.horizon,
            });
        }
    }
    let mut sensor = Sensor::new(schedule.robot, traj.dims, methods, seed)?;
    schedule
        .instants
        .iter()
        .zip(&schedule.methods)
        .enumerate()
        .map(|(k, (&tau, &method))| Ok(sensor.measure(k, tau, method, &traj.state_at(tau)?)))
        .collect()
}

/// Writes `robot,k,sampled_at,available_at,z_1..z_n,method`.
pub fn write_measurements_csv(path: &Path, measurements: &[Measurement]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = measurements.first().map_or(1, |m| m.z.rows());
    let zs: Vec<String> = (1..=n).map(|i| format!("z_{i}")).collect();
    writeln!(out, "robot,k,sampled_at,available_at,{},method", zs.join(","))?;
    for m in measurements {
        write!(out, "{},{},{},{}", m.robot, m.k, m.sampled_at, m.available_at)?;
        for v in m.z.as_slice() {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{}", m.method)?;
    }
    out.flush()?;
    Ok(())
}
