//! Experiment configuration: a TOML tree deserialized into [`ExperimentConfig`]
//! and resolved into validated simulation inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::{Graph, RedchoParams};
use crate::control::ControllerGains;
use crate::core_math::Dimensions;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorKind, PriorMode, DEFAULT_PRIOR_SCALE};
use crate::matrix::Matrix;
use crate::perception::{PerceptionMethod, SchedulePolicy};

/// A matrix given either as `s` (meaning `s·I`) or as explicit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn resolve(&self, n: usize, what: &str) -> Result<Matrix> {
        match self {
            MatrixSpec::Scalar(s) => Ok(Matrix::identity(n).scale(*s)),
            MatrixSpec::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("{what} must be a scalar or {n}x{n} rows")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(Matrix::from_row_slice(n, n, &flat))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub runs: usize,
    /// Seconds between trace samples; `0` disables traces.
    pub trace_stride: f64,
    /// Euler steps of the consensus bank per simulation step.
    pub consensus_substeps: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dt: 1e-4,
            horizon: 20.0,
            seed: 1,
            runs: 10,
            trace_stride: 0.01,
            consensus_substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub n: usize,
    pub m: usize,
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection { n: 2, m: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub w: MatrixSpec,
    /// Initial state `[p, p', …]`; zero when omitted.
    pub x0: Option<Vec<f64>>,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            w: MatrixSpec::Scalar(1.0),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub latency: f64,
    pub r: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionSection {
    pub methods: Vec<MethodSpec>,
    pub schedule: SchedulePolicy,
}

impl Default for PerceptionSection {
    fn default() -> Self {
        PerceptionSection {
            methods: vec![
                MethodSpec {
                    latency: 1.0,
                    r: MatrixSpec::Scalar(0.01),
                },
                MethodSpec {
                    latency: 0.5,
                    r: MatrixSpec::Scalar(0.1),
                },
            ],
            schedule: SchedulePolicy::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Soe,
    Doe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub kind: EstimatorName,
    /// Transition-function parameter; ignored by the DOE.
    pub alpha: f64,
    pub prior: PriorMode,
    pub prior_scale: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            kind: EstimatorName::Soe,
            alpha: 1.0,
            prior: PriorMode::Zero,
            prior_scale: DEFAULT_PRIOR_SCALE,
        }
    }
}

impl EstimatorSection {
    pub fn kind(&self) -> EstimatorKind {
        match self.kind {
            EstimatorName::Soe => EstimatorKind::Soe { alpha: self.alpha },
            EstimatorName::Doe => EstimatorKind::Doe,
        }
    }

    pub fn set_kind(&mut self, kind: EstimatorKind) {
        match kind {
            EstimatorKind::Soe { alpha } => {
                self.kind = EstimatorName::Soe;
                self.alpha = alpha;
            }
            EstimatorKind::Doe => self.kind = EstimatorName::Doe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
    Complete,
    Edges(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub agents: usize,
    pub topology: Topology,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            agents: 10,
            topology: Topology::Ring,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub enabled: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormationSection {
    /// Circle radius used when `displacements` is absent.
    pub radius: f64,
    pub displacements: Option<Vec<Vec<f64>>>,
    /// Standard deviation of each robot's initial offset from its slot.
    pub initial_spread: f64,
}

impl Default for FormationSection {
    fn default() -> Self {
        FormationSection {
            radius: 2.0,
            displacements: None,
            initial_spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub alphas: Vec<f64>,
    /// Overrides `formation.initial_spread` for the grid.
    pub initial_spread: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            alphas: vec![0.1, 1.0, 10.0],
            initial_spread: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub simulation: SimulationSection,
    pub plant: PlantSection,
    pub target: TargetSection,
    pub perception: PerceptionSection,
    pub estimator: EstimatorSection,
    pub network: NetworkSection,
    pub fusion: FusionSection,
    pub consensus: RedchoParams,
    pub control: ControllerGains,
    pub formation: FormationSection,
    pub ablation: AblationSection,
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::default().overlay_file(path)
    }

    /// Keys in `text` replace the corresponding values of `self`; arrays
    /// are replaced whole.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut base = toml::Table::try_from(self).map_err(|e| cfg_err(&e))?;
        let top: toml::Table = toml::from_str(text).map_err(|e| cfg_err(&e))?;
        merge(&mut base, top);
        toml::Value::Table(base).try_into().map_err(|e| cfg_err(&e))
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.overlay(&text)
    }

    /// Single-robot defaults: one robot in one dimension.
    pub fn single_robot() -> Self {
        let mut cfg = Self::default();
        cfg.plant.n = 1;
        cfg.network.agents = 1;
        cfg.fusion.enabled = false;
        cfg.formation.radius = 0.0;
        cfg
    }

    pub fn dims(&self) -> Result<Dimensions> {
        Dimensions::new(self.plant.n, self.plant.m).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Stable hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let dims = self.dims()?;
        let (n, m) = (dims.n, dims.m);
        let sim = &self.simulation;
        if !(sim.dt > 0.0) || !(sim.horizon > sim.dt) {
            return Err(Error::Config(format!(
                "need 0 < dt < horizon (dt = {}, horizon = {})",
                sim.dt, sim.horizon
            )));
        }
        if !(sim.trace_stride >= 0.0) {
            return Err(Error::Config("trace_stride must be non-negative".into()));
        }
        let w = self.target.w.resolve(n, "target.w")?;
        let x0 = match &self.target.x0 {
            Some(v) if v.len() != n * m => {
                return Err(Error::Config(format!("target.x0 needs {} entries", n * m)))
            }
            Some(v) => Matrix::column(v),
            None => Matrix::zeros(n * m, 1),
        };
        let methods = self
            .perception
            .methods
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let r = spec.r.resolve(n, &format!("perception.methods[{j}].r"))?;
                PerceptionMethod::new(spec.latency, r).map_err(|e| Error::Config(format!("method {j}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if methods.is_empty() {
            return Err(Error::Config("perception.methods is empty".into()));
        }
        if let SchedulePolicy::Fixed(seq) = &self.perception.schedule {
            if seq.is_empty() || seq.iter().any(|&j| j >= methods.len()) {
                return Err(Error::Config("fixed schedule must index the method table".into()));
            }
        }
        let estimator = self.estimator.kind();
        estimator.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.estimator.prior_scale > 0.0) {
            return Err(Error::Config("estimator.prior_scale must be positive".into()));
        }
        let agents = self.network.agents;
        let graph = match &self.network.topology {
            Topology::Ring => Graph::ring(agents),
            Topology::Complete => Graph::complete(agents),
            Topology::Edges(e) => Graph::from_edges(agents, e),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        if self.fusion.enabled {
            if matches!(estimator, EstimatorKind::Doe) {
                return Err(Error::Config(
                    "fusion requires the smooth estimator; the DOE output is discontinuous".into(),
                ));
            }
            if !graph.is_connected() {
                return Err(Error::Config("fusion requires a connected network".into()));
            }
        }
        self.consensus.validate(m)?;
        self.control.validate(m)?;
        let displacements = match &self.formation.displacements {
            Some(d) => {
                if d.len() != agents || d.iter().any(|v| v.len() != n) {
                    return Err(Error::Config(format!("formation.displacements needs {agents} vectors of {n}")));
                }
                d.clone()
            }
            None => circle(agents, n, self.formation.radius),
        };
        if !(self.formation.initial_spread >= 0.0) {
            return Err(Error::Config("formation.initial_spread must be non-negative".into()));
        }
        Ok(Scenario {
            dims,
            dt: sim.dt,
            horizon: sim.horizon,
            w,
            x0,
            methods,
            policy: self.perception.schedule.clone(),
            estimator,
            prior: self.estimator.prior,
            prior_scale: self.estimator.prior_scale,
            fusion: self.fusion.enabled,
            graph,
            consensus: self.consensus.clone(),
            gains: self.control.clone(),
            displacements,
            initial_spread: self.formation.initial_spread,
            trace_stride: sim.trace_stride,
            consensus_substeps: sim.consensus_substeps.max(1),
        })
    }
}

/// Evenly spaced slots on a circle in the first two coordinates.
fn circle(agents: usize, n: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..agents)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / agents as f64;
            let mut d = vec![0.0; n];
            if agents > 1 {
                d[0] = radius * a.cos();
                if n > 1 {
                    d[1] = radius * a.sin();
                }
            }
            d
        })
        .collect()
}

/// Validated inputs of one simulation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dims: Dimensions,
    pub dt: f64,
    pub horizon: f64,
    pub w: Matrix,
    pub x0: Matrix,
    pub methods: Vec<PerceptionMethod>,
    pub policy: SchedulePolicy,
    pub estimator: EstimatorKind,
    pub prior: PriorMode,
    pub prior_scale: f64,
    pub fusion: bool,
    pub graph: Graph,
    pub consensus: RedchoParams,
    pub gains: ControllerGains,
    pub displacements: Vec<Vec<f64>>,
    pub initial_spread: f64,
    pub trace_stride: f64,
    pub consensus_substeps: usize,
}

impl Scenario {
    pub fn agents(&self) -> usize {
        self.graph.agents()
    }

    pub fn steps(&self) -> usize {
        crate::target::grid_index(self.horizon, self.dt)
    }

    pub fn label(&self) -> String {
        let mut s = self.estimator.label();
        if self.fusion {
            s.push_str("+fusion");
        }
        s
    }
}
