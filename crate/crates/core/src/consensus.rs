//! Robust exact dynamic consensus (REDCHO) of order `m` and banks of
//! independent instances over the components of information jets.
//!
//! For one scalar component, agent `i` keeps internal variables
//! `v_{i,0..=m}` and produces
//!
//! ```text
//! s_{i,μ} = ŝ_i⁽μ⁾ - Σ_ν G[μ][ν] v_{i,ν}
//! v̇_{i,μ} = k_μ θ^(μ+1) Σ_j a_ij ⌈s_{i,0} - s_{j,0}⌋^((m-μ)/(m+1)) + v_{i,μ+1} - γ_μ v_{i,μ}
//! ```
//!
//! with `v_{i,m+1} = 0` and `⌈·⌋⁰ = sign` on the last line.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core_math::RedchoStructure;
use crate::error::{Error, Result};
use crate::estimator::InformationJet;
use crate::matrix::Matrix;

/// Undirected weighted communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adjacency: Vec<f64>,
    /// `(i, j, a_ij)` with `i < j` and `a_ij > 0`.
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn from_adjacency(n: usize, adjacency: Vec<f64>) -> Result<Self> {
        if n == 0 || adjacency.len() != n * n {
            return Err(Error::Dimensions(format!("adjacency must be {n}x{n} with n > 0")));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if adjacency[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!("self-loop at agent {i}")));
            }
            for j in i + 1..n {
                let a = adjacency[i * n + j];
                if a != adjacency[j * n + i] {
                    return Err(Error::InvalidArgument(format!("adjacency not symmetric at ({i}, {j})")));
                }
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::InvalidArgument(format!("negative weight at ({i}, {j})")));
                }
                if a > 0.0 {
                    edges.push((i, j, a));
                }
            }
        }
        Ok(Graph { n, adjacency, edges })
    }

    /// Unit-weight graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![0.0; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j}) for {n} agents")));
            }
            adj[i * n + j] = 1.0;
            adj[j * n + i] = 1.0;
        }
        Self::from_adjacency(n, adj)
    }

    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::from_edges(n, &edges)
    }

    /// `n` agents without links.
    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edges(n, &[])
    }

    pub fn agents(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..self.n {
                if !seen[j] && self.weight(i, j) > 0.0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Same graph with agents relabeled so that new agent `perm[i]` is old `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                adj[perm[i] * n + perm[j]] = self.weight(i, j);
            }
        }
        Self::from_adjacency(n, adj)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedchoParams {
    pub k: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta: f64,
}

impl Default for RedchoParams {
    /// Gains for `m = 2`.
    fn default() -> Self {
        RedchoParams {
            k: vec![6.0, 11.0, 6.0],
            gamma: vec![1.0, 1.0, 1.0],
            theta: 40.0,
        }
    }
}

impl RedchoParams {
    pub fn order(&self) -> usize {
        self.k.len().saturating_sub(1)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k.len() != m + 1 || self.gamma.len() != m + 1 {
            return Err(Error::Config(format!(
                "consensus gains need {} entries each (k has {}, gamma has {})",
                m + 1,
                self.k.len(),
                self.gamma.len()
            )));
        }
        let all = self.k.iter().chain(&self.gamma).chain(std::iter::once(&self.theta));
        if all.clone().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::Config("consensus gains must be positive".into()));
        }
        Ok(())
    }
}

/// `s_μ = ŝ⁽μ⁾ - Σ_ν G[μ][ν] v_ν` for one agent of one component.
pub fn redcho_outputs(v: &[f64], local_jet: &[f64], g: &Matrix, out: &mut [f64]) {
    for (mu, o) in out.iter_mut().enumerate() {
        *o = local_jet[mu] - g.row(mu).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Protocol constants shared by every instance.
#[derive(Debug, Clone)]
struct Protocol {
    m: usize,
    g: Matrix,
    gamma: Vec<f64>,
    /// `k_μ θ^(μ+1)`.
    coef: Vec<f64>,
    /// `1 / (m + 1)`.
    root: f64,
}

impl Protocol {
    fn new(params: &RedchoParams, m: usize) -> Result<Self> {
        params.validate(m)?;
        let structure = RedchoStructure::new(m, &params.gamma)?;
        let coef = (0..=m)
            .map(|mu| params.k[mu] * params.theta.powi(mu as i32 + 1))
            .collect();
        Ok(Protocol {
            m,
            g: structure.g,
            gamma: params.gamma.clone(),
            coef,
            root: 1.0 / (m + 1) as f64,
        })
    }

    /// `|d|^(1/(m+1))`.
    #[inline]
    fn unit_root(&self, d: f64) -> f64 {
        let a = d.abs();
        match self.m {
            1 => a.sqrt(),
            2 => a.cbrt(),
            3 => a.sqrt().sqrt(),
            _ => a.powf(self.root),
        }
    }

    /// Adds each agent's raw coupling sums `Σ_j a_ij ⌈s_i0 - s_j0⌋^((m-μ)/(m+1))`
    /// to `coupling[i * (m+1) + μ]`.
    fn accumulate_coupling(&self, graph: &Graph, s0: impl Fn(usize) -> f64, coupling: &mut [f64]) {
        let w = self.m + 1;
        for &(i, j, a) in graph.edges() {
            let d = s0(i) - s0(j);
            if d == 0.0 {
                continue;
            }
            let r = self.unit_root(d);
            let signed = a * d.signum();
            // ⌈d⌋^((m-μ)/(m+1)) = sign(d) r^(m-μ), built from μ = m downwards.
            let mut term = signed;
            for mu in (0..=self.m).rev() {
                coupling[i * w + mu] += term;
                coupling[j * w + mu] -= term;
                term *= r;
            }
        }
    }
}

/// Right-hand side of one component for all agents. `s0[i]` are current
/// outputs, `v` and `out` are laid out `[agent][μ]`.
pub fn redcho_rhs(params: &RedchoParams, graph: &Graph, s0: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
    let m = params.order();
    let proto = Protocol::new(params, m)?;
    out.fill(0.0);
    proto.accumulate_coupling(graph, |i| s0[i], out);
    let w = m + 1;
    for i in 0..graph.agents() {
        for mu in 0..=m {
            let next = if mu < m { v[i * w + mu + 1] } else { 0.0 };
            out[i * w + mu] = proto.coef[mu] * out[i * w + mu] + next - proto.gamma[mu] * v[i * w + mu];
        }
    }
    Ok(())
}

/// Number of REDCHO instances for an information pair of state dimension
/// `d`: `d` vector entries plus the upper triangle of the matrix.
pub fn component_count(d: usize) -> usize {
    d + d * (d + 1) / 2
}

/// All REDCHO instances of one network, stepped together.
///
/// Storage is `[component][agent][μ]`. Components `0..d` are the
/// information vector; the rest are the upper triangle of the information
/// matrix in row-major order.
#[derive(Debug, Clone)]
pub struct RedchoBank {
    proto: Protocol,
    graph: Graph,
    state_dim: usize,
    components: usize,
    v: Vec<f64>,
    inputs: Vec<f64>,
    s: Vec<f64>,
    /// `μ = 0` outputs driving the coupling, `[component][agent]`.
    s0: Vec<f64>,
    scratch: Vec<f64>,
    /// `(row, col)` of each matrix component.
    triangle: Vec<(usize, usize)>,
}

impl RedchoBank {
    /// Bank for information pairs of dimension `state_dim` and order `m`,
    /// with `v(0) = 0`.
    pub fn new(params: &RedchoParams, graph: Graph, state_dim: usize, m: usize) -> Result<Self> {
        let proto = Protocol::new(params, m)?;
        let components = component_count(state_dim);
        let len = components * graph.agents() * (m + 1);
        let triangle = (0..state_dim)
            .flat_map(|r| (r..state_dim).map(move |c| (r, c)))
            .collect();
        Ok(RedchoBank {
            proto,
            state_dim,
            components,
            v: vec![0.0; len],
            inputs: vec![0.0; len],
            s: vec![0.0; len],
            s0: vec![0.0; components * graph.agents()],
            scratch: vec![0.0; graph.agents() * (m + 1)],
            graph,
            triangle,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn agents(&self) -> usize {
        self.graph.agents()
    }

    pub fn order(&self) -> usize {
        self.proto.m
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    #[inline]
    fn idx(&self, c: usize, i: usize, mu: usize) -> usize {
        (c * self.agents() + i) * (self.proto.m + 1) + mu
    }

    /// Loads agent `i`'s local jet into every component.
    pub fn set_agent_jet(&mut self, i: usize, jet: &InformationJet) {
        let d = self.state_dim;
        for mu in 0..=self.proto.m {
            for r in 0..d {
                let at = self.idx(r, i, mu);
                self.inputs[at] = jet.y[mu][r];
            }
            for (t, &(r, c)) in self.triangle.iter().enumerate() {
                let at = self.idx(d + t, i, mu);
                self.inputs[at] = jet.q[mu][(r, c)];
            }
        }
    }

    /// Loads a raw local jet `ŝ⁽⁰..=m⁾` for one component.
    pub fn set_input(&mut self, component: usize, agent: usize, jet: &[f64]) {
        let at = self.idx(component, agent, 0);
        self.inputs[at..at + jet.len()].copy_from_slice(jet);
    }

    /// Recomputes every output from the current inputs and internal state.
    pub fn refresh_outputs(&mut self) {
        let w = self.proto.m + 1;
        for block in 0..self.components * self.agents() {
            let at = block * w;
            redcho_outputs(
                &self.v[at..at + w],
                &self.inputs[at..at + w],
                &self.proto.g,
                &mut self.s[at..at + w],
            );
        }
    }

    pub fn output(&self, component: usize, agent: usize, mu: usize) -> f64 {
        self.s[self.idx(component, agent, mu)]
    }

    pub fn internal(&self, component: usize, agent: usize, mu: usize) -> f64 {
        self.v[self.idx(component, agent, mu)]
    }

    /// Adds `delta` to one internal variable.
    pub fn perturb(&mut self, component: usize, agent: usize, mu: usize, delta: f64) {
        let at = self.idx(component, agent, mu);
        self.v[at] += delta;
    }

    /// Agent `i`'s consensus outputs `{y_{i,μ}, Q_{i,μ}}`, matrix filled
    /// symmetrically.
    pub fn agent_jet(&self, i: usize, out: &mut InformationJet) {
        let d = self.state_dim;
        for mu in 0..=self.proto.m {
            for r in 0..d {
                out.y[mu][r] = self.output(r, i, mu);
            }
            for (t, &(r, c)) in self.triangle.iter().enumerate() {
                let v = self.output(d + t, i, mu);
                out.q[mu][(r, c)] = v;
                out.q[mu][(c, r)] = v;
            }
        }
    }

    /// Largest inter-agent spread of `s_{·,μ}` over all components.
    pub fn spread(&self, mu: usize) -> f64 {
        (0..self.components)
            .map(|c| self.component_spread(c, mu))
            .fold(0.0, f64::max)
    }

    pub fn component_spread(&self, c: usize, mu: usize) -> f64 {
        let (lo, hi) = (0..self.agents())
            .map(|i| self.output(c, i, mu))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    /// One explicit Euler step from the current outputs (read phase) into
    /// the internal state (write phase). Outputs must be refreshed first.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let w = self.proto.m + 1;
        let mut s0 = std::mem::take(&mut self.s0);
        for (block, out) in s0.iter_mut().enumerate() {
            *out = self.s[block * w];
        }
        let res = self.euler(dt, &s0);
        self.s0 = s0;
        res
    }

    /// Advances over `dt` in `substeps` Euler steps. Between ticks each
    /// agent's `μ = 0` input follows the Taylor polynomial of its jet.
    pub fn advance(&mut self, dt: f64, substeps: usize) -> Result<()> {
        if substeps <= 1 {
            return self.step(dt);
        }
        let m = self.proto.m;
        let w = m + 1;
        let h = dt / substeps as f64;
        let mut s0 = std::mem::take(&mut self.s0);
        let mut res = Ok(());
        for r in 0..substeps {
            let delta = r as f64 * h;
            for (block, out) in s0.iter_mut().enumerate() {
                let at = block * w;
                let mut input = 0.0;
                for mu in (0..=m).rev() {
                    input = input * delta / (mu + 1) as f64 + self.inputs[at + mu];
                }
                let feedback: f64 = (0..=m).map(|nu| self.proto.g[(0, nu)] * self.v[at + nu]).sum();
                *out = input - feedback;
            }
            res = self.euler(h, &s0);
            if res.is_err() {
                break;
            }
        }
        self.s0 = s0;
        res
    }

    fn euler(&mut self, dt: f64, s0: &[f64]) -> Result<()> {
        let m = self.proto.m;
        let w = m + 1;
        let n = self.agents();
        for c in 0..self.components {
            self.scratch.fill(0.0);
            let base = c * n;
            self.proto
                .accumulate_coupling(&self.graph, |i| s0[base + i], &mut self.scratch);
            for i in 0..n {
                let at = (base + i) * w;
                for mu in 0..=m {
                    let next = if mu < m { self.v[at + mu + 1] } else { 0.0 };
                    let rate = self.proto.coef[mu] * self.scratch[i * w + mu] + next
                        - self.proto.gamma[mu] * self.v[at + mu];
                    self.scratch[i * w + mu] = rate;
                }
                for mu in 0..=m {
                    self.v[at + mu] += dt * self.scratch[i * w + mu];
                }
                if !self.v[at..at + w].iter().all(|x| x.is_finite()) {
                    return Err(Error::Divergence {
                        component: c,
                        agent: i,
                        t: f64::NAN,
                    });
                }
            }
        }
        Ok(())
    }

    /// Appends `(component, agent, μ, s)` rows for every output.
    pub fn trace_rows(&self, t: f64, rows: &mut Vec<TraceRow>) {
        for c in 0..self.components {
            for i in 0..self.agents() {
                for mu in 0..=self.proto.m {
                    rows.push(TraceRow {
                        t,
                        component: c,
                        agent: i,
                        mu,
                        value: self.output(c, i, mu),
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub component: usize,
    pub agent: usize,
    pub mu: usize,
    pub value: f64,
}

/// Writes `t,component,agent,mu,s_value`.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,component,agent,mu,s_value")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.t, r.component, r.agent, r.mu, r.value)?;
    }
    out.flush()?;
    Ok(())
}
