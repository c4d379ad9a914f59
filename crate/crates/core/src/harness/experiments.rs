//! The three experiments: single-robot SOE/DOE comparison, the networked
//! multi-robot run, and the Monte-Carlo ablation grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::config::{ExperimentConfig, Scenario};
use super::engine::{simulate, RunMetrics, RunOutcome};
use super::metrics::Headline;
use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;

/// Metrics of one run, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u64,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

impl RunRecord {
    fn from_result(run: u64, res: Result<RunMetrics>) -> Self {
        match res {
            Ok(m) => RunRecord {
                run,
                metrics: Some(m),
                error: None,
            },
            Err(e) => RunRecord {
                run,
                metrics: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// One configuration of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub label: String,
    pub fusion: bool,
    pub runs: Vec<RunRecord>,
}

impl Column {
    pub fn successes(&self) -> impl Iterator<Item = &RunMetrics> {
        self.runs.iter().filter_map(|r| r.metrics.as_ref())
    }

    /// Mean over the runs that completed.
    pub fn mean(&self) -> Option<Headline> {
        let items: Vec<Headline> = self.successes().map(headline).collect();
        Headline::mean(&items)
    }

    pub fn mean_of(&self, f: impl Fn(&RunMetrics) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.successes().map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

pub fn headline(m: &RunMetrics) -> Headline {
    Headline {
        estimation_rms: m.estimation_rms,
        tracking_rms: m.tracking_rms,
        control_rms: m.control_rms,
        control_peak: m.control_peak,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub run_count: usize,
    pub columns: Vec<Column>,
}

/// Per-run metrics written to `metrics.json`, in output order.
const REPORTED: [(&str, fn(&RunMetrics) -> f64); 9] = [
    ("estimation_rms", |m| m.estimation_rms),
    ("tracking_rms", |m| m.tracking_rms),
    ("control_rms", |m| m.control_rms),
    ("control_peak", |m| m.control_peak),
    ("local_estimation_rms", |m| m.local_estimation_rms),
    ("reference_tracking_rms", |m| m.reference_tracking_rms),
    ("tracking_rms_final", |m| m.tracking_rms_final),
    ("max_jump", |m| m.max_jump),
    ("held_outputs", |m| m.held_outputs as f64),
];

impl MetricsReport {
    pub fn column(&self, label: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.label == label)
    }

    /// Metric name → configuration label → `{value, runs}`. Failed runs
    /// appear as `null` in `runs` and are excluded from `value`.
    pub fn to_json(&self) -> Value {
        let mut metrics = Map::new();
        for (name, f) in REPORTED {
            let mut per = Map::new();
            for col in &self.columns {
                let runs: Vec<Value> = col
                    .runs
                    .iter()
                    .map(|r| r.metrics.as_ref().map_or(Value::Null, |m| json!(f(m))))
                    .collect();
                per.insert(col.label.clone(), json!({ "value": col.mean_of(f), "runs": runs }));
            }
            metrics.insert(name.to_string(), Value::Object(per));
        }
        let failures: Map<String, Value> = self
            .columns
            .iter()
            .filter(|c| c.failures() > 0)
            .map(|c| {
                let list: Vec<Value> = c
                    .runs
                    .iter()
                    .filter_map(|r| r.error.as_ref().map(|e| json!({ "run": r.run, "error": e })))
                    .collect();
                (c.label.clone(), Value::Array(list))
            })
            .collect();
        json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "dt": self.dt,
            "horizon": self.horizon,
            "runs": self.run_count,
            "columns": self.columns.iter().map(|c| c.label.clone()).collect::<Vec<_>>(),
            "metrics": metrics,
            "failures": failures,
        })
    }

    /// The four headline rows against the configurations, aligned.
    pub fn table(&self) -> String {
        let rows: [(&str, fn(&Headline) -> f64); 4] = [
            ("RMS_avg estimation error", |h| h.estimation_rms),
            ("RMS_avg tracking error", |h| h.tracking_rms),
            ("RMS_avg control effort", |h| h.control_rms),
            ("PEAK control effort", |h| h.control_peak),
        ];
        let means: Vec<Option<Headline>> = self.columns.iter().map(Column::mean).collect();
        let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|(_, f)| {
                means
                    .iter()
                    .map(|m| m.as_ref().map_or("failed".to_string(), |h| format!("{:.4}", f(h))))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| cells.iter().map(|r| r[j].len()).chain([c.label.len()]).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "# {} runs per configuration, dt = {}, T = {}, seed = {}\n",
            self.run_count, self.dt, self.horizon, self.seed
        );
        out.push_str(&format!("{:label_w$}", ""));
        for (c, w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("  {:>w$}", c.label));
        }
        out.push('\n');
        for ((name, _), row) in rows.iter().zip(&cells) {
            out.push_str(&format!("{name:label_w$}"));
            for (v, w) in row.iter().zip(&widths) {
                out.push_str(&format!("  {v:>w$}"));
            }
            out.push('\n');
        }
        for c in self.columns.iter().filter(|c| c.failures() > 0) {
            out.push_str(&format!("# {}: {} of {} runs failed\n", c.label, c.failures(), c.runs.len()));
        }
        out
    }
}

fn report(cfg: &ExperimentConfig, s: &Scenario, experiment: &str, seed: u64, runs: usize, columns: Vec<Column>) -> MetricsReport {
    MetricsReport {
        experiment: experiment.to_string(),
        config_hash: cfg.hash(),
        seed,
        dt: s.dt,
        horizon: s.horizon,
        run_count: runs,
        columns,
    }
}

fn single_column(label: String, fusion: bool, out: &RunOutcome) -> Column {
    Column {
        label,
        fusion,
        runs: vec![RunRecord {
            run: out.run,
            metrics: Some(out.metrics.clone()),
            error: None,
        }],
    }
}

#[derive(Debug, Clone)]
pub struct SingleRobotOutput {
    pub report: MetricsReport,
    pub soe: RunOutcome,
    pub doe: RunOutcome,
}

/// SOE against DOE on one target realization and one schedule. Both
/// estimators see identical measurements because every random stream is
/// keyed by seed, run and robot only.
pub fn run_single_robot(cfg: &ExperimentConfig, seed: u64) -> Result<SingleRobotOutput> {
    let mut s = cfg.resolve()?;
    if s.agents() != 1 {
        return Err(Error::Config(format!("single-robot experiment needs 1 agent, got {}", s.agents())));
    }
    s.fusion = false;
    let alpha = match s.estimator {
        EstimatorKind::Soe { alpha } => alpha,
        EstimatorKind::Doe => cfg.estimator.alpha,
    };
    s.estimator = EstimatorKind::Soe { alpha };
    let soe = simulate(&s, seed, 0, true)?;
    s.estimator = EstimatorKind::Doe;
    let doe = simulate(&s, seed, 0, true)?;
    let columns = vec![
        single_column(soe.label.clone(), false, &soe),
        single_column(doe.label.clone(), false, &doe),
    ];
    Ok(SingleRobotOutput {
        report: report(cfg, &s, "single", seed, 1, columns),
        soe,
        doe,
    })
}

#[derive(Debug, Clone)]
pub struct MultiRobotOutput {
    pub report: MetricsReport,
    pub outcome: RunOutcome,
}

pub fn run_multi_robot(cfg: &ExperimentConfig, seed: u64) -> Result<MultiRobotOutput> {
    let s = cfg.resolve()?;
    if !s.graph.is_connected() {
        return Err(Error::Config("communication graph is not connected".into()));
    }
    let outcome = simulate(&s, seed, 0, true)?;
    let columns = vec![single_column(outcome.label.clone(), s.fusion, &outcome)];
    Ok(MultiRobotOutput {
        report: report(cfg, &s, "multi", seed, 1, columns),
        outcome,
    })
}

/// Ablation configurations in table order: DOE, then each `α` without and
/// with fusion.
pub fn ablation_grid(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    let mut base = cfg.clone();
    base.formation.initial_spread = cfg.ablation.initial_spread;
    base.fusion.enabled = false;
    let base = base.resolve()?;
    if cfg.ablation.alphas.is_empty() {
        return Err(Error::Config("ablation.alphas is empty".into()));
    }
    let connected = base.graph.is_connected();
    let mut grid = vec![Scenario {
        estimator: EstimatorKind::Doe,
        ..base.clone()
    }];
    for &alpha in &cfg.ablation.alphas {
        let kind = EstimatorKind::Soe { alpha };
        kind.validate().map_err(|e| Error::Config(e.to_string()))?;
        for fusion in [false, true] {
            if fusion && !connected {
                return Err(Error::Config("fusion columns need a connected graph".into()));
            }
            grid.push(Scenario {
                estimator: kind,
                fusion,
                ..base.clone()
            });
        }
    }
    Ok(grid)
}

/// Runs every configuration `runs` times. Run `r` uses the same target,
/// schedules and noise in every configuration. A failed run is recorded
/// in its cell and the grid continues. `parallel` only changes scheduling.
pub fn run_ablation(cfg: &ExperimentConfig, seed: u64, runs: usize, parallel: bool) -> Result<MetricsReport> {
    if runs == 0 {
        return Err(Error::Config("ablation needs at least one run".into()));
    }
    let grid = ablation_grid(cfg)?;
    let tasks: Vec<(usize, u64)> = (0..grid.len()).flat_map(|c| (0..runs as u64).map(move |r| (c, r))).collect();
    let exec = |&(c, r): &(usize, u64)| RunRecord::from_result(r, simulate(&grid[c], seed, r, false).map(|o| o.metrics));
    let records: Vec<RunRecord> = if parallel {
        tasks.par_iter().map(exec).collect()
    } else {
        tasks.iter().map(exec).collect()
    };
    let mut it = records.into_iter();
    let columns = grid
        .iter()
        .map(|s| Column {
            label: s.label(),
            fusion: s.fusion,
            runs: it.by_ref().take(runs).collect(),
        })
        .collect();
    Ok(report(cfg, &grid[0], "ablate", seed, runs, columns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::MatrixSpec;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.simulation.dt = 1e-3;
        cfg.simulation.horizon = 2.0;
        cfg.network.agents = 3;
        cfg
    }

    #[test]
    fn grid_has_table_layout() {
        let labels: Vec<String> = ablation_grid(&tiny()).unwrap().iter().map(Scenario::label).collect();
        assert_eq!(
            labels,
            [
                "DOE",
                "SOE(alpha=0.1)",
                "SOE(alpha=0.1)+fusion",
                "SOE(alpha=1)",
                "SOE(alpha=1)+fusion",
                "SOE(alpha=10)",
                "SOE(alpha=10)+fusion"
            ]
        );
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cfg = tiny();
        let a = run_ablation(&cfg, 2, 2, false).unwrap();
        let b = run_ablation(&cfg, 2, 2, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().to_string(), b.to_json().to_string());
        assert_eq!(a.columns.len(), 7);
        assert!(a.columns.iter().all(|c| c.runs.len() == 2));
    }

    #[test]
    fn failed_runs_stay_in_their_cell() {
        let mut cfg = tiny();
        // Configuration errors abort before any run starts.
        cfg.estimator.prior_scale = 0.0;
        assert!(run_ablation(&cfg, 1, 1, false).unwrap_err().is_config());
        let col = Column {
            label: "x".into(),
            fusion: false,
            runs: vec![
                RunRecord::from_result(0, Err(Error::NonFinite("test"))),
                RunRecord::from_result(1, Ok(RunMetrics { estimation_rms: 2.0, ..Default::default() })),
            ],
        };
        assert_eq!(col.failures(), 1);
        assert_eq!(col.mean().unwrap().estimation_rms, 2.0);
        let rep = MetricsReport {
            experiment: "ablate".into(),
            config_hash: String::new(),
            seed: 0,
            dt: 1e-3,
            horizon: 1.0,
            run_count: 2,
            columns: vec![col],
        };
        let js = rep.to_json();
        assert!(js["metrics"]["estimation_rms"]["x"]["runs"][0].is_null());
        assert_eq!(js["failures"]["x"][0]["run"], 0);
        assert!(rep.table().contains("1 of 2 runs failed"));
    }

    #[test]
    fn single_robot_requires_one_agent() {
        let err = run_single_robot(&tiny(), 1).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn single_robot_noiseless_tracks_closely() {
        let mut cfg = ExperimentConfig::single_robot();
        cfg.simulation.dt = 1e-3;
        cfg.simulation.horizon = 6.0;
        cfg.target.w = MatrixSpec::Scalar(0.0);
        for m in &mut cfg.perception.methods {
            m.r = MatrixSpec::Scalar(1e-6);
        }
        // The prior mean is the true state, so a tight prior is the
        // consistent noiseless choice. A loose one makes the first blend
        // arbitrarily steep.
        cfg.estimator.prior_scale = 1e-6;
        cfg.formation.initial_spread = 0.0;
        let out = run_single_robot(&cfg, 3).unwrap();
        for o in [&out.soe, &out.doe] {
            assert!(o.metrics.estimation_rms < 1e-3, "{}: {}", o.label, o.metrics.estimation_rms);
            assert!(o.metrics.tracking_rms < 1e-3, "{}: {}", o.label, o.metrics.tracking_rms);
        }
    }
}
