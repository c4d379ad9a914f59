//! Plot-ready CSV bundles and self-contained SVG line plots.
//!
//! Every file of a bundle is rendered in memory before anything is
//! written, so invalid traces never leave partial output behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::engine::Trace;
use super::experiments::MetricsReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Estimate, robot position and tracking error of each labelled run.
    SingleRobot,
    /// One file per `μ`: each agent's consensus output and the centralized
    /// average.
    Consensus,
    /// `t, err_local_1..N, err_fused`.
    EstimationError,
    /// Robot positions against the target and per-robot formation error.
    Formation,
}

struct Figure {
    name: String,
    t: Vec<f64>,
    series: Vec<(String, Vec<f64>)>,
}

impl Figure {
    fn csv(&self) -> String {
        let mut out = String::from("t");
        for (name, _) in &self.series {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (j, t) in self.t.iter().enumerate() {
            let _ = write!(out, "{t}");
            for (_, v) in &self.series {
                let _ = write!(out, ",{}", v[j]);
            }
            out.push('\n');
        }
        out
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check(label: &str, tr: &Trace) -> Result<()> {
    if tr.t.is_empty() {
        return Err(Error::InvalidArgument(format!("trace {label:?} is empty")));
    }
    Ok(())
}

fn figures(traces: &[(&str, &Trace)], kind: PlotKind) -> Result<Vec<Figure>> {
    let (first_label, first) = *traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("no traces to plot".into()))?;
    for (label, tr) in traces {
        check(label, tr)?;
    }
    let n = first.target[0].len();
    let coord = |c: usize| if n == 1 { String::new() } else { format!("_{}", c + 1) };
    let figs = match kind {
        PlotKind::SingleRobot => {
            let mut series: Vec<(String, Vec<f64>)> = (0..n)
                .map(|c| (format!("target{}", coord(c)), first.target.iter().map(|p| p[c]).collect()))
                .collect();
            for (label, tr) in traces {
                if tr.t != first.t {
                    return Err(Error::InvalidArgument(format!(
                        "trace {label:?} is not sampled like {first_label:?}"
                    )));
                }
                for c in 0..n {
                    series.push((format!("estimate_{label}{}", coord(c)), tr.reference.iter().map(|r| r[0][c]).collect()));
                    series.push((format!("robot_{label}{}", coord(c)), tr.robot.iter().map(|r| r[0][c]).collect()));
                }
                let err = tr
                    .reference
                    .iter()
                    .zip(&tr.robot)
                    .map(|(r, p)| {
                        let goal: Vec<f64> = r[0].iter().zip(&tr.displacements[0]).map(|(a, d)| a + d).collect();
                        dist(&goal, &p[0])
                    })
                    .collect();
                series.push((format!("tracking_error_{label}"), err));
            }
            vec![Figure {
                name: "single_robot".into(),
                t: first.t.clone(),
                series,
            }]
        }
        PlotKind::Consensus => {
            if first.consensus.is_empty() {
                return Err(Error::InvalidArgument(format!("trace {first_label:?} has no consensus samples")));
            }
            let orders = first.consensus[0].len();
            let agents = first.consensus[0][0].len() - 1;
            (0..orders)
                .map(|mu| {
                    let mut series: Vec<(String, Vec<f64>)> = (0..agents)
                        .map(|i| (format!("agent_{}", i + 1), first.consensus.iter().map(|s| s[mu][i]).collect()))
                        .collect();
                    series.push(("centralized".into(), first.consensus.iter().map(|s| s[mu][agents]).collect()));
                    Figure {
                        name: format!("consensus_mu{mu}"),
                        t: first.t.clone(),
                        series,
                    }
                })
                .collect()
        }
        PlotKind::EstimationError => {
            let agents = first.local[0].len();
            let mut series: Vec<(String, Vec<f64>)> = (0..agents)
                .map(|i| {
                    let err = first.local.iter().zip(&first.target).map(|(l, p)| dist(&l[i], p)).collect();
                    (format!("err_local_{}", i + 1), err)
                })
                .collect();
            // Mean over agents of the error of the estimate each robot uses.
            let fused = first
                .reference
                .iter()
                .zip(&first.target)
                .map(|(r, p)| r.iter().map(|ri| dist(ri, p)).sum::<f64>() / agents as f64)
                .collect();
            series.push(("err_fused".into(), fused));
            vec![Figure {
                name: "estimation_error".into(),
                t: first.t.clone(),
                series,
            }]
        }
        PlotKind::Formation => {
            let agents = first.robot[0].len();
            let mut series: Vec<(String, Vec<f64>)> = (0..n)
                .map(|c| (format!("target{}", coord(c)), first.target.iter().map(|p| p[c]).collect()))
                .collect();
            for i in 0..agents {
                for c in 0..n {
                    series.push((format!("robot_{}{}", i + 1, coord(c)), first.robot.iter().map(|r| r[i][c]).collect()));
                }
            }
            for i in 0..agents {
                let err = first
                    .robot
                    .iter()
                    .zip(&first.reference)
                    .map(|(r, refs)| {
                        let e: Vec<f64> = (0..n).map(|c| r[i][c] - refs[i][c] - first.displacements[i][c]).collect();
                        norm(&e)
                    })
                    .collect();
                series.push((format!("formation_error_{}", i + 1), err));
            }
            vec![Figure {
                name: "formation".into(),
                t: first.t.clone(),
                series,
            }]
        }
    };
    Ok(figs)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// A line plot of every series against `t`, with axis ranges and a legend.
fn svg(fig: &Figure) -> String {
    let (w, h, pad) = (800.0, 450.0, 60.0);
    let finite = fig.series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(lo < hi) {
        lo = if lo.is_finite() { lo - 1.0 } else { -1.0 };
        hi = lo + 2.0;
    }
    let (t0, t1) = (fig.t[0], *fig.t.last().expect("non-empty"));
    let tspan = if t1 > t0 { t1 - t0 } else { 1.0 };
    let x = |t: f64| pad + (t - t0) / tspan * (w - 2.0 * pad);
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, fig.name);
    let _ = writeln!(
        out,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(out, r#"<text x="{pad}" y="{}" text-anchor="middle">{t0:.3}</text>"#, h - pad + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{t1:.3}</text>"#, w - pad, h - pad + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3e}</text>"#, pad - 4.0, h - pad);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3e}</text>"#, pad - 4.0, pad + 4.0);
    for (k, (name, v)) in fig.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = fig
            .t
            .iter()
            .zip(v)
            .filter(|(_, v)| v.is_finite())
            .map(|(t, v)| format!("{:.2},{:.2}", x(*t), y(v.clamp(lo, hi))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = pad + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - pad + 4.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes the bundle for `kind` into `dir` and returns the written paths.
/// `traces` are labelled runs; all kinds except
/// [`PlotKind::SingleRobot`] use the first one.
pub fn emit_plot_data(traces: &[(&str, &Trace)], kind: PlotKind, dir: &Path, with_svg: bool) -> Result<Vec<PathBuf>> {
    let figs = figures(traces, kind)?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for f in &figs {
        files.push((dir.join(format!("{}.csv", f.name)), f.csv()));
        if with_svg {
            files.push((dir.join(format!("{}.svg", f.name)), svg(f)));
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (path, body) in files {
        if let Err(e) = std::fs::write(&path, body) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

/// `metrics.json`, plus `table1.txt` for ablations.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&report.to_json())?;
    let metrics = dir.join("metrics.json");
    std::fs::write(&metrics, json + "\n")?;
    let mut out = vec![metrics];
    if report.experiment == "ablate" {
        let table = dir.join("table1.txt");
        std::fs::write(&table, report.table())?;
        out.push(table);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(samples: usize, agents: usize) -> Trace {
        let t: Vec<f64> = (0..samples).map(|j| j as f64 * 0.1).collect();
        Trace {
            displacements: vec![vec![0.5]; agents],
            target: t.iter().map(|&x| vec![x]).collect(),
            reference: t.iter().map(|&x| vec![vec![x + 0.1]; agents]).collect(),
            local: t.iter().map(|&x| vec![vec![x - 0.2]; agents]).collect(),
            robot: t.iter().map(|&x| vec![vec![x + 0.5]; agents]).collect(),
            control: t.iter().map(|_| vec![vec![0.0]; agents]).collect(),
            consensus: t.iter().map(|&x| vec![vec![x; agents + 1]; 3]).collect(),
            t,
        }
    }

    #[test]
    fn consensus_bundle_has_one_file_per_order() {
        let dir = tempfile::tempdir().unwrap();
        let tr = trace(5, 4);
        let files = emit_plot_data(&[("run", &tr)], PlotKind::Consensus, dir.path(), true).unwrap();
        assert_eq!(files.len(), 6);
        let csv = std::fs::read_to_string(dir.path().join("consensus_mu2.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "t,agent_1,agent_2,agent_3,agent_4,centralized");
        assert_eq!(csv.lines().count(), 6);
        let svg = std::fs::read_to_string(dir.path().join("consensus_mu0.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn estimation_error_columns() {
        let dir = tempfile::tempdir().unwrap();
        let tr = trace(3, 2);
        emit_plot_data(&[("run", &tr)], PlotKind::EstimationError, dir.path(), false).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("estimation_error.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,err_local_1,err_local_2,err_fused");
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((row[1] - 0.2).abs() < 1e-12 && (row[3] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn formation_error_uses_displacement() {
        let dir = tempfile::tempdir().unwrap();
        let tr = trace(3, 2);
        emit_plot_data(&[("run", &tr)], PlotKind::Formation, dir.path(), false).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("formation.csv")).unwrap();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        // robot − reference − d = 0.5 − 0.1 − 0.5.
        assert!((row.last().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_trace_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("figs");
        let good = trace(3, 1);
        let empty = Trace::default();
        let err = emit_plot_data(&[("soe", &good), ("doe", &empty)], PlotKind::SingleRobot, &out, true);
        assert!(err.is_err());
        assert!(!out.exists());
        assert!(emit_plot_data(&[], PlotKind::Formation, &out, false).is_err());
    }

    #[test]
    fn single_robot_bundle_labels_runs() {
        let dir = tempfile::tempdir().unwrap();
        let tr = trace(4, 1);
        emit_plot_data(&[("SOE", &tr), ("DOE", &tr)], PlotKind::SingleRobot, dir.path(), false).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("single_robot.csv")).unwrap();
        assert_eq!(
            csv.lines().next().unwrap(),
            "t,target,estimate_SOE,robot_SOE,tracking_error_SOE,estimate_DOE,robot_DOE,tracking_error_DOE"
        );
    }
}
