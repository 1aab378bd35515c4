//! Executes a [`Scenario`] and writes its reports.
//!
//! Output tree (paths relative to the output directory):
//!
//! | file | content |
//! |---|---|
//! | `certificate.json` | sampled certificate reports |
//! | `dwell.json` | dwell table, `μ(ε)`, `T_glob`, dwell violations per signal |
//! | `triangle.json` | travel-time comparison |
//! | `trajectories/<signal>__<point>.csv` | `t,x1..xn,mode,V_active` |
//! | `trapping.json`, `convergence.json`, `tube.json` | verification reports |
//! | `plot/<signal>__<point>/` | `trajectory.csv`, `region_<label>.csv`, `switch_points.csv` |
//! | `summary.json` | status of every analysis |
//! | `manifest.json` | every other file with its SHA-256 |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dwell::{
    all_transitions, global_dwell, local_dwell, mu_estimate, pairwise_dwell, triangle_gap, DwellTable, MuEstimate,
    TriangleAnalysis,
};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::lyapunov::{check_certificate, region_boundary_points, CertificateReport, SampleBox};
use crate::scenario::{NamedSignal, Scenario};
use crate::signal::{validate_dwell, DwellViolation, SwitchingSignal};
use crate::sim::{
    convergence_product, simulate_switched, tube_sample, verify_trapping_with_tol, ConvergenceReport, Trajectory,
    TrappingReport,
};
use crate::system::{Label, SwitchedSystem};

/// Exit code when some verification analysis fails.
pub const EXIT_VERIFICATION_FAILED: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Informational analysis without a pass/fail criterion.
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisStatus {
    pub analysis: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub title: Option<String>,
    pub eps: f64,
    pub analyses: Vec<AnalysisStatus>,
    /// Dwell violations do not fail a run: the dwell condition is
    /// sufficient, not necessary.
    pub notes: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: Summary,
    pub manifest: Vec<ManifestEntry>,
}

struct OutputTree {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl OutputTree {
    fn write(&mut self, rel: &str, content: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        std::fs::write(&path, content).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        self.files.push(ManifestEntry {
            path: rel.to_owned(),
            sha256: hex::encode(Sha256::digest(content)),
            bytes: content.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

/// CSV of a trajectory: `t,x1..xn,mode,V_active`, every `stride`-th sample
/// plus all switch instants and the final sample.
pub fn trajectory_csv(traj: &Trajectory, system: &SwitchedSystem, stride: usize) -> Result<String> {
    let n = traj.samples[0].x.len();
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",mode,V_active\n");
    let mut switches = traj.switch_events.iter().map(|e| e.time).peekable();
    let last = traj.samples.len() - 1;
    for (i, s) in traj.samples.iter().enumerate() {
        while switches.peek().is_some_and(|t| *t < s.t) {
            switches.next();
        }
        let at_switch = switches.peek() == Some(&s.t);
        if i % stride.max(1) != 0 && !at_switch && i != last {
            continue;
        }
        out.push_str(&fmt_f64(s.t));
        for v in s.x.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        let v = system.get(&s.mode)?.lyapunov_value(&s.x);
        let _ = writeln!(out, ",{},{}", s.mode, fmt_f64(v));
    }
    Ok(out)
}

/// File name and content of the plot data for one trajectory.
pub fn plot_files(
    traj: &Trajectory,
    system: &SwitchedSystem,
    eps: f64,
    region_points: usize,
) -> Result<Vec<(String, String)>> {
    if system.dimension() != 2 {
        return Err(Error::UnsupportedDimension(system.dimension()));
    }
    let mut files = vec![("trajectory.csv".to_owned(), trajectory_csv(traj, system, 1)?)];
    for sub in system.subsystems() {
        let pts = region_boundary_points(sub, eps, region_points)?;
        let mut csv = String::from("x1,x2\n");
        for p in pts.iter().chain(pts.first()) {
            let _ = writeln!(csv, "{},{}", fmt_f64(p[0]), fmt_f64(p[1]));
        }
        files.push((format!("region_{}.csv", sub.label()), csv));
    }
    let mut csv = String::from("index,t,x1,x2,label,V_label,member\n");
    for ev in &traj.switch_events {
        let v = system.get(&ev.label)?.lyapunov_value(&ev.state);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            ev.index,
            fmt_f64(ev.time),
            fmt_f64(ev.state[0]),
            fmt_f64(ev.state[1]),
            ev.label,
            fmt_f64(v),
            v <= eps
        );
    }
    files.push(("switch_points.csv".to_owned(), csv));
    Ok(files)
}

/// Writes `trajectory.csv`, one `region_<label>.csv` per mode (closed
/// polyline of the boundary of `N^ε`) and `switch_points.csv` into `out_dir`.
/// Two-dimensional systems only.
pub fn emit_plot_data(traj: &Trajectory, system: &SwitchedSystem, eps: f64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = plot_files(traj, system, eps, crate::scenario::DEFAULT_REGION_POINTS)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    files
        .into_iter()
        .map(|(name, content)| {
            let path = out_dir.join(name);
            std::fs::write(&path, content).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            Ok(path)
        })
        .collect()
}

/// Transitions a signal takes within one period (or overall, if finite).
fn signal_transitions(signal: &SwitchingSignal) -> Vec<(Label, Label)> {
    let mut seq = vec![signal.initial_mode().clone()];
    seq.extend(signal.segments().iter().map(|s| s.mode.clone()));
    if signal.period().is_some() {
        seq.push(signal.initial_mode().clone());
    }
    seq.windows(2)
        .filter(|w| w[0] != w[1])
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}

#[derive(Serialize)]
struct SignalViolations<'a> {
    signal: &'a str,
    violations: Vec<DwellViolation>,
}

#[derive(Serialize)]
struct DwellReport<'a> {
    eps: f64,
    table: DwellTable,
    mu: MuEstimate,
    k_min: f64,
    margin: f64,
    t_glob: f64,
    /// `max(T_loc, T_glob)`: local trapping and global attraction together.
    t_combined: f64,
    violations: Vec<SignalViolations<'a>>,
}

#[derive(Serialize)]
struct CertificateFile<'a> {
    region: &'a SampleBox,
    samples: usize,
    seed: u64,
    reports: Vec<CertificateReport>,
}

#[derive(Serialize)]
struct RunRecord<'a, T> {
    signal: &'a str,
    point: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
}

#[derive(Serialize)]
struct TubeSliceRecord {
    t: f64,
    /// Largest `V_to` over the propagated points.
    max_v_target: f64,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct TubeFile<'a> {
    eps: f64,
    from: &'a Label,
    to: &'a Label,
    dwell: f64,
    slices: Vec<serde_json::Value>,
}

fn traj_name(sig: &NamedSignal, point: &str) -> String {
    format!("{}__{point}", sig.name)
}

/// Runs the requested analyses in the order certify, dwell, simulate,
/// verify, writing reports under `out_dir`. The exit code is
/// [`EXIT_VERIFICATION_FAILED`] when any verification analysis fails.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<RunOutcome> {
    let eps = s.analysis.eps;
    let a = &s.analysis;
    let num = &s.numeric;
    let mut out = OutputTree {
        root: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let mut statuses = Vec::new();
    let mut notes = Vec::new();

    if a.certify {
        let reports = s
            .system
            .subsystems()
            .map(|sub| check_certificate(sub, &a.certify_box, num.samples, num.seed))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_analysis("certify"))?;
        let failed: Vec<String> = reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.label.to_string())
            .collect();
        statuses.push(AnalysisStatus {
            analysis: "certify".into(),
            status: if failed.is_empty() { Status::Pass } else { Status::Fail },
            detail: if failed.is_empty() {
                format!("{} certificates hold on {} samples", reports.len(), num.samples)
            } else {
                format!("violations for {}", failed.join(", "))
            },
        });
        out.json(
            "certificate.json",
            &CertificateFile {
                region: &a.certify_box,
                samples: num.samples,
                seed: num.seed,
                reports,
            },
        )?;
    }

    if a.dwell {
        let report = (|| -> Result<DwellReport> {
            let transitions = match &a.transitions {
                Some(t) => t.clone(),
                None => {
                    let mut t: Vec<(Label, Label)> = s
                        .signals
                        .iter()
                        .flat_map(|sig| signal_transitions(&sig.signal))
                        .collect();
                    if t.is_empty() {
                        t = all_transitions(&s.system);
                    }
                    t
                }
            };
            let table = if transitions.is_empty() {
                // single-mode system
                DwellTable {
                    eps,
                    entries: Vec::new(),
                    t_loc: 0.0,
                }
            } else {
                local_dwell(eps, &s.system, &transitions)?
            };
            let mu = mu_estimate(eps, &s.system, &num.mu_mode, &num.mu_fallback)?;
            let k_min = s.system.min_decay_rate();
            let t_glob = global_dwell(mu.value, k_min, num.margin)?;
            let mut violations = Vec::new();
            for sig in &s.signals {
                let mut err = None;
                let v = validate_dwell(&sig.signal, |from, to| {
                    if from == to {
                        return 0.0;
                    }
                    let r = s
                        .system
                        .get(from)
                        .and_then(|f| pairwise_dwell(eps, f, s.system.get(to)?));
                    r.unwrap_or_else(|e| {
                        err.get_or_insert(e);
                        f64::NAN
                    })
                });
                if let Some(e) = err {
                    return Err(e);
                }
                violations.push(SignalViolations {
                    signal: &sig.name,
                    violations: v,
                });
            }
            Ok(DwellReport {
                eps,
                t_combined: table.t_loc.max(t_glob),
                table,
                mu,
                k_min,
                margin: num.margin,
                t_glob,
                violations,
            })
        })()
        .map_err(|e| e.in_analysis("dwell"))?;
        for sv in &report.violations {
            for v in &sv.violations {
                notes.push(format!(
                    "signal `{}` violates the dwell time at switch {} ({} -> {}): gap {} < {}",
                    sv.signal, v.index, v.from, v.to, v.gap, v.required
                ));
            }
        }
        if let Some(w) = &report.mu.fallback_warning {
            notes.push(w.clone());
        }
        statuses.push(AnalysisStatus {
            analysis: "dwell".into(),
            status: Status::Reported,
            detail: format!(
                "T_loc = {}, mu = {}, T_glob = {}",
                report.table.t_loc, report.mu.value, report.t_glob
            ),
        });
        out.json("dwell.json", &report)?;
    }

    if a.triangle {
        let [u0, v, u1] = a.triangle_modes.as_ref().expect("validated with triangle");
        let t: TriangleAnalysis = (|| triangle_gap(eps, s.system.get(u0)?, s.system.get(v)?, s.system.get(u1)?))()
            .map_err(|e| e.in_analysis("triangle"))?;
        statuses.push(AnalysisStatus {
            analysis: "triangle".into(),
            status: Status::Reported,
            detail: format!(
                "gap {} ({}), routes agree: {}",
                t.gap,
                if t.inequality_holds {
                    "detour longer"
                } else {
                    "detour not longer"
                },
                t.routes_agree
            ),
        });
        out.json("triangle.json", &t)?;
    }

    let mut runs: Vec<(&NamedSignal, &str, Trajectory)> = Vec::new();
    if a.needs_trajectories() {
        for sig in &s.signals {
            for p in &s.initial {
                let traj = simulate_switched(&s.system, &sig.signal, &p.x, sig.horizon, num.step)
                    .map_err(|e| e.in_analysis(format!("simulate {}", traj_name(sig, &p.name))))?;
                let csv = trajectory_csv(&traj, &s.system, num.output_stride)?;
                out.write(&format!("trajectories/{}.csv", traj_name(sig, &p.name)), csv.as_bytes())?;
                runs.push((sig, &p.name, traj));
            }
        }
        statuses.push(AnalysisStatus {
            analysis: "simulate".into(),
            status: Status::Reported,
            detail: format!("{} trajectories, step {}", runs.len(), num.step),
        });
    }

    if a.trapping {
        let mut records = Vec::new();
        let mut failed = 0;
        for (sig, point, traj) in &runs {
            let rep: TrappingReport = verify_trapping_with_tol(traj, &s.system, &sig.signal, eps, num.membership_tol)
                .map_err(|e| e.in_analysis("trapping"))?;
            failed += usize::from(!rep.overall_pass);
            records.push(RunRecord {
                signal: &sig.name,
                point,
                report: Some(rep),
                skipped: None,
            });
        }
        statuses.push(AnalysisStatus {
            analysis: "trapping".into(),
            status: if failed == 0 { Status::Pass } else { Status::Fail },
            detail: format!("{failed} of {} runs leave a trapping region at a switch", records.len()),
        });
        out.json("trapping.json", &records)?;
    }

    if a.convergence {
        let mut records = Vec::new();
        let mut failed = 0;
        let mut checked = 0;
        // the μ actually available for these certificates
        let mu_mode = mu_estimate(eps, &s.system, &num.mu_mode, &num.mu_fallback)
            .map_err(|e| e.in_analysis("convergence"))?
            .method;
        for (sig, point, traj) in &runs {
            if traj.switch_events.len() < a.i_max {
                records.push(RunRecord::<ConvergenceReport> {
                    signal: &sig.name,
                    point,
                    report: None,
                    skipped: Some(format!(
                        "{} switches before the horizon, i_max = {}",
                        traj.switch_events.len(),
                        a.i_max
                    )),
                });
                continue;
            }
            let rep = convergence_product(&s.system, &sig.signal, traj, eps, a.i_max, &mu_mode)
                .map_err(|e| e.in_analysis("convergence"))?;
            checked += 1;
            failed += usize::from(!(rep.w_monotone.iter().all(|w| *w) && rep.bound_respected_before_entry));
            records.push(RunRecord {
                signal: &sig.name,
                point,
                report: Some(rep),
                skipped: None,
            });
        }
        statuses.push(AnalysisStatus {
            analysis: "convergence".into(),
            status: if failed == 0 { Status::Pass } else { Status::Fail },
            detail: format!(
                "{checked} runs checked, {failed} with a W-monitor or product-bound failure, {} skipped",
                records.len() - checked
            ),
        });
        out.json("convergence.json", &records)?;
    }

    if let Some(tube) = &a.tube_spec {
        let (from, to) = (s.system.get(&tube.from)?, s.system.get(&tube.to)?);
        let slices = tube_sample(&s.system, &tube.from, &tube.to, eps, &tube.times, tube.count, num.step)
            .map_err(|e| e.in_analysis("tube"))?;
        let dwell = pairwise_dwell(eps, from, to)?;
        let records: Vec<serde_json::Value> = slices
            .iter()
            .map(|sl| {
                serde_json::to_value(TubeSliceRecord {
                    t: sl.t,
                    max_v_target: sl.points.iter().map(|p| to.lyapunov_value(p)).fold(0.0, f64::max),
                    points: sl
                        .points
                        .iter()
                        .map(|p| [p[0], p.get(1).copied().unwrap_or(0.0)])
                        .collect(),
                })
                .expect("tube slices serialize")
            })
            .collect();
        statuses.push(AnalysisStatus {
            analysis: "tube".into(),
            status: Status::Reported,
            detail: format!("{} slices of {} points", slices.len(), tube.count),
        });
        out.json(
            "tube.json",
            &TubeFile {
                eps,
                from: &tube.from,
                to: &tube.to,
                dwell,
                slices: records,
            },
        )?;
    }

    if a.plot_data {
        for (sig, point, traj) in &runs {
            let files = plot_files(traj, &s.system, eps, num.region_points).map_err(|e| e.in_analysis("plot_data"))?;
            for (name, content) in files {
                out.write(&format!("plot/{}/{name}", traj_name(sig, point)), content.as_bytes())?;
            }
        }
        statuses.push(AnalysisStatus {
            analysis: "plot_data".into(),
            status: Status::Reported,
            detail: format!("{} trajectories", runs.len()),
        });
    }

    let exit_code = if statuses.iter().any(|s| s.status == Status::Fail) {
        EXIT_VERIFICATION_FAILED
    } else {
        0
    };
    let summary = Summary {
        title: s.title.clone(),
        eps,
        analyses: statuses,
        notes,
        exit_code,
    };
    out.json("summary.json", &summary)?;
    let mut manifest = std::mem::take(&mut out.files);
    manifest.sort_by(|a, b| a.path.cmp(&b.path));
    out.json("manifest.json", &manifest)?;
    Ok(RunOutcome {
        exit_code,
        summary,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{parse_scenario, EXAMPLE2, SHARPNESS};
    use crate::signal::{signal_from_dwell, Dwell};
    use crate::system::example_system;
    use nalgebra::DVector;

    #[test]
    fn csv_keeps_switch_rows_under_stride() {
        let sys = example_system();
        let sig = signal_from_dwell("u1", &["u2".into(), "u3".into()], &Dwell::Uniform(1.43), 0.0, false).unwrap();
        let tr = simulate_switched(&sys, &sig, &DVector::from_vec(vec![0.0, 1.0]), 2.86, 1e-3).unwrap();
        let csv = trajectory_csv(&tr, &sys, 1000).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "t,x1,x2,mode,V_active");
        assert!(rows
            .iter()
            .any(|r| r.starts_with("1.4299999999999999e0,") || r.starts_with("1.4300000000000000e0,")));
        assert!(
            rows.last().unwrap().starts_with("2.8599999999999999e0")
                || rows.last().unwrap().starts_with("2.8600000000000000e0")
        );
        assert_eq!(rows.len(), 1 + 3 + 2);
    }

    #[test]
    fn constant_plot_data() {
        let sys = example_system();
        let sig = SwitchingSignal::constant(0.0, "u2");
        let tr = simulate_switched(&sys, &sig, &DVector::from_vec(vec![-0.5, 0.5]), 1.0, 0.1).unwrap();
        let files = plot_files(&tr, &sys, 0.05, 8).unwrap();
        let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(
            names,
            [
                "trajectory.csv",
                "region_u1.csv",
                "region_u2.csv",
                "region_u3.csv",
                "switch_points.csv"
            ]
        );
        let traj = &files[0].1;
        assert!(traj
            .lines()
            .skip(1)
            .all(|l| l.contains(",-5.0000000000000000e-1,5.0000000000000000e-1,u2,0.0000000000000000e0")));
        assert_eq!(files[1].1.lines().count(), 1 + 9);
    }

    #[test]
    fn sharpness_run_fails_trapping() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(&parse_scenario(SHARPNESS).unwrap(), dir.path()).unwrap();
        assert_eq!(out.exit_code, EXIT_VERIFICATION_FAILED);
        let trap = out.summary.analyses.iter().find(|a| a.analysis == "trapping").unwrap();
        assert_eq!(trap.status, Status::Fail);
    }

    #[test]
    fn example2_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(&parse_scenario(EXAMPLE2).unwrap(), dir.path()).unwrap();
        assert_eq!(out.exit_code, 0);
        let paths: Vec<&str> = out.manifest.iter().map(|m| m.path.as_str()).collect();
        assert!(paths.contains(&"plot/direct__p1/trajectory.csv"));
        assert!(paths.contains(&"plot/detour__p1/switch_points.csv"));
        assert!(paths.contains(&"triangle.json"));
        for m in &out.manifest {
            let bytes = std::fs::read(dir.path().join(&m.path)).unwrap();
            assert_eq!(hex::encode(Sha256::digest(&bytes)), m.sha256);
        }
    }
}
