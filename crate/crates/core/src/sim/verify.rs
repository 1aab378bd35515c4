use serde::Serialize;

use crate::dwell::{mu_bound, MuMode};
use crate::error::{Error, Result};
use crate::lyapunov::{check_eps, membership, Membership, MEMBERSHIP_TOL};
use crate::signal::SwitchingSignal;
use crate::sim::Trajectory;
use crate::system::{Label, SwitchedSystem};

/// Relative tolerance for the W-monitor between consecutive samples.
pub const W_MONOTONE_TOL: f64 = 1e-7;

fn check_signal(traj: &Trajectory, signal: &SwitchingSignal) -> Result<()> {
    let expected = signal.switches_until(traj.end_time());
    if expected.len() != traj.switch_events.len() {
        return Err(Error::SignalMismatch(format!(
            "signal switches {} times up to t = {}, trajectory records {}",
            expected.len(),
            traj.end_time(),
            traj.switch_events.len()
        )));
    }
    if traj.start_time() != signal.t0() {
        return Err(Error::SignalMismatch(format!(
            "trajectory starts at {}, signal at {}",
            traj.start_time(),
            signal.t0()
        )));
    }
    for (sw, ev) in expected.iter().zip(&traj.switch_events) {
        if (sw.time - ev.time).abs() > 1e-12 * (1.0 + sw.time.abs()) || sw.mode != ev.label {
            return Err(Error::SignalMismatch(format!(
                "switch {} expected at t = {} to `{}`, found t = {} to `{}`",
                ev.index, sw.time, sw.mode, ev.time, ev.label
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapRecord {
    pub index: usize,
    pub time: f64,
    pub mode: Label,
    pub value: f64,
    pub member: bool,
    pub strict_member: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrappingReport {
    pub eps: f64,
    pub tolerance: f64,
    /// Whether `x(t_0) ∈ N^ε_{u_0}`, the hypothesis of the trapping result.
    pub initial: Membership,
    pub records: Vec<TrapRecord>,
    /// All switch records are members.
    pub overall_pass: bool,
}

/// Tests `x(t_i) ∈ N^ε_{u_i}` at every switch instant of the trajectory.
pub fn verify_trapping(
    traj: &Trajectory,
    system: &SwitchedSystem,
    signal: &SwitchingSignal,
    eps: f64,
) -> Result<TrappingReport> {
    verify_trapping_with_tol(traj, system, signal, eps, MEMBERSHIP_TOL)
}

pub fn verify_trapping_with_tol(
    traj: &Trajectory,
    system: &SwitchedSystem,
    signal: &SwitchingSignal,
    eps: f64,
    tol: f64,
) -> Result<TrappingReport> {
    check_eps(eps)?;
    check_signal(traj, signal)?;
    let initial = membership(system.get(signal.initial_mode())?, eps, &traj.samples[0].x, tol)?;
    let records = traj
        .switch_events
        .iter()
        .map(|ev| {
            let m = membership(system.get(&ev.label)?, eps, &ev.state, tol)?;
            Ok(TrapRecord {
                index: ev.index,
                time: ev.time,
                mode: ev.label.clone(),
                value: m.value,
                member: m.member,
                strict_member: m.strict,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let overall_pass = records.iter().all(|r| r.member);
    Ok(TrappingReport {
        eps,
        tolerance: tol,
        initial,
        records,
        overall_pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WVerdict {
    /// Interval `[t_index, t_{index+1})`, `index = 0` starting at `t_0`.
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub mode: Label,
    pub nonincreasing: bool,
    /// Largest `W(t_{j+1}) / W(t_j) − 1` seen on the interval.
    pub max_relative_increase: f64,
}

/// Evaluates `W(t) = e^{k t}·V(x(t))` for the driving mode on each
/// inter-switch interval and reports whether it is nonincreasing between
/// consecutive samples, up to [`W_MONOTONE_TOL`] relative.
pub fn w_monitor(traj: &Trajectory, system: &SwitchedSystem, signal: &SwitchingSignal) -> Result<Vec<WVerdict>> {
    check_signal(traj, signal)?;
    let mut verdicts: Vec<WVerdict> = Vec::new();
    let mut next_switch = 0usize;
    for pair in traj.samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if verdicts.is_empty() || traj.switch_events.get(next_switch).is_some_and(|ev| ev.time == a.t) {
            if !verdicts.is_empty() {
                next_switch += 1;
            }
            verdicts.push(WVerdict {
                index: verdicts.len(),
                start: a.t,
                end: a.t,
                mode: a.mode.clone(),
                nonincreasing: true,
                max_relative_increase: f64::NEG_INFINITY,
            });
        }
        let sub = system.get(&a.mode)?;
        let va = sub.lyapunov_value(&a.x);
        let vb = sub.lyapunov_value(&b.x);
        // W(b)/W(a) = e^{k (t_b − t_a)} V(b) / V(a)
        let grown = vb * (sub.decay_rate() * (b.t - a.t)).exp();
        let current = verdicts.last_mut().expect("pushed above");
        current.end = b.t;
        if va > 0.0 {
            let rel = grown / va - 1.0;
            current.max_relative_increase = current.max_relative_increase.max(rel);
            if rel > W_MONOTONE_TOL {
                current.nonincreasing = false;
            }
        } else if vb > 0.0 {
            current.max_relative_increase = f64::INFINITY;
            current.nonincreasing = false;
        } else {
            current.max_relative_increase = current.max_relative_increase.max(0.0);
        }
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub eps: f64,
    pub w_monotone: Vec<bool>,
    /// Driving mode on `[t_i, t_{i+1})`, `i = 0..=i_max`.
    pub drivers: Vec<Label>,
    /// `μ_i` bounding `V_{driver i+1} / V_{driver i}` outside `N^ε_{driver i}`;
    /// the uniform bound for distinct modes, 1 for a repeated mode.
    pub mu: Vec<f64>,
    /// `ln μ̃_i = ln μ_i + (k_{i+1} − k_i)·t_{i+1}`
    pub ln_mu_tilde: Vec<f64>,
    /// `ln P_i = Σ_{j≤i} ln μ_j − Σ_{j≤i} k_j (t_{j+1} − t_j)`
    pub ln_products: Vec<f64>,
    pub products: Vec<f64>,
    pub monotone_decreasing: bool,
    /// Some `P_i` fell below `1e-6·P_0` within `i_max` switches. Failing this
    /// is "not certified", not divergence: the product condition is only
    /// sufficient.
    pub certified: bool,
    /// `V_{driver i+1}(x(t_{i+1}))` along the trajectory.
    pub lyapunov_at_switch: Vec<f64>,
    /// `V_{driver 0}(x(t_0))·P_i`, which bounds the previous entry while the
    /// state stays outside the trapping regions.
    pub lyapunov_bound: Vec<f64>,
    pub bound_respected_before_entry: bool,
    /// First switch index `i` (0 meaning `t_0`) with `x(t_i) ∈ N^ε_{u_i}`.
    pub entry_index: Option<usize>,
    pub entry_time: Option<f64>,
}

const CERTIFY_RATIO: f64 = 1e-6;

/// Partial products of the global-attraction condition along the switch
/// sequence of `traj`, evaluated in log-space.
pub fn convergence_product(
    system: &SwitchedSystem,
    signal: &SwitchingSignal,
    traj: &Trajectory,
    eps: f64,
    i_max: usize,
    mu_mode: &MuMode,
) -> Result<ConvergenceReport> {
    check_eps(eps)?;
    if i_max == 0 {
        return Err(Error::InvalidArgument("i_max must be at least 1".into()));
    }
    let w = w_monitor(traj, system, signal)?;
    if traj.switch_events.len() < i_max {
        return Err(Error::InsufficientSwitches {
            required: i_max,
            available: traj.switch_events.len(),
        });
    }
    let events = &traj.switch_events[..i_max];
    let mut drivers = vec![traj.samples[0].mode.clone()];
    drivers.extend(events.iter().map(|e| e.next_mode.clone()));
    let mut times = vec![signal.t0()];
    times.extend(events.iter().map(|e| e.time));

    // one uniform bound for every pair of distinct modes; identical modes give ratio 1
    let uniform = mu_bound(eps, system, mu_mode)?;
    let mu_for = |num: &Label, den: &Label| if num == den { 1.0 } else { uniform };

    let v0 = system.get(&drivers[0])?.lyapunov_value(&traj.samples[0].x);
    let mut mu = Vec::with_capacity(i_max);
    let mut ln_mu_tilde = Vec::with_capacity(i_max);
    let mut ln_products = Vec::with_capacity(i_max);
    let mut lyapunov_at_switch = Vec::with_capacity(i_max);
    let mut lyapunov_bound = Vec::with_capacity(i_max);
    let mut acc = 0.0;
    for i in 0..i_max {
        let (cur, next) = (system.get(&drivers[i])?, system.get(&drivers[i + 1])?);
        let m = mu_for(&drivers[i + 1], &drivers[i]);
        acc += m.ln() - cur.decay_rate() * (times[i + 1] - times[i]);
        mu.push(m);
        ln_mu_tilde.push(m.ln() + (next.decay_rate() - cur.decay_rate()) * times[i + 1]);
        ln_products.push(acc);
        lyapunov_at_switch.push(next.lyapunov_value(&events[i].state));
        lyapunov_bound.push(v0 * acc.exp());
    }
    let products = ln_products.iter().map(|l| l.exp()).collect();
    let monotone_decreasing = ln_products.windows(2).all(|p| p[1] < p[0]);
    let certified = ln_products.iter().any(|&l| l < ln_products[0] + CERTIFY_RATIO.ln());

    let mut entry_index = None;
    let mut entry_time = None;
    let start = membership(
        system.get(signal.initial_mode())?,
        eps,
        &traj.samples[0].x,
        MEMBERSHIP_TOL,
    )?;
    if start.member {
        entry_index = Some(0);
        entry_time = Some(signal.t0());
    } else {
        for ev in &traj.switch_events {
            if membership(system.get(&ev.label)?, eps, &ev.state, MEMBERSHIP_TOL)?.member {
                entry_index = Some(ev.index);
                entry_time = Some(ev.time);
                break;
            }
        }
    }
    let checked = entry_index.map_or(i_max, |e| e.saturating_sub(1).min(i_max));
    let bound_respected_before_entry = lyapunov_at_switch[..checked]
        .iter()
        .zip(&lyapunov_bound[..checked])
        .all(|(v, b)| *v <= b * (1.0 + 1e-9));

    Ok(ConvergenceReport {
        eps,
        w_monotone: w.iter().map(|v| v.nonincreasing).collect(),
        drivers,
        mu,
        ln_mu_tilde,
        ln_products,
        products,
        monotone_decreasing,
        certified,
        lyapunov_at_switch,
        lyapunov_bound,
        bound_respected_before_entry,
        entry_index,
        entry_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{signal_from_dwell, Dwell};
    use crate::sim::simulate_switched;
    use crate::system::example_system;
    use nalgebra::DVector;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn labels(v: &[&str]) -> Vec<Label> {
        v.iter().map(|s| Label::from(*s)).collect()
    }

    #[test]
    fn trapping_from_equilibrium() {
        let sys = example_system();
        let sig = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.43), 0.0, false).unwrap();
        let tr = simulate_switched(&sys, &sig, &v(&[0.0, 1.0]), 2.86, 1e-3).unwrap();
        let rep = verify_trapping(&tr, &sys, &sig, 0.05).unwrap();
        assert!(rep.overall_pass);
        assert!(rep.initial.strict);
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.records[0].mode.as_str(), "u2");
        assert_eq!(rep.records[1].mode.as_str(), "u3");
    }

    #[test]
    fn mismatched_signal_rejected() {
        let sys = example_system();
        let sig = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.43), 0.0, false).unwrap();
        let other = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.0), 0.0, false).unwrap();
        let tr = simulate_switched(&sys, &sig, &v(&[0.0, 1.0]), 2.86, 1e-2).unwrap();
        assert!(matches!(
            verify_trapping(&tr, &sys, &other, 0.05),
            Err(Error::SignalMismatch(_))
        ));
        assert!(matches!(w_monitor(&tr, &sys, &other), Err(Error::SignalMismatch(_))));
    }

    #[test]
    fn w_monitor_detects_inflated_rate() {
        let sys = example_system();
        let sig = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.43), 0.0, false).unwrap();
        let tr = simulate_switched(&sys, &sig, &v(&[0.3, 1.2]), 4.0, 1e-3).unwrap();
        let w = w_monitor(&tr, &sys, &sig).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|v| v.nonincreasing), "{w:?}");
        let inflated = SwitchedSystem::new(sys.subsystems().map(|s| s.with_decay_rate(10.0).unwrap())).unwrap();
        let w = w_monitor(&tr, &inflated, &sig).unwrap();
        assert!(w.iter().all(|v| !v.nonincreasing));
    }

    #[test]
    fn w_monitor_constant_equilibrium() {
        let sys = example_system();
        let sig = SwitchingSignal::constant(0.0, "u2");
        let tr = simulate_switched(&sys, &sig, &v(&[-0.5, 0.5]), 1.0, 1e-2).unwrap();
        let w = w_monitor(&tr, &sys, &sig).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].nonincreasing);
    }

    #[test]
    fn single_mode_products() {
        let sys = example_system();
        let sig = signal_from_dwell("u1", &labels(&["u1"; 6]), &Dwell::Uniform(0.5), 0.0, false).unwrap();
        let tr = simulate_switched(&sys, &sig, &v(&[3.0, 3.0]), 3.0, 1e-3).unwrap();
        let rep = convergence_product(&sys, &sig, &tr, 0.05, 6, &MuMode::ClosedForm).unwrap();
        assert!(rep.mu.iter().all(|&m| m == 1.0));
        for (i, l) in rep.ln_products.iter().enumerate() {
            assert!((l + 2.0 * 0.5 * (i + 1) as f64).abs() < 1e-12);
        }
        assert!(rep.monotone_decreasing);
        assert!(matches!(
            convergence_product(&sys, &sig, &tr, 0.05, 7, &MuMode::ClosedForm),
            Err(Error::InsufficientSwitches {
                required: 7,
                available: 6
            })
        ));
    }

    #[test]
    fn fast_switching_not_certified() {
        let sys = example_system();
        let sig = signal_from_dwell("u1", &labels(&["u2", "u3", "u2"]), &Dwell::Uniform(0.1), 0.0, true).unwrap();
        let tr = simulate_switched(&sys, &sig, &v(&[5.0, 5.0]), 2.0, 1e-3).unwrap();
        let rep = convergence_product(&sys, &sig, &tr, 0.05, 10, &MuMode::ClosedForm).unwrap();
        assert!(!rep.certified);
        assert!(!rep.monotone_decreasing);
        assert!(rep.products.iter().all(|p| p.is_finite() && *p > 0.0));
    }
}
