//! Fixed-step RK4 simulation of switched trajectories and the checks run on
//! them.

mod tube;
mod verify;

pub use tube::{tube_sample, TubeSlice};
pub use verify::{
    convergence_product, verify_trapping, verify_trapping_with_tol, w_monitor, ConvergenceReport, TrapRecord,
    TrappingReport, WVerdict, W_MONOTONE_TOL,
};

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::SwitchingSignal;
use crate::system::{Label, Subsystem, SwitchedSystem, VectorField};

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    /// Mode driving the state from `t` on (right-continuous).
    pub mode: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    /// `i` of `t_i`, counting from 1.
    pub index: usize,
    pub time: f64,
    /// Signal label `u_i = u(t_i + 0)`.
    pub label: Label,
    /// Mode that drove the state on `[t_{i-1}, t_i)`.
    pub prev_mode: Label,
    /// Mode that drives the state from `t_i` on.
    pub next_mode: Label,
    #[serde(serialize_with = "crate::sim::ser_vector")]
    pub state: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub switch_events: Vec<SwitchEvent>,
    pub step: f64,
}

pub(crate) fn ser_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        &self.samples.last().expect("trajectories are never empty").x
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().expect("trajectories are never empty").t
    }

    /// State at the `i`-th switch (1-based), if the trajectory reaches it.
    pub fn state_at_switch(&self, i: usize) -> Option<&DVector<f64>> {
        self.switch_events.iter().find(|e| e.index == i).map(|e| &e.state)
    }

    /// Linear interpolation between samples; exact at sample times.
    pub fn state_at(&self, t: f64) -> Option<DVector<f64>> {
        let idx = self.samples.partition_point(|s| s.t < t);
        let s = self.samples.get(idx)?;
        if s.t == t || idx == 0 {
            return (s.t == t).then(|| s.x.clone());
        }
        let p = &self.samples[idx - 1];
        let w = (t - p.t) / (s.t - p.t);
        Some(&p.x * (1.0 - w) + &s.x * w)
    }
}

/// RK4 increment `x_{n+1} − x_n` for one step of size `h`.
fn rk4_increment(field: &VectorField, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = field.eval(x);
    let k2 = field.eval(&(x + &k1 * (0.5 * h)));
    let k3 = field.eval(&(x + &k2 * (0.5 * h)));
    let k4 = field.eval(&(x + &k3 * h));
    (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// State carried between steps: the rounded state and the Kahan
/// compensation of the increments added to it, which keeps the rounding
/// error of long runs from swamping the truncation error at small steps.
struct Stepper {
    x: DVector<f64>,
    comp: DVector<f64>,
}

impl Stepper {
    fn new(x: DVector<f64>) -> Self {
        let comp = DVector::zeros(x.len());
        Stepper { x, comp }
    }

    fn step(&mut self, field: &VectorField, h: f64) {
        let y = rk4_increment(field, &self.x, h) - &self.comp;
        let t = &self.x + &y;
        self.comp = (&t - &self.x) - y;
        self.x = t;
    }
}

/// Integrates `field` over `[start, end]` with steps of exactly `step`,
/// shortening only the final one so the last sample lands on `end`. Samples
/// after `start` are appended to `out`.
fn integrate_piece(
    field: &VectorField,
    state: &mut Stepper,
    start: f64,
    end: f64,
    step: f64,
    mode: &Label,
    out: &mut Vec<Sample>,
) -> Result<()> {
    let len = end - start;
    let mut full = (len / step).floor() as usize;
    let mut rem = len - full as f64 * step;
    if rem >= step * (1.0 - 1e-9) {
        full += 1;
        rem = 0.0;
    } else if rem < step * 1e-9 {
        rem = 0.0;
    }
    for j in 1..=full {
        state.step(field, step);
        let x = &state.x;
        let t = if j == full && rem == 0.0 {
            end
        } else {
            start + j as f64 * step
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteState(t));
        }
        out.push(Sample {
            t,
            x: x.clone(),
            mode: mode.clone(),
        });
    }
    if rem > 0.0 {
        state.step(field, rem);
        let x = &state.x;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteState(end));
        }
        out.push(Sample {
            t: end,
            x: x.clone(),
            mode: mode.clone(),
        });
    }
    Ok(())
}

fn check_step(step: f64) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step must be positive, got {step}")))
    }
}

fn check_state(x0: &DVector<f64>, n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    Ok(())
}

/// Classical RK4 solution of one subsystem on `[t0, t1]`.
pub fn integrate(sub: &Subsystem, x0: &DVector<f64>, t0: f64, t1: f64, step: f64) -> Result<Trajectory> {
    check_step(step)?;
    check_state(x0, sub.dimension())?;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::InvalidArgument(format!("need t0 <= t1, got [{t0}, {t1}]")));
    }
    let mut samples = vec![Sample {
        t: t0,
        x: x0.clone(),
        mode: sub.label().clone(),
    }];
    if t1 > t0 {
        integrate_piece(
            sub.field(),
            &mut Stepper::new(x0.clone()),
            t0,
            t1,
            step,
            sub.label(),
            &mut samples,
        )?;
    }
    Ok(Trajectory {
        samples,
        switch_events: Vec::new(),
        step,
    })
}

/// Simulates the switched system over `[signal.t0, horizon]`, chaining the
/// state across switches. Periodic signals are unrolled to the horizon.
pub fn simulate_switched(
    system: &SwitchedSystem,
    signal: &SwitchingSignal,
    x0: &DVector<f64>,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    check_step(step)?;
    check_state(x0, system.dimension())?;
    signal.check_labels(system)?;
    if !(horizon.is_finite() && horizon > signal.t0()) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must exceed the signal start {}",
            signal.t0()
        )));
    }
    let intervals = signal.intervals(horizon);
    let mut samples = vec![Sample {
        t: signal.t0(),
        x: x0.clone(),
        mode: intervals[0].driver.clone(),
    }];
    let mut state = Stepper::new(x0.clone());
    for iv in &intervals {
        if let Some(first) = samples.last_mut() {
            // right-continuity: the sample on a switch instant carries the incoming driver
            if first.t == iv.start {
                first.mode = iv.driver.clone();
            }
        }
        let sub = system.get(&iv.driver)?;
        integrate_piece(
            sub.field(),
            &mut state,
            iv.start,
            iv.end,
            step,
            &iv.driver,
            &mut samples,
        )?;
    }
    let switch_events = signal
        .switches_until(horizon)
        .into_iter()
        .enumerate()
        .map(|(i, sw)| {
            let next_mode = intervals
                .iter()
                .find(|iv| iv.start == sw.time)
                .map(|iv| iv.driver.clone())
                .unwrap_or_else(|| signal.driving_mode_at(sw.time));
            let state = samples
                .iter()
                .rev()
                .find(|s| s.t == sw.time)
                .map(|s| s.x.clone())
                .expect("every switch instant is a sample time");
            SwitchEvent {
                index: i + 1,
                time: sw.time,
                prev_mode: sw.mode.clone(),
                label: sw.mode,
                next_mode,
                state,
            }
        })
        .collect::<Vec<_>>();
    if let (Some(last_ev), Some(last)) = (switch_events.last(), samples.last_mut()) {
        if last.t == last_ev.time {
            last.mode = last_ev.next_mode.clone();
        }
    }
    Ok(Trajectory {
        samples,
        switch_events,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{signal_from_dwell, Dwell};
    use crate::system::{example_system, make_affine_subsystem};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn ci_signal(t: f64) -> SwitchingSignal {
        signal_from_dwell("u1", &["u2".into(), "u3".into()], &Dwell::Uniform(t), 0.0, false).unwrap()
    }

    #[test]
    fn equilibrium_is_stationary() {
        let sys = example_system();
        let u1 = sys.get(&"u1".into()).unwrap();
        let tr = integrate(u1, &v(&[0.0, 1.0]), 0.0, 2.5, 1e-2).unwrap();
        assert!(tr.samples.iter().all(|s| s.x == v(&[0.0, 1.0])));
        assert_eq!(tr.end_time(), 2.5);
    }

    #[test]
    fn scalar_decay() {
        let sub = make_affine_subsystem(-DMatrix::identity(1, 1), DVector::zeros(1), "s").unwrap();
        let tr = integrate(&sub, &v(&[1.0]), 0.0, 1.0, 1e-3).unwrap();
        assert_abs_diff_eq!(tr.final_state()[0], (-1.0f64).exp(), epsilon = 1e-10);
        assert_eq!(tr.samples.len(), 1001);
    }

    #[test]
    fn partial_final_step_lands_on_end() {
        let sub = make_affine_subsystem(-DMatrix::identity(1, 1), DVector::zeros(1), "s").unwrap();
        let tr = integrate(&sub, &v(&[1.0]), 0.0, 0.2345, 0.1).unwrap();
        let times: Vec<f64> = tr.samples.iter().map(|s| s.t).collect();
        assert_eq!(times.len(), 4);
        assert_eq!(*times.last().unwrap(), 0.2345);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_abs_diff_eq!(tr.final_state()[0], (-0.2345f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_arguments() {
        let sys = example_system();
        let u1 = sys.get(&"u1".into()).unwrap();
        assert!(integrate(u1, &v(&[0.0]), 0.0, 1.0, 1e-3).is_err());
        assert!(integrate(u1, &v(&[0.0, 0.0]), 0.0, 1.0, 0.0).is_err());
        assert!(integrate(u1, &v(&[0.0, 0.0]), 1.0, 0.0, 1e-3).is_err());
        let sig = SwitchingSignal::constant(0.0, "nope");
        assert!(matches!(
            simulate_switched(&sys, &sig, &v(&[0.0, 0.0]), 1.0, 1e-3),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn blow_up_reported() {
        use crate::system::{ClassKFn, LyapunovFn};
        // claims a certificate it does not have; only the integrator matters here
        let sub = Subsystem::new(
            "boom",
            VectorField::Custom(std::sync::Arc::new(|x: &DVector<f64>| x.map(|v| v * v * v))),
            DVector::zeros(1),
            1.0,
            ClassKFn::square(),
            ClassKFn::square(),
            LyapunovFn::identity(),
        )
        .unwrap();
        assert!(matches!(
            integrate(&sub, &v(&[10.0]), 0.0, 10.0, 0.1),
            Err(Error::NonfiniteState(_))
        ));
    }

    #[test]
    fn switch_events_and_continuity() {
        let sys = example_system();
        let sig = ci_signal(1.43);
        let tr = simulate_switched(&sys, &sig, &v(&[0.0, 1.0]), 2.86, 1e-3).unwrap();
        let times: Vec<f64> = tr.switch_events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![1.43, 2.86]);
        assert_eq!(tr.switch_events[0].prev_mode.as_str(), "u2");
        assert_eq!(tr.switch_events[0].next_mode.as_str(), "u3");
        assert_eq!(tr.switch_events[1].next_mode.as_str(), "u3");
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
        for ev in &tr.switch_events {
            let at: Vec<&Sample> = tr.samples.iter().filter(|s| s.t == ev.time).collect();
            assert_eq!(at.len(), 1);
            assert_eq!(at[0].x, ev.state);
            assert_eq!(at[0].mode, ev.next_mode);
        }
        assert_eq!(tr.samples[0].mode.as_str(), "u2");
    }

    #[test]
    fn constant_signal_at_equilibrium() {
        let sys = example_system();
        let sig = SwitchingSignal::constant(0.0, "u3");
        let tr = simulate_switched(&sys, &sig, &v(&[-1.0, 0.0]), 3.0, 1e-2).unwrap();
        assert!(tr.switch_events.is_empty());
        assert!(tr.samples.iter().all(|s| s.x == v(&[-1.0, 0.0])));
    }

    #[test]
    fn periodic_unrolling_matches_chained_periods() {
        let sys = example_system();
        let modes = ["u2".into(), "u3".into(), "u2".into()];
        let sig = signal_from_dwell("u1", &modes, &Dwell::Uniform(1.43), 0.0, true).unwrap();
        let p = sig.period().unwrap();
        let x0 = v(&[-0.5, 0.5]);
        let whole = simulate_switched(&sys, &sig, &x0, 2.0 * p, 1e-3).unwrap();
        let first = simulate_switched(&sys, &sig, &x0, p, 1e-3).unwrap();
        let shifted = signal_from_dwell("u1", &modes, &Dwell::Uniform(1.43), p, true).unwrap();
        let second = simulate_switched(&sys, &shifted, first.final_state(), 2.0 * p, 1e-3).unwrap();
        assert!((whole.final_state() - second.final_state()).amax() <= 1e-12);
        assert_eq!(whole.switch_events.len(), 8);
    }

    #[test]
    fn state_at_interpolates() {
        let sys = example_system();
        let tr = simulate_switched(&sys, &ci_signal(1.0), &v(&[0.0, 1.0]), 2.0, 0.5).unwrap();
        assert_eq!(tr.state_at(1.0).unwrap(), tr.switch_events[0].state);
        assert!(tr.state_at(0.25).is_some());
        assert!(tr.state_at(5.0).is_none());
    }
}
