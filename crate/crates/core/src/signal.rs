//! Piecewise-constant switching signals.
//!
//! A signal is a label sequence `u_0, u_1, …` attached to instants
//! `t_0 < t_1 < …`, with `u(t) = u_i` on `[t_i, t_{i+1})` (right-continuous,
//! `u(t_i) = u(t_i + 0)`). The label `u_i` names the trapping region the
//! state must occupy at `t_i`. The subsystem that drives the state on
//! `[t_{i-1}, t_i)` is `f_{u_i}`, the one steering toward that region; after
//! the final switch of a finite signal the last mode keeps driving. See
//! [`SwitchingSignal::intervals`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::system::{Label, SwitchedSystem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Switch {
    pub time: f64,
    pub mode: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingSignal {
    t0: f64,
    initial_mode: Label,
    segments: Vec<Switch>,
    period: Option<f64>,
}

/// One constant-field piece of the unrolled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    /// Label `u(start)`; for `start = t_i` this is `u_i`.
    pub label: Label,
    /// Mode whose field is integrated on `[start, end)`.
    pub driver: Label,
}

/// Dwell specification for [`signal_from_dwell`].
#[derive(Debug, Clone, PartialEq)]
pub enum Dwell {
    Uniform(f64),
    PerSegment(Vec<f64>),
}

impl SwitchingSignal {
    pub fn new(t0: f64, initial_mode: impl Into<Label>, segments: Vec<Switch>, period: Option<f64>) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::InvalidSignal(format!("t0 must be finite, got {t0}")));
        }
        let mut prev = t0;
        for (i, s) in segments.iter().enumerate() {
            if !s.time.is_finite() || s.time <= prev {
                return Err(Error::InvalidSignal(format!(
                    "switch {} at t = {} is not after {prev}",
                    i + 1,
                    s.time
                )));
            }
            prev = s.time;
        }
        if let Some(p) = period {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidSignal(format!("period must be positive, got {p}")));
            }
            if t0 + p <= prev {
                return Err(Error::InvalidSignal(format!(
                    "period {p} does not cover the last switch at {prev}"
                )));
            }
        }
        Ok(SwitchingSignal {
            t0,
            initial_mode: initial_mode.into(),
            segments,
            period,
        })
    }

    /// Signal that never switches.
    pub fn constant(t0: f64, mode: impl Into<Label>) -> Self {
        SwitchingSignal {
            t0,
            initial_mode: mode.into(),
            segments: Vec::new(),
            period: None,
        }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn initial_mode(&self) -> &Label {
        &self.initial_mode
    }

    pub fn segments(&self) -> &[Switch] {
        &self.segments
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn check_labels(&self, system: &SwitchedSystem) -> Result<()> {
        std::iter::once(&self.initial_mode)
            .chain(self.segments.iter().map(|s| &s.mode))
            .try_for_each(|l| system.get(l).map(|_| ()))
    }

    /// `u(t)`, right-continuous. Times before `t0` get the initial mode.
    pub fn mode_at(&self, t: f64) -> &Label {
        let tau = match self.period {
            Some(p) if t >= self.t0 + p => {
                let k = ((t - self.t0) / p).floor();
                let mut tau = t - k * p;
                // guard against rounding at exact period boundaries
                if tau >= self.t0 + p {
                    tau -= p;
                }
                tau
            }
            _ => t,
        };
        let idx = self.segments.partition_point(|s| s.time <= tau);
        if idx == 0 {
            &self.initial_mode
        } else {
            &self.segments[idx - 1].mode
        }
    }

    /// All switch instants in `(t0, horizon]`, periodic repetitions included.
    pub fn switches_until(&self, horizon: f64) -> Vec<Switch> {
        let mut out = Vec::new();
        self.walk_switches(|s| {
            if s.time > horizon {
                return false;
            }
            out.push(s);
            true
        });
        out
    }

    /// Calls `visit` on each switch in time order until it returns false or a
    /// finite signal runs out.
    fn walk_switches(&self, mut visit: impl FnMut(Switch) -> bool) {
        let Some(period) = self.period else {
            for s in &self.segments {
                if !visit(s.clone()) {
                    return;
                }
            }
            return;
        };
        let mut k = 0u64;
        loop {
            let shift = k as f64 * period;
            if k > 0
                && !visit(Switch {
                    time: self.t0 + shift,
                    mode: self.initial_mode.clone(),
                })
            {
                return;
            }
            for s in &self.segments {
                if !visit(Switch {
                    time: s.time + shift,
                    mode: s.mode.clone(),
                }) {
                    return;
                }
            }
            k += 1;
        }
    }

    /// Unrolls the signal over `[t0, horizon]` into constant-field pieces.
    /// The piece starting at `t_i` is driven by `u_{i+1}` (or by the last mode
    /// once a finite signal has no further switch).
    pub fn intervals(&self, horizon: f64) -> Vec<Interval> {
        let mut events = vec![Switch {
            time: self.t0,
            mode: self.initial_mode.clone(),
        }];
        // one event past the horizon provides the driver of the final piece
        self.walk_switches(|s| {
            let past = s.time > horizon;
            events.push(s);
            !past
        });
        let mut out = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            if ev.time >= horizon && i > 0 {
                break;
            }
            let (end, driver) = match events.get(i + 1) {
                Some(next) => (next.time.min(horizon), next.mode.clone()),
                None => (horizon, ev.mode.clone()),
            };
            out.push(Interval {
                start: ev.time,
                end,
                label: ev.mode.clone(),
                driver,
            });
        }
        out
    }

    /// Mode whose field acts at time `t`.
    pub fn driving_mode_at(&self, t: f64) -> Label {
        let horizon = t.max(self.t0) + 1.0;
        self.intervals(horizon)
            .into_iter()
            .rev()
            .find(|iv| iv.start <= t)
            .map(|iv| iv.driver)
            .unwrap_or_else(|| self.initial_mode.clone())
    }

    /// Serializes as a `[signal]` section of the scenario format, floats
    /// written with 17 significant digits.
    pub fn to_scenario_section(&self) -> String {
        let quote = |l: &Label| toml::Value::String(l.as_str().to_owned()).to_string();
        let times: Vec<String> = self.segments.iter().map(|s| fmt_f64(s.time)).collect();
        let modes: Vec<String> = self.segments.iter().map(|s| quote(&s.mode)).collect();
        let mut out = String::from("[signal]\nkind = \"explicit\"\n");
        out += &format!("t0 = {}\n", fmt_f64(self.t0));
        out += &format!("initial_mode = {}\n", quote(&self.initial_mode));
        out += &format!("times = [{}]\n", times.join(", "));
        out += &format!("modes = [{}]\n", modes.join(", "));
        if let Some(p) = self.period {
            out += &format!("period = {}\n", fmt_f64(p));
        }
        out
    }
}

/// Builds a signal that starts in `initial_mode` and visits `transitions` in
/// order, segment `i` lasting `dwell_i`. For a periodic signal the pattern
/// (including the return to `initial_mode`) repeats with period equal to the
/// total duration, so a per-segment dwell list needs one entry more than
/// `transitions`.
pub fn signal_from_dwell(
    initial_mode: impl Into<Label>,
    transitions: &[Label],
    dwell: &Dwell,
    t0: f64,
    periodic: bool,
) -> Result<SwitchingSignal> {
    if periodic && transitions.is_empty() {
        return Err(Error::EmptyTransitions);
    }
    let pieces = transitions.len() + usize::from(periodic);
    let gaps: Vec<f64> = match dwell {
        Dwell::Uniform(t) => vec![*t; pieces],
        Dwell::PerSegment(v) => {
            if v.len() != pieces {
                return Err(Error::InvalidSignal(format!(
                    "expected {pieces} dwell values, got {}",
                    v.len()
                )));
            }
            v.clone()
        }
    };
    if let Some(&bad) = gaps.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::NonpositiveDwell(bad));
    }
    let mut t = t0;
    let mut segments = Vec::with_capacity(transitions.len());
    for (mode, gap) in transitions.iter().zip(&gaps) {
        t += gap;
        segments.push(Switch {
            time: t,
            mode: mode.clone(),
        });
    }
    let period = periodic.then(|| gaps.iter().sum::<f64>());
    SwitchingSignal::new(t0, initial_mode, segments, period)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwellViolation {
    /// Index `i` of the pair `(u_{i-1}, u_i)`.
    pub index: usize,
    pub from: Label,
    pub to: Label,
    pub gap: f64,
    pub required: f64,
}

/// Every consecutive pair with `t_i − t_{i−1} < required(u_{i−1}, u_i)`. For
/// periodic signals one period is checked, including the wrap-around pair.
pub fn validate_dwell(
    signal: &SwitchingSignal,
    mut required: impl FnMut(&Label, &Label) -> f64,
) -> Vec<DwellViolation> {
    let mut events: Vec<(f64, &Label)> = vec![(signal.t0, &signal.initial_mode)];
    events.extend(signal.segments.iter().map(|s| (s.time, &s.mode)));
    if let Some(p) = signal.period {
        events.push((signal.t0 + p, &signal.initial_mode));
    }
    events
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let gap = w[1].0 - w[0].0;
            let req = required(w[0].1, w[1].1);
            (gap < req).then(|| DwellViolation {
                index: i + 1,
                from: w[0].1.clone(),
                to: w[1].1.clone(),
                gap,
                required: req,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<Label> {
        v.iter().map(|s| Label::from(*s)).collect()
    }

    #[test]
    fn from_dwell_switch_times() {
        let s = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.43), 0.0, false).unwrap();
        let times: Vec<f64> = s.segments().iter().map(|s| s.time).collect();
        assert_eq!(times, vec![1.43, 2.86]);
        assert_eq!(s.period(), None);
    }

    #[test]
    fn empty_transitions_give_constant_signal() {
        let s = signal_from_dwell("u1", &[], &Dwell::Uniform(1.0), 0.0, false).unwrap();
        assert!(s.segments().is_empty());
        assert_eq!(s.mode_at(100.0).as_str(), "u1");
        assert!(matches!(
            signal_from_dwell("u1", &[], &Dwell::Uniform(1.0), 0.0, true),
            Err(Error::EmptyTransitions)
        ));
    }

    #[test]
    fn periodic_four_segment_signal() {
        let s = signal_from_dwell("u1", &labels(&["u2", "u3", "u2"]), &Dwell::Uniform(1.43), 0.0, true).unwrap();
        assert!((s.period().unwrap() - 5.72).abs() < 1e-12);
        assert_eq!(s.mode_at(0.0).as_str(), "u1");
        assert_eq!(s.mode_at(1.43).as_str(), "u2");
        assert_eq!(s.mode_at(3.0).as_str(), "u3");
        assert_eq!(s.mode_at(4.5).as_str(), "u2");
        assert_eq!(s.mode_at(5.8).as_str(), "u1");
        assert_eq!(s.mode_at(7.2).as_str(), "u2");
        let sw = s.switches_until(11.44);
        assert_eq!(sw.len(), 8);
        assert_eq!(sw[3].mode.as_str(), "u1");
    }

    #[test]
    fn nonpositive_dwell_rejected() {
        for bad in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                signal_from_dwell("a", &labels(&["b"]), &Dwell::Uniform(bad), 0.0, false),
                Err(Error::NonpositiveDwell(_))
            ));
        }
        assert!(signal_from_dwell("a", &labels(&["b"]), &Dwell::PerSegment(vec![1.0, 2.0]), 0.0, false).is_err());
    }

    #[test]
    fn unordered_switches_rejected() {
        let segs = vec![
            Switch {
                time: 2.0,
                mode: "b".into(),
            },
            Switch {
                time: 1.0,
                mode: "c".into(),
            },
        ];
        assert!(SwitchingSignal::new(0.0, "a", segs, None).is_err());
        let segs = vec![Switch {
            time: 0.0,
            mode: "b".into(),
        }];
        assert!(SwitchingSignal::new(0.0, "a", segs, None).is_err());
    }

    #[test]
    fn intervals_use_incoming_driver() {
        let s = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.0), 0.0, false).unwrap();
        let iv = s.intervals(3.0);
        let drivers: Vec<&str> = iv.iter().map(|i| i.driver.as_str()).collect();
        assert_eq!(drivers, ["u2", "u3", "u3"]);
        assert_eq!(iv[0].label.as_str(), "u1");
        assert_eq!(iv.last().unwrap().end, 3.0);
        // a horizon on a switch instant ends the schedule there
        let iv = s.intervals(2.0);
        assert_eq!(iv.len(), 2);
        assert_eq!(iv[1].end, 2.0);
        // a horizon inside a piece still looks ahead for the driver
        let iv = s.intervals(1.5);
        assert_eq!(iv[1].driver.as_str(), "u3");
        assert_eq!(s.driving_mode_at(0.5).as_str(), "u2");
        assert_eq!(s.driving_mode_at(10.0).as_str(), "u3");
        let c = SwitchingSignal::constant(0.0, "u1");
        assert_eq!(c.intervals(2.0).len(), 1);
        assert_eq!(c.driving_mode_at(1.0).as_str(), "u1");
    }

    #[test]
    fn dwell_violations() {
        let req = |_: &Label, _: &Label| 1.42609;
        let ok = signal_from_dwell("u1", &labels(&["u2", "u3"]), &Dwell::Uniform(1.43), 0.0, false).unwrap();
        assert!(validate_dwell(&ok, req).is_empty());
        let bad = signal_from_dwell(
            "u1",
            &labels(&["u2", "u3"]),
            &Dwell::PerSegment(vec![1.43, 1.0]),
            0.0,
            false,
        )
        .unwrap();
        let v = validate_dwell(&bad, req);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 2);
        assert!(validate_dwell(&SwitchingSignal::constant(0.0, "u1"), req).is_empty());
    }
}
