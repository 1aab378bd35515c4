//! Scenario files: a TOML document describing a switched system, its
//! switching signals, initial conditions and the analyses to run.
//!
//! ```toml
//! title = "three equilibria"
//!
//! [system]
//! dimension = 2
//!
//! [subsystem.u]                # expands to one mode per u value
//! A = [-1, -1, 1, -1]          # row-major
//! family = { offset = [0, 1], slope = [1, 0] }   # b(u) = offset + u·slope
//! u_values = [1, 0, -1]
//! labels = ["u1", "u2", "u3"]
//!
//! [signal]
//! kind = "from_dwell"          # explicit | from_dwell | periodic
//! initial_mode = "u1"
//! modes = ["u2", "u3"]
//! T = 1.43                     # number, list, or "pairwise"
//!
//! [initial]
//! points = [[0, 1]]
//! boundary = [{ mode = "u1", count = 16 }]
//!
//! [analysis]
//! eps = 0.05
//! dwell = true
//! trapping = true
//!
//! [numeric]
//! step = 1e-3
//! ```

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dwell::{pairwise_dwell, MuMode};
use crate::error::{Error, Result};
use crate::lyapunov::{region_boundary_points, SampleBox, MEMBERSHIP_TOL};
use crate::signal::{signal_from_dwell, Dwell, Switch, SwitchingSignal};
use crate::sim::DEFAULT_STEP;
use crate::system::{
    make_affine_subsystem, make_weighted_affine_subsystem, ClassKFn, Label, Subsystem, SwitchedSystem,
};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_MARGIN: f64 = 0.01;
pub const DEFAULT_I_MAX: usize = 10;
pub const DEFAULT_REGION_POINTS: usize = 360;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    title: Option<String>,
    system: Option<RawSystem>,
    #[serde(default)]
    subsystem: IndexMap<String, RawSubsystem>,
    signal: Option<RawSignal>,
    #[serde(default)]
    signals: IndexMap<String, RawSignal>,
    #[serde(default)]
    initial: RawInitial,
    analysis: Option<RawAnalysis>,
    #[serde(default)]
    numeric: RawNumeric,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    dimension: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubsystem {
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Option<Vec<f64>>,
    family: Option<RawFamily>,
    u_values: Option<Vec<f64>>,
    labels: Option<Vec<String>>,
    #[serde(rename = "P")]
    p: Option<Vec<f64>>,
    alpha: Option<ClassKFn>,
    beta: Option<ClassKFn>,
    decay_rate: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    offset: Vec<f64>,
    slope: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDwell {
    Uniform(f64),
    List(Vec<f64>),
    Word(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawHorizon {
    At(f64),
    Dwell { dwell: [String; 2] },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    kind: String,
    t0: Option<f64>,
    initial_mode: String,
    #[serde(default)]
    modes: Vec<String>,
    times: Option<Vec<f64>>,
    #[serde(rename = "T")]
    dwell: Option<RawDwell>,
    period: Option<f64>,
    periods: Option<u32>,
    horizon: Option<RawHorizon>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    #[serde(default)]
    points: Vec<Vec<f64>>,
    #[serde(default)]
    boundary: Vec<RawBoundary>,
    #[serde(default)]
    beyond: Vec<RawBeyond>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    mode: String,
    count: usize,
}

/// `x_mode + (√ε + distance)·w`, `w` the unit vector from `x_away_from` to
/// `x_mode`: a point just outside `N^ε_mode` on the far side.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeyond {
    mode: String,
    away_from: String,
    distance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    eps: Option<f64>,
    #[serde(default)]
    certify: bool,
    #[serde(default)]
    dwell: bool,
    #[serde(default)]
    simulate: bool,
    #[serde(default)]
    trapping: bool,
    #[serde(default)]
    convergence: bool,
    #[serde(default)]
    triangle: bool,
    #[serde(default)]
    tube: bool,
    #[serde(default)]
    plot_data: bool,
    i_max: Option<usize>,
    transitions: Option<Vec<[String; 2]>>,
    triangle_modes: Option<[String; 3]>,
    tube_from: Option<String>,
    tube_to: Option<String>,
    tube_times: Option<Vec<f64>>,
    tube_at_dwell: Option<bool>,
    tube_count: Option<usize>,
    certify_box: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumeric {
    step: Option<f64>,
    seed: Option<u64>,
    samples: Option<usize>,
    mu_mode: Option<String>,
    mu_samples: Option<usize>,
    mu_radius: Option<f64>,
    membership_tol: Option<f64>,
    margin: Option<f64>,
    output_stride: Option<usize>,
    region_points: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct NamedSignal {
    pub name: String,
    pub signal: SwitchingSignal,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialPoint {
    pub name: String,
    pub x: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeSpec {
    pub from: Label,
    pub to: Label,
    pub times: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analyses {
    pub eps: f64,
    pub certify: bool,
    pub dwell: bool,
    pub simulate: bool,
    pub trapping: bool,
    pub convergence: bool,
    pub triangle: bool,
    pub tube: bool,
    pub plot_data: bool,
    pub i_max: usize,
    /// Transitions for the dwell table; `None` means those used by the
    /// signals, or all ordered pairs if there are no signals.
    pub transitions: Option<Vec<(Label, Label)>>,
    pub triangle_modes: Option<[Label; 3]>,
    pub tube_spec: Option<TubeSpec>,
    pub certify_box: SampleBox,
}

impl Analyses {
    pub fn any(&self) -> bool {
        self.certify
            || self.dwell
            || self.simulate
            || self.trapping
            || self.convergence
            || self.triangle
            || self.tube
            || self.plot_data
    }

    /// Whether trajectories have to be computed.
    pub fn needs_trajectories(&self) -> bool {
        self.simulate || self.trapping || self.convergence || self.plot_data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Numeric {
    pub step: f64,
    pub seed: u64,
    pub samples: usize,
    pub mu_mode: MuMode,
    /// Used when the closed form is unavailable.
    pub mu_fallback: MuMode,
    pub membership_tol: f64,
    pub margin: f64,
    pub output_stride: usize,
    pub region_points: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub title: Option<String>,
    pub system: SwitchedSystem,
    pub signals: Vec<NamedSignal>,
    pub initial: Vec<InitialPoint>,
    pub analysis: Analyses,
    pub numeric: Numeric,
}

fn parse_error(e: toml::de::Error, text: &str) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        line,
        message: e.message().to_owned(),
    }
}

fn check_label(name: &str, path: &str) -> Result<Label> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::validation(
            path,
            format!("label `{name}` must be nonempty and use only [A-Za-z0-9_-]"),
        ));
    }
    Ok(Label::new(name))
}

fn positive(v: f64, path: &str) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::validation(path, format!("must be positive and finite, got {v}")))
    }
}

fn with_path(e: Error, path: &str) -> Error {
    match e {
        Error::Validation { .. } => e,
        other => Error::validation(path, other.to_string()),
    }
}

fn square_matrix(v: &[f64], n: usize, path: &str) -> Result<DMatrix<f64>> {
    if v.len() != n * n {
        return Err(Error::validation(
            path,
            format!("expected {} entries (row-major {n}×{n}), got {}", n * n, v.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(n, n, v))
}

fn vector(v: &[f64], n: usize, path: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::validation(
            path,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(path, "entries must be finite"));
    }
    Ok(DVector::from_column_slice(v))
}

fn build_subsystem(
    raw: &RawSubsystem,
    a: DMatrix<f64>,
    b: DVector<f64>,
    label: Label,
    path: &str,
) -> Result<Subsystem> {
    let sub = match (&raw.p, raw.alpha, raw.beta) {
        (None, None, None) => make_affine_subsystem(a, b, label),
        (Some(p), Some(alpha), Some(beta)) => {
            let weight = square_matrix(p, b.len(), &format!("{path}.P"))?;
            make_weighted_affine_subsystem(a, b, weight, alpha, beta, label)
        }
        (Some(_), _, _) => {
            return Err(Error::validation(
                path,
                "a weight matrix P requires explicit alpha and beta",
            ));
        }
        (None, _, _) => {
            return Err(Error::validation(
                path,
                "alpha and beta are only accepted together with P",
            ));
        }
    }
    .map_err(|e| with_path(e, path))?;
    match raw.decay_rate {
        Some(k) => sub
            .with_decay_rate(positive(k, &format!("{path}.decay_rate"))?)
            .map_err(|e| with_path(e, path)),
        None => Ok(sub),
    }
}

fn build_system(raw: &RawScenario) -> Result<SwitchedSystem> {
    let n = raw
        .system
        .as_ref()
        .ok_or_else(|| Error::validation("system", "missing [system] section"))?
        .dimension;
    if n == 0 {
        return Err(Error::validation("system.dimension", "must be at least 1"));
    }
    if raw.subsystem.is_empty() {
        return Err(Error::validation(
            "subsystem",
            "at least one [subsystem.<label>] is required",
        ));
    }
    let mut subs = Vec::new();
    for (name, s) in &raw.subsystem {
        let path = format!("subsystem.{name}");
        let a = square_matrix(&s.a, n, &format!("{path}.A"))?;
        match (&s.b, &s.family, &s.u_values) {
            (Some(b), None, None) => {
                if s.labels.is_some() {
                    return Err(Error::validation(format!("{path}.labels"), "only valid with family"));
                }
                let label = check_label(name, &path)?;
                let b = vector(b, n, &format!("{path}.b"))?;
                subs.push(build_subsystem(s, a, b, label, &path)?);
            }
            (None, Some(fam), Some(us)) => {
                let offset = vector(&fam.offset, n, &format!("{path}.family.offset"))?;
                let slope = vector(&fam.slope, n, &format!("{path}.family.slope"))?;
                if us.is_empty() {
                    return Err(Error::validation(format!("{path}.u_values"), "must not be empty"));
                }
                let labels: Vec<String> = match &s.labels {
                    Some(l) if l.len() == us.len() => l.clone(),
                    Some(l) => {
                        return Err(Error::validation(
                            format!("{path}.labels"),
                            format!("expected {} labels, got {}", us.len(), l.len()),
                        ))
                    }
                    None => us.iter().map(|u| format!("{name}{u}")).collect(),
                };
                for (u, l) in us.iter().zip(&labels) {
                    if !u.is_finite() {
                        return Err(Error::validation(format!("{path}.u_values"), "entries must be finite"));
                    }
                    let label = check_label(l, &format!("{path}.labels"))?;
                    let b = &offset + &slope * *u;
                    subs.push(build_subsystem(s, a.clone(), b, label, &format!("{path}[{l}]"))?);
                }
            }
            _ => {
                return Err(Error::validation(
                    &path,
                    "give either `b`, or `family` together with `u_values`",
                ))
            }
        }
    }
    SwitchedSystem::new(subs).map_err(|e| with_path(e, "subsystem"))
}

fn labels_of(names: &[String], path: &str) -> Result<Vec<Label>> {
    names.iter().map(|m| check_label(m, path)).collect()
}

fn build_signal(raw: &RawSignal, path: &str, system: Option<&SwitchedSystem>, eps: Option<f64>) -> Result<NamedSignal> {
    let t0 = raw.t0.unwrap_or(0.0);
    if !t0.is_finite() {
        return Err(Error::validation(format!("{path}.t0"), "must be finite"));
    }
    let initial = check_label(&raw.initial_mode, &format!("{path}.initial_mode"))?;
    let modes = labels_of(&raw.modes, &format!("{path}.modes"))?;
    let signal = match raw.kind.as_str() {
        "explicit" => {
            if raw.dwell.is_some() {
                return Err(Error::validation(
                    format!("{path}.T"),
                    "not valid for kind = \"explicit\"",
                ));
            }
            if raw.periods.is_some() && raw.period.is_none() {
                return Err(Error::validation(format!("{path}.periods"), "requires `period`"));
            }
            let times = raw.times.clone().unwrap_or_default();
            if times.len() != modes.len() {
                return Err(Error::validation(
                    format!("{path}.times"),
                    format!("{} times for {} modes", times.len(), modes.len()),
                ));
            }
            let segments = times
                .into_iter()
                .zip(modes)
                .map(|(time, mode)| Switch { time, mode })
                .collect();
            SwitchingSignal::new(t0, initial, segments, raw.period)
        }
        kind @ ("from_dwell" | "periodic") => {
            let periodic = kind == "periodic";
            if raw.times.is_some() || raw.period.is_some() {
                return Err(Error::validation(
                    path,
                    format!("`times` and `period` are only valid for kind = \"explicit\", not \"{kind}\""),
                ));
            }
            if !periodic && raw.periods.is_some() {
                return Err(Error::validation(
                    format!("{path}.periods"),
                    "only valid for periodic signals",
                ));
            }
            let dwell = match &raw.dwell {
                None if modes.is_empty() && !periodic => Dwell::PerSegment(Vec::new()),
                None => return Err(Error::validation(format!("{path}.T"), "missing dwell time `T`")),
                Some(RawDwell::Uniform(t)) => Dwell::Uniform(*t),
                Some(RawDwell::List(v)) => Dwell::PerSegment(v.clone()),
                Some(RawDwell::Word(w)) if w == "pairwise" => {
                    let (sys, eps) = system
                        .zip(eps)
                        .ok_or_else(|| Error::validation(format!("{path}.T"), "\"pairwise\" needs [analysis] eps"))?;
                    let mut seq = vec![initial.clone()];
                    seq.extend(modes.iter().cloned());
                    if periodic {
                        seq.push(initial.clone());
                    }
                    let gaps = seq
                        .windows(2)
                        .map(|w| pairwise_dwell(eps, sys.get(&w[0])?, sys.get(&w[1])?))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| with_path(e, &format!("{path}.T")))?;
                    if let Some(i) = gaps.iter().position(|g| *g <= 0.0) {
                        return Err(Error::validation(
                            format!("{path}.T"),
                            format!("pairwise dwell of `{}` -> `{}` is zero", seq[i], seq[i + 1]),
                        ));
                    }
                    Dwell::PerSegment(gaps)
                }
                Some(RawDwell::Word(w)) => {
                    return Err(Error::validation(
                        format!("{path}.T"),
                        format!("expected a number, a list or \"pairwise\", got \"{w}\""),
                    ))
                }
            };
            signal_from_dwell(initial, &modes, &dwell, t0, periodic)
        }
        other => {
            return Err(Error::validation(
                format!("{path}.kind"),
                format!("expected explicit, from_dwell or periodic, got \"{other}\""),
            ))
        }
    }
    .map_err(|e| with_path(e, path))?;
    if let Some(sys) = system {
        signal.check_labels(sys).map_err(|e| with_path(e, path))?;
    }

    let horizon = match &raw.horizon {
        Some(RawHorizon::At(h)) => *h,
        Some(RawHorizon::Dwell { dwell: [a, b] }) => {
            let (sys, eps) = system
                .zip(eps)
                .ok_or_else(|| Error::validation(format!("{path}.horizon"), "a dwell horizon needs [analysis] eps"))?;
            let (a, b) = (
                check_label(a, &format!("{path}.horizon"))?,
                check_label(b, &format!("{path}.horizon"))?,
            );
            let get = |l: &Label| sys.get(l).map_err(|e| with_path(e, &format!("{path}.horizon")));
            signal.t0() + pairwise_dwell(eps, get(&a)?, get(&b)?)?
        }
        None => match signal.period() {
            Some(p) => signal.t0() + p * f64::from(raw.periods.unwrap_or(1)),
            None => signal.segments().last().map(|s| s.time).ok_or_else(|| {
                Error::validation(format!("{path}.horizon"), "a signal without switches needs a horizon")
            })?,
        },
    };
    if !(horizon.is_finite() && horizon > signal.t0()) {
        return Err(Error::validation(
            format!("{path}.horizon"),
            format!("must exceed t0 = {}, got {horizon}", signal.t0()),
        ));
    }
    let name = path.strip_prefix("signals.").unwrap_or("main").to_owned();
    Ok(NamedSignal { name, signal, horizon })
}

fn direction_point(system: &SwitchedSystem, raw: &RawBeyond, eps: f64, path: &str) -> Result<DVector<f64>> {
    let mode = check_label(&raw.mode, &format!("{path}.mode"))?;
    let away = check_label(&raw.away_from, &format!("{path}.away_from"))?;
    let (m, a) = (
        system.get(&mode).map_err(|e| with_path(e, path))?,
        system.get(&away).map_err(|e| with_path(e, path))?,
    );
    if !m.lyapunov().is_identity_quadratic() {
        return Err(Error::validation(
            path,
            format!("mode `{mode}` must use V = ‖x − x_u‖²"),
        ));
    }
    if !raw.distance.is_finite() {
        return Err(Error::validation(format!("{path}.distance"), "must be finite"));
    }
    let w = m.equilibrium() - a.equilibrium();
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::validation(path, "the two equilibria coincide"));
    }
    Ok(m.equilibrium() + w * ((eps.sqrt() + raw.distance) / norm))
}

fn build_initial(raw: &RawInitial, system: &SwitchedSystem, eps: Option<f64>) -> Result<Vec<InitialPoint>> {
    let n = system.dimension();
    let mut out = Vec::new();
    for (i, p) in raw.points.iter().enumerate() {
        out.push(InitialPoint {
            name: format!("p{}", i + 1),
            x: vector(p, n, &format!("initial.points[{i}]"))?,
        });
    }
    let need_eps = |path: &str| eps.ok_or_else(|| Error::validation(path, "requires [analysis] eps"));
    for (i, b) in raw.boundary.iter().enumerate() {
        let path = format!("initial.boundary[{i}]");
        let eps = need_eps(&path)?;
        let mode = check_label(&b.mode, &format!("{path}.mode"))?;
        let sub = system.get(&mode).map_err(|e| with_path(e, &path))?;
        let pts = region_boundary_points(sub, eps, b.count).map_err(|e| with_path(e, &path))?;
        out.extend(pts.into_iter().enumerate().map(|(j, x)| InitialPoint {
            name: format!("{mode}_b{j}"),
            x,
        }));
    }
    for (i, b) in raw.beyond.iter().enumerate() {
        let path = format!("initial.beyond[{i}]");
        let eps = need_eps(&path)?;
        out.push(InitialPoint {
            name: format!("{}_beyond{i}", b.mode),
            x: direction_point(system, b, eps, &path)?,
        });
    }
    Ok(out)
}

fn build_numeric(raw: &RawNumeric, system: &SwitchedSystem) -> Result<Numeric> {
    let step = positive(raw.step.unwrap_or(DEFAULT_STEP), "numeric.step")?;
    let seed = raw.seed.unwrap_or(DEFAULT_SEED);
    let samples = raw.samples.unwrap_or(DEFAULT_SAMPLES);
    if samples == 0 {
        return Err(Error::validation("numeric.samples", "must be at least 1"));
    }
    let spread = system
        .subsystems()
        .flat_map(|a| {
            system
                .subsystems()
                .map(move |b| (a.equilibrium() - b.equilibrium()).norm())
        })
        .fold(0.0f64, f64::max);
    let radius = positive(raw.mu_radius.unwrap_or(10.0 * (1.0 + spread)), "numeric.mu_radius")?;
    let mu_samples = raw.mu_samples.unwrap_or(100_000);
    if mu_samples == 0 {
        return Err(Error::validation("numeric.mu_samples", "must be at least 1"));
    }
    let sampled = MuMode::Sampled {
        n_samples: mu_samples,
        radius,
        seed,
    };
    let mu_mode = match raw.mu_mode.as_deref().unwrap_or("closed_form") {
        "closed_form" => MuMode::ClosedForm,
        "sampled" => sampled.clone(),
        other => {
            return Err(Error::validation(
                "numeric.mu_mode",
                format!("expected closed_form or sampled, got \"{other}\""),
            ))
        }
    };
    let membership_tol = raw.membership_tol.unwrap_or(MEMBERSHIP_TOL);
    if !(membership_tol.is_finite() && membership_tol >= 0.0) {
        return Err(Error::validation("numeric.membership_tol", "must be nonnegative"));
    }
    let margin = raw.margin.unwrap_or(DEFAULT_MARGIN);
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::validation("numeric.margin", "must be nonnegative"));
    }
    let output_stride = raw.output_stride.unwrap_or(1);
    if output_stride == 0 {
        return Err(Error::validation("numeric.output_stride", "must be at least 1"));
    }
    let region_points = raw.region_points.unwrap_or(DEFAULT_REGION_POINTS);
    if region_points < 3 {
        return Err(Error::validation("numeric.region_points", "must be at least 3"));
    }
    Ok(Numeric {
        step,
        seed,
        samples,
        mu_mode,
        mu_fallback: sampled,
        membership_tol,
        margin,
        output_stride,
        region_points,
    })
}

fn pair(names: &[String; 2], path: &str, system: &SwitchedSystem) -> Result<(Label, Label)> {
    let a = check_label(&names[0], path)?;
    let b = check_label(&names[1], path)?;
    for l in [&a, &b] {
        system.get(l).map_err(|e| with_path(e, path))?;
    }
    Ok((a, b))
}

fn build_analysis(raw: &RawAnalysis, system: &SwitchedSystem, eps: f64) -> Result<Analyses> {
    let n = system.dimension();
    let transitions = raw
        .transitions
        .as_ref()
        .map(|ts| {
            if ts.is_empty() {
                return Err(Error::validation("analysis.transitions", "must not be empty"));
            }
            ts.iter()
                .enumerate()
                .map(|(i, t)| pair(t, &format!("analysis.transitions[{i}]"), system))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let triangle_modes = match &raw.triangle_modes {
        Some(m) => {
            let path = "analysis.triangle_modes";
            let (a, b) = pair(&[m[0].clone(), m[1].clone()], path, system)?;
            let (_, c) = pair(&[m[1].clone(), m[2].clone()], path, system)?;
            Some([a, b, c])
        }
        None if raw.triangle => {
            let labels: Vec<Label> = system.labels().cloned().collect();
            if labels.len() < 3 {
                return Err(Error::validation(
                    "analysis.triangle_modes",
                    "triangle analysis needs three modes",
                ));
            }
            Some([labels[0].clone(), labels[1].clone(), labels[2].clone()])
        }
        None => None,
    };
    let tube_spec = if raw.tube {
        let from = raw
            .tube_from
            .as_ref()
            .ok_or_else(|| Error::validation("analysis.tube_from", "required when tube = true"))?;
        let to = raw
            .tube_to
            .as_ref()
            .ok_or_else(|| Error::validation("analysis.tube_to", "required when tube = true"))?;
        let (from, to) = pair(&[from.clone(), to.clone()], "analysis.tube_from", system)?;
        let mut times = raw.tube_times.clone().unwrap_or_else(|| vec![0.0]);
        if raw.tube_at_dwell.unwrap_or(true) {
            times.push(pairwise_dwell(eps, system.get(&from)?, system.get(&to)?)?);
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::validation("analysis.tube_times", "times must be nonnegative"));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        let count = raw.tube_count.unwrap_or(DEFAULT_REGION_POINTS);
        if count < 3 {
            return Err(Error::validation("analysis.tube_count", "must be at least 3"));
        }
        Some(TubeSpec { from, to, times, count })
    } else {
        for (set, key) in [
            (raw.tube_from.is_some(), "tube_from"),
            (raw.tube_to.is_some(), "tube_to"),
            (raw.tube_times.is_some(), "tube_times"),
            (raw.tube_count.is_some(), "tube_count"),
            (raw.tube_at_dwell.is_some(), "tube_at_dwell"),
        ] {
            if set {
                return Err(Error::validation(
                    format!("analysis.{key}"),
                    "only valid with tube = true",
                ));
            }
        }
        None
    };
    let [lo, hi] = raw.certify_box.unwrap_or([-3.0, 3.0]);
    let certify_box = SampleBox::cube(n, lo, hi).map_err(|e| with_path(e, "analysis.certify_box"))?;
    let i_max = raw.i_max.unwrap_or(DEFAULT_I_MAX);
    if i_max == 0 {
        return Err(Error::validation("analysis.i_max", "must be at least 1"));
    }
    Ok(Analyses {
        eps,
        certify: raw.certify,
        dwell: raw.dwell,
        simulate: raw.simulate,
        trapping: raw.trapping,
        convergence: raw.convergence,
        triangle: raw.triangle,
        tube: raw.tube,
        plot_data: raw.plot_data,
        i_max,
        transitions,
        triangle_modes,
        tube_spec,
        certify_box,
    })
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub eps: Option<f64>,
    pub step: Option<f64>,
    pub seed: Option<u64>,
}

/// Parses and validates a scenario document, applying defaults.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    parse_scenario_with(text, Overrides::default())
}

pub fn parse_scenario_with(text: &str, overrides: Overrides) -> Result<Scenario> {
    let mut raw: RawScenario = toml::from_str(text).map_err(|e| parse_error(e, text))?;
    if let (Some(eps), Some(a)) = (overrides.eps, raw.analysis.as_mut()) {
        a.eps = Some(eps);
    }
    if overrides.step.is_some() {
        raw.numeric.step = overrides.step;
    }
    if overrides.seed.is_some() {
        raw.numeric.seed = overrides.seed;
    }
    let system = build_system(&raw)?;
    let raw_analysis = raw
        .analysis
        .as_ref()
        .ok_or_else(|| Error::validation("analysis", "missing [analysis] section"))?;
    let eps = positive(
        raw_analysis
            .eps
            .ok_or_else(|| Error::validation("analysis.eps", "missing"))?,
        "analysis.eps",
    )?;
    let mut signals = Vec::new();
    if let Some(s) = &raw.signal {
        signals.push(build_signal(s, "signal", Some(&system), Some(eps))?);
    }
    for (name, s) in &raw.signals {
        check_label(name, &format!("signals.{name}"))?;
        if name == "main" && raw.signal.is_some() {
            return Err(Error::validation("signals.main", "clashes with the [signal] section"));
        }
        signals.push(build_signal(s, &format!("signals.{name}"), Some(&system), Some(eps))?);
    }
    let initial = build_initial(&raw.initial, &system, Some(eps))?;
    let analysis = build_analysis(raw_analysis, &system, eps)?;
    if !analysis.any() {
        return Err(Error::validation("analysis", "no analysis requested"));
    }
    if analysis.needs_trajectories() {
        if signals.is_empty() {
            return Err(Error::validation("signal", "simulation requested but no signal given"));
        }
        if initial.is_empty() {
            return Err(Error::validation(
                "initial",
                "simulation requested but no initial point given",
            ));
        }
    }
    if analysis.plot_data && system.dimension() != 2 {
        return Err(Error::validation(
            "analysis.plot_data",
            Error::UnsupportedDimension(system.dimension()).to_string(),
        ));
    }
    let numeric = build_numeric(&raw.numeric, &system)?;
    Ok(Scenario {
        title: raw.title,
        system,
        signals,
        initial,
        analysis,
        numeric,
    })
}

/// Parses a document holding only a `[signal]` section, as written by
/// [`SwitchingSignal::to_scenario_section`]. Labels are not resolved and
/// `T = "pairwise"` is unavailable.
pub fn parse_signal_section(text: &str) -> Result<SwitchingSignal> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Doc {
        signal: RawSignal,
    }
    let doc: Doc = toml::from_str(text).map_err(|e| parse_error(e, text))?;
    let mut raw = doc.signal;
    if raw.horizon.is_none() {
        // the horizon does not affect the signal itself
        raw.horizon = Some(RawHorizon::At(f64::MAX));
    }
    Ok(build_signal(&raw, "signal", None, None)?.signal)
}

pub const EXAMPLE1: &str = include_str!("../scenarios/example1.scenario");
pub const EXAMPLE2: &str = include_str!("../scenarios/example2.scenario");
pub const SHARPNESS: &str = include_str!("../scenarios/sharpness.scenario");
pub const ATTRACTOR: &str = include_str!("../scenarios/attractor.scenario");

/// Bundled scenarios, addressable as `builtin:<name>`.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(EXAMPLE1),
        "example2" => Some(EXAMPLE2),
        "sharpness" => Some(SHARPNESS),
        "attractor" => Some(ATTRACTOR),
        _ => None,
    }
}

/// Reads a scenario from a path, or from `builtin:<name>`.
pub fn load_scenario_text(source: &str) -> Result<String> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return builtin(name)
            .map(str::to_owned)
            .ok_or_else(|| Error::InvalidArgument(format!("no bundled scenario `{name}`")));
    }
    std::fs::read_to_string(source).map_err(|e| Error::io(format!("reading {source}"), e))
}
