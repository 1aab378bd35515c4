//! Dwell-time formulas: the pairwise travel time between trapping regions,
//! its supremum over a transition set, the global-attraction bound built on
//! the Lyapunov ratio `μ(ε)`, and the travel-time triangle inequality.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::check_eps;
use crate::sampling::HaltonSampler;
use crate::system::{ClassKFn, Label, Subsystem, SwitchedSystem};

/// `−(1/k₂)·ln(ε / β₂(‖x₂ − x₁‖ + α₁⁻¹(ε)))` without clamping; negative when
/// the source region already lies inside the target region.
pub fn pairwise_dwell_unclamped(eps: f64, from: &Subsystem, to: &Subsystem) -> Result<f64> {
    check_eps(eps)?;
    if from.dimension() != to.dimension() {
        return Err(Error::DimensionMismatch {
            expected: from.dimension(),
            got: to.dimension(),
        });
    }
    let dist = (to.equilibrium() - from.equilibrium()).norm();
    Ok(travel_time(eps, dist, from.alpha(), to.beta(), to.decay_rate()))
}

fn travel_time(eps: f64, dist: f64, alpha: ClassKFn, beta: ClassKFn, k: f64) -> f64 {
    let reach = beta.eval(dist + alpha.inverse(eps));
    -(eps / reach).ln() / k
}

/// Time a solution needs to get from `N^ε_from` into `N^ε_to` under the
/// field of `to`, clamped below at zero.
pub fn pairwise_dwell(eps: f64, from: &Subsystem, to: &Subsystem) -> Result<f64> {
    pairwise_dwell_unclamped(eps, from, to).map(|t| t.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwellEntry {
    pub from: Label,
    pub to: Label,
    pub dwell: f64,
    pub unclamped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwellTable {
    pub eps: f64,
    pub entries: Vec<DwellEntry>,
    /// Maximum of `entries[..].dwell`.
    pub t_loc: f64,
}

impl DwellTable {
    pub fn get(&self, from: &Label, to: &Label) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| &e.from == from && &e.to == to)
            .map(|e| e.dwell)
    }
}

/// Pairwise dwell for every listed transition and their supremum `T_loc`.
/// Repeated transitions are listed once.
pub fn local_dwell(eps: f64, system: &SwitchedSystem, transitions: &[(Label, Label)]) -> Result<DwellTable> {
    check_eps(eps)?;
    if transitions.is_empty() {
        return Err(Error::InvalidArgument(
            "local_dwell needs at least one transition".into(),
        ));
    }
    let mut entries: Vec<DwellEntry> = Vec::new();
    for (from, to) in transitions {
        if entries.iter().any(|e| &e.from == from && &e.to == to) {
            continue;
        }
        let unclamped = pairwise_dwell_unclamped(eps, system.get(from)?, system.get(to)?)?;
        entries.push(DwellEntry {
            from: from.clone(),
            to: to.clone(),
            dwell: unclamped.max(0.0),
            unclamped,
        });
    }
    let t_loc = entries.iter().map(|e| e.dwell).fold(0.0, f64::max);
    Ok(DwellTable { eps, entries, t_loc })
}

/// All ordered pairs of distinct labels of a system.
pub fn all_transitions(system: &SwitchedSystem) -> Vec<(Label, Label)> {
    let labels: Vec<&Label> = system.labels().collect();
    let mut out = Vec::new();
    for a in &labels {
        for b in &labels {
            if a != b {
                out.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MuMode {
    ClosedForm,
    Sampled { n_samples: usize, radius: f64, seed: u64 },
}

/// `(1 + ‖x_a − x_b‖/√ε)²`, the supremum of `‖x−x_a‖² / ‖x−x_b‖²` over
/// `‖x − x_b‖ ≥ √ε`. Both certificates must be `‖x − x_u‖²`.
pub fn mu_pair_closed_form(eps: f64, a: &Subsystem, b: &Subsystem) -> Result<f64> {
    check_eps(eps)?;
    for s in [a, b] {
        if !s.lyapunov().is_identity_quadratic() {
            return Err(Error::UnsupportedCertificate(s.label().clone()));
        }
    }
    let d = (a.equilibrium() - b.equilibrium()).norm();
    Ok((1.0 + d / eps.sqrt()).powi(2))
}

/// Largest sampled `V_a(x) / V_b(x)` with `x` in the ball of `radius` about
/// `x_b` and outside `N^ε_b`. Never below 1, the limit of the ratio far
/// from both equilibria.
pub fn mu_pair_sampled(
    eps: f64,
    a: &Subsystem,
    b: &Subsystem,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    check_eps(eps)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling radius must be positive, got {radius}"
        )));
    }
    let n = b.dimension();
    let mut halton = HaltonSampler::new(n, seed);
    let mut best = 1.0f64;
    for _ in 0..n_samples {
        let q = DVector::from_iterator(n, halton.next_point().into_iter().map(|u| 2.0 * u - 1.0));
        if q.norm_squared() > 1.0 {
            continue;
        }
        let x = b.equilibrium() + q * radius;
        let vb = b.lyapunov_value(&x);
        if vb <= eps {
            continue;
        }
        best = best.max(a.lyapunov_value(&x) / vb);
    }
    Ok(best)
}

/// Uniform bound `μ(ε)` on `V_a / V_b` outside `N^ε_b` over all ordered
/// pairs of modes.
pub fn mu_bound(eps: f64, system: &SwitchedSystem, mode: &MuMode) -> Result<f64> {
    check_eps(eps)?;
    let mut best = 1.0f64;
    for a in system.subsystems() {
        for b in system.subsystems() {
            if a.label() == b.label() {
                continue;
            }
            let mu = match mode {
                MuMode::ClosedForm => mu_pair_closed_form(eps, a, b)?,
                MuMode::Sampled {
                    n_samples,
                    radius,
                    seed,
                } => mu_pair_sampled(eps, a, b, *n_samples, *radius, *seed)?,
            };
            best = best.max(mu);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuEstimate {
    pub value: f64,
    pub method: MuMode,
    /// Set when the closed form was requested but a certificate is not an
    /// identity quadratic, so the sampled estimate was used instead.
    pub fallback_warning: Option<String>,
}

/// [`mu_bound`] that degrades from the closed form to `fallback` when some
/// certificate is not an identity quadratic.
pub fn mu_estimate(eps: f64, system: &SwitchedSystem, requested: &MuMode, fallback: &MuMode) -> Result<MuEstimate> {
    match mu_bound(eps, system, requested) {
        Ok(value) => Ok(MuEstimate {
            value,
            method: requested.clone(),
            fallback_warning: None,
        }),
        Err(Error::UnsupportedCertificate(label)) => {
            let value = mu_bound(eps, system, fallback)?;
            Ok(MuEstimate {
                value,
                method: fallback.clone(),
                fallback_warning: Some(format!(
                    "closed-form mu unavailable: certificate of `{label}` is not ‖x−x_u‖²; sampled estimate used"
                )),
            })
        }
        Err(e) => Err(e),
    }
}

/// Dwell time for global attraction, `(1 + margin)·ln(μ)/k_min`, which
/// strictly exceeds `ln(μ)/k_min` whenever `μ > 1`.
pub fn global_dwell(mu: f64, k_min: f64, margin: f64) -> Result<f64> {
    if !(mu.is_finite() && mu >= 1.0) {
        return Err(Error::InvalidMu(mu));
    }
    if !(k_min.is_finite() && k_min > 0.0) {
        return Err(Error::InvalidArgument(format!("k_min must be positive, got {k_min}")));
    }
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be nonnegative, got {margin}"
        )));
    }
    Ok((1.0 + margin) * mu.ln() / k_min)
}

/// Relative agreement required between the two gap computations.
pub const GAP_IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangleAnalysis {
    pub eps: f64,
    /// `T_{u0,u1}` (unclamped)
    pub direct: f64,
    /// `T_{u0,v}` (unclamped)
    pub first_leg: f64,
    /// `T_{v,u1}` (unclamped)
    pub second_leg: f64,
    /// `T_{u0,u1} − T_{u0,v} − T_{v,u1}` from the three travel times.
    pub gap: f64,
    /// The same quantity as `−ln(K / ε^{1/k})`.
    pub gap_identity: f64,
    pub k_const: f64,
    pub routes_agree: bool,
    /// `gap < 0`: the detour through `v` takes strictly longer.
    pub inequality_holds: bool,
    /// Threshold for the `(d, r)` geometry spanned by this triple, when one
    /// exists (`r > 0` and `r ≤ 2d`).
    pub eps0: Option<f64>,
}

/// Gap computed from pairwise distances, for callers without subsystems.
/// Returns `(direct route, identity route, K)`.
pub fn travel_gap(
    eps: f64,
    d_u0_u1: f64,
    d_u0_v: f64,
    d_v_u1: f64,
    alpha: ClassKFn,
    beta: ClassKFn,
    k: f64,
) -> Result<(f64, f64, f64)> {
    check_eps(eps)?;
    let direct = travel_time(eps, d_u0_u1, alpha, beta, k)
        - travel_time(eps, d_u0_v, alpha, beta, k)
        - travel_time(eps, d_v_u1, alpha, beta, k);
    let a = alpha.inverse(eps);
    let k_const = (beta.eval(d_v_u1 + a) / beta.eval(d_u0_u1 + a)).powf(1.0 / k) * beta.eval(d_u0_v + a).powf(1.0 / k);
    let identity = -(k_const / eps.powf(1.0 / k)).ln();
    Ok((direct, identity, k_const))
}

pub(crate) fn relative_agree(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-14
}

/// Compares the direct travel time `u0 → u1` with the detour `u0 → v → u1`.
/// The three subsystems must share `α`, `β` and `k`.
pub fn triangle_gap(eps: f64, u0: &Subsystem, v: &Subsystem, u1: &Subsystem) -> Result<TriangleAnalysis> {
    check_eps(eps)?;
    let shared = |s: &Subsystem| (s.alpha(), s.beta(), s.decay_rate());
    if shared(u0) != shared(v) || shared(v) != shared(u1) {
        return Err(Error::HeterogeneousCertificates);
    }
    let direct = pairwise_dwell_unclamped(eps, u0, u1)?;
    let first_leg = pairwise_dwell_unclamped(eps, u0, v)?;
    let second_leg = pairwise_dwell_unclamped(eps, v, u1)?;
    let gap = direct - first_leg - second_leg;

    let dist = |a: &Subsystem, b: &Subsystem| (a.equilibrium() - b.equilibrium()).norm();
    let (alpha, beta, k) = shared(u0);
    let (_, gap_identity, k_const) = travel_gap(eps, dist(u0, u1), dist(u0, v), dist(v, u1), alpha, beta, k)?;

    let d = u0.equilibrium().norm().max(u1.equilibrium().norm());
    let r = dist(u0, v).min(dist(v, u1));
    let eps0 = if r > 0.0 && d > 0.0 && r <= 2.0 * d {
        epsilon0_search(d, r, alpha, beta, k).ok()
    } else {
        None
    };
    Ok(TriangleAnalysis {
        eps,
        direct,
        first_leg,
        second_leg,
        gap,
        gap_identity,
        k_const,
        routes_agree: relative_agree(gap, gap_identity, GAP_IDENTITY_TOL),
        inequality_holds: gap < 0.0,
        eps0,
    })
}

const EPS_SEARCH_MIN: f64 = 1e-12;
const EPS_SEARCH_MAX: f64 = 1e6;

/// Largest `ε₀ ≤ 10⁶` such that the worst-case constant
/// `K₀ = β(r + α⁻¹(ε))^{2/k} / β(2d + α⁻¹(ε))^{1/k}` satisfies
/// `K₀ / ε^{1/k} > 1` on all of `(0, ε₀)`. The first sign change is located
/// on a doubling grid and refined by bisection to relative width `1e-6`.
pub fn epsilon0_search(d: f64, r: f64, alpha: ClassKFn, beta: ClassKFn, k: f64) -> Result<f64> {
    for (name, v) in [("d", d), ("r", r), ("k", k)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if r > 2.0 * d {
        return Err(Error::EmptyConfiguration { d, r });
    }
    // sign of ln(K₀ / ε^{1/k}) scaled by k
    let holds = |eps: f64| {
        let a = alpha.inverse(eps);
        2.0 * beta.eval(r + a).ln() - beta.eval(2.0 * d + a).ln() - eps.ln() > 0.0
    };
    if !holds(EPS_SEARCH_MIN) {
        return Err(Error::NoThreshold);
    }
    let mut lo = EPS_SEARCH_MIN;
    let mut hi = None;
    while lo < EPS_SEARCH_MAX {
        let next = (lo * 2.0).min(EPS_SEARCH_MAX);
        if !holds(next) {
            hi = Some(next);
            break;
        }
        lo = next;
    }
    let Some(mut hi) = hi else {
        return Ok(EPS_SEARCH_MAX);
    };
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
