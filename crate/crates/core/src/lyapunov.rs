//! Lyapunov certificate evaluation, sampled certificate checks and
//! trapping-region membership.

use std::f64::consts::TAU;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampling::HaltonSampler;
use crate::system::{Label, LyapunovFn, Subsystem};

/// Absolute tolerance on V-values for region membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Absolute slack allowed in the decay inequality `∇V·f ≤ −kV`.
pub const DECAY_TOL: f64 = 1e-9;
/// Violation lists in a [`CertificateReport`] keep at most this many entries.
pub const MAX_REPORTED_VIOLATIONS: usize = 64;

fn check_dim(sub: &Subsystem, x: &DVector<f64>) -> Result<()> {
    if x.len() != sub.dimension() {
        return Err(Error::DimensionMismatch {
            expected: sub.dimension(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `V_u(x)`.
pub fn v_eval(sub: &Subsystem, x: &DVector<f64>) -> Result<f64> {
    check_dim(sub, x)?;
    Ok(sub.lyapunov_value(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Membership {
    pub value: f64,
    /// `V ≤ ε + tol`
    pub member: bool,
    /// `V ≤ ε`
    pub strict: bool,
}

pub fn membership(sub: &Subsystem, eps: f64, x: &DVector<f64>, tol: f64) -> Result<Membership> {
    check_eps(eps)?;
    let value = v_eval(sub, x)?;
    Ok(Membership {
        value,
        member: value <= eps + tol,
        strict: value <= eps,
    })
}

/// Membership in `N^ε_u = {x : V_u(x) ≤ ε}` with the default tolerance.
pub fn in_region(sub: &Subsystem, eps: f64, x: &DVector<f64>) -> Result<bool> {
    membership(sub, eps, x, MEMBERSHIP_TOL).map(|m| m.member)
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps))
    }
}

/// `∇V_u(x)`: analytic for quadratic certificates, central differences
/// otherwise.
pub fn gradient(sub: &Subsystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(sub, x)?;
    Ok(match sub.lyapunov() {
        LyapunovFn::Quadratic { weight: None } => (x - sub.equilibrium()) * 2.0,
        LyapunovFn::Quadratic { weight: Some(p) } => {
            let d = x - sub.equilibrium();
            // symmetrized in case P carries rounding asymmetry
            p * &d + p.transpose() * &d
        }
        LyapunovFn::Custom(_) => fd_gradient_unchecked(sub, x),
    })
}

/// Central-difference gradient with step `1e-6·(1 + ‖x‖)`.
pub fn fd_gradient(sub: &Subsystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(sub, x)?;
    Ok(fd_gradient_unchecked(sub, x))
}

fn fd_gradient_unchecked(sub: &Subsystem, x: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6 * (1.0 + x.norm());
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = sub.lyapunov_value(&probe);
        probe[i] = x[i] - h;
        let down = sub.lyapunov_value(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Axis-aligned sampling region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument(
                "box bounds must have equal, nonzero length".into(),
            ));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && u > l))
        {
            return Err(Error::InvalidArgument("box must have positive volume".into()));
        }
        Ok(SampleBox { lower, upper })
    }

    /// `[lo, hi]^n`
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        SampleBox::new(vec![lo; n], vec![hi; n])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    /// Deterministic quasi-random points in the box.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut halton = HaltonSampler::new(self.dimension(), seed);
        (0..count)
            .map(|_| {
                let u = halton.next_point();
                DVector::from_iterator(
                    u.len(),
                    u.iter()
                        .zip(self.lower.iter().zip(&self.upper))
                        .map(|(t, (l, h))| l + t * (h - l)),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichViolation {
    pub index: usize,
    pub x: Vec<f64>,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayViolation {
    pub index: usize,
    pub x: Vec<f64>,
    pub derivative: f64,
    pub bound: f64,
}

/// Outcome of a sampled certificate check. The violation lists are empty
/// exactly when `passed` is true; they are truncated to
/// [`MAX_REPORTED_VIOLATIONS`] entries, the counts are not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub label: Label,
    pub decay_rate: f64,
    pub samples_tested: usize,
    pub sandwich_violation_count: usize,
    pub decay_violation_count: usize,
    pub sandwich_violations: Vec<SandwichViolation>,
    pub decay_violations: Vec<DecayViolation>,
    /// `max_x (∇V·f + kV)`; nonpositive up to rounding when the decay
    /// condition holds on the samples.
    pub max_decay_slack: f64,
    pub passed: bool,
}

/// Checks the sandwich `α(‖x−x_u‖) ≤ V(x) ≤ β(‖x−x_u‖)` and the decay
/// condition `∇V(x)·f(x) ≤ −k V(x)` on `n_samples` quasi-random points of
/// `region`.
pub fn check_certificate(
    sub: &Subsystem,
    region: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> Result<CertificateReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if region.dimension() != sub.dimension() {
        return Err(Error::DimensionMismatch {
            expected: sub.dimension(),
            got: region.dimension(),
        });
    }
    check_certificate_at(sub, &region.sample(n_samples, seed))
}

/// Same checks as [`check_certificate`] on an explicit point set.
pub fn check_certificate_at(sub: &Subsystem, points: &[DVector<f64>]) -> Result<CertificateReport> {
    let k = sub.decay_rate();
    let mut report = CertificateReport {
        label: sub.label().clone(),
        decay_rate: k,
        samples_tested: points.len(),
        sandwich_violation_count: 0,
        decay_violation_count: 0,
        sandwich_violations: Vec::new(),
        decay_violations: Vec::new(),
        max_decay_slack: f64::NEG_INFINITY,
        passed: true,
    };
    for (index, x) in points.iter().enumerate() {
        let v = v_eval(sub, x)?;
        let dist = (x - sub.equilibrium()).norm();
        let (lower, upper) = (sub.alpha().eval(dist), sub.beta().eval(dist));
        let tol = MEMBERSHIP_TOL + 1e-12 * v.abs();
        if v < lower - tol || v > upper + tol {
            report.sandwich_violation_count += 1;
            if report.sandwich_violations.len() < MAX_REPORTED_VIOLATIONS {
                report.sandwich_violations.push(SandwichViolation {
                    index,
                    x: x.iter().copied().collect(),
                    value: v,
                    lower,
                    upper,
                });
            }
        }
        let derivative = gradient(sub, x)?.dot(&sub.eval_field(x));
        let bound = -k * v;
        report.max_decay_slack = report.max_decay_slack.max(derivative - bound);
        if derivative > bound + DECAY_TOL {
            report.decay_violation_count += 1;
            if report.decay_violations.len() < MAX_REPORTED_VIOLATIONS {
                report.decay_violations.push(DecayViolation {
                    index,
                    x: x.iter().copied().collect(),
                    derivative,
                    bound,
                });
            }
        }
    }
    report.passed = report.sandwich_violation_count == 0 && report.decay_violation_count == 0;
    Ok(report)
}

/// Points on the level set `V_u = ε`. In two dimensions the directions are
/// `count` equally spaced angles; for quadratic certificates in other
/// dimensions they are quasi-random unit vectors.
pub fn region_boundary_points(sub: &Subsystem, eps: f64, count: usize) -> Result<Vec<DVector<f64>>> {
    check_eps(eps)?;
    if count < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 boundary points, got {count}"
        )));
    }
    let n = sub.dimension();
    let directions: Vec<DVector<f64>> = if n == 2 {
        (0..count)
            .map(|j| {
                let theta = TAU * j as f64 / count as f64;
                DVector::from_vec(vec![theta.cos(), theta.sin()])
            })
            .collect()
    } else if sub.lyapunov().is_quadratic() {
        sphere_directions(n, count)
    } else {
        return Err(Error::UnsupportedDimension(n));
    };
    directions
        .into_iter()
        .map(|d| {
            let r = level_radius(sub, eps, &d)?;
            Ok(sub.equilibrium() + d * r)
        })
        .collect()
}

fn sphere_directions(n: usize, count: usize) -> Vec<DVector<f64>> {
    let mut halton = HaltonSampler::new(n, 0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = DVector::from_iterator(n, halton.next_point().into_iter().map(|u| 2.0 * u - 1.0));
        let norm = p.norm();
        if norm > 1e-3 && norm <= 1.0 {
            out.push(p / norm);
        }
    }
    out
}

/// Radius `r` with `V(x_u + r·d) = ε` along the unit direction `d`.
fn level_radius(sub: &Subsystem, eps: f64, d: &DVector<f64>) -> Result<f64> {
    match sub.lyapunov() {
        LyapunovFn::Quadratic { weight: None } => Ok(eps.sqrt()),
        LyapunovFn::Quadratic { weight: Some(p) } => Ok((eps / d.dot(&(p * d))).sqrt()),
        LyapunovFn::Custom(_) => {
            // the sandwich bounds bracket the level crossing
            let v = |r: f64| sub.lyapunov_value(&(sub.equilibrium() + d * r));
            let mut lo = sub.beta().inverse(eps) * 0.5;
            let mut hi = sub.alpha().inverse(eps) * 2.0;
            if !(v(lo) <= eps && v(hi) >= eps) {
                return Err(Error::InvalidArgument(
                    "Lyapunov function does not cross the level set between its bounds".into(),
                ));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if v(mid) <= eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{example_system, ClassKFn, VectorField};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn v_eval_examples() {
        let sys = example_system();
        let u1 = sys.get(&"u1".into()).unwrap();
        let u2 = sys.get(&"u2".into()).unwrap();
        assert_eq!(v_eval(u1, &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            v_eval(u1, &v(&[0.0, 1.0 + 0.05f64.sqrt()])).unwrap(),
            0.05,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(v_eval(u2, &v(&[0.0, 1.0])).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(v_eval(u1, &v(&[1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn in_region_examples() {
        let sys = example_system();
        let u1 = sys.get(&"u1".into()).unwrap();
        assert!(in_region(u1, 0.05, &v(&[0.0, 1.0])).unwrap());
        assert!(in_region(u1, 0.05, &v(&[0.0, 1.0 + 0.05f64.sqrt()])).unwrap());
        assert!(!in_region(u1, 0.05, &v(&[0.0, 1.3])).unwrap());
        assert!(matches!(
            in_region(u1, 0.0, &v(&[0.0, 1.0])),
            Err(Error::InvalidEpsilon(_))
        ));
        let m = membership(u1, 0.05, &v(&[0.0, 1.0 + 0.05f64.sqrt() + 1e-12]), MEMBERSHIP_TOL).unwrap();
        assert!(m.member && !m.strict);
    }

    #[test]
    fn example_certificates_pass_and_inflated_rate_fails() {
        let sys = example_system();
        let region = SampleBox::cube(2, -2.0, 2.0).unwrap();
        for sub in sys.subsystems() {
            let rep = check_certificate(sub, &region, 10_000, 42).unwrap();
            assert!(rep.passed, "{rep:?}");
            assert!(rep.max_decay_slack <= 1e-9);
            let bad = check_certificate(&sub.with_decay_rate(3.0).unwrap(), &region, 10_000, 42).unwrap();
            assert!(!bad.passed);
            assert!(bad.decay_violation_count > 0);
            assert!(bad.decay_violations.len() <= MAX_REPORTED_VIOLATIONS);
        }
    }

    #[test]
    fn equilibrium_only_sample_set_passes() {
        for sub in example_system().subsystems() {
            let rep = check_certificate_at(&sub.with_decay_rate(50.0).unwrap(), &[sub.equilibrium().clone()]).unwrap();
            assert!(rep.passed);
        }
    }

    #[test]
    fn certificate_check_is_deterministic() {
        let sys = example_system();
        let sub = sys.get(&"u2".into()).unwrap().with_decay_rate(2.5).unwrap();
        let region = SampleBox::cube(2, -3.0, 3.0).unwrap();
        let a = check_certificate(&sub, &region, 500, 9).unwrap();
        let b = check_certificate(&sub, &region, 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_points_on_level_set() {
        let sys = example_system();
        let u1 = sys.get(&"u1".into()).unwrap();
        let pts = region_boundary_points(u1, 0.05, 4).unwrap();
        let r = 0.05f64.sqrt();
        let expect = [[r, 1.0], [0.0, 1.0 + r], [-r, 1.0], [0.0, 1.0 - r]];
        for (p, e) in pts.iter().zip(expect) {
            assert_abs_diff_eq!(p[0], e[0], epsilon = 1e-15);
            assert_abs_diff_eq!(p[1], e[1], epsilon = 1e-15);
        }
        let u2 = sys.get(&"u2".into()).unwrap();
        let pts = region_boundary_points(u2, 0.04, 360).unwrap();
        assert_eq!(pts.len(), 360);
        for p in &pts {
            assert_abs_diff_eq!((p - u2.equilibrium()).norm(), 0.2, epsilon = 1e-15);
            assert_abs_diff_eq!(v_eval(u2, p).unwrap(), 0.04, epsilon = 1e-12);
        }
        assert_eq!(region_boundary_points(u2, 0.05, 3).unwrap().len(), 3);
        assert!(region_boundary_points(u2, 0.05, 2).is_err());
    }

    fn quartic_sub(n: usize) -> Subsystem {
        // V = ‖x‖⁴ for ẋ = −x, certificate rate 4
        Subsystem::new(
            "q",
            VectorField::Custom(Arc::new(|x: &DVector<f64>| -x)),
            DVector::zeros(n),
            4.0,
            ClassKFn::new(1.0, 4.0).unwrap(),
            ClassKFn::new(1.0, 4.0).unwrap(),
            LyapunovFn::Custom(Arc::new(|x: &DVector<f64>| x.norm_squared().powi(2))),
        )
        .unwrap()
    }

    #[test]
    fn custom_certificate_boundary_and_check() {
        let sub = quartic_sub(2);
        for p in region_boundary_points(&sub, 0.0625, 12).unwrap() {
            assert_abs_diff_eq!(p.norm(), 0.5, epsilon = 1e-12);
        }
        let rep = check_certificate(&sub, &SampleBox::cube(2, -1.0, 1.0).unwrap(), 2000, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(matches!(
            region_boundary_points(&quartic_sub(3), 0.1, 8),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn quadratic_boundary_in_three_dimensions() {
        let sub =
            crate::system::make_affine_subsystem(-nalgebra::DMatrix::identity(3, 3), DVector::zeros(3), "c").unwrap();
        let pts = region_boundary_points(&sub, 0.09, 20).unwrap();
        assert_eq!(pts.len(), 20);
        for p in pts {
            assert_abs_diff_eq!(p.norm(), 0.3, epsilon = 1e-14);
        }
    }

    #[test]
    fn fd_gradient_matches_analytic() {
        let sys = example_system();
        let sub = sys.get(&"u3".into()).unwrap();
        for x in SampleBox::cube(2, -3.0, 3.0).unwrap().sample(100, 5) {
            let a = gradient(sub, &x).unwrap();
            let f = fd_gradient(sub, &x).unwrap();
            assert!((a - &f).norm() <= 1e-6 * (1.0 + f.norm()));
        }
    }
}
