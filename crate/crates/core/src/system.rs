//! Subsystems, their Lyapunov certificates and the switched system that
//! collects them.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mode identifier. Labels are opaque: no arithmetic is ever done on them.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Label(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_owned())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label(s)
    }
}

/// Power-law comparison function `s ↦ c·s^p` on `s ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassKFn {
    pub c: f64,
    pub p: f64,
}

impl ClassKFn {
    pub fn new(c: f64, p: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0 && p.is_finite() && p > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "class-K function needs c > 0 and p > 0, got c = {c}, p = {p}"
            )));
        }
        Ok(ClassKFn { c, p })
    }

    /// `s ↦ s²`, the bound pair of the identity-weighted quadratic.
    pub fn square() -> Self {
        ClassKFn { c: 1.0, p: 2.0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if self.p == 2.0 {
            self.c * s * s
        } else {
            self.c * s.powf(self.p)
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let ratio = y / self.c;
        if self.p == 2.0 {
            ratio.sqrt()
        } else {
            ratio.powf(1.0 / self.p)
        }
    }
}

pub type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Right-hand side `f_u` of one subsystem.
#[derive(Clone)]
pub enum VectorField {
    /// `ẋ = A x + b`
    Affine {
        a: DMatrix<f64>,
        b: DVector<f64>,
    },
    Custom(FieldFn),
}

impl VectorField {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            VectorField::Affine { a, b } => a * x + b,
            VectorField::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Affine { a, b } => f.debug_struct("Affine").field("a", a).field("b", b).finish(),
            VectorField::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Lyapunov function `V_u`, always centred at the subsystem equilibrium.
#[derive(Clone)]
pub enum LyapunovFn {
    /// `(x − x_u)ᵀ P (x − x_u)`; `None` stands for `P = I`.
    Quadratic {
        weight: Option<DMatrix<f64>>,
    },
    Custom(ScalarFn),
}

impl LyapunovFn {
    pub fn identity() -> Self {
        LyapunovFn::Quadratic { weight: None }
    }

    pub fn is_identity_quadratic(&self) -> bool {
        matches!(self, LyapunovFn::Quadratic { weight: None })
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, LyapunovFn::Quadratic { .. })
    }
}

impl fmt::Debug for LyapunovFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LyapunovFn::Quadratic { weight: None } => f.write_str("Quadratic(I)"),
            LyapunovFn::Quadratic { weight: Some(p) } => f.debug_tuple("Quadratic").field(p).finish(),
            LyapunovFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// One mode `u` of the switched system together with its certificate
/// `(V_u, α_u, β_u, k_u)`.
#[derive(Debug, Clone)]
pub struct Subsystem {
    label: Label,
    field: VectorField,
    equilibrium: DVector<f64>,
    decay_rate: f64,
    alpha: ClassKFn,
    beta: ClassKFn,
    lyapunov: LyapunovFn,
}

const EQUILIBRIUM_TOL: f64 = 1e-9;

impl Subsystem {
    /// Builds a subsystem and checks its structural invariants: the
    /// equilibrium is a zero of the field, `V(x_u) = 0`, and `α ≤ β` on a
    /// logarithmic grid of radii.
    pub fn new(
        label: impl Into<Label>,
        field: VectorField,
        equilibrium: DVector<f64>,
        decay_rate: f64,
        alpha: ClassKFn,
        beta: ClassKFn,
        lyapunov: LyapunovFn,
    ) -> Result<Self> {
        let label = label.into();
        let n = equilibrium.len();
        if n == 0 {
            return Err(Error::InvalidSubsystem(format!("mode `{label}` has dimension 0")));
        }
        if !(decay_rate.is_finite() && decay_rate > 0.0) {
            return Err(Error::InvalidSubsystem(format!(
                "mode `{label}` needs a positive decay rate, got {decay_rate}"
            )));
        }
        if let VectorField::Affine { a, b } = &field {
            if a.nrows() != n || a.ncols() != n || b.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: if a.nrows() != n { a.nrows() } else { b.len() },
                });
            }
        }
        if let LyapunovFn::Quadratic { weight: Some(p) } = &lyapunov {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.nrows(),
                });
            }
        }
        let residual = field.eval(&equilibrium);
        if residual.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: residual.len(),
            });
        }
        if residual.norm() > EQUILIBRIUM_TOL {
            return Err(Error::InvalidSubsystem(format!(
                "mode `{label}`: |f(x_u)| = {:e} exceeds {EQUILIBRIUM_TOL:e}",
                residual.norm()
            )));
        }
        for j in -6..=6 {
            let s = 10f64.powi(j);
            let (lo, hi) = (alpha.eval(s), beta.eval(s));
            if lo > hi * (1.0 + 1e-12) {
                return Err(Error::InvalidSubsystem(format!(
                    "mode `{label}`: alpha({s:e}) = {lo:e} exceeds beta = {hi:e}"
                )));
            }
        }
        let sub = Subsystem {
            label,
            field,
            equilibrium,
            decay_rate,
            alpha,
            beta,
            lyapunov,
        };
        let v0 = sub.lyapunov_value(&sub.equilibrium);
        if v0.abs() > 1e-12 {
            return Err(Error::InvalidSubsystem(format!(
                "mode `{}`: V(x_u) = {v0:e} is not zero",
                sub.label
            )));
        }
        Ok(sub)
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn equilibrium(&self) -> &DVector<f64> {
        &self.equilibrium
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn alpha(&self) -> ClassKFn {
        self.alpha
    }

    pub fn beta(&self) -> ClassKFn {
        self.beta
    }

    pub fn lyapunov(&self) -> &LyapunovFn {
        &self.lyapunov
    }

    pub fn dimension(&self) -> usize {
        self.equilibrium.len()
    }

    /// Same subsystem with a different claimed decay rate. Used to probe
    /// certificates; nothing checks that the new rate is valid.
    pub fn with_decay_rate(&self, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidArgument(format!("decay rate must be positive, got {k}")));
        }
        Ok(Subsystem {
            decay_rate: k,
            ..self.clone()
        })
    }

    pub fn with_label(&self, label: impl Into<Label>) -> Self {
        Subsystem {
            label: label.into(),
            ..self.clone()
        }
    }

    pub fn eval_field(&self, x: &DVector<f64>) -> DVector<f64> {
        self.field.eval(x)
    }

    /// `V_u(x)` without dimension checks; see [`crate::lyapunov::v_eval`].
    pub fn lyapunov_value(&self, x: &DVector<f64>) -> f64 {
        match &self.lyapunov {
            LyapunovFn::Quadratic { weight: None } => (x - &self.equilibrium).norm_squared(),
            LyapunovFn::Quadratic { weight: Some(p) } => {
                let d = x - &self.equilibrium;
                d.dot(&(p * &d))
            }
            LyapunovFn::Custom(v) => v(x),
        }
    }
}

/// Builds `ẋ = A x + b` with `V = ‖x − x_u‖²`, `α = β = s²` and the
/// tightest decay rate for that `V`, `k = −λ_max(A + Aᵀ)`.
pub fn make_affine_subsystem(a: DMatrix<f64>, b: DVector<f64>, label: impl Into<Label>) -> Result<Subsystem> {
    let n = b.len();
    check_square(&a, n)?;
    let equilibrium = affine_equilibrium(&a, &b)?;
    let sym = &a + a.transpose();
    let lambda_max = max_symmetric_eigenvalue(&sym);
    if lambda_max >= 0.0 {
        return Err(Error::NotContracting(lambda_max));
    }
    Subsystem::new(
        label,
        VectorField::Affine { a, b },
        equilibrium,
        -lambda_max,
        ClassKFn::square(),
        ClassKFn::square(),
        LyapunovFn::identity(),
    )
}

/// Affine subsystem with `V = (x − x_u)ᵀ P (x − x_u)`. The bounds `α`, `β`
/// must be supplied by the caller; the decay rate is the tightest one,
/// `−λ_max(L⁻¹ (AᵀP + PA) L⁻ᵀ)` with `P = L Lᵀ`.
pub fn make_weighted_affine_subsystem(
    a: DMatrix<f64>,
    b: DVector<f64>,
    weight: DMatrix<f64>,
    alpha: ClassKFn,
    beta: ClassKFn,
    label: impl Into<Label>,
) -> Result<Subsystem> {
    let n = b.len();
    check_square(&a, n)?;
    check_square(&weight, n)?;
    if (&weight - weight.transpose()).amax() > 1e-12 * (1.0 + weight.amax()) {
        return Err(Error::InvalidArgument("weight matrix P must be symmetric".into()));
    }
    let chol = weight
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("weight matrix P must be positive definite".into()))?;
    let equilibrium = affine_equilibrium(&a, &b)?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("weight matrix P is ill-conditioned".into()))?;
    let lyap = a.transpose() * &weight + &weight * &a;
    let scaled = &l_inv * lyap * l_inv.transpose();
    let scaled = (&scaled + scaled.transpose()) * 0.5;
    let lambda_max = max_symmetric_eigenvalue(&scaled);
    if lambda_max >= 0.0 {
        return Err(Error::NotContracting(lambda_max));
    }
    Subsystem::new(
        label,
        VectorField::Affine { a, b },
        equilibrium,
        -lambda_max,
        alpha,
        beta,
        LyapunovFn::Quadratic { weight: Some(weight) },
    )
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    Ok(())
}

fn affine_equilibrium(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= 1e-13 * scale.powi(a.nrows() as i32) {
        return Err(Error::SingularMatrix);
    }
    let sol = lu.solve(b).ok_or(Error::SingularMatrix)?;
    Ok(-sol)
}

pub(crate) fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Collection of subsystems of a common dimension, keyed by label.
#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    dimension: usize,
    subsystems: IndexMap<Label, Subsystem>,
}

impl SwitchedSystem {
    pub fn new(subsystems: impl IntoIterator<Item = Subsystem>) -> Result<Self> {
        let mut map = IndexMap::new();
        let mut dimension = None;
        for sub in subsystems {
            let n = sub.dimension();
            match dimension {
                None => dimension = Some(n),
                Some(d) if d != n => return Err(Error::DimensionMismatch { expected: d, got: n }),
                _ => {}
            }
            let label = sub.label().clone();
            if map.insert(label.clone(), sub).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate mode label `{label}`")));
            }
        }
        let dimension =
            dimension.ok_or_else(|| Error::InvalidArgument("a switched system needs at least one subsystem".into()))?;
        Ok(SwitchedSystem {
            dimension,
            subsystems: map,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, label: &Label) -> Result<&Subsystem> {
        self.subsystems
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.clone()))
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.subsystems.contains_key(label)
    }

    pub fn subsystems(&self) -> impl ExactSizeIterator<Item = &Subsystem> {
        self.subsystems.values()
    }

    pub fn labels(&self) -> impl ExactSizeIterator<Item = &Label> {
        self.subsystems.keys()
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Smallest decay rate over all modes.
    pub fn min_decay_rate(&self) -> f64 {
        self.subsystems()
            .map(Subsystem::decay_rate)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The switched system of the worked example: `A = [[−1, −1], [1, −1]]`,
/// `b(u) = (u, 1)` for `u ∈ {1, 0, −1}`, labelled `u1`, `u2`, `u3`.
pub fn example_system() -> SwitchedSystem {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -1.0]);
    let subs = [("u1", 1.0), ("u2", 0.0), ("u3", -1.0)].map(|(label, u)| {
        make_affine_subsystem(a.clone(), DVector::from_vec(vec![u, 1.0]), label)
            .expect("example subsystems are contracting")
    });
    SwitchedSystem::new(subs).expect("example labels are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ex_a() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -1.0])
    }

    #[test]
    fn class_k_roundtrip() {
        let f = ClassKFn::new(2.5, 1.7).unwrap();
        assert_eq!(f.eval(0.0), 0.0);
        for j in -6..=6 {
            let s = 10f64.powi(j) * 1.3;
            let back = f.inverse(f.eval(s));
            assert!(((back - s) / s).abs() < 1e-12, "s = {s}, back = {back}");
        }
        assert!(ClassKFn::new(0.0, 1.0).is_err());
        assert!(ClassKFn::new(1.0, -1.0).is_err());
    }

    #[test]
    fn affine_equilibria_match_family_formula() {
        for (u, expect) in [(1.0, [0.0, 1.0]), (-1.0, [-1.0, 0.0]), (0.0, [-0.5, 0.5])] {
            let sub = make_affine_subsystem(ex_a(), DVector::from_vec(vec![u, 1.0]), "u").unwrap();
            assert_abs_diff_eq!(sub.equilibrium()[0], expect[0], epsilon = 1e-15);
            assert_abs_diff_eq!(sub.equilibrium()[1], expect[1], epsilon = 1e-15);
            assert_abs_diff_eq!(sub.decay_rate(), 2.0, epsilon = 1e-12);
            assert!(sub.eval_field(sub.equilibrium()).norm() <= 1e-12);
        }
    }

    #[test]
    fn negative_identity_has_rate_two() {
        let sub = make_affine_subsystem(-DMatrix::identity(2, 2), DVector::zeros(2), "0").unwrap();
        assert_eq!(sub.equilibrium(), &DVector::zeros(2));
        assert_abs_diff_eq!(sub.decay_rate(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_and_noncontracting_rejected() {
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            make_affine_subsystem(sing, DVector::zeros(2), "s"),
            Err(Error::SingularMatrix)
        ));
        // Hurwitz but not contracting in the identity metric.
        let skew = DMatrix::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -1.0]);
        assert!(matches!(
            make_affine_subsystem(skew, DVector::zeros(2), "s"),
            Err(Error::NotContracting(_))
        ));
    }

    #[test]
    fn weighted_quadratic_rate() {
        // With P = I the weighted constructor must agree with the default one.
        let sub = make_weighted_affine_subsystem(
            ex_a(),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
            ClassKFn::square(),
            ClassKFn::square(),
            "w",
        )
        .unwrap();
        assert_abs_diff_eq!(sub.decay_rate(), 2.0, epsilon = 1e-12);
        // The skew matrix above is contracting in a suitable metric.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -1.0]);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 100.0]);
        let sub = make_weighted_affine_subsystem(
            a,
            DVector::zeros(2),
            p,
            ClassKFn::new(1.0, 2.0).unwrap(),
            ClassKFn::new(100.0, 2.0).unwrap(),
            "w",
        )
        .unwrap();
        assert!(sub.decay_rate() > 0.0);
    }

    #[test]
    fn sandwich_inconsistency_rejected() {
        let res = Subsystem::new(
            "bad",
            VectorField::Affine {
                a: -DMatrix::identity(1, 1),
                b: DVector::zeros(1),
            },
            DVector::zeros(1),
            1.0,
            ClassKFn::new(2.0, 2.0).unwrap(),
            ClassKFn::square(),
            LyapunovFn::identity(),
        );
        assert!(matches!(res, Err(Error::InvalidSubsystem(_))));
    }

    #[test]
    fn system_rejects_duplicates_and_mixed_dimensions() {
        let s1 = make_affine_subsystem(ex_a(), DVector::from_vec(vec![1.0, 1.0]), "a").unwrap();
        assert!(SwitchedSystem::new([s1.clone(), s1.clone()]).is_err());
        let s3 = make_affine_subsystem(-DMatrix::identity(3, 3), DVector::zeros(3), "b").unwrap();
        assert!(matches!(
            SwitchedSystem::new([s1, s3]),
            Err(Error::DimensionMismatch { .. })
        ));
        let sys = example_system();
        assert!(matches!(sys.get(&"nope".into()), Err(Error::UnknownLabel(_))));
        assert_eq!(sys.labels().map(Label::as_str).collect::<Vec<_>>(), ["u1", "u2", "u3"]);
    }
}
