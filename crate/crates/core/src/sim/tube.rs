use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::{check_eps, region_boundary_points};
use crate::sim::integrate;
use crate::system::{Label, SwitchedSystem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeSlice {
    pub t: f64,
    #[serde(serialize_with = "ser_points")]
    pub points: Vec<DVector<f64>>,
}

fn ser_points<S: serde::Serializer>(pts: &[DVector<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(pts.iter().map(|p| p.iter().copied().collect::<Vec<f64>>()))
}

/// Images of `boundary_count` boundary points of `N^ε_from` under the flow of
/// `to`, one slice per time in `t_grid` (times measured from the switch).
pub fn tube_sample(
    system: &SwitchedSystem,
    from: &Label,
    to: &Label,
    eps: f64,
    t_grid: &[f64],
    boundary_count: usize,
    step: f64,
) -> Result<Vec<TubeSlice>> {
    check_eps(eps)?;
    let (src, dst) = (system.get(from)?, system.get(to)?);
    if boundary_count < 3 {
        return Err(Error::InvalidArgument(format!(
            "boundary_count must be at least 3, got {boundary_count}"
        )));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "tube times must be nonnegative and strictly increasing".into(),
        ));
    }
    let mut current = region_boundary_points(src, eps, boundary_count)?;
    let mut prev = 0.0;
    let mut slices = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if t > prev {
            current = current
                .iter()
                .map(|x| Ok(integrate(dst, x, prev, t, step)?.final_state().clone()))
                .collect::<Result<Vec<_>>>()?;
        }
        slices.push(TubeSlice {
            t,
            points: current.clone(),
        });
        prev = t;
    }
    Ok(slices)
}
