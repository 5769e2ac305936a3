//! Normalized stationary density of the discrete generator.
//!
//! Two independent routes: shift-invert power iteration on `σI - A`
//! (primary), and marching the implicit Euler scheme to stationarity
//! (cross-check).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MMatrixLu;
use crate::operators::{DensityField, Generator};

/// Relative shift used by the null-space solver, times `max |A_ii|`.
pub const RELATIVE_SHIFT: f64 = 1e-8;
/// Inverse iteration also stops only once no cell moves by more than this
/// relative amount between iterates, so tail cells far below the peak are
/// converged too.
pub const CELLWISE_TOL: f64 = 1e-12;
/// Cells below `-NEGATIVITY_TOL * max p` signal an assembly bug.
pub const NEGATIVITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyMethod {
    Nullspace,
    Marching,
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub density: DensityField,
    /// `max |A p*| / max p*`.
    pub residual: f64,
    pub method: SteadyMethod,
    pub iterations: usize,
}

/// `max |A p| / max p`.
pub fn scaled_residual(generator: &Generator, field: &DensityField) -> Result<f64> {
    let rates = generator.apply(field)?;
    let worst = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(worst / field.max())
}

fn normalize_mass(values: &mut [f64], cell_area: f64) -> Result<()> {
    let mass = values.iter().sum::<f64>() * cell_area;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Structural(format!("iterate has mass {mass}")));
    }
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

fn checked_density(generator: &Generator, values: Vec<f64>) -> Result<DensityField> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (argmin, min) =
        values
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
            );
    if !max.is_finite() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Structural(
            "non-finite cell in stationary density".into(),
        ));
    }
    if min < -NEGATIVITY_TOL * max {
        return Err(Error::Structural(format!(
            "stationary density is negative ({min:e}) at cell {argmin}"
        )));
    }
    if !(min > 0.0) {
        return Err(Error::Structural(format!(
            "stationary density is not strictly positive (cell {argmin} = {min:e})"
        )));
    }
    DensityField::new(*generator.grid(), values)
}

/// Shift-invert power iteration from the uniform density.
pub fn solve_steady_nullspace(
    generator: &Generator,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(Error::Config(format!(
            "steady tolerance must lie in (0, 1e-6], got {tol}"
        )));
    }
    let grid = *generator.grid();
    let shift = RELATIVE_SHIFT * generator.max_abs_diagonal();
    let lu = MMatrixLu::factor(generator.matrix(), shift, 1.0)?;
    let mut current = DensityField::uniform(grid).into_values();
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let mut next = lu.solve(&current)?;
        normalize_mass(&mut next, grid.cell_area())?;
        let change = next
            .iter()
            .zip(&current)
            .fold(0.0f64, |m, (a, b)| m.max(((a - b) / a).abs()));
        current = next;
        let field = DensityField::from_raw(grid, current.clone());
        residual = scaled_residual(generator, &field)?;
        if residual <= tol && change <= CELLWISE_TOL {
            return Ok(SteadyState {
                density: checked_density(generator, current)?,
                residual,
                method: SteadyMethod::Nullspace,
                iterations: iteration,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Implicit Euler from the uniform density until the change per unit time,
/// scaled by `max p`, drops below `tol`.
pub fn solve_steady_marching(
    generator: &Generator,
    dt: f64,
    tol: f64,
    max_steps: usize,
) -> Result<SteadyState> {
    let start = DensityField::uniform(*generator.grid());
    solve_steady_marching_from(generator, start, dt, tol, max_steps)
}

pub fn solve_steady_marching_from(
    generator: &Generator,
    start: DensityField,
    dt: f64,
    tol: f64,
    max_steps: usize,
) -> Result<SteadyState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "stationarity bound must be positive, got {tol}"
        )));
    }
    let grid = *generator.grid();
    let lu = MMatrixLu::factor(generator.matrix(), 1.0, dt)?;
    let mut current = start.into_values();
    let mut last_change = f64::INFINITY;
    for step in 1..=max_steps {
        let next = lu.solve(&current)?;
        let max = next.iter().copied().fold(0.0, f64::max);
        last_change = next
            .iter()
            .zip(&current)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / (dt * max);
        current = next;
        if last_change <= tol {
            let field = DensityField::from_raw(grid, current.clone());
            let residual = scaled_residual(generator, &field)?;
            return Ok(SteadyState {
                density: checked_density(generator, current)?,
                residual,
                method: SteadyMethod::Marching,
                iterations: step,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_steps,
        residual: last_change,
    })
}

/// Discrete normalizer `Z_d = Σ_j M(g_j) dg`.
pub fn discrete_normalizer(generator: &Generator) -> f64 {
    let grid = generator.grid();
    let params = generator.params();
    (0..grid.n_g())
        .map(|j| params.maxwellian(grid.g_center(j)))
        .sum::<f64>()
        * grid.dg()
}
