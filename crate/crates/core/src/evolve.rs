//! Time integration of `∂_t p = A p`.
//!
//! Implicit Euler solves `(I - dt A) p_next = p`. Because `I - dt A` is a
//! nonsingular M-matrix with unit column sums for every `dt > 0`, each step
//! is a column-stochastic map fixing `p*`: positivity, mass and the envelope
//! `C⁻ p* <= p <= C⁺ p*` all carry over without a step-size restriction.
//! The Lie splitting is faster per step but only positive under a CFL bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostician, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{solve_tridiagonal, MMatrixLu};
use crate::model::ModelParams;
use crate::operators::{DensityField, Generator, GeneratorParts};

/// Allowed deviation of the initial mass from one.
pub const INITIAL_MASS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ImplicitEuler,
    LieSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Steps between diagnostics reports.
    pub snapshot_stride: usize,
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "t_end = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps, `t_end / dt` rounded up unless it is an integer to
    /// within round-off.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// One implicit Euler step, factorizing `I - dt A` on the spot.
pub fn step_implicit(generator: &Generator, field: &DensityField, dt: f64) -> Result<DensityField> {
    ImplicitEuler::new(generator, dt)?.step(field)
}

/// Implicit Euler with the factorization of `I - dt A` kept across steps.
#[derive(Clone, Debug)]
pub struct ImplicitEuler {
    grid: Grid,
    lu: MMatrixLu,
}

impl ImplicitEuler {
    pub fn new(generator: &Generator, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        Ok(ImplicitEuler {
            grid: *generator.grid(),
            lu: MMatrixLu::factor(generator.matrix(), 1.0, dt)?,
        })
    }

    pub fn step(&self, field: &DensityField) -> Result<DensityField> {
        if field.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                found: field.values().len(),
            });
        }
        DensityField::new(self.grid, self.lu.solve(field.values())?)
    }
}

/// Largest stable explicit transport step, `dv / max |J_v|` over the
/// voltage faces `v_k, k = 1..=n_v` of every conductance row.
///
/// `J_v` decreases in `v`, so no cell loses mass through both faces and the
/// diagonal of the transport generator is bounded by `max |J_v| / dv`.
pub fn cfl_limit(grid: &Grid, params: &ModelParams) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..grid.n_g() {
        let g = grid.g_center(j);
        for k in 1..=grid.n_v() {
            worst = worst.max(params.flux_v(grid.v_face(k), g).abs());
        }
    }
    grid.dv() / worst
}

/// Implicit conductance substep on each voltage column followed by an
/// explicit upwind transport substep.
#[derive(Clone, Debug)]
pub struct LieSplit {
    grid: Grid,
    dt: f64,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    transport: Generator,
}

impl LieSplit {
    pub fn new(parts: &GeneratorParts, dt: f64) -> Result<Self> {
        let grid = *parts.full.grid();
        let limit = cfl_limit(&grid, parts.full.params());
        if !(dt > 0.0 && dt <= limit) {
            return Err(Error::Config(format!(
                "dt = {dt} violates the transport CFL bound dt <= {limit}"
            )));
        }
        // the conductance operator is the same on every voltage column
        let fp = &parts.fokker_planck;
        let n_g = grid.n_g();
        let row = |j: usize| grid.idx(0, j);
        let mut sub = vec![0.0; n_g];
        let mut diag = vec![0.0; n_g];
        let mut sup = vec![0.0; n_g];
        for j in 0..n_g {
            diag[j] = 1.0 - dt * fp.entry(row(j), row(j));
            if j > 0 {
                sub[j] = -dt * fp.entry(row(j), row(j - 1));
            }
            if j + 1 < n_g {
                sup[j] = -dt * fp.entry(row(j), row(j + 1));
            }
        }
        Ok(LieSplit {
            grid,
            dt,
            sub,
            diag,
            sup,
            transport: parts.transport.clone(),
        })
    }

    pub fn step(&self, field: &DensityField) -> Result<DensityField> {
        let half = self.conductance_substep(field)?;
        self.transport_substep(&half)
    }

    pub fn conductance_substep(&self, field: &DensityField) -> Result<DensityField> {
        let grid = self.grid;
        let mut out = vec![0.0; grid.len()];
        let mut column = vec![0.0; grid.n_g()];
        for i in 0..grid.n_v() {
            for (j, c) in column.iter_mut().enumerate() {
                *c = field.get(i, j);
            }
            let solved = solve_tridiagonal(&self.sub, &self.diag, &self.sup, &column)?;
            for (j, x) in solved.into_iter().enumerate() {
                out[grid.idx(i, j)] = x;
            }
        }
        DensityField::new(grid, out)
    }

    pub fn transport_substep(&self, field: &DensityField) -> Result<DensityField> {
        let rates = self.transport.apply(field)?;
        let next = field
            .values()
            .iter()
            .zip(rates)
            .map(|(p, r)| p + self.dt * r)
            .collect();
        DensityField::new(self.grid, next)
    }
}

/// Either time stepper behind one interface.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Stepper {
    Implicit(ImplicitEuler),
    Split(LieSplit),
}

impl Stepper {
    pub fn new(parts: &GeneratorParts, scheme: Scheme, dt: f64) -> Result<Self> {
        Ok(match scheme {
            Scheme::ImplicitEuler => Stepper::Implicit(ImplicitEuler::new(&parts.full, dt)?),
            Scheme::LieSplit => Stepper::Split(LieSplit::new(parts, dt)?),
        })
    }

    pub fn step(&self, field: &DensityField) -> Result<DensityField> {
        match self {
            Stepper::Implicit(s) => s.step(field),
            Stepper::Split(s) => s.step(field),
        }
    }
}

/// Steps to `t_end`, calling `observe(step, time, field)` on the initial
/// field and after every step.
pub fn evolve_with(
    parts: &GeneratorParts,
    initial: DensityField,
    config: &EvolveConfig,
    mut observe: impl FnMut(usize, f64, &DensityField) -> Result<()>,
) -> Result<DensityField> {
    config.validate()?;
    let mass = initial.mass();
    if (mass - 1.0).abs() > INITIAL_MASS_TOL {
        return Err(Error::Config(format!(
            "initial density has mass {mass}, expected 1"
        )));
    }
    let stepper = Stepper::new(parts, config.scheme, config.dt)?;
    let mut field = initial;
    observe(0, 0.0, &field)?;
    for step in 1..=config.steps() {
        field = stepper.step(&field)?;
        observe(step, step as f64 * config.dt, &field)?;
    }
    Ok(field)
}

#[derive(Clone, Debug)]
pub struct EvolveOutcome {
    pub series: Vec<DiagnosticsReport>,
    pub final_field: DensityField,
}

/// Steps to `t_end` and reports diagnostics at step 0, every
/// `snapshot_stride` steps, and at the final step.
pub fn evolve_run(
    parts: &GeneratorParts,
    initial: DensityField,
    config: &EvolveConfig,
    diagnostics: &Diagnostician,
) -> Result<EvolveOutcome> {
    let last = config.steps();
    let mut series = Vec::new();
    let final_field = evolve_with(parts, initial, config, |step, time, field| {
        if step % config.snapshot_stride == 0 || step == last {
            series.push(diagnostics.report(step, time, field)?);
        }
        Ok(())
    })?;
    Ok(EvolveOutcome {
        series,
        final_field,
    })
}

/// Axis-aligned box `[v0, v1] x [g0, g1]`; a cell belongs to it when its
/// center does.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rectangle {
    pub v: [f64; 2],
    pub g: [f64; 2],
}

impl Rectangle {
    pub fn contains(&self, v: f64, g: f64) -> bool {
        (self.v[0]..=self.v[1]).contains(&v) && (self.g[0]..=self.g[1]).contains(&g)
    }

    fn mask(&self, grid: &Grid) -> Result<Vec<bool>> {
        let mut mask = Vec::with_capacity(grid.len());
        for j in 0..grid.n_g() {
            for i in 0..grid.n_v() {
                mask.push(self.contains(grid.v_center(i), grid.g_center(j)));
            }
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Config(format!(
                "rectangle {self:?} contains no cell center"
            )));
        }
        Ok(mask)
    }
}

/// Initial-condition library.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// The stationary density itself.
    Steady {},
    Uniform {},
    /// Normalized indicator of a box.
    Indicator {
        rect: Rectangle,
    },
    /// `h = p/p*` equal to `c_plus` on a box and to the constant that
    /// restores unit mass outside it, so `p⁰ <= c_plus p*` is exact.
    Envelope {
        c_plus: f64,
        rect: Rectangle,
    },
    /// `M(g)` times a Gaussian bump in `v`, normalized.
    MaxwellianBump {
        center: f64,
        width: f64,
    },
    /// `h = p/p*` drawn cell-wise in `[0, c_plus]` from the run seed, then
    /// shifted to unit mass without leaving `[0, c_plus]`.
    RandomEnvelope {
        c_plus: f64,
    },
}

impl InitialCondition {
    pub fn build(
        &self,
        reference: &DensityField,
        params: &ModelParams,
        seed: u64,
    ) -> Result<DensityField> {
        let grid = *reference.grid();
        match *self {
            InitialCondition::Steady {} => Ok(reference.clone()),
            InitialCondition::Uniform {} => Ok(DensityField::uniform(grid)),
            InitialCondition::Indicator { rect } => {
                let mask = rect.mask(&grid)?;
                let values = mask
                    .into_iter()
                    .map(|m| if m { 1.0 } else { 0.0 })
                    .collect();
                DensityField::new(grid, values)?.normalized()
            }
            InitialCondition::Envelope { c_plus, rect } => {
                envelope_indicator(reference, c_plus, &rect)
            }
            InitialCondition::MaxwellianBump { center, width } => {
                if !(width > 0.0) {
                    return Err(Error::Config(format!(
                        "bump width must be positive, got {width}"
                    )));
                }
                DensityField::from_fn(grid, |v, g| {
                    params.maxwellian(g) * (-(v - center).powi(2) / (2.0 * width * width)).exp()
                })?
                .normalized()
            }
            InitialCondition::RandomEnvelope { c_plus } => {
                random_envelope(reference, c_plus, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        }
    }
}

fn check_c_plus(c_plus: f64) -> Result<()> {
    if !(c_plus >= 1.0 && c_plus.is_finite()) {
        return Err(Error::Config(format!(
            "c_plus must be at least 1, got {c_plus}"
        )));
    }
    Ok(())
}

/// `p⁰ = c_plus p*` on the box and `c_out p*` outside, with
/// `c_out = (1 - c_plus m) / (1 - m)` and `m` the `p*`-mass of the box.
pub fn envelope_indicator(
    reference: &DensityField,
    c_plus: f64,
    rect: &Rectangle,
) -> Result<DensityField> {
    check_c_plus(c_plus)?;
    let grid = *reference.grid();
    let mask = rect.mask(&grid)?;
    let inside: f64 = reference
        .values()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .sum::<f64>()
        * grid.cell_area();
    if c_plus * inside > 1.0 || inside >= 1.0 {
        return Err(Error::Config(format!(
            "box holds stationary mass {inside}, too much for c_plus = {c_plus}"
        )));
    }
    let c_out = (1.0 - c_plus * inside) / (1.0 - inside);
    let values = reference
        .values()
        .iter()
        .zip(&mask)
        .map(|(p, &m)| if m { c_plus * p } else { c_out * p })
        .collect();
    DensityField::new(grid, values)
}

/// Random `p⁰ = h p*` with `0 <= h <= c_plus` and unit mass.
pub fn random_envelope<R: Rng>(
    reference: &DensityField,
    c_plus: f64,
    rng: &mut R,
) -> Result<DensityField> {
    check_c_plus(c_plus)?;
    let grid = *reference.grid();
    let mut h: Vec<f64> = (0..grid.len()).map(|_| c_plus * rng.gen::<f64>()).collect();
    let mass = |h: &[f64]| {
        h.iter()
            .zip(reference.values())
            .map(|(h, p)| h * p)
            .sum::<f64>()
            * grid.cell_area()
    };
    let m = mass(&h);
    if m > 1.0 {
        h.iter_mut().for_each(|x| *x /= m);
    } else {
        let t = (1.0 - m) / (c_plus - m);
        h.iter_mut().for_each(|x| *x += t * (c_plus - *x));
    }
    let values = h
        .iter()
        .zip(reference.values())
        .map(|(h, p)| h * p)
        .collect();
    DensityField::new(grid, values)
}
