//! Discrete generator of the voltage-conductance dynamics.
//!
//! The density evolves as `dp/dt = A p` with `A = T + F`:
//!
//! * `T` is first-order upwind transport in `v` along each conductance row,
//!   with face fluxes `J_v(v_face, g_j)`. Rows below the firing threshold
//!   carry zero flux through both voltage boundaries; rows above it send
//!   the outflow at `V_F` back in at `v = 0` of the same row.
//! * `F` is the exponentially fitted (Scharfetter-Gummel / Chang-Cooper)
//!   discretization of `(a/σ_E) ∂_g [M ∂_g (p / M)]` along each voltage
//!   column with zero flux at `g = 0` and `g = G_max`.
//!
//! Every off-diagonal entry is nonnegative and every column sums to zero,
//! so `A` generates a positivity- and mass-preserving Markov semigroup.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::CsrMatrix;
use crate::model::ModelParams;

/// Which boundary rule to apply at the firing potential for rows above the
/// threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FiringBoundary {
    /// Outflow at `V_F` re-enters at `v = 0` with equal flux.
    #[default]
    Reinjection,
    /// Outflow at `V_F` leaves the domain. Does not conserve mass; used to
    /// exercise the structure checks.
    Absorbing,
}

/// Sparse Markov generator on a grid.
#[derive(Clone, Debug)]
pub struct Generator {
    grid: Grid,
    params: ModelParams,
    matrix: CsrMatrix,
}

impl Generator {
    pub fn from_matrix(grid: Grid, params: ModelParams, matrix: CsrMatrix) -> Result<Generator> {
        if matrix.dim() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: matrix.dim(),
            });
        }
        Ok(Generator {
            grid,
            params,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix.get(row, col)
    }

    /// Sum of two generators on the same grid.
    pub fn sum(&self, other: &Generator) -> Result<Generator> {
        if self.grid != other.grid {
            return Err(Error::Structural(
                "generators live on different grids".into(),
            ));
        }
        Generator::from_matrix(self.grid, self.params, self.matrix.add(&other.matrix)?)
    }

    /// Rate field `A p`.
    pub fn apply(&self, field: &DensityField) -> Result<Vec<f64>> {
        if field.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: field.values().len(),
            });
        }
        self.matrix.matvec(field.values())
    }

    pub fn apply_slice(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(values)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.matrix.column_sums()
    }

    pub fn max_abs_column_sum(&self) -> f64 {
        self.column_sums()
            .into_iter()
            .fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Most negative off-diagonal entry, or zero when the matrix is Metzler.
    pub fn min_off_diagonal(&self) -> f64 {
        self.matrix
            .entries()
            .filter(|&(r, c, _)| r != c)
            .fold(0.0, |m, (_, _, v)| m.min(v))
    }

    pub fn is_metzler(&self) -> bool {
        self.min_off_diagonal() >= 0.0
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        self.matrix
            .diagonal()
            .into_iter()
            .fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Largest number of stored off-diagonal entries in any row or column.
    pub fn max_off_diagonal_degree(&self) -> usize {
        let n = self.dim();
        let mut rows = vec![0usize; n];
        let mut cols = vec![0usize; n];
        for (r, c, _) in self.matrix.entries() {
            if r != c {
                rows[r] += 1;
                cols[c] += 1;
            }
        }
        rows.into_iter().chain(cols).max().unwrap_or(0)
    }

    /// Coordinate text dump for external inspection.
    pub fn write_coo<W: Write>(&self, out: W) -> Result<()> {
        self.matrix.write_coo(out)
    }
}

/// The two halves of the generator plus their sum.
#[derive(Clone, Debug)]
pub struct GeneratorParts {
    pub transport: Generator,
    pub fokker_planck: Generator,
    pub full: Generator,
}

impl GeneratorParts {
    pub fn assemble(grid: &Grid, params: &ModelParams) -> Result<GeneratorParts> {
        let transport = assemble_transport_v(grid, params)?;
        let fokker_planck = assemble_fokker_planck_g(grid, params)?;
        let full = transport.sum(&fokker_planck)?;
        Ok(GeneratorParts {
            transport,
            fokker_planck,
            full,
        })
    }
}

/// Nonnegative cell-averaged density on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    /// Wraps cell values in flat order. Rejects negative or non-finite
    /// entries and length mismatches.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<DensityField> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Structural(format!(
                "cell {k} holds invalid density {v}"
            )));
        }
        Ok(DensityField { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> DensityField {
        debug_assert_eq!(values.len(), grid.len());
        DensityField { grid, values }
    }

    pub fn zeros(grid: Grid) -> DensityField {
        DensityField::from_raw(grid, vec![0.0; grid.len()])
    }

    /// Uniform probability density.
    pub fn uniform(grid: Grid) -> DensityField {
        let value = 1.0 / (grid.v_f() * grid.g_max());
        DensityField::from_raw(grid, vec![value; grid.len()])
    }

    /// Samples `f(v, g)` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<DensityField> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.n_g() {
            for i in 0..grid.n_v() {
                values.push(f(grid.v_center(i), grid.g_center(j)));
            }
        }
        DensityField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// `Σ p_ij dv dg`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rescaled to unit mass.
    pub fn normalized(&self) -> Result<DensityField> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Structural(format!(
                "cannot normalize a field of mass {m}"
            )));
        }
        Ok(self.scaled(1.0 / m))
    }

    pub fn scaled(&self, factor: f64) -> DensityField {
        DensityField::from_raw(self.grid, self.values.iter().map(|v| v * factor).collect())
    }

    /// Largest absolute cell difference.
    pub fn max_abs_diff(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Upwind transport in `v` with the firing boundary rule.
pub fn assemble_transport_v(grid: &Grid, params: &ModelParams) -> Result<Generator> {
    assemble_transport_v_with(grid, params, FiringBoundary::Reinjection)
}

pub fn assemble_transport_v_with(
    grid: &Grid,
    params: &ModelParams,
    boundary: FiringBoundary,
) -> Result<Generator> {
    params.validate()?;
    let n_v = grid.n_v();
    let inv_dv = 1.0 / grid.dv();
    let g_f = params.g_threshold();
    let mut t = Vec::with_capacity(4 * grid.len());
    for j in 0..grid.n_g() {
        let g = grid.g_center(j);
        let cell = |i: usize| grid.idx(i, j);
        for k in 1..n_v {
            let flux = params.flux_v(grid.v_face(k), g);
            let rate = flux.abs() * inv_dv;
            if flux > 0.0 {
                t.push((cell(k), cell(k - 1), rate));
                t.push((cell(k - 1), cell(k - 1), -rate));
            } else if flux < 0.0 {
                t.push((cell(k - 1), cell(k), rate));
                t.push((cell(k), cell(k), -rate));
            }
        }
        if g > g_f {
            let rate = params.flux_v(params.v_f, g) * inv_dv;
            let last = cell(n_v - 1);
            t.push((last, last, -rate));
            if boundary == FiringBoundary::Reinjection {
                t.push((cell(0), last, rate));
            }
        }
    }
    Generator::from_matrix(*grid, *params, CsrMatrix::from_triplets(grid.len(), t))
}

/// `B(x) = x / (e^x - 1)`, with `B(0) = 1`.
pub fn bernoulli(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x / x.exp_m1()
    }
}

/// Exponentially fitted conductance operator. Across the face between rows
/// `j` and `j + 1` the flux is `(D/dg) [B(-w) p_j - B(w) p_{j+1}]` with
/// `D = a/σ_E` and `w = (g_in - g_face) dg / a`. Because the drift is linear
/// in `g`, `e^w = M(g_{j+1}) / M(g_j)` holds exactly and the sampled
/// Maxwellian is annihilated.
pub fn assemble_fokker_planck_g(grid: &Grid, params: &ModelParams) -> Result<Generator> {
    params.validate()?;
    let dg = grid.dg();
    let coef = params.a / params.sigma_e / (dg * dg);
    let mut t = Vec::with_capacity(4 * grid.len());
    for face in 1..grid.n_g() {
        let w = (params.g_in - grid.g_face(face)) * dg / params.a;
        let up = coef * bernoulli(-w);
        let down = coef * bernoulli(w);
        let (lo, hi) = (face - 1, face);
        for i in 0..grid.n_v() {
            let (a, b) = (grid.idx(i, lo), grid.idx(i, hi));
            t.push((b, a, up));
            t.push((a, a, -up));
            t.push((a, b, down));
            t.push((b, b, -down));
        }
    }
    Generator::from_matrix(*grid, *params, CsrMatrix::from_triplets(grid.len(), t))
}

/// Full generator `T + F`.
pub fn assemble_full(grid: &Grid, params: &ModelParams) -> Result<Generator> {
    assemble_transport_v(grid, params)?.sum(&assemble_fokker_planck_g(grid, params)?)
}

/// Total reinjected flux: the upwind outflow through `v = V_F` summed over
/// rows above the threshold, times `dg`.
pub fn firing_flux(field: &DensityField, grid: &Grid, params: &ModelParams) -> f64 {
    let g_f = params.g_threshold();
    let last = grid.n_v() - 1;
    (0..grid.n_g())
        .filter(|&j| grid.g_center(j) > g_f)
        .map(|j| params.flux_v(params.v_f, grid.g_center(j)) * field.get(last, j))
        .sum::<f64>()
        * grid.dg()
}

/// Sampled Maxwellian `M(g_j)` repeated along every voltage column.
pub fn maxwellian_field(grid: &Grid, params: &ModelParams) -> Vec<f64> {
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.n_g() {
        let m = params.maxwellian(grid.g_center(j));
        values.extend(std::iter::repeat_n(m, grid.n_v()));
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n_v: usize, n_g: usize) -> (Grid, ModelParams) {
        let p = ModelParams::default();
        (Grid::build(&p, n_v, n_g, 8.0).unwrap(), p)
    }

    #[test]
    fn rows_above_threshold_are_cyclic_and_kill_constants() {
        let (grid, p) = setup(16, 16);
        let t = assemble_transport_v(&grid, &p).unwrap();
        let ones = vec![1.0; grid.len()];
        let out = t.apply_slice(&ones).unwrap();
        let g_f = p.g_threshold();
        for j in 0..grid.n_g() {
            let g = grid.g_center(j);
            let row: Vec<f64> = (0..16).map(|i| out[grid.idx(i, j)]).collect();
            if g > g_f {
                // constant data on a cyclic upwind row: in = out in every cell
                // up to the linear variation of J in v
                let mass: f64 = row.iter().sum();
                assert!(mass.abs() < 1e-12);
                let rate = p.flux_v(p.v_f, g) / grid.dv();
                assert_eq!(t.entry(grid.idx(0, j), grid.idx(15, j)), rate);
                assert_eq!(t.entry(grid.idx(15, j), grid.idx(15, j)), -rate);
            } else {
                assert_eq!(t.entry(grid.idx(0, j), grid.idx(15, j)), 0.0);
            }
        }
    }

    #[test]
    fn constant_flux_row_is_exact_cyclic_shift() {
        // J_v independent of v requires g_L + g = 0; emulate by checking that
        // the row action on a constant equals (J_left - J_right)/dv per cell.
        let (grid, p) = setup(16, 16);
        let t = assemble_transport_v(&grid, &p).unwrap();
        let j = 12;
        let g = grid.g_center(j);
        let mut x = vec![0.0; grid.len()];
        for i in 0..16 {
            x[grid.idx(i, j)] = 1.0;
        }
        let out = t.apply_slice(&x).unwrap();
        for i in 0..16 {
            let left = if i == 0 {
                p.flux_v(p.v_f, g)
            } else {
                p.flux_v(grid.v_face(i), g)
            };
            let right = p.flux_v(grid.v_face(i + 1), g);
            let expect = (left - right) / grid.dv();
            assert!((out[grid.idx(i, j)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn four_cell_row_matches_hand_assembled_matrix() {
        // params with g_F = 1; row at g = 3 > g_F, V_F = 1, 4 cells of 0.25
        let p = ModelParams::default();
        let grid = Grid::with_extent(&p, 8, 8, 9.0).unwrap();
        // use a 4-cell oracle on an 8-cell row by checking the generic rule
        let j = 2; // g = 2.5 * 9/8 = 2.8125
        let g = grid.g_center(j);
        let t = assemble_transport_v(&grid, &p).unwrap();
        let n = grid.n_v();
        let dv = grid.dv();
        // hand matrix: column i has -J(v_{i+1})/dv on the diagonal and
        // +J(v_{i+1})/dv in row i+1 (cyclic for the last cell)
        for i in 0..n {
            let out_flux = p.flux_v((i + 1) as f64 * dv, g) / dv;
            let dst = (i + 1) % n;
            assert!((t.entry(grid.idx(i, j), grid.idx(i, j)) + out_flux).abs() < 1e-13);
            assert!((t.entry(grid.idx(dst, j), grid.idx(i, j)) - out_flux).abs() < 1e-13);
        }
        // delta at cell 0 moves to cell 1 at rate J(dv, g)/dv
        let mut delta = vec![0.0; grid.len()];
        delta[grid.idx(0, j)] = 1.0;
        let out = t.apply_slice(&delta).unwrap();
        let r = (-dv + g * (2.0 - dv)) / dv;
        assert!((out[grid.idx(0, j)] + r).abs() < 1e-12);
        assert!((out[grid.idx(1, j)] - r).abs() < 1e-12);
        assert_eq!(out.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn fokker_planck_three_row_toy_matches_hand_matrix() {
        // one column of 3 rows centred on g_in: faces at dg and 2dg
        let p = ModelParams {
            g_in: 1.5,
            a: 0.5,
            ..ModelParams::default()
        };
        // 8 rows required by the grid; the first three faces of the column
        // follow the same formula, so check rows 0..3 against hand values
        let grid = Grid::with_extent(&p, 8, 8, 8.0).unwrap();
        let f = assemble_fokker_planck_g(&grid, &p).unwrap();
        let dg = 1.0;
        let d = 0.5;
        let b = |x: f64| if x == 0.0 { 1.0 } else { x / (x.exp() - 1.0) };
        // face 1 at g = 1: w = (1.5 - 1) * 1 / 0.5 = 1
        // face 2 at g = 2: w = (1.5 - 2) * 1 / 0.5 = -1
        let (w1, w2) = (1.0, -1.0);
        let hand = [
            [-d * b(-w1), d * b(w1), 0.0],
            [d * b(-w1), -d * b(w1) - d * b(-w2), d * b(w2)],
            [0.0, d * b(-w2), f64::NAN],
        ];
        let _ = dg;
        for r in 0..3 {
            for c in 0..3 {
                if hand[r][c].is_nan() {
                    continue;
                }
                let got = f.entry(grid.idx(0, r), grid.idx(0, c));
                assert!(
                    (got - hand[r][c]).abs() < 1e-14,
                    "({r},{c}) {got} vs {}",
                    hand[r][c]
                );
            }
        }
        // e = 1/(e-1) = 0.58197670686932..., b(-1) = e/(e-1) = 1.58197670686932...
        assert!((b(1.0) - 0.581_976_706_869_326_4).abs() < 1e-15);
    }

    #[test]
    fn maxwellian_is_annihilated() {
        for n in [16, 32, 64] {
            let (grid, p) = setup(n, n);
            let f = assemble_fokker_planck_g(&grid, &p).unwrap();
            let m = maxwellian_field(&grid, &p);
            let out = f.apply_slice(&m).unwrap();
            let worst = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(worst <= 1e-13, "n = {n}: {worst:e}");
        }
    }

    #[test]
    fn full_generator_structure() {
        let (grid, p) = setup(8, 8);
        let a = assemble_full(&grid, &p).unwrap();
        assert!(a.is_metzler());
        assert!(a.max_abs_column_sum() <= 1e-12);
        let parts = GeneratorParts::assemble(&grid, &p).unwrap();
        assert!(parts.transport.max_abs_column_sum() <= 1e-12);
        assert!(parts.fokker_planck.max_abs_column_sum() <= 1e-12);
        // 2 transport + 2 conductance neighbours + 1 reinjection coupling
        assert!(a.max_off_diagonal_degree() <= 5);
    }

    #[test]
    fn full_action_on_maxwellian_is_pure_transport() {
        let (grid, p) = setup(16, 16);
        let parts = GeneratorParts::assemble(&grid, &p).unwrap();
        let m = maxwellian_field(&grid, &p);
        let full = parts.full.apply_slice(&m).unwrap();
        let tr = parts.transport.apply_slice(&m).unwrap();
        for (a, b) in full.iter().zip(&tr) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_matches_dense_oracle_and_is_mass_neutral() {
        let (grid, p) = setup(8, 8);
        let a = assemble_full(&grid, &p).unwrap();
        let mut dense = vec![vec![0.0; 64]; 64];
        for (r, c, v) in a.matrix().entries() {
            dense[r][c] = v;
        }
        let field =
            DensityField::from_fn(grid, |v, g| 1.0 + v * g + (3.0 * g).sin().abs()).unwrap();
        let out = a.apply(&field).unwrap();
        for r in 0..64 {
            let expect: f64 = (0..64).map(|c| dense[r][c] * field.values()[c]).sum();
            assert!((out[r] - expect).abs() < 1e-11);
        }
        let zero = a.apply(&DensityField::zeros(grid)).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));

        let (g16, _) = setup(16, 16);
        let a16 = assemble_full(&g16, &p).unwrap();
        let f16 = DensityField::from_fn(g16, |v, g| (v + 0.1) * (-g).exp()).unwrap();
        let rates = a16.apply(&f16).unwrap();
        let total: f64 = rates.iter().sum::<f64>() * g16.cell_area();
        assert!(total.abs() <= 1e-12);
    }

    #[test]
    fn apply_rejects_foreign_grid() {
        let (grid, p) = setup(8, 8);
        let (other, _) = setup(16, 8);
        let a = assemble_full(&grid, &p).unwrap();
        assert!(a.apply(&DensityField::uniform(other)).is_err());
        assert!(a.apply_slice(&[1.0; 3]).is_err());
    }

    #[test]
    fn absorbing_boundary_breaks_column_sums() {
        let (grid, p) = setup(8, 8);
        let t = assemble_transport_v_with(&grid, &p, FiringBoundary::Absorbing).unwrap();
        assert!(t.max_abs_column_sum() > 1e-3);
    }

    #[test]
    fn firing_flux_cases() {
        let (grid, p) = setup(16, 90);
        // below threshold only
        let low = DensityField::from_fn(grid, |_, g| if g < 1.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(firing_flux(&low, &grid, &p), 0.0);
        // uniform field: hand summation of J(V_F, g_j) dg over g_j > g_F
        let u = DensityField::uniform(grid);
        let value = u.values()[0];
        // rows 10..90 have centres (j + 0.5) 0.1 > 1, J(1, g) = g - 1
        let hand: f64 = (10..90)
            .map(|j| ((j as f64 + 0.5) * 0.1 - 1.0) * 0.1)
            .sum::<f64>()
            * value;
        // closed form of the sum: 0.1 * sum_{m=0}^{79} (0.1 m + 0.05) = 0.1 * (316 + 4) = 32
        assert!((hand - 32.0 * value).abs() < 1e-12);
        assert!((firing_flux(&u, &grid, &p) - hand).abs() < 1e-12);
    }

    #[test]
    fn density_field_validation() {
        let (grid, _) = setup(8, 8);
        assert!(DensityField::new(grid, vec![1.0; 63]).is_err());
        let mut v = vec![1.0; 64];
        v[5] = -1e-30;
        assert!(DensityField::new(grid, v).is_err());
        assert!(DensityField::new(grid, vec![f64::NAN; 64]).is_err());
        let u = DensityField::uniform(grid);
        assert!((u.mass() - 1.0).abs() < 1e-14);
    }
}
