//! Numerical counterparts of the a priori estimates and Lyapunov functionals
//! of the model: the Gaussian `g`-marginal, the weighted Lebesgue
//! functionals `d_q`, the flux bounds `K₁, K₂, K₃, F₂`, relative entropies
//! and their `g`-dissipation, and the envelope constants `C⁻, C⁺`.
//!
//! Every integral is midpoint quadrature on the solver mesh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::operators::{firing_flux, DensityField, Generator};
use crate::steady::SteadyState;

/// Reference cells below this value make `h = p / p*` meaningless.
pub const MIN_REFERENCE: f64 = 1e-300;

/// Default ladder ratio, just below the critical exponent 4/3.
pub const DEFAULT_LADDER_BETA: f64 = 4.0 / 3.0 - 0.01;

/// Convex function `H` entering the relative entropy `∬ H(p/p*) p*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyKind {
    /// `(h - 1)^2`
    Quadratic,
    /// `h^2`
    Square,
    /// `h ln h`, with `0 ln 0 = 0`
    HLogH,
}

impl EntropyKind {
    pub const ALL: [EntropyKind; 3] = [
        EntropyKind::Quadratic,
        EntropyKind::Square,
        EntropyKind::HLogH,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            EntropyKind::Quadratic => "quadratic",
            EntropyKind::Square => "square",
            EntropyKind::HLogH => "h-log-h",
        }
    }

    pub fn value(self, h: f64) -> f64 {
        match self {
            EntropyKind::Quadratic => (h - 1.0) * (h - 1.0),
            EntropyKind::Square => h * h,
            EntropyKind::HLogH => {
                if h > 0.0 {
                    h * h.ln()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn second_derivative(self, h: f64) -> f64 {
        match self {
            EntropyKind::Quadratic | EntropyKind::Square => 2.0,
            EntropyKind::HLogH => 1.0 / h,
        }
    }
}

fn check_pair(field: &DensityField, reference: &DensityField) -> Result<()> {
    if field.grid() != reference.grid() {
        return Err(Error::DimensionMismatch {
            expected: reference.values().len(),
            found: field.values().len(),
        });
    }
    if let Some((k, r)) = reference
        .values()
        .iter()
        .enumerate()
        .find(|(_, r)| !(**r >= MIN_REFERENCE))
    {
        return Err(Error::Structural(format!(
            "reference density {r:e} at cell {k} is not safely positive"
        )));
    }
    Ok(())
}

fn ratios(field: &DensityField, reference: &DensityField) -> Vec<f64> {
    field
        .values()
        .iter()
        .zip(reference.values())
        .map(|(p, r)| p / r)
        .collect()
}

/// `g`-marginal `m_j = Σ_i p_ij dv`.
pub fn g_marginal(field: &DensityField) -> Vec<f64> {
    let grid = field.grid();
    (0..grid.n_g())
        .map(|j| (0..grid.n_v()).map(|i| field.get(i, j)).sum::<f64>() * grid.dv())
        .collect()
}

/// Relative max-deviation of the `g`-marginal from its least-squares fit
/// `c M(g_j)`.
pub fn g_marginal_deviation(field: &DensityField, params: &ModelParams, grid: &Grid) -> f64 {
    let marginal = g_marginal(field);
    let gauss: Vec<f64> = (0..grid.n_g())
        .map(|j| params.maxwellian(grid.g_center(j)))
        .collect();
    let c = marginal.iter().zip(&gauss).map(|(m, w)| m * w).sum::<f64>()
        / gauss.iter().map(|w| w * w).sum::<f64>();
    let peak = marginal.iter().copied().fold(0.0, f64::max);
    marginal
        .iter()
        .zip(&gauss)
        .map(|(m, w)| (m - c * w).abs())
        .fold(0.0, f64::max)
        / peak
}

/// `d_q = ∬ (g + g_L)^2 p^q dv dg`.
pub fn weighted_norm_dq(
    field: &DensityField,
    grid: &Grid,
    params: &ModelParams,
    q: f64,
) -> Result<f64> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::Config(format!(
            "exponent q must be at least 1, got {q}"
        )));
    }
    let mut total = 0.0;
    for j in 0..grid.n_g() {
        let w = (grid.g_center(j) + params.g_l).powi(2);
        let row: f64 = (0..grid.n_v()).map(|i| field.get(i, j).powf(q)).sum();
        total += w * row;
    }
    Ok(total * grid.cell_area())
}

/// Exponents `β^k` for `k = 0..levels`.
pub fn q_ladder(beta: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| beta.powi(k as i32)).collect()
}

/// `(q, d_q, d_q^{1/q})` along a ladder of exponents.
pub fn dq_ladder(
    field: &DensityField,
    grid: &Grid,
    params: &ModelParams,
    ladder: &[f64],
) -> Result<Vec<LadderRung>> {
    ladder
        .iter()
        .map(|&q| {
            let d_q = weighted_norm_dq(field, grid, params, q)?;
            Ok(LadderRung {
                q,
                d_q,
                root: d_q.powf(1.0 / q),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub q: f64,
    pub d_q: f64,
    /// `d_q^{1/q}`
    pub root: f64,
}

/// Flux-type functionals of a density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxFunctionals {
    /// `∬ e^{g²/(8a)} |∂_g p|`, by face differences.
    pub k1: f64,
    /// `∫ sup_g p dv`
    pub k2: f64,
    /// `sup_v ∫ J_v² p dg`
    pub k3: f64,
    /// `∬ (J_v p)²`
    pub f2: f64,
    /// `∫ p(v, G_max⁻) dv`, the boundary term closing `K₂ ≤ K₁` on the
    /// truncated mesh.
    pub top_row: f64,
}

pub fn flux_functionals(
    field: &DensityField,
    grid: &Grid,
    params: &ModelParams,
) -> FluxFunctionals {
    let (n_v, n_g) = (grid.n_v(), grid.n_g());
    let mut k1 = 0.0;
    for face in 1..n_g {
        let weight = (grid.g_face(face).powi(2) / (8.0 * params.a)).exp();
        let jump: f64 = (0..n_v)
            .map(|i| (field.get(i, face) - field.get(i, face - 1)).abs())
            .sum();
        k1 += weight * jump;
    }
    k1 *= grid.dv();
    let k2 = (0..n_v)
        .map(|i| (0..n_g).map(|j| field.get(i, j)).fold(0.0, f64::max))
        .sum::<f64>()
        * grid.dv();
    let mut k3: f64 = 0.0;
    let mut f2 = 0.0;
    for i in 0..n_v {
        let v = grid.v_center(i);
        let mut column = 0.0;
        for j in 0..n_g {
            let flux = params.flux_v(v, grid.g_center(j));
            let p = field.get(i, j);
            column += flux * flux * p;
            f2 += (flux * p).powi(2);
        }
        k3 = k3.max(column * grid.dg());
    }
    f2 *= grid.cell_area();
    let top_row = (0..n_v).map(|i| field.get(i, n_g - 1)).sum::<f64>() * grid.dv();
    FluxFunctionals {
        k1,
        k2,
        k3,
        f2,
        top_row,
    }
}

/// Estimate battery on a stationary density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSuite {
    pub functionals: FluxFunctionals,
    /// `(q, d_q)` for `q ∈ {1, 1.2, 4/3 - 0.01}`.
    pub d_q: Vec<(f64, f64)>,
    pub all_finite: bool,
    /// `K₂ K₃ - F₂`, nonnegative when the combined flux bound holds.
    pub flux_bound_slack: f64,
    pub flux_bound_holds: bool,
    /// `K₁ + top_row - K₂`, nonnegative when the sup bound holds.
    pub sup_bound_slack: f64,
    pub sup_bound_holds: bool,
}

impl EstimateSuite {
    pub fn passed(&self) -> bool {
        self.all_finite && self.flux_bound_holds && self.sup_bound_holds
    }
}

pub const SUITE_EXPONENTS: [f64; 3] = [1.0, 1.2, 4.0 / 3.0 - 0.01];

pub fn estimate_suite(
    steady: &SteadyState,
    grid: &Grid,
    params: &ModelParams,
) -> Result<EstimateSuite> {
    estimate_suite_for(&steady.density, grid, params)
}

pub fn estimate_suite_for(
    field: &DensityField,
    grid: &Grid,
    params: &ModelParams,
) -> Result<EstimateSuite> {
    let functionals = flux_functionals(field, grid, params);
    let d_q = SUITE_EXPONENTS
        .iter()
        .map(|&q| Ok((q, weighted_norm_dq(field, grid, params, q)?)))
        .collect::<Result<Vec<_>>>()?;
    let FluxFunctionals {
        k1,
        k2,
        k3,
        f2,
        top_row,
    } = functionals;
    let all_finite =
        [k1, k2, k3, f2].iter().all(|v| v.is_finite()) && d_q.iter().all(|(_, d)| d.is_finite());
    let flux_bound_slack = k2 * k3 - f2;
    let sup_bound_slack = k1 + top_row - k2;
    // both bounds are exact discrete inequalities; allow summation round-off
    let tol = 1e-12;
    Ok(EstimateSuite {
        functionals,
        d_q,
        all_finite,
        flux_bound_slack,
        flux_bound_holds: flux_bound_slack >= -tol * (k2 * k3).abs(),
        sup_bound_slack,
        sup_bound_holds: sup_bound_slack >= -tol * k2.abs(),
    })
}

/// `Σ H(p/p*) p* dv dg`.
pub fn relative_entropy(
    field: &DensityField,
    reference: &DensityField,
    kind: EntropyKind,
) -> Result<f64> {
    check_pair(field, reference)?;
    let total: f64 = field
        .values()
        .iter()
        .zip(reference.values())
        .map(|(p, r)| kind.value(p / r) * r)
        .sum();
    Ok(total * field.grid().cell_area())
}

/// Face-difference quadrature of `∬ H''(h) |∂_g h|² p*`, with `h` and `p*`
/// averaged onto the interior conductance faces.
pub fn dissipation_g(
    field: &DensityField,
    reference: &DensityField,
    kind: EntropyKind,
    grid: &Grid,
) -> Result<f64> {
    check_pair(field, reference)?;
    let h = ratios(field, reference);
    let p_ref = reference.values();
    let mut total = 0.0;
    for face in 1..grid.n_g() {
        for i in 0..grid.n_v() {
            let (lo, hi) = (grid.idx(i, face - 1), grid.idx(i, face));
            let dh = h[hi] - h[lo];
            if dh == 0.0 {
                continue;
            }
            let h_face = 0.5 * (h[hi] + h[lo]);
            let p_face = 0.5 * (p_ref[hi] + p_ref[lo]);
            let slope = dh / grid.dg();
            total += kind.second_derivative(h_face) * slope * slope * p_face;
        }
    }
    Ok(total * grid.cell_area())
}

/// `(C⁻, C⁺) = (min p/p*, max p/p*)`.
pub fn envelope_constants(field: &DensityField, reference: &DensityField) -> Result<(f64, f64)> {
    check_pair(field, reference)?;
    Ok(ratios(field, reference)
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
            (lo.min(h), hi.max(h))
        }))
}

/// `L²(p*)` distance of `h` from its `p*`-weighted average along each
/// voltage column; zero exactly when `h` does not depend on `g`.
pub fn flatness_in_g(field: &DensityField, reference: &DensityField, grid: &Grid) -> Result<f64> {
    check_pair(field, reference)?;
    let h = ratios(field, reference);
    let p_ref = reference.values();
    let mut total = 0.0;
    for i in 0..grid.n_v() {
        let cells = (0..grid.n_g()).map(|j| grid.idx(i, j));
        let weight: f64 = cells.clone().map(|k| p_ref[k]).sum();
        let mean = cells.clone().map(|k| h[k] * p_ref[k]).sum::<f64>() / weight;
        total += cells.map(|k| (h[k] - mean).powi(2) * p_ref[k]).sum::<f64>();
    }
    Ok((total * grid.cell_area()).sqrt())
}

/// Smallest `C¹₊` with `|A p⁰| <= C¹₊ p*` cell-wise: the time-derivative
/// bound that initial data must satisfy for the compactness argument.
pub fn initial_rate_envelope(
    generator: &Generator,
    initial: &DensityField,
    reference: &DensityField,
) -> Result<f64> {
    check_pair(initial, reference)?;
    let rates = generator.apply(initial)?;
    Ok(rates
        .iter()
        .zip(reference.values())
        .fold(0.0, |m, (r, p)| m.max(r.abs() / p)))
}

/// One snapshot of every diagnostic quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    /// One entry per configured entropy kind, in configuration order.
    pub entropy: Vec<f64>,
    /// `g`-dissipation for each configured entropy kind.
    pub dissipation: Vec<f64>,
    pub c_minus: f64,
    pub c_plus: f64,
    pub flatness_g: f64,
    pub g_marginal_deviation: f64,
    pub firing_flux: f64,
    pub functionals: FluxFunctionals,
    /// `d_q` along the configured ladder.
    pub d_q: Vec<f64>,
}

/// Computes [`DiagnosticsReport`]s against a fixed stationary reference.
#[derive(Clone, Debug)]
pub struct Diagnostician {
    reference: DensityField,
    params: ModelParams,
    kinds: Vec<EntropyKind>,
    ladder: Vec<f64>,
}

impl Diagnostician {
    pub fn new(
        reference: DensityField,
        params: ModelParams,
        kinds: Vec<EntropyKind>,
        ladder: Vec<f64>,
    ) -> Result<Self> {
        check_pair(&reference, &reference)?;
        if let Some(q) = ladder.iter().find(|q| !(**q >= 1.0)) {
            return Err(Error::Config(format!("ladder exponent {q} is below 1")));
        }
        Ok(Diagnostician {
            reference,
            params,
            kinds,
            ladder,
        })
    }

    pub fn reference(&self) -> &DensityField {
        &self.reference
    }

    pub fn kinds(&self) -> &[EntropyKind] {
        &self.kinds
    }

    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn report(
        &self,
        step: usize,
        time: f64,
        field: &DensityField,
    ) -> Result<DiagnosticsReport> {
        let grid = *self.reference.grid();
        let reference = &self.reference;
        let entropy = self
            .kinds
            .iter()
            .map(|&k| relative_entropy(field, reference, k))
            .collect::<Result<Vec<_>>>()?;
        let dissipation = self
            .kinds
            .iter()
            .map(|&k| dissipation_g(field, reference, k, &grid))
            .collect::<Result<Vec<_>>>()?;
        let (c_minus, c_plus) = envelope_constants(field, reference)?;
        let d_q = self
            .ladder
            .iter()
            .map(|&q| weighted_norm_dq(field, &grid, &self.params, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiagnosticsReport {
            step,
            time,
            mass: field.mass(),
            entropy,
            dissipation,
            c_minus,
            c_plus,
            flatness_g: flatness_in_g(field, reference, &grid)?,
            g_marginal_deviation: g_marginal_deviation(field, &self.params, &grid),
            firing_flux: firing_flux(field, &grid, &self.params),
            functionals: flux_functionals(field, &grid, &self.params),
            d_q,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::assemble_full;
    use crate::steady::solve_steady_nullspace;
    use proptest::prelude::*;

    fn setup(n_v: usize, n_g: usize) -> (Grid, ModelParams) {
        let p = ModelParams::default();
        (Grid::build(&p, n_v, n_g, 8.0).unwrap(), p)
    }

    fn product_state(grid: Grid, p: &ModelParams) -> DensityField {
        let z_d: f64 = (0..grid.n_g())
            .map(|j| p.maxwellian(grid.g_center(j)))
            .sum::<f64>()
            * grid.dg();
        DensityField::from_fn(grid, |_, g| p.maxwellian(g) / (z_d * p.v_f)).unwrap()
    }

    #[test]
    fn marginal_of_product_state_is_exact() {
        let (grid, p) = setup(16, 32);
        let f = product_state(grid, &p);
        assert!(g_marginal_deviation(&f, &p, &grid) < 1e-15);
    }

    #[test]
    fn marginal_of_uniform_field_matches_hand_formula() {
        let (grid, p) = setup(8, 16);
        let u = DensityField::uniform(grid);
        // m_j = 1/G_max; c = (1/G) ΣM / ΣM²; deviation = max|1/G - c M_j| * G
        let m: Vec<f64> = (0..16).map(|j| p.maxwellian(grid.g_center(j))).collect();
        let s1: f64 = m.iter().sum();
        let s2: f64 = m.iter().map(|x| x * x).sum();
        let hand = m
            .iter()
            .map(|mj| (1.0 - s1 / s2 * mj).abs())
            .fold(0.0, f64::max);
        let got = g_marginal_deviation(&u, &p, &grid);
        assert!(got > 0.1);
        assert!((got - hand).abs() < 1e-13);
    }

    #[test]
    fn steady_marginal_is_gaussian() {
        let (grid, p) = setup(32, 32);
        let a = assemble_full(&grid, &p).unwrap();
        let s = solve_steady_nullspace(&a, 1e-11, 100).unwrap();
        assert!(g_marginal_deviation(&s.density, &p, &grid) <= 1e-10);
    }

    #[test]
    fn dq_of_uniform_field_matches_closed_form() {
        let (grid, p) = setup(16, 64);
        let u = 0.37;
        let f = DensityField::new(grid, vec![u; grid.len()]).unwrap();
        for q in [1.0, 1.5, 3.0] {
            let got = weighted_norm_dq(&f, &grid, &p, q).unwrap();
            let gm = grid.g_max();
            let exact = u.powf(q) * p.v_f * ((gm + p.g_l).powi(3) - p.g_l.powi(3)) / 3.0;
            // midpoint rule on a quadratic weight: error (G dg^2 / 12) * u^q V_F
            let midpoint_error = u.powf(q) * p.v_f * gm * grid.dg().powi(2) / 12.0;
            assert!(
                (exact - got - midpoint_error).abs() < 1e-10 * exact,
                "q={q}"
            );
        }
        assert!(weighted_norm_dq(&f, &grid, &p, 0.5).is_err());
    }

    #[test]
    fn dq_of_mass_near_zero_conductance_tends_to_g_l_squared() {
        let (grid, p) = setup(8, 512);
        let f = DensityField::from_fn(grid, |_, g| if g < grid.dg() { 1.0 } else { 0.0 })
            .unwrap()
            .normalized()
            .unwrap();
        let d1 = weighted_norm_dq(&f, &grid, &p, 1.0).unwrap();
        assert!((d1 - (grid.dg() / 2.0 + p.g_l).powi(2)).abs() < 1e-12);
        assert!((d1 - p.g_l * p.g_l).abs() < 0.02);
    }

    #[test]
    fn entropy_of_reference_is_zero_and_constants_are_one() {
        let (grid, p) = setup(16, 16);
        let r = product_state(grid, &p);
        assert!(
            relative_entropy(&r, &r, EntropyKind::Quadratic)
                .unwrap()
                .abs()
                < 1e-15
        );
        let (lo, hi) = envelope_constants(&r, &r).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
        assert_eq!(
            dissipation_g(&r, &r, EntropyKind::HLogH, &grid).unwrap(),
            0.0
        );
        assert_eq!(flatness_in_g(&r, &r, &grid).unwrap(), 0.0);
    }

    #[test]
    fn entropy_of_doubled_half_matches_direct_sum() {
        let (grid, p) = setup(8, 8);
        let r = product_state(grid, &p);
        // double the reference on v < V_F/2, renormalize
        let doubled: Vec<f64> = (0..grid.len())
            .map(|k| {
                let (i, _) = grid.cell_of(k).unwrap();
                if i < 4 {
                    2.0 * r.values()[k]
                } else {
                    r.values()[k]
                }
            })
            .collect();
        let f = DensityField::new(grid, doubled)
            .unwrap()
            .normalized()
            .unwrap();
        // product state puts half its mass on each half, so the renormalized
        // field has h = 4/3 on the left half and 2/3 on the right half
        let expect_quadratic = 0.5 * (1.0f64 / 3.0).powi(2) + 0.5 * (1.0f64 / 3.0).powi(2);
        let got = relative_entropy(&f, &r, EntropyKind::Quadratic).unwrap();
        assert!((got - expect_quadratic).abs() < 1e-14);
        let expect_hlogh =
            0.5 * (4.0 / 3.0) * (4.0f64 / 3.0).ln() + 0.5 * (2.0 / 3.0) * (2.0f64 / 3.0).ln();
        let got = relative_entropy(&f, &r, EntropyKind::HLogH).unwrap();
        assert!((got - expect_hlogh).abs() < 1e-14);
        let (lo, hi) = envelope_constants(&f, &r).unwrap();
        assert!((lo - 2.0 / 3.0).abs() < 1e-14 && (hi - 4.0 / 3.0).abs() < 1e-14);
        // h constant in g on every column
        assert!(flatness_in_g(&f, &r, &grid).unwrap() < 1e-14);
        assert!(dissipation_g(&f, &r, EntropyKind::Quadratic, &grid).unwrap() < 1e-20);
    }

    #[test]
    fn quadratic_entropy_is_weighted_l2_distance() {
        let (grid, p) = setup(8, 8);
        let r = product_state(grid, &p);
        let f = DensityField::from_fn(grid, |v, g| (1.0 + v) * p.maxwellian(g))
            .unwrap()
            .normalized()
            .unwrap();
        let direct: f64 = f
            .values()
            .iter()
            .zip(r.values())
            .map(|(a, b)| (a / b - 1.0).powi(2) * b)
            .sum::<f64>()
            * grid.cell_area();
        let got = relative_entropy(&f, &r, EntropyKind::Quadratic).unwrap();
        assert!((got - direct).abs() < 1e-15);
    }

    #[test]
    fn flatness_of_h_equal_g_is_weighted_variance() {
        let (grid, p) = setup(8, 16);
        let r = product_state(grid, &p);
        let f = DensityField::new(
            grid,
            (0..grid.len())
                .map(|k| grid.g_center(grid.cell_of(k).unwrap().1) * r.values()[k])
                .collect(),
        )
        .unwrap();
        // per column, weights w_j = M_j / Σ M: variance of g_j under w
        let m: Vec<f64> = (0..16).map(|j| p.maxwellian(grid.g_center(j))).collect();
        let s: f64 = m.iter().sum();
        let mean: f64 = (0..16).map(|j| grid.g_center(j) * m[j]).sum::<f64>() / s;
        let var: f64 = (0..16)
            .map(|j| (grid.g_center(j) - mean).powi(2) * m[j])
            .sum::<f64>()
            / s;
        // column mass under r is 1/V_F * dv, summed over 8 columns gives V_F
        let expect = var.sqrt();
        let got = flatness_in_g(&f, &r, &grid).unwrap();
        assert!((got - expect).abs() < 1e-13, "{got} vs {expect}");
    }

    #[test]
    fn dissipation_converges_under_refinement() {
        let p = ModelParams::default();
        let reference =
            |grid: Grid| DensityField::from_fn(grid, |v, g| (1.0 + v) * p.maxwellian(g)).unwrap();
        let field = |grid: Grid| {
            DensityField::from_fn(grid, |v, g| {
                (1.0 + v) * p.maxwellian(g) * (1.0 + 0.5 * (g * v).sin())
            })
            .unwrap()
        };
        let value = |n: usize| {
            let grid = Grid::build(&p, n, n, 8.0).unwrap();
            dissipation_g(
                &field(grid),
                &reference(grid),
                EntropyKind::Quadratic,
                &grid,
            )
            .unwrap()
        };
        let (a, b, c) = (value(32), value(64), value(128));
        let order = ((a - b) / (b - c)).abs().log2();
        assert!(order >= 1.0, "observed order {order}");
    }

    #[test]
    fn flux_bound_and_sup_bound_hold_on_steady_state() {
        let (grid, p) = setup(32, 32);
        let a = assemble_full(&grid, &p).unwrap();
        let s = solve_steady_nullspace(&a, 1e-11, 100).unwrap();
        let suite = estimate_suite(&s, &grid, &p).unwrap();
        assert!(suite.passed(), "{suite:?}");
        assert!(suite.flux_bound_slack > 0.0);
    }

    #[test]
    fn functionals_of_product_state_match_gaussian_moments() {
        let p = ModelParams::default();
        let grid = Grid::build(&p, 64, 256, 8.0).unwrap();
        let f = product_state(grid, &p);
        // moments I_k = ∫_0^∞ g^k M(g) dg with mean g_in, variance a
        let (mu, s2) = (p.g_in, p.a);
        let i0 = p.normalization_z_closed_form();
        let e0 = (-mu * mu / (2.0 * s2)).exp();
        let i1 = mu * i0 + s2 * e0;
        let i2 = mu * i1 + s2 * i0;
        let d1 = (i2 + 2.0 * p.g_l * i1 + p.g_l * p.g_l * i0) / i0;
        let got = weighted_norm_dq(&f, &grid, &p, 1.0).unwrap();
        assert!((got - d1).abs() < 1e-3 * d1, "{got} vs {d1}");
        // K3: sup over cell-centre v of ∫ J² M/(Z V_F) dg
        let k3 = (0..grid.n_v())
            .map(|i| {
                let v = grid.v_center(i);
                let (x, y) = (p.v_e - v, p.g_l * v);
                (x * x * i2 - 2.0 * x * y * i1 + y * y * i0) / (i0 * p.v_f)
            })
            .fold(0.0, f64::max);
        let fl = flux_functionals(&f, &grid, &p);
        assert!((fl.k3 - k3).abs() < 1e-3 * k3, "{} vs {k3}", fl.k3);
        // K2 = ∫ sup_g p dv = M(g_in)/(Z) at the peak row
        let k2 = 1.0 / i0;
        assert!((fl.k2 - k2).abs() < 1e-3 * k2);
    }

    #[test]
    fn envelope_of_half_mixture_is_direct_scan() {
        let (grid, p) = setup(8, 8);
        let r = product_state(grid, &p);
        // perturbation: p* times (1 + 0.4 sin) renormalized, so h in a known band
        let bump = DensityField::new(
            grid,
            (0..grid.len())
                .map(|k| r.values()[k] * (1.0 + 0.4 * (k as f64).sin()))
                .collect(),
        )
        .unwrap()
        .normalized()
        .unwrap();
        let mix = DensityField::new(
            grid,
            r.values()
                .iter()
                .zip(bump.values())
                .map(|(a, b)| 0.5 * a + 0.5 * b)
                .collect(),
        )
        .unwrap();
        let scan: Vec<f64> = mix
            .values()
            .iter()
            .zip(r.values())
            .map(|(a, b)| a / b)
            .collect();
        let lo = scan.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(envelope_constants(&mix, &r).unwrap(), (lo, hi));
        assert!(lo > 0.5 && hi < 1.5 && lo < 1.0 && hi > 1.0);
    }

    #[test]
    fn tiny_reference_is_a_structural_error() {
        let (grid, _) = setup(8, 8);
        let mut values = vec![1.0 / 9.0; grid.len()];
        values[5] = 1e-310;
        let r = DensityField::new(grid, values).unwrap();
        let u = DensityField::uniform(grid);
        assert!(matches!(
            relative_entropy(&u, &r, EntropyKind::Square),
            Err(Error::Structural(_))
        ));
        assert!(matches!(
            envelope_constants(&u, &r),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn ladder_exponents_are_geometric() {
        let q = q_ladder(4.0 / 3.0, 9);
        assert_eq!(q.len(), 9);
        assert_eq!(q[0], 1.0);
        assert!((q[8] - (4.0f64 / 3.0).powi(8)).abs() < 1e-14);
    }

    fn field_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..3.0, 64)
    }

    proptest! {
        #[test]
        fn entropy_is_invariant_under_relabeling(
            a in field_strategy(),
            b in field_strategy(),
            perm in Just((0..64).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let (grid, _) = setup(8, 8);
            let f = DensityField::new(grid, a.clone()).unwrap();
            let r = DensityField::new(grid, b.clone()).unwrap();
            let fp = DensityField::new(grid, perm.iter().map(|&k| a[k]).collect()).unwrap();
            let rp = DensityField::new(grid, perm.iter().map(|&k| b[k]).collect()).unwrap();
            for kind in EntropyKind::ALL {
                let x = relative_entropy(&f, &r, kind).unwrap();
                let y = relative_entropy(&fp, &rp, kind).unwrap();
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn dq_is_monotone_under_dominance(
            base in field_strategy(),
            extra in prop::collection::vec(0.0f64..1.0, 64),
            q in 1.0f64..12.0,
        ) {
            let (grid, p) = setup(8, 8);
            let small = DensityField::new(grid, base.clone()).unwrap();
            let big = DensityField::new(grid, base.iter().zip(&extra).map(|(a, e)| a + e).collect()).unwrap();
            let lo = weighted_norm_dq(&small, &grid, &p, q).unwrap();
            let hi = weighted_norm_dq(&big, &grid, &p, q).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn zero_quadratic_entropy_iff_unit_envelope(
            r in field_strategy(),
            bump in prop::collection::vec(-0.5f64..0.5, 64),
            on in any::<bool>(),
        ) {
            let (grid, _) = setup(8, 8);
            let reference = DensityField::new(grid, r.clone()).unwrap();
            let field = if on {
                DensityField::new(grid, r.iter().zip(&bump).map(|(a, b)| a * (1.0 + b)).collect()).unwrap()
            } else {
                reference.clone()
            };
            let e = relative_entropy(&field, &reference, EntropyKind::Quadratic).unwrap();
            let (lo, hi) = envelope_constants(&field, &reference).unwrap();
            let unit = (lo - 1.0).abs() <= 1e-12 && (hi - 1.0).abs() <= 1e-12;
            prop_assert_eq!(e <= 1e-24, unit);
        }
    }
}
