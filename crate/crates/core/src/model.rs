//! Physical parameters of the voltage-conductance model and the closed-form
//! pieces of its coefficients: the voltage drift flux, the Gaussian
//! conductance weight and the firing threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the linear voltage-conductance model.
///
/// Field names follow the usual neuroscience notation: `g_l` is the leak
/// conductance, `v_e` the excitatory reversal potential, `v_f` the firing
/// potential, `sigma_e` the conductance time constant, `g_in` the input
/// conductance and `a` the conductance noise level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub g_l: f64,
    pub v_e: f64,
    pub v_f: f64,
    pub sigma_e: f64,
    pub g_in: f64,
    pub a: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            g_l: 1.0,
            v_e: 2.0,
            v_f: 1.0,
            sigma_e: 1.0,
            g_in: 1.0,
            a: 1.0,
        }
    }
}

impl ModelParams {
    /// Builds a validated parameter record.
    pub fn new(g_l: f64, v_e: f64, v_f: f64, sigma_e: f64, g_in: f64, a: f64) -> Result<Self> {
        let params = ModelParams {
            g_l,
            v_e,
            v_f,
            sigma_e,
            g_in,
            a,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("g_l", self.g_l),
            ("v_e", self.v_e),
            ("v_f", self.v_f),
            ("sigma_e", self.sigma_e),
            ("g_in", self.g_in),
            ("a", self.a),
        ];
        for (name, value) in named {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {value}")));
            }
        }
        for (name, value) in [
            ("g_l", self.g_l),
            ("sigma_e", self.sigma_e),
            ("g_in", self.g_in),
            ("a", self.a),
        ] {
            if value <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(0.0 < self.v_f && self.v_f < self.v_e) {
            return Err(Error::Config(format!(
                "potentials must satisfy 0 < v_f < v_e, got v_f = {}, v_e = {}",
                self.v_f, self.v_e
            )));
        }
        let g_f = self.g_threshold();
        if !(g_f.is_finite() && g_f > 0.0) {
            return Err(Error::Config(format!(
                "firing threshold g_F = {g_f} is not positive and finite"
            )));
        }
        Ok(())
    }

    /// Voltage drift flux `J_v(v, g) = -g_L v + g (V_E - v)`.
    #[inline]
    pub fn flux_v(&self, v: f64, g: f64) -> f64 {
        -self.g_l * v + g * (self.v_e - v)
    }

    /// Gaussian conductance weight `exp(-(g - g_in)^2 / (2a))`.
    #[inline]
    pub fn maxwellian(&self, g: f64) -> f64 {
        let d = g - self.g_in;
        (-d * d / (2.0 * self.a)).exp()
    }

    /// Conductance at which the drift flux vanishes on the firing potential.
    #[inline]
    pub fn g_threshold(&self) -> f64 {
        self.g_l * self.v_f / (self.v_e - self.v_f)
    }

    /// Root of `v -> J_v(v, g)`, which lies strictly inside `(0, V_F)`
    /// exactly when `0 < g < g_F`.
    pub fn flux_root(&self, g: f64) -> f64 {
        g * self.v_e / (self.g_l + g)
    }

    /// `Z = ∫_0^∞ M(g) dg` through the error function.
    pub fn normalization_z_closed_form(&self) -> f64 {
        let s = self.a.sqrt();
        s * (std::f64::consts::PI / 2.0).sqrt()
            * (1.0 + libm::erf(self.g_in / (s * std::f64::consts::SQRT_2)))
    }

    /// `Z = ∫_0^∞ M(g) dg` by composite Gauss-Legendre quadrature on
    /// `(0, g_in + 12 √a)`, refined until two panel counts agree to within
    /// a tenth of `quadrature_tol` (relative). The closed form is checked
    /// against the result.
    pub fn normalization_z(&self, quadrature_tol: f64) -> Result<f64> {
        if !(quadrature_tol > 0.0 && quadrature_tol <= 1e-3) {
            return Err(Error::Config(format!(
                "quadrature tolerance must lie in (0, 1e-3], got {quadrature_tol}"
            )));
        }
        let upper = self.g_in + 12.0 * self.a.sqrt();
        let rule = GaussLegendre::new(8);
        let mut panels = 4;
        let mut previous = rule.composite(|g| self.maxwellian(g), 0.0, upper, panels);
        loop {
            panels *= 2;
            let current = rule.composite(|g| self.maxwellian(g), 0.0, upper, panels);
            if (current - previous).abs() <= 0.1 * quadrature_tol * current.abs() {
                let closed = self.normalization_z_closed_form();
                if ((current - closed) / closed).abs() > quadrature_tol.max(1e-13) {
                    return Err(Error::Structural(format!(
                        "quadrature Z = {current} disagrees with closed form {closed}"
                    )));
                }
                return Ok(current);
            }
            if panels > 1 << 20 {
                return Err(Error::NotConverged {
                    iterations: panels,
                    residual: (current - previous).abs(),
                });
            }
            previous = current;
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for k in 0..order.div_ceil(2) {
            // Tricomi's initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[k] = -x;
            nodes[order - 1 - k] = x;
            weights[k] = w;
            weights[order - 1 - k] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn composite(&self, f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
        let h = (hi - lo) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * h;
            let half = 0.5 * h;
            let panel: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| w * f(mid + half * x))
                .sum();
            total += half * panel;
        }
        total
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> ModelParams {
        ModelParams::new(1.0, 2.0, 1.0, 1.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn flux_examples() {
        let p = unit_params();
        assert_eq!(p.flux_v(0.0, 3.0), 6.0);
        assert_eq!(p.flux_v(1.0, 1.0), 0.0);
        // -0.5 + 0.2 * 1.5
        assert!((p.flux_v(0.5, 0.2) - (-0.2)).abs() < 1e-15);
    }

    #[test]
    fn maxwellian_examples() {
        let p = unit_params();
        assert_eq!(p.maxwellian(1.0), 1.0);
        assert!((p.maxwellian(2.0) - (-1.0f64).exp()).abs() < 1e-16);
        assert!((p.maxwellian(0.0) - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn threshold_examples() {
        let p = ModelParams::new(1.0, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.g_threshold(), 1.0);
        assert_eq!(p.flux_v(p.v_f, p.g_threshold()), 0.0);
        let p = ModelParams::new(2.0, 3.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.g_threshold(), 1.0);
        let p = ModelParams::new(1.0, 2.0, 0.5, 1.0, 1.0, 1.0).unwrap();
        assert!((p.g_threshold() - 1.0 / 3.0).abs() < 1e-16);
        assert!(p.flux_v(p.v_f, p.g_threshold()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_potentials() {
        assert!(matches!(
            ModelParams::new(1.0, 1.0, 1.5, 1.0, 1.0, 1.0),
            Err(Error::Config(_))
        ));
        assert!(ModelParams::new(1.0, 2.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(0.0, 2.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 2.0, 1.0, 1.0, 1.0, -1.0).is_err());
        assert!(ModelParams::new(1.0, 2.0, 1.0, 1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn flux_sign_dichotomy_at_firing_potential() {
        let p = ModelParams::default();
        let g_f = p.g_threshold();
        for k in 1..50 {
            let below = g_f * k as f64 / 50.0;
            assert!(p.flux_v(p.v_f, below) < 0.0);
            let root = p.flux_root(below);
            assert!(root > 0.0 && root < p.v_f);
            assert!(p.flux_v(root, below).abs() < 1e-14);
            let above = g_f + k as f64 / 10.0;
            assert!(p.flux_v(p.v_f, above) > 0.0);
            assert!(p.flux_v(0.0, above) > 0.0);
        }
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = GaussLegendre::new(8);
        let s: f64 = rule.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 15 is integrated exactly
        let v = rule.composite(|x| x.powi(14) + x.powi(15), -1.0, 1.0, 1);
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn z_of_centered_gaussian_is_half_mass() {
        let p = ModelParams {
            g_in: 0.0,
            a: 0.5,
            ..ModelParams::default()
        };
        let expected = (std::f64::consts::PI / 4.0).sqrt();
        assert!((p.normalization_z_closed_form() - expected).abs() < 1e-15);
        let z = p.normalization_z(1e-10).unwrap();
        assert!((z - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn z_approaches_full_mass_for_large_input() {
        let p = ModelParams {
            g_in: 40.0,
            a: 0.5,
            ..ModelParams::default()
        };
        let full = (2.0 * std::f64::consts::PI * 0.5).sqrt();
        assert!((p.normalization_z(1e-10).unwrap() - full).abs() < 1e-10 * full);
    }

    #[test]
    fn z_matches_composite_simpson_oracle() {
        let p = unit_params();
        // composite Simpson on (0, g_in + 12 sqrt(a)), 2e5 panels
        let upper = p.g_in + 12.0 * p.a.sqrt();
        let n = 200_000;
        let h = upper / n as f64;
        let mut s = p.maxwellian(0.0) + p.maxwellian(upper);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * p.maxwellian(k as f64 * h);
        }
        let oracle = s * h / 3.0;
        // frozen from an independent 30-digit mpmath quadrature: 1.63305105826518503904...
        assert!((oracle - 1.633_051_058_265_185).abs() < 1e-12);
        let z = p.normalization_z(1e-12).unwrap();
        assert!((z - oracle).abs() < 1e-12 * oracle, "{z} vs {oracle}");
    }

    #[test]
    fn rejects_loose_quadrature_tolerance() {
        assert!(ModelParams::default().normalization_z(1e-2).is_err());
        assert!(ModelParams::default().normalization_z(0.0).is_err());
    }
}
