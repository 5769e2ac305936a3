//! Uniform tensor mesh over `(0, V_F) x (0, G_max)`.
//!
//! Cells are indexed by `(i, j)` with `i` along voltage and `j` along
//! conductance. The flat index used by the generator is `j * n_v + i`, so
//! each conductance row is a contiguous block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Smallest admissible cell count per direction.
pub const MIN_CELLS: usize = 8;
/// Smallest admissible truncation, in standard deviations `√a` above `g_in`.
pub const MIN_TAIL_WIDTHS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_v: usize,
    n_g: usize,
    v_f: f64,
    g_max: f64,
    dv: f64,
    dg: f64,
}

impl Grid {
    /// Builds the mesh with `G_max = g_in + tail_widths * √a`.
    pub fn build(params: &ModelParams, n_v: usize, n_g: usize, tail_widths: f64) -> Result<Grid> {
        params.validate()?;
        if !(tail_widths >= MIN_TAIL_WIDTHS && tail_widths.is_finite()) {
            return Err(Error::Config(format!(
                "tail_widths must be at least {MIN_TAIL_WIDTHS}, got {tail_widths}"
            )));
        }
        let g_max = params.g_in + tail_widths * params.a.sqrt();
        Grid::with_extent(params, n_v, n_g, g_max)
    }

    /// Builds the mesh for an explicit truncation bound. The bound must
    /// exceed the firing threshold and cover `g_in + 8√a`.
    pub fn with_extent(params: &ModelParams, n_v: usize, n_g: usize, g_max: f64) -> Result<Grid> {
        if n_v < MIN_CELLS || n_g < MIN_CELLS {
            return Err(Error::Config(format!(
                "grid needs at least {MIN_CELLS} cells per direction, got {n_v}x{n_g}"
            )));
        }
        let g_f = params.g_threshold();
        if !(g_max > g_f) {
            return Err(Error::Config(format!(
                "conductance truncation G_max = {g_max} does not exceed the firing threshold g_F = {g_f}"
            )));
        }
        let tail = params.g_in + MIN_TAIL_WIDTHS * params.a.sqrt();
        if g_max < tail * (1.0 - 1e-14) {
            return Err(Error::Config(format!(
                "conductance truncation G_max = {g_max} is below g_in + 8 sqrt(a) = {tail}"
            )));
        }
        Ok(Grid {
            n_v,
            n_g,
            v_f: params.v_f,
            g_max,
            dv: params.v_f / n_v as f64,
            dg: g_max / n_g as f64,
        })
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn n_g(&self) -> usize {
        self.n_g
    }

    pub fn len(&self) -> usize {
        self.n_v * self.n_g
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn v_f(&self) -> f64 {
        self.v_f
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn dv(&self) -> f64 {
        self.dv
    }

    pub fn dg(&self) -> f64 {
        self.dg
    }

    pub fn cell_area(&self) -> f64 {
        self.dv * self.dg
    }

    pub fn v_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dv
    }

    pub fn g_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dg
    }

    /// Voltage face `k` sits at `k * dv`, `0 <= k <= n_v`.
    pub fn v_face(&self, k: usize) -> f64 {
        k as f64 * self.dv
    }

    /// Conductance face `k` sits at `k * dg`, `0 <= k <= n_g`.
    pub fn g_face(&self, k: usize) -> f64 {
        k as f64 * self.dg
    }

    pub fn flat_index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.n_v || j >= self.n_g {
            return Err(self.out_of_range(i, j));
        }
        Ok(j * self.n_v + i)
    }

    pub fn cell_of(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.len() {
            return Err(self.out_of_range(index % self.n_v, index / self.n_v));
        }
        Ok((index % self.n_v, index / self.n_v))
    }

    #[inline]
    pub(crate) fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n_v + i
    }

    fn out_of_range(&self, i: usize, j: usize) -> Error {
        Error::IndexOutOfRange {
            i,
            j,
            n_v: self.n_v,
            n_g: self.n_g,
        }
    }

    /// Row `j` whose faces bracket `g`: `g_face(j) <= g < g_face(j + 1)`.
    pub fn row_containing(&self, g: f64) -> Option<usize> {
        if !(0.0..self.g_max).contains(&g) {
            return None;
        }
        let j = ((g / self.dg).floor() as usize).min(self.n_g - 1);
        // floor can land one off when g sits on a face up to round-off
        if self.g_face(j) > g {
            Some(j - 1)
        } else if j + 1 < self.n_g && self.g_face(j + 1) <= g {
            Some(j + 1)
        } else {
            Some(j)
        }
    }

    /// Face index `k` with `g_face(k) == g` up to `1e-12` relative, if any.
    pub fn face_at(&self, g: f64) -> Option<usize> {
        let k = (g / self.dg).round();
        if k < 0.0 || k > self.n_g as f64 {
            return None;
        }
        let k = k as usize;
        ((self.g_face(k) - g).abs() <= 1e-12 * g.abs().max(self.dg)).then_some(k)
    }

    /// Conductance row containing the firing threshold.
    pub fn threshold_row(&self, params: &ModelParams) -> usize {
        self.row_containing(params.g_threshold())
            .expect("grid construction guarantees g_F < G_max")
    }

    /// Same physical extent, every cell split in two along each direction.
    pub fn refined(&self) -> Grid {
        Grid {
            n_v: 2 * self.n_v,
            n_g: 2 * self.n_g,
            v_f: self.v_f,
            g_max: self.g_max,
            dv: self.v_f / (2 * self.n_v) as f64,
            dg: self.g_max / (2 * self.n_g) as f64,
        }
    }
}
