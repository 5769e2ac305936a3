//! Sparse storage for generators and the direct solvers used by the
//! steady and time-stepping code.
//!
//! The solvers only ever see matrices of the form `s I - c A` where `A` is a
//! Markov generator (nonnegative off-diagonals, zero column sums), `s >= 0`
//! and `c > 0`. Such a matrix is a column diagonally dominant M-matrix whose
//! column sums are exactly `s`. [`MMatrixLu`] eliminates without pivoting and
//! rebuilds every pivot from the tracked column-sum excess plus the
//! magnitudes of the remaining off-diagonals, in the manner of the
//! Grassmann-Taksar-Heyman algorithm. No subtraction ever happens, so a
//! nonnegative right-hand side yields a solution that is accurate cell by
//! cell, including cells many orders of magnitude below the peak.

use std::io::Write;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` pairs stored in row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok((0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for (_, c, v) in self.entries() {
            sums[c] += v;
        }
        sums
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// Entry-wise sum of two matrices of equal dimension.
    pub fn add(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let triplets = self.entries().chain(other.entries()).collect();
        Ok(CsrMatrix::from_triplets(self.n, triplets))
    }

    /// Largest `|row - col|` among stored off-diagonal entries, split into
    /// `(below, above)` the diagonal.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for (r, c, _) in self.entries() {
            if r > c {
                lower = lower.max(r - c);
            } else {
                upper = upper.max(c - r);
            }
        }
        (lower, upper)
    }

    /// Coordinate text dump, one `row col value` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "% {} {} {}", self.n, self.n, self.nnz())?;
        for (r, c, v) in self.entries() {
            writeln!(out, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Banded LU factorization of `shift * I - scale * A` for a Markov
/// generator `A`, without pivoting.
#[derive(Clone, Debug)]
pub struct MMatrixLu {
    n: usize,
    lower: usize,
    upper: usize,
    /// Row-major band, `band[r * width + (c + lower - r)]`. After
    /// factorization holds the strict lower part of `L` (unit diagonal
    /// implied) and the upper part of `U` including the pivots.
    band: Vec<f64>,
}

impl MMatrixLu {
    /// Factorizes `shift * I - scale * A`. Only the off-diagonal entries of
    /// `A` are read; the diagonal is implied by the zero column sums.
    pub fn factor(generator: &CsrMatrix, shift: f64, scale: f64) -> Result<MMatrixLu> {
        if !(shift >= 0.0 && scale > 0.0 && shift.is_finite() && scale.is_finite()) {
            return Err(Error::LinearSolve(format!(
                "invalid shift {shift} or scale {scale}"
            )));
        }
        let n = generator.dim();
        let (lower, upper) = generator.bandwidths();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for (r, c, v) in generator.entries() {
            if r == c {
                continue;
            }
            if v < 0.0 {
                return Err(Error::Structural(format!(
                    "negative off-diagonal generator entry {v} at ({r}, {c})"
                )));
            }
            band[r * width + (c + lower - r)] = -scale * v;
        }
        // column-sum excess of the active Schur complement
        let mut excess = vec![shift; n];
        for k in 0..n {
            let row_end = (k + lower).min(n - 1);
            let col_end = (k + upper).min(n - 1);
            let mut pivot = excess[k];
            for r in k + 1..=row_end {
                pivot -= band[r * width + (k + lower - r)];
            }
            if !(pivot > 0.0) {
                return Err(Error::LinearSolve(format!("zero pivot at row {k}")));
            }
            band[k * width + lower] = pivot;
            for c in k + 1..=col_end {
                let u_kc = band[k * width + (c + lower - k)];
                if u_kc != 0.0 {
                    excess[c] -= u_kc * excess[k] / pivot;
                }
            }
            for r in k + 1..=row_end {
                let slot = r * width + (k + lower - r);
                let a_rk = band[slot];
                if a_rk == 0.0 {
                    continue;
                }
                let l = a_rk / pivot;
                band[slot] = l;
                for c in k + 1..=col_end {
                    if c == r {
                        continue;
                    }
                    let u_kc = band[k * width + (c + lower - k)];
                    if u_kc != 0.0 {
                        band[r * width + (c + lower - r)] -= l * u_kc;
                    }
                }
            }
        }
        Ok(MMatrixLu {
            n,
            lower,
            upper,
            band,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: rhs.len(),
            });
        }
        let width = self.lower + self.upper + 1;
        let mut x = rhs.to_vec();
        for r in 0..self.n {
            let start = r.saturating_sub(self.lower);
            let mut acc = x[r];
            for c in start..r {
                acc -= self.band[r * width + (c + self.lower - r)] * x[c];
            }
            x[r] = acc;
        }
        for r in (0..self.n).rev() {
            let end = (r + self.upper).min(self.n - 1);
            let mut acc = x[r];
            for c in r + 1..=end {
                acc -= self.band[r * width + (c + self.lower - r)] * x[c];
            }
            x[r] = acc / self.band[r * width + self.lower];
        }
        Ok(x)
    }
}

/// Solves a tridiagonal system `sub[k] x[k-1] + diag[k] x[k] + sup[k] x[k+1]
/// = rhs[k]` by the Thomas algorithm. `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rhs.len().min(sub.len()).min(sup.len()),
        });
    }
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::LinearSolve("zero pivot at row 0".into()));
    }
    c[0] = sup[0] / denom;
    x[0] = rhs[0] / denom;
    for k in 1..n {
        denom = diag[k] - sub[k] * c[k - 1];
        if denom == 0.0 {
            return Err(Error::LinearSolve(format!("zero pivot at row {k}")));
        }
        c[k] = if k + 1 < n { sup[k] / denom } else { 0.0 };
        x[k] = (rhs[k] - sub[k] * x[k - 1]) / denom;
    }
    for k in (0..n - 1).rev() {
        x[k] -= c[k] * x[k + 1];
    }
    Ok(x)
}
