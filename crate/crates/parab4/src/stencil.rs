//! Finite-difference stencil machinery: Fornberg weights, per-axis
//! derivative matrices (second-order accurate, one-sided at the
//! boundary), and a minimal CSR type with transpose application.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Fornberg's algorithm: weights of the `m`-th derivative at point `z`
/// from function values at nodes `x`. Returns the weight row for each
/// derivative order `0..=m`.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    assert!(n > m, "need more than m+1 nodes");
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Compressed sparse rows; just enough for operator assembly, apply and
/// transpose-apply.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_rows(n_cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for &(c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Csr {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.apply(x, &mut y);
        y
    }

    /// y = A^T x, accumulated column-wise.
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n_rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k]] += self.vals[k] * xi;
            }
        }
    }

    pub fn apply_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        self.apply_transpose(x, &mut y);
        y
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }
}

pub const MAX_DERIVATIVE_ORDER: usize = 4;

/// One-axis derivative matrix of order `m`, second-order accurate:
/// central stencils in the interior, shifted (m+2)-point stencils near
/// the boundary.
pub fn axis_derivative(n: usize, h: f64, m: usize) -> Result<Csr> {
    if m > MAX_DERIVATIVE_ORDER {
        return Err(Error::invalid(format!(
            "derivative order {m} exceeds the supported maximum {MAX_DERIVATIVE_ORDER}"
        )));
    }
    if m == 0 {
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        return Ok(Csr::from_rows(n, &rows));
    }
    let half = m.div_ceil(2);
    let wide = m + 2; // one-sided width for O(h^2)
    if n < wide {
        return Err(Error::invalid(format!(
            "axis has {n} nodes; order-{m} stencils need at least {wide}"
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (start, width) = if i >= half && i + half < n {
            (i - half, 2 * half + 1)
        } else if i < half {
            (0, wide)
        } else {
            (n - wide, wide)
        };
        let offsets: Vec<f64> = (0..width).map(|j| (start + j) as f64 - i as f64).collect();
        let w = fornberg_weights(0.0, &offsets, m);
        let scale = h.powi(m as i32);
        let row: Vec<(usize, f64)> = (0..width)
            .map(|j| (start + j, w[m][j] / scale))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        rows.push(row);
    }
    Ok(Csr::from_rows(n, &rows))
}

/// Apply a one-axis operator along `axis` of a flattened tensor field.
pub fn apply_along_axis(op: &Csr, grid: &Grid, field: &[f64], axis: usize) -> Vec<f64> {
    let nx = grid.nx();
    let ny = grid.ny();
    debug_assert_eq!(field.len(), nx * ny);
    let mut out = vec![0.0; field.len()];
    match axis {
        0 => {
            debug_assert_eq!(op.n_cols, nx);
            let mut line = vec![0.0; nx];
            let mut res = vec![0.0; nx];
            for iy in 0..ny {
                line.copy_from_slice(&field[iy * nx..(iy + 1) * nx]);
                op.apply(&line, &mut res);
                out[iy * nx..(iy + 1) * nx].copy_from_slice(&res);
            }
        }
        1 => {
            debug_assert_eq!(op.n_cols, ny);
            let mut line = vec![0.0; ny];
            let mut res = vec![0.0; ny];
            for ix in 0..nx {
                for iy in 0..ny {
                    line[iy] = field[iy * nx + ix];
                }
                op.apply(&line, &mut res);
                for iy in 0..ny {
                    out[iy * nx + ix] = res[iy];
                }
            }
        }
        _ => panic!("axis out of range"),
    }
    out
}

/// Transpose-apply a one-axis operator along `axis`.
pub fn apply_transpose_along_axis(op: &Csr, grid: &Grid, field: &[f64], axis: usize) -> Vec<f64> {
    let nx = grid.nx();
    let ny = grid.ny();
    let mut out = vec![0.0; field.len()];
    match axis {
        0 => {
            let mut line = vec![0.0; nx];
            let mut res = vec![0.0; nx];
            for iy in 0..ny {
                line.copy_from_slice(&field[iy * nx..(iy + 1) * nx]);
                op.apply_transpose(&line, &mut res);
                out[iy * nx..(iy + 1) * nx].copy_from_slice(&res);
            }
        }
        1 => {
            let mut line = vec![0.0; ny];
            let mut res = vec![0.0; ny];
            for ix in 0..nx {
                for iy in 0..ny {
                    line[iy] = field[iy * nx + ix];
                }
                op.apply_transpose(&line, &mut res);
                for iy in 0..ny {
                    out[iy * nx + ix] = res[iy];
                }
            }
        }
        _ => panic!("axis out of range"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;

    #[test]
    fn fornberg_reproduces_classic_stencils() {
        // central second derivative on {-1,0,1}
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_relative_eq!(w[2][0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(w[2][1], -2.0, epsilon = 1e-14);
        assert_relative_eq!(w[2][2], 1.0, epsilon = 1e-14);
        // central first derivative
        assert_relative_eq!(w[1][0], -0.5, epsilon = 1e-14);
        assert_relative_eq!(w[1][2], 0.5, epsilon = 1e-14);
        // central fourth derivative on 5 points
        let w4 = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 4);
        assert_relative_eq!(w4[4][0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(w4[4][1], -4.0, epsilon = 1e-12);
        assert_relative_eq!(w4[4][2], 6.0, epsilon = 1e-12);
        // one-sided first derivative (-3/2, 2, -1/2)
        let w1 = fornberg_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert_relative_eq!(w1[1][0], -1.5, epsilon = 1e-14);
        assert_relative_eq!(w1[1][1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(w1[1][2], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn polynomial_exactness() {
        // second-order stencils are exact on polynomials up to degree m+1
        let n = 12;
        let h = 0.1;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        for m in 1..=4usize {
            let op = axis_derivative(n, h, m).unwrap();
            // f(x) = x^m -> f^(m) = m!
            let f: Vec<f64> = xs.iter().map(|&x| x.powi(m as i32)).collect();
            let out = op.apply_vec(&f);
            let fact: f64 = (1..=m).product::<usize>() as f64;
            for (i, &v) in out.iter().enumerate() {
                assert_relative_eq!(v, fact, epsilon = 1e-7, max_relative = 1e-7);
                let _ = i;
            }
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let n = 16;
        let f = vec![3.25; n];
        for m in 1..=4usize {
            let op = axis_derivative(n, 0.05, m).unwrap();
            for v in op.apply_vec(&f) {
                assert!(v.abs() < 1e-8, "constant should map to 0, got {v}");
            }
        }
    }

    #[test]
    fn convergence_order_two() {
        // error in d/dx sin(pi x) halves by ~4 when h halves
        let err = |n: usize| -> f64 {
            let h = 1.0 / (n - 1) as f64;
            let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
            let f: Vec<f64> = xs.iter().map(|&x| (std::f64::consts::PI * x).sin()).collect();
            let op = axis_derivative(n, h, 1).unwrap();
            let out = op.apply_vec(&f);
            xs.iter()
                .zip(out.iter())
                .map(|(&x, &v)| {
                    (v - std::f64::consts::PI * (std::f64::consts::PI * x).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let e1 = err(65);
        let e2 = err(129);
        let ratio = e1 / e2;
        assert!(
            (3.3..5.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio} ({e1} -> {e2})"
        );
    }

    #[test]
    fn transpose_is_adjoint() {
        let n = 20;
        let op = axis_derivative(n, 0.07, 3).unwrap();
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 5 + 1) % 13) as f64 - 6.0).collect();
        let ax = op.apply_vec(&x);
        let aty = op.apply_transpose_vec(&y);
        let lhs: f64 = ax.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn axis_apply_2d_matches_manual() {
        let grid = build_grid(2, &[[0.0, 1.0], [0.0, 2.0]], &[9, 11], 1.0, 8).unwrap();
        let f: Vec<f64> = (0..grid.n_nodes())
            .map(|i| {
                let [x, y] = grid.coord(i);
                x * x + 3.0 * y
            })
            .collect();
        let d2x = axis_derivative(grid.nx(), grid.axes[0].spacing, 2).unwrap();
        let out = apply_along_axis(&d2x, &grid, &f, 0);
        for v in &out {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-9);
        }
        let d1y = axis_derivative(grid.ny(), grid.axes[1].spacing, 1).unwrap();
        let out = apply_along_axis(&d1y, &grid, &f, 1);
        for v in &out {
            assert_relative_eq!(*v, 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_order_beyond_four() {
        assert!(axis_derivative(16, 0.1, 5).is_err());
    }
}
