//! Discrete spatial operators: multi-index derivatives, the Navier
//! biharmonic, the full parabolic operator, and the Sobolev / trace
//! norms the stability estimates are measured in.
//!
//! All stencils are second-order accurate. The Navier condition
//! `y = Lap y = 0` lets the biharmonic factor through two Dirichlet
//! Laplacians: `Lap` is applied with the boundary values taken as
//! stored (zero for admissible fields) and the output clamped to zero
//! on the boundary, which is the odd-reflection ghost convention.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::stencil::{apply_along_axis, apply_transpose_along_axis, axis_derivative, Csr};

/// Spatial multi-index; the second entry is unused in 1D.
pub type MultiIndex = [usize; 2];

pub fn multi_index_order(beta: MultiIndex) -> usize {
    beta[0] + beta[1]
}

/// Enumerate all multi-indexes with `1 <= |beta| <= max_order`.
pub fn multi_indices_up_to(dim: usize, max_order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 1..=max_order {
        for b1 in (0..=total).rev() {
            let b2 = total - b1;
            if dim == 1 && b2 > 0 {
                continue;
            }
            out.push([b1, b2]);
        }
    }
    out
}

/// Lower-order coefficients `p_beta`, `|beta| <= 2`, with their uniform
/// bound `M0`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    entries: Vec<(MultiIndex, Vec<f64>)>,
    m0: f64,
}

impl CoefficientSet {
    pub fn zero() -> Self {
        CoefficientSet {
            entries: Vec::new(),
            m0: 0.0,
        }
    }

    /// Build from `(beta, field)` pairs; checks `|beta| <= 2` and
    /// `max |p_beta| <= m0` on construction.
    pub fn new(grid: &Grid, entries: Vec<(MultiIndex, Vec<f64>)>, m0: f64) -> Result<Self> {
        if m0 < 0.0 {
            return Err(Error::invalid("M0 must be nonnegative"));
        }
        for (beta, field) in &entries {
            if multi_index_order(*beta) > 2 {
                return Err(Error::invalid(format!(
                    "coefficient multi-index {beta:?} has order > 2"
                )));
            }
            if grid.dim == 1 && beta[1] > 0 {
                return Err(Error::invalid("1D coefficient with a second-axis index"));
            }
            if field.len() != grid.n_nodes() {
                return Err(Error::invalid("coefficient field size mismatch"));
            }
            let sup = field.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if sup > m0 * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "coefficient p_{beta:?} exceeds the bound M0 = {m0}: sup = {sup}"
                )));
            }
        }
        Ok(CoefficientSet { entries, m0 })
    }

    /// Constant coefficient helper.
    pub fn constant(grid: &Grid, terms: &[(MultiIndex, f64)]) -> Result<Self> {
        let m0 = terms.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
        let entries = terms
            .iter()
            .map(|&(b, v)| (b, vec![v; grid.n_nodes()]))
            .collect();
        CoefficientSet::new(grid, entries, m0)
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    pub fn entries(&self) -> &[(MultiIndex, Vec<f64>)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same coefficients scaled by `factor`, with the bound scaled too.
    pub fn scaled(&self, factor: f64) -> Self {
        CoefficientSet {
            entries: self
                .entries
                .iter()
                .map(|(b, f)| (*b, f.iter().map(|v| v * factor).collect()))
                .collect(),
            m0: self.m0 * factor.abs(),
        }
    }
}

/// Boundary-condition tag for assembled operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Navier,
    None,
}

/// Assembled sparse operator on grid fields.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: Csr,
    pub bc: BoundaryCondition,
}

impl DiscreteOperator {
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        self.matrix.apply_vec(field)
    }

    pub fn apply_transpose(&self, field: &[f64]) -> Vec<f64> {
        self.matrix.apply_transpose_vec(field)
    }
}

pub const MAX_PUBLIC_DERIVATIVE: usize = 3;
pub const MAX_SOBOLEV_ORDER: usize = 4;

fn derivative_field(grid: &Grid, field: &[f64], beta: MultiIndex) -> Result<Vec<f64>> {
    if field.len() != grid.n_nodes() {
        return Err(Error::invalid("field size does not match grid"));
    }
    let mut out = field.to_vec();
    if beta[0] > 0 {
        let op = axis_derivative(grid.nx(), grid.axes[0].spacing, beta[0])?;
        out = apply_along_axis(&op, grid, &out, 0);
    }
    if beta[1] > 0 {
        if grid.dim == 1 {
            return Err(Error::invalid("second-axis derivative on a 1D grid"));
        }
        let op = axis_derivative(grid.ny(), grid.axes[1].spacing, beta[1])?;
        out = apply_along_axis(&op, grid, &out, 1);
    }
    Ok(out)
}

/// `d^beta field` with central stencils in the interior and one-sided
/// second-order stencils at the boundary. Orders up to 3 per the public
/// contract (`grad(Lap y)` needs order 3).
pub fn apply_derivative(grid: &Grid, field: &[f64], beta: MultiIndex) -> Result<Vec<f64>> {
    if multi_index_order(beta) > MAX_PUBLIC_DERIVATIVE {
        return Err(Error::invalid(format!(
            "derivative order {} exceeds {MAX_PUBLIC_DERIVATIVE}",
            multi_index_order(beta)
        )));
    }
    derivative_field(grid, field, beta)
}

/// Internal derivative path for the norm machinery (orders up to 4).
pub(crate) fn derivative_unchecked(grid: &Grid, field: &[f64], beta: MultiIndex) -> Result<Vec<f64>> {
    derivative_field(grid, field, beta)
}

/// Dirichlet Laplacian: centered second differences at interior nodes
/// (boundary values read as stored), output forced to zero on the
/// boundary.
pub fn laplacian_dirichlet(grid: &Grid, field: &[f64]) -> Vec<f64> {
    let nx = grid.nx();
    let ny = grid.ny();
    let hx2 = grid.axes[0].spacing * grid.axes[0].spacing;
    let mut out = vec![0.0; field.len()];
    if grid.dim == 1 {
        for ix in 1..nx - 1 {
            out[ix] = (field[ix - 1] - 2.0 * field[ix] + field[ix + 1]) / hx2;
        }
    } else {
        let hy2 = grid.axes[1].spacing * grid.axes[1].spacing;
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                let c = iy * nx + ix;
                out[c] = (field[c - 1] - 2.0 * field[c] + field[c + 1]) / hx2
                    + (field[c - nx] - 2.0 * field[c] + field[c + nx]) / hy2;
            }
        }
    }
    out
}

/// Relative tolerance for the zero-trace precondition of the Navier
/// biharmonic.
pub const TRACE_TOLERANCE: f64 = 1e-9;

/// `Lap^2 field` under the Navier condition `y = Lap y = 0`: two
/// Dirichlet Laplacians. Rejects fields with a nonzero boundary trace.
pub fn apply_biharmonic_navier(grid: &Grid, field: &[f64]) -> Result<Vec<f64>> {
    let scale = field.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut offending = Vec::new();
    for idx in 0..grid.n_nodes() {
        if grid.is_boundary(idx) && field[idx].abs() > TRACE_TOLERANCE * scale.max(1e-300) {
            offending.push(idx);
        }
    }
    if !offending.is_empty() {
        offending.truncate(8);
        return Err(Error::InvariantViolation {
            reason: "nonzero boundary trace; Navier biharmonic needs y = 0 on the boundary".into(),
            nodes: offending,
        });
    }
    let w = laplacian_dirichlet(grid, field);
    Ok(laplacian_dirichlet(grid, &w))
}

/// The operator `P y = dt_y + Lap^2 y + sum p_beta d^beta y`, evaluated
/// nodewise; output is zero on the boundary (the equation lives in the
/// open domain).
pub fn apply_p(grid: &Grid, y: &[f64], dt_y: &[f64], coeffs: &CoefficientSet) -> Result<Vec<f64>> {
    if y.len() != grid.n_nodes() || dt_y.len() != grid.n_nodes() {
        return Err(Error::invalid("field size does not match grid"));
    }
    let mut out = apply_biharmonic_navier(grid, y)?;
    for (beta, p) in coeffs.entries() {
        let d = derivative_field(grid, y, *beta)?;
        for i in 0..out.len() {
            out[i] += p[i] * d[i];
        }
    }
    for i in 0..out.len() {
        out[i] += dt_y[i];
        if grid.is_boundary(i) {
            out[i] = 0.0;
        }
    }
    Ok(out)
}

/// Discrete `H^k` norm over a masked region: trapezoidal quadrature of
/// `sum_{|beta| <= k} |d^beta f|^2`.
pub fn sobolev_norm(grid: &Grid, field: &[f64], k: usize, mask: &[bool]) -> Result<f64> {
    Ok(sobolev_norm_sq(grid, field, k, mask)?.sqrt())
}

pub fn sobolev_norm_sq(grid: &Grid, field: &[f64], k: usize, mask: &[bool]) -> Result<f64> {
    if k > MAX_SOBOLEV_ORDER {
        return Err(Error::invalid(format!(
            "Sobolev order {k} exceeds {MAX_SOBOLEV_ORDER}"
        )));
    }
    if field.len() != grid.n_nodes() || mask.len() != grid.n_nodes() {
        return Err(Error::invalid("field or mask size mismatch"));
    }
    let mut total = l2_sq_masked(grid, field, mask);
    for beta in multi_indices_up_to(grid.dim, k) {
        let d = derivative_field(grid, field, beta)?;
        total += l2_sq_masked(grid, &d, mask);
    }
    Ok(total)
}

pub fn l2_sq_masked(grid: &Grid, field: &[f64], mask: &[bool]) -> f64 {
    let mut acc = 0.0;
    for idx in 0..field.len() {
        if mask[idx] {
            acc += grid.quad_weight_masked(idx, mask) * field[idx] * field[idx];
        }
    }
    acc
}

pub fn l2_norm_masked(grid: &Grid, field: &[f64], mask: &[bool]) -> f64 {
    l2_sq_masked(grid, field, mask).sqrt()
}

/// Trapezoid weight over a contiguous range of time levels.
pub fn time_trapezoid_weight(m: usize, first: usize, last: usize) -> f64 {
    if m == first || m == last {
        0.5
    } else {
        1.0
    }
}

/// A sampled boundary trace series on `gamma x` time levels.
/// In 1D `gamma` is a single point and the tangential norm degenerates
/// to the plain time series of point values.
#[derive(Debug, Clone)]
pub struct TraceSeries {
    /// Level-major values: `values[m * n_tang + q]`.
    pub values: Vec<f64>,
    pub n_tang: usize,
    pub n_levels: usize,
    pub dt: f64,
    /// Tangential node spacing (2D edges); `None` in 1D.
    pub tang_spacing: Option<f64>,
}

impl TraceSeries {
    pub fn zeros(n_tang: usize, n_levels: usize, dt: f64, tang_spacing: Option<f64>) -> Self {
        TraceSeries {
            values: vec![0.0; n_tang * n_levels],
            n_tang,
            n_levels,
            dt,
            tang_spacing,
        }
    }

    #[inline]
    pub fn at(&self, level: usize, q: usize) -> f64 {
        self.values[level * self.n_tang + q]
    }

    pub fn level(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_tang..(m + 1) * self.n_tang]
    }

    pub fn level_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.values[m * self.n_tang..(m + 1) * self.n_tang]
    }

    fn tang_l2_sq(&self, level: usize) -> f64 {
        let g = self.level(level);
        match self.tang_spacing {
            None => g[0] * g[0],
            Some(h) => {
                let mut acc = 0.0;
                for (q, &v) in g.iter().enumerate() {
                    let w = if q == 0 || q == self.n_tang - 1 { 0.5 } else { 1.0 };
                    acc += w * h * v * v;
                }
                acc
            }
        }
    }

    /// Tangential `H^k` norm (squared) at one time level.
    fn tang_hk_sq(&self, level: usize, k: usize) -> Result<f64> {
        let mut total = self.tang_l2_sq(level);
        if let Some(h) = self.tang_spacing {
            let g = self.level(level).to_vec();
            for m in 1..=k {
                let op = axis_derivative(self.n_tang, h, m)?;
                let d = op.apply_vec(&g);
                let mut acc = 0.0;
                for (q, &v) in d.iter().enumerate() {
                    let w = if q == 0 || q == self.n_tang - 1 { 0.5 } else { 1.0 };
                    acc += w * h * v * v;
                }
                total += acc;
            }
        }
        Ok(total)
    }

    /// `L^2(0,T)` of the tangential `H^k` norm.
    pub fn l2t_hk(&self, k: usize) -> Result<f64> {
        let mut acc = 0.0;
        for m in 0..self.n_levels {
            let w = time_trapezoid_weight(m, 0, self.n_levels - 1);
            acc += w * self.dt * self.tang_hk_sq(m, k)?;
        }
        Ok(acc.sqrt())
    }

    /// `H^1(0,T; L^2(gamma))` with forward difference quotients in time.
    pub fn h1t_l2(&self) -> f64 {
        let mut acc = 0.0;
        for m in 0..self.n_levels {
            let w = time_trapezoid_weight(m, 0, self.n_levels - 1);
            acc += w * self.dt * self.tang_l2_sq(m);
        }
        for m in 0..self.n_levels - 1 {
            let mut dsq = 0.0;
            let g0 = self.level(m);
            let g1 = self.level(m + 1);
            match self.tang_spacing {
                None => {
                    let d = (g1[0] - g0[0]) / self.dt;
                    dsq = d * d;
                }
                Some(h) => {
                    for q in 0..self.n_tang {
                        let w = if q == 0 || q == self.n_tang - 1 { 0.5 } else { 1.0 };
                        let d = (g1[q] - g0[q]) / self.dt;
                        dsq += w * h * d * d;
                    }
                }
            }
            acc += self.dt * dsq;
        }
        acc.sqrt()
    }
}

/// Integer-order surrogate of the trace norm
/// `|d_nu^j u|_{L^2(0,T; H^{7/2-j}(gamma))}`: tangential orders 4, 3,
/// 2, 1 for `j = 0..3` (the ceiling of `7/2 - j`). In 1D, where `gamma`
/// is a point, this degenerates to `L^2(0,T)` of the point values.
pub fn trace_norm_surrogate(trace: &TraceSeries, j: usize) -> Result<f64> {
    if j > 3 {
        return Err(Error::invalid(format!(
            "trace derivative index {j} not in 0..=3"
        )));
    }
    let order = 4 - j;
    trace.l2t_hk(order)
}

/// Assemble the full operator `d^beta` as a sparse matrix (needed in
/// transposed form by the adjoint solver).
pub fn assemble_derivative(grid: &Grid, beta: MultiIndex) -> Result<Csr> {
    let n = grid.n_nodes();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let opx = if beta[0] > 0 {
        Some(axis_derivative(grid.nx(), grid.axes[0].spacing, beta[0])?)
    } else {
        None
    };
    let opy = if beta[1] > 0 {
        Some(axis_derivative(grid.ny(), grid.axes[1].spacing, beta[1])?)
    } else {
        None
    };
    for idx in 0..n {
        let (ix, iy) = grid.split_index(idx);
        let term_x: Vec<(usize, f64)> = match &opx {
            Some(op) => op.row(ix).collect(),
            None => vec![(ix, 1.0)],
        };
        let term_y: Vec<(usize, f64)> = match &opy {
            Some(op) => op.row(iy).collect(),
            None => vec![(iy, 1.0)],
        };
        let mut row = Vec::with_capacity(term_x.len() * term_y.len());
        for &(jy, vy) in &term_y {
            for &(jx, vx) in &term_x {
                row.push((grid.index(jx, jy), vx * vy));
            }
        }
        rows.push(row);
    }
    Ok(Csr::from_rows(n, &rows))
}

/// Gradient of the Laplacian (order-3 composite used by the estimate's
/// left-hand side): the Laplacian is taken in Dirichlet form, the outer
/// gradient with one-sided closures.
pub fn grad_laplacian(grid: &Grid, field: &[f64]) -> Result<Vec<Vec<f64>>> {
    let lap = laplacian_dirichlet(grid, field);
    let mut out = Vec::new();
    for a in 0..grid.dim {
        let mut beta = [0usize; 2];
        beta[a] = 1;
        out.push(derivative_field(grid, &lap, beta)?);
    }
    Ok(out)
}

/// Squared Hessian magnitude per node (mixed entries counted twice).
pub fn hessian_sq_magnitude(grid: &Grid, field: &[f64]) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let mut acc = vec![0.0; n];
    if grid.dim == 1 {
        let dxx = derivative_field(grid, field, [2, 0])?;
        for i in 0..n {
            acc[i] = dxx[i] * dxx[i];
        }
    } else {
        let dxx = derivative_field(grid, field, [2, 0])?;
        let dyy = derivative_field(grid, field, [0, 2])?;
        let dxy = derivative_field(grid, field, [1, 1])?;
        for i in 0..n {
            acc[i] = dxx[i] * dxx[i] + dyy[i] * dyy[i] + 2.0 * dxy[i] * dxy[i];
        }
    }
    Ok(acc)
}

/// Squared gradient magnitude per node.
pub fn gradient_sq_magnitude(grid: &Grid, field: &[f64]) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let mut acc = vec![0.0; n];
    for a in 0..grid.dim {
        let mut beta = [0usize; 2];
        beta[a] = 1;
        let d = derivative_field(grid, field, beta)?;
        for i in 0..n {
            acc[i] += d[i] * d[i];
        }
    }
    Ok(acc)
}

/// Apply the transpose of `d^beta` (for adjoint assembly).
pub fn apply_derivative_transpose(
    grid: &Grid,
    field: &[f64],
    beta: MultiIndex,
) -> Result<Vec<f64>> {
    let mut out = field.to_vec();
    // (Dx^b1 Dy^b2)^T = Dx^T Dy^T: reverse the composition order
    if beta[1] > 0 {
        let op = axis_derivative(grid.ny(), grid.axes[1].spacing, beta[1])?;
        out = apply_transpose_along_axis(&op, grid, &out, 1);
    }
    if beta[0] > 0 {
        let op = axis_derivative(grid.nx(), grid.axes[0].spacing, beta[0])?;
        out = apply_transpose_along_axis(&op, grid, &out, 0);
    }
    Ok(out)
}
