//! Numerical evaluation of the weighted a-priori inequality and the
//! auxiliary estimates it feeds: the two sides of the estimate, an
//! empirical-constant sweep over the large parameter `s`, the
//! energy-shift identity at the observation time, and the collapse of
//! the weighted time integral as `s` grows.
//!
//! Every weighted term is evaluated in log space,
//! `s^k phi^k e^{2 s alpha} = exp(2 s alpha + k ln(s phi))`, which stays
//! finite (underflowing to zero, never overflowing) for `s` up to 1e6.

use crate::error::{Error, Result};
use crate::forward::SpaceTimeField;
use crate::grid::{Grid, SubdomainMasks};
use crate::ops::{
    apply_biharmonic_navier, grad_laplacian, gradient_sq_magnitude, hessian_sq_magnitude,
    CoefficientSet,
};
use crate::weights::WeightParams;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Time quadrature on the interior of the working window: a uniform
/// subdivision into `n_cells` with the two singular endpoint cells
/// excluded (trapezoid weights on what remains).
#[derive(Debug, Clone)]
pub struct WindowQuadrature {
    pub times: Vec<f64>,
    pub dt: f64,
}

impl WindowQuadrature {
    pub fn new(params: &WeightParams, n_cells: usize) -> Self {
        WindowQuadrature {
            times: params.interior_window_times(n_cells),
            dt: 2.0 * params.tau / n_cells as f64,
        }
    }

    pub fn weight(&self, level: usize) -> f64 {
        let w = if level == 0 || level == self.times.len() - 1 {
            0.5
        } else {
            1.0
        };
        w * self.dt
    }

    pub fn n_levels(&self) -> usize {
        self.times.len()
    }
}

/// Nodewise squared quantities of one field, precomputed per level so
/// an `s`-sweep only reweights them.
pub struct LhsTerms {
    pub y2: Vec<f64>,
    pub grad2: Vec<f64>,
    pub hess2: Vec<f64>,
    pub gradlap2: Vec<f64>,
    pub dty2: Vec<f64>,
    pub py2: Vec<f64>,
    pub n_nodes: usize,
    pub n_levels: usize,
}

/// Precompute the derivative magnitudes entering the two sides.
/// `y` is sampled on the window quadrature times and must satisfy the
/// Navier condition (checked by the biharmonic).
pub fn precompute_terms(
    grid: &Grid,
    y: &SpaceTimeField,
    coeffs: &CoefficientSet,
) -> Result<LhsTerms> {
    let n = grid.n_nodes();
    let k = y.n_levels;
    let mut terms = LhsTerms {
        y2: vec![0.0; n * k],
        grad2: vec![0.0; n * k],
        hess2: vec![0.0; n * k],
        gradlap2: vec![0.0; n * k],
        dty2: vec![0.0; n * k],
        py2: vec![0.0; n * k],
        n_nodes: n,
        n_levels: k,
    };
    for m in 0..k {
        let lvl = y.level(m);
        let dty = y.dt_field(m);
        let grad2 = gradient_sq_magnitude(grid, lvl)?;
        let hess2 = hessian_sq_magnitude(grid, lvl)?;
        let gl = grad_laplacian(grid, lvl)?;
        let py = crate::ops::apply_p(grid, lvl, &dty, coeffs)?;
        for i in 0..n {
            let o = m * n + i;
            terms.y2[o] = lvl[i] * lvl[i];
            terms.grad2[o] = grad2[i];
            terms.hess2[o] = hess2[i];
            terms.gradlap2[o] = gl.iter().map(|g| g[i] * g[i]).sum();
            terms.dty2[o] = dty[i] * dty[i];
            terms.py2[o] = py[i] * py[i];
        }
    }
    Ok(terms)
}

/// The two sides of the weighted inequality.
#[derive(Debug, Clone, Copy)]
pub struct CarlemanSides {
    /// Weighted sum `s^6 phi^6 y^2 + s^4 phi^4 |grad y|^2 + s^2 phi^2
    /// |Hess y|^2 + s phi |grad Lap y|^2 + (s phi)^{-1} (|dt y|^2 +
    /// |Hess y|^2)`, integrated with `e^{2 s alpha}`.
    pub lhs: f64,
    /// `int |P y|^2 e^{2 s alpha}`.
    pub rhs_pde: f64,
    /// Unweighted `|y|^2_{L^2(omega x window)}`.
    pub rhs_obs: f64,
}

impl CarlemanSides {
    pub fn c_emp(&self) -> f64 {
        let denom = self.rhs_pde + self.rhs_obs;
        if denom == 0.0 {
            if self.lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.lhs / denom
        }
    }
}

#[inline]
fn log_weight(s: f64, alpha: f64, log_s_phi: f64, k: i32) -> f64 {
    (2.0 * s * alpha + k as f64 * log_s_phi).exp()
}

/// Evaluate both sides from precomputed terms at one value of `s`,
/// restricted to the supplied subset of window levels.
pub fn sides_from_terms(
    grid: &Grid,
    terms: &LhsTerms,
    params: &WeightParams,
    masks: &SubdomainMasks,
    quad: &WindowQuadrature,
    levels: std::ops::Range<usize>,
    s: f64,
) -> Result<CarlemanSides> {
    let n = grid.n_nodes();
    let mut lhs = 0.0;
    let mut rhs_pde = 0.0;
    let mut rhs_obs = 0.0;
    let ls = s.ln();
    for m in levels.clone() {
        let t = quad.times[m];
        let tw = {
            let w = if m == levels.start || m == levels.end - 1 {
                0.5
            } else {
                1.0
            };
            w * quad.dt
        };
        for idx in 0..n {
            let w = params.eval(idx, t)?;
            let lsp = ls + w.phi.ln();
            let qw = grid.quad_weight(idx) * tw;
            let o = m * n + idx;
            let mut acc = 0.0;
            acc += log_weight(s, w.alpha, lsp, 6) * terms.y2[o];
            acc += log_weight(s, w.alpha, lsp, 4) * terms.grad2[o];
            acc += log_weight(s, w.alpha, lsp, 2) * terms.hess2[o];
            acc += log_weight(s, w.alpha, lsp, 1) * terms.gradlap2[o];
            acc += log_weight(s, w.alpha, lsp, -1) * (terms.dty2[o] + terms.hess2[o]);
            lhs += qw * acc;
            rhs_pde += qw * log_weight(s, w.alpha, lsp, 0) * terms.py2[o];
            if masks.omega[idx] {
                rhs_obs += grid.quad_weight_masked(idx, &masks.omega) * tw * terms.y2[o];
            }
        }
    }
    if !(lhs.is_finite() && rhs_pde.is_finite() && rhs_obs.is_finite()) {
        return Err(Error::SolverFailure(
            "weighted quadrature produced a non-finite value".into(),
        ));
    }
    Ok(CarlemanSides {
        lhs,
        rhs_pde,
        rhs_obs,
    })
}

/// Both sides for one field at one `s` over the full interior window.
pub fn carleman_sides(
    grid: &Grid,
    y: &SpaceTimeField,
    coeffs: &CoefficientSet,
    params: &WeightParams,
    masks: &SubdomainMasks,
    quad: &WindowQuadrature,
    s: f64,
) -> Result<CarlemanSides> {
    if y.n_levels != quad.n_levels() {
        return Err(Error::invalid(
            "field is not sampled on the window quadrature times",
        ));
    }
    // Navier trace gate
    for m in [0, y.n_levels - 1, y.n_levels / 2] {
        apply_biharmonic_navier(grid, y.level(m))?;
    }
    let terms = precompute_terms(grid, y, coeffs)?;
    sides_from_terms(grid, &terms, params, masks, quad, 0..quad.n_levels(), s)
}

/// One row of the `s`-sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub s: f64,
    /// max over the suite of `lhs / (rhs_pde + rhs_obs)`.
    pub c_max: f64,
    pub c_per_field: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RatioSweep {
    pub rows: Vec<SweepRow>,
    /// Index of the empirical knee: the first sweep point after which
    /// the max ratio stops growing.
    pub knee_index: usize,
}

impl RatioSweep {
    pub fn knee_s(&self) -> f64 {
        self.rows[self.knee_index].s
    }

    pub fn max_c_at_or_after_knee(&self) -> f64 {
        self.rows[self.knee_index..]
            .iter()
            .fold(0.0f64, |a, r| a.max(r.c_max))
    }
}

/// Sweep the empirical constant over a suite of fields and a geometric
/// `s` range; the knee is where the max ratio stops growing.
pub fn ratio_sweep(
    grid: &Grid,
    suite: &[SpaceTimeField],
    coeffs: &CoefficientSet,
    params: &WeightParams,
    masks: &SubdomainMasks,
    quad: &WindowQuadrature,
    s_range: &[f64],
) -> Result<RatioSweep> {
    if s_range.len() < 5 {
        return Err(Error::invalid("s sweep needs at least 5 points"));
    }
    let mut all_terms = Vec::with_capacity(suite.len());
    for y in suite {
        for m in [0, y.n_levels - 1] {
            apply_biharmonic_navier(grid, y.level(m))?;
        }
        all_terms.push(precompute_terms(grid, y, coeffs)?);
    }
    let mut rows = Vec::with_capacity(s_range.len());
    for &s in s_range {
        let mut per = Vec::with_capacity(suite.len());
        for terms in &all_terms {
            let sides =
                sides_from_terms(grid, terms, params, masks, quad, 0..quad.n_levels(), s)?;
            per.push(sides.c_emp());
        }
        let c_max = per.iter().cloned().fold(0.0f64, f64::max);
        rows.push(SweepRow {
            s,
            c_max,
            c_per_field: per,
        });
    }
    let mut knee = rows.len() - 1;
    for i in 0..rows.len() - 1 {
        if rows[i + 1].c_max <= rows[i].c_max * (1.0 + 1e-9) {
            knee = i;
            break;
        }
    }
    Ok(RatioSweep {
        rows,
        knee_index: knee,
    })
}

/// Build the standard verification suite: window-translated modal
/// solutions of the homogeneous equation plus random smooth fields with
/// the Navier trace built in (sine expansions in space).
pub fn build_ratio_suite(
    grid: &Grid,
    quad: &WindowQuadrature,
    n_fields: usize,
    seed: u64,
) -> Vec<SpaceTimeField> {
    let n = grid.n_nodes();
    let len = grid.axes[0].hi() - grid.axes[0].lo();
    let lo = grid.axes[0].lo();
    let pi = std::f64::consts::PI;
    let t_start = quad.times[0];
    let mut suite = Vec::with_capacity(n_fields);
    let n_modal = 3.min(n_fields);
    for k in 1..=n_modal {
        let rate = (k as f64 * pi / len).powi(4);
        let mut f = SpaceTimeField::zeros(n, quad.n_levels(), quad.dt);
        for (m, &t) in quad.times.iter().enumerate() {
            let amp = (-rate * (t - t_start)).exp();
            let lvl = f.level_mut(m);
            for idx in 0..n {
                let x = grid.coord(idx)[0];
                lvl[idx] = amp * (k as f64 * pi * (x - lo) / len).sin();
                if grid.is_boundary(idx) {
                    lvl[idx] = 0.0;
                }
            }
        }
        suite.push(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while suite.len() < n_fields {
        let modes = 5usize;
        let coefs: Vec<(f64, f64, f64, f64)> = (1..=modes)
            .map(|k| {
                let scale = 1.0 / (k * k * k) as f64;
                (
                    rng.random_range(-1.0..1.0) * scale,
                    rng.random_range(-1.0..1.0) * scale,
                    rng.random_range(-1.0..1.0) * scale,
                    rng.random_range(0.5..3.0),
                )
            })
            .collect();
        let mut f = SpaceTimeField::zeros(n, quad.n_levels(), quad.dt);
        let t_span = quad.times[quad.n_levels() - 1] - t_start;
        for (m, &t) in quad.times.iter().enumerate() {
            let u = (t - t_start) / t_span;
            let lvl = f.level_mut(m);
            for idx in 0..n {
                let x = grid.coord(idx)[0];
                let mut v = 0.0;
                for (k, &(a, b, c, w)) in coefs.iter().enumerate() {
                    let kk = (k + 1) as f64;
                    let sx = (kk * pi * (x - lo) / len).sin();
                    v += sx * (a + b * (w * pi * u).cos() + c * (w * pi * u).sin());
                }
                lvl[idx] = if grid.is_boundary(idx) { 0.0 } else { v };
            }
        }
        suite.push(f);
    }
    suite
}

/// Output of the energy-shift check at the window midpoint.
#[derive(Debug, Clone, Copy)]
pub struct EnergyShift {
    /// `int |z(x, t0)|^2 e^{2 s alpha(x, t0)} dx`.
    pub lhs_point: f64,
    /// `int int (|z| |dt z| + s phi^2 |z|^2) e^{2 s alpha}` over the window.
    pub rhs_int: f64,
    /// The time integral of `d/dt (|z|^2 e^{2 s alpha})` over the lower
    /// half window, expanded as `(2 z dt z + 2 s (dt alpha) z^2) e^{2 s
    /// alpha}` (the fundamental-theorem route to `lhs_point`; the lower
    /// limit dies because `alpha -> -infinity`).
    pub ft_integral: f64,
}

impl EnergyShift {
    pub fn ft_relative_gap(&self) -> f64 {
        if self.lhs_point == 0.0 {
            return 0.0;
        }
        (self.ft_integral - self.lhs_point).abs() / self.lhs_point
    }

    pub fn c_emp(&self) -> f64 {
        if self.rhs_int == 0.0 {
            if self.lhs_point == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.lhs_point / self.rhs_int
        }
    }
}

/// Evaluate the energy-shift quantities for a field `z` sampled on the
/// window quadrature. The midpoint `t0` must be a quadrature node
/// (even `n_cells`).
pub fn check_energy_shift(
    grid: &Grid,
    z: &SpaceTimeField,
    params: &WeightParams,
    quad: &WindowQuadrature,
    s: f64,
) -> Result<EnergyShift> {
    if z.n_levels != quad.n_levels() {
        return Err(Error::invalid(
            "field is not sampled on the window quadrature times",
        ));
    }
    let n = grid.n_nodes();
    let mid = quad
        .times
        .iter()
        .position(|&t| (t - params.t0).abs() < 1e-12 * params.tau)
        .ok_or_else(|| {
            Error::invalid("window midpoint t0 is not a quadrature node; use even n_cells")
        })?;

    let mut lhs_point = 0.0;
    {
        let lvl = z.level(mid);
        for idx in 0..n {
            let w = params.eval(idx, quad.times[mid])?;
            lhs_point += grid.quad_weight(idx) * lvl[idx] * lvl[idx] * (2.0 * s * w.alpha).exp();
        }
    }

    let mut rhs_int = 0.0;
    for m in 0..quad.n_levels() {
        let t = quad.times[m];
        let tw = quad.weight(m);
        let lvl = z.level(m);
        let dtz = z.dt_field(m);
        for idx in 0..n {
            let w = params.eval(idx, t)?;
            let e = (2.0 * s * w.alpha).exp();
            let qw = grid.quad_weight(idx) * tw;
            rhs_int += qw
                * e
                * (lvl[idx].abs() * dtz[idx].abs() + s * w.phi * w.phi * lvl[idx] * lvl[idx]);
        }
    }

    // fundamental-theorem route over (t0 - tau, t0]
    let mut ft = 0.0;
    for m in 0..=mid {
        let t = quad.times[m];
        let tw = if m == 0 || m == mid { 0.5 } else { 1.0 } * quad.dt;
        let lvl = z.level(m);
        let dtz = z.dt_field(m);
        for idx in 0..n {
            let w = params.eval(idx, t)?;
            let da = params.dt_alpha(idx, t)?;
            let e = (2.0 * s * w.alpha).exp();
            ft += grid.quad_weight(idx)
                * tw
                * e
                * (2.0 * lvl[idx] * dtz[idx] + 2.0 * s * da * lvl[idx] * lvl[idx]);
        }
    }

    Ok(EnergyShift {
        lhs_point,
        rhs_int,
        ft_integral: ft,
    })
}

/// The collapse constant from the comparison of `alpha(t)` with
/// `alpha(t0)`: `C0 = 2 (e^{2 lambda dmax} - e^{lambda dmax})`, the
/// uniform-in-x lower bound of `2 (E - e^{lambda d})`.
pub fn collapse_constant(params: &WeightParams) -> f64 {
    2.0 * (params.e2ld - (params.lambda * params.d.d_max).exp())
}

/// Table of `I(s) = int e^{-C0 s (h(t) - h(t0))} dt` over the window.
/// `I(0)` equals the window length; `I(s)` decreases strictly to zero.
pub fn check_lebesgue_collapse(
    params: &WeightParams,
    s_range: &[f64],
    n_cells: usize,
) -> Result<Vec<(f64, f64)>> {
    let c0 = collapse_constant(params);
    if !(c0 > 0.0) {
        return Err(Error::invalid("collapse constant must be positive"));
    }
    let a = params.t0 - params.tau;
    let dt = 2.0 * params.tau / n_cells as f64;
    let h0 = params.h_of(params.t0)?;
    let mut out = Vec::with_capacity(s_range.len());
    for &s in s_range {
        let mut acc = 0.0;
        for j in 0..=n_cells {
            let w = if j == 0 || j == n_cells { 0.5 } else { 1.0 };
            let integrand = if j == 0 || j == n_cells {
                // h -> infinity at the endpoints: the integrand limit is
                // 0 for s > 0 and 1 for s = 0
                if s > 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                let t = a + j as f64 * dt;
                let h = params.h_of(t)?;
                (-c0 * s * (h - h0)).exp()
            };
            acc += w * dt * integrand;
        }
        out.push((s, acc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, build_subdomains, BoxSpec, SubdomainSpec};
    use crate::weights::{build_distance_fn, WeightParams};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn setup(nodes: usize) -> (Grid, SubdomainMasks, WeightParams) {
        let g = build_grid(1, &[[0.0, 1.0]], &[nodes], 1.0, 100).unwrap();
        let spec = SubdomainSpec {
            omega: BoxSpec::new_1d(0.4, 0.6),
            omega0: None,
            gamma: None,
        };
        let masks = build_subdomains(&g, &spec).unwrap();
        let d = build_distance_fn(&g, &masks).unwrap();
        let params = WeightParams::new(1.0, 0.5, 0.25, 1.0, d).unwrap();
        (g, masks, params)
    }

    fn modal_field(grid: &Grid, quad: &WindowQuadrature, k: usize) -> SpaceTimeField {
        let pi = PI;
        let len = grid.axes[0].hi() - grid.axes[0].lo();
        let rate = (k as f64 * pi / len).powi(4);
        let t_start = quad.times[0];
        let mut f = SpaceTimeField::zeros(grid.n_nodes(), quad.n_levels(), quad.dt);
        for (m, &t) in quad.times.iter().enumerate() {
            let amp = (-rate * (t - t_start)).exp();
            let lvl = f.level_mut(m);
            for idx in 0..grid.n_nodes() {
                let x = grid.coord(idx)[0];
                lvl[idx] = amp * (k as f64 * pi * x / len).sin();
                if grid.is_boundary(idx) {
                    lvl[idx] = 0.0;
                }
            }
        }
        f
    }

    /// Length-2 domain: the first mode decays at rate (pi/2)^4 ~ 6, slow
    /// enough that the weighted time profile has no canceling lobes (the
    /// fundamental-theorem route is cancellation-sensitive for very stiff
    /// fields).
    fn setup_len2(nodes: usize) -> (Grid, SubdomainMasks, WeightParams) {
        let g = build_grid(1, &[[0.0, 2.0]], &[nodes], 1.0, 100).unwrap();
        let spec = SubdomainSpec {
            omega: BoxSpec::new_1d(0.8, 1.2),
            omega0: None,
            gamma: None,
        };
        let masks = build_subdomains(&g, &spec).unwrap();
        let d = build_distance_fn(&g, &masks).unwrap();
        let params = WeightParams::new(1.0, 0.5, 0.25, 1.0, d).unwrap();
        (g, masks, params)
    }

    #[test]
    fn zero_field_gives_zero_triple() {
        let (g, masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 64);
        let z = SpaceTimeField::zeros(g.n_nodes(), quad.n_levels(), quad.dt);
        let sides =
            carleman_sides(&g, &z, &CoefficientSet::zero(), &params, &masks, &quad, 2.0).unwrap();
        assert_eq!(sides.lhs, 0.0);
        assert_eq!(sides.rhs_pde, 0.0);
        assert_eq!(sides.rhs_obs, 0.0);
        assert_eq!(sides.c_emp(), 0.0);
    }

    #[test]
    fn modal_solution_bounded_by_observation() {
        // P y ~ 0 for the modal solution, so lhs <= C * rhs_obs with a
        // finite empirical constant across the sweep
        let (g, masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 64);
        let y = modal_field(&g, &quad, 1);
        for s in [0.5, 1.0, 2.0, 4.0] {
            let sides =
                carleman_sides(&g, &y, &CoefficientSet::zero(), &params, &masks, &quad, s)
                    .unwrap();
            assert!(sides.rhs_obs > 0.0);
            assert!(sides.lhs.is_finite());
            let c = sides.lhs / sides.rhs_obs;
            assert!(c.is_finite() && c >= 0.0);
        }
    }

    #[test]
    fn field_vanishing_on_omega_routes_through_pde_term() {
        // compactly supported field away from omega: rhs_obs = 0 exactly
        let (g, masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 64);
        let mut y = SpaceTimeField::zeros(g.n_nodes(), quad.n_levels(), quad.dt);
        for (m, &t) in quad.times.iter().enumerate() {
            let amp = 1.0 + 0.3 * (4.0 * (t - params.t0)).sin();
            let lvl = y.level_mut(m);
            for idx in 0..g.n_nodes() {
                let x = g.coord(idx)[0];
                let bump = crate::weights::ramp_c4((x - 0.70) / 0.08)
                    * crate::weights::ramp_c4((0.95 - x) / 0.08);
                lvl[idx] = amp * bump;
            }
        }
        let sides =
            carleman_sides(&g, &y, &CoefficientSet::zero(), &params, &masks, &quad, 1.0).unwrap();
        assert_eq!(sides.rhs_obs, 0.0);
        assert!(sides.rhs_pde > 0.0);
        let c = sides.lhs / sides.rhs_pde;
        assert!(c.is_finite());
    }

    #[test]
    fn log_space_weights_never_overflow() {
        let (g, _masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 32);
        for &s in &[1.0, 1e3, 1e6] {
            for &t in &quad.times {
                for idx in (0..g.n_nodes()).step_by(13) {
                    let w = params.eval(idx, t).unwrap();
                    for k in [-1i32, 0, 1, 2, 4, 6, 7] {
                        let v = log_weight(s, w.alpha, s.ln() + w.phi.ln(), k);
                        assert!(v.is_finite(), "overflow at s={s}, k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn endpoint_truncation_is_negligible() {
        // dropping one more quadrature cell at each end changes the lhs
        // by < 1% once s is past the knee
        let (g, masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 128);
        let y = modal_field(&g, &quad, 1);
        let terms = precompute_terms(&g, &y, &CoefficientSet::zero()).unwrap();
        let s = 2.0;
        let full =
            sides_from_terms(&g, &terms, &params, &masks, &quad, 0..quad.n_levels(), s).unwrap();
        let trimmed =
            sides_from_terms(&g, &terms, &params, &masks, &quad, 1..quad.n_levels() - 1, s)
                .unwrap();
        let rel = (full.lhs - trimmed.lhs).abs() / full.lhs;
        assert!(rel < 0.01, "endpoint mass {rel} not negligible");
    }

    #[test]
    fn ratio_sweep_has_no_upward_trend_past_knee() {
        let (g, masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 64);
        let suite = build_ratio_suite(&g, &quad, 10, 42);
        assert_eq!(suite.len(), 10);
        let s_range: Vec<f64> = (0..7).map(|i| 0.5 * 2f64.powi(i)).collect();
        let sweep = ratio_sweep(
            &g,
            &suite,
            &CoefficientSet::zero(),
            &params,
            &masks,
            &quad,
            &s_range,
        )
        .unwrap();
        let knee_c = sweep.rows[sweep.knee_index].c_max;
        assert!(knee_c.is_finite() && knee_c > 0.0);
        assert!(sweep.max_c_at_or_after_knee() <= 1.2 * knee_c);
        // at least 5 sweep points at or above the knee
        assert!(sweep.rows.len() - sweep.knee_index >= 5);
    }

    #[test]
    fn ratio_sweep_bounded_under_coefficient_doubling() {
        // constants depend on the coefficient bound M0: doubling the
        // coefficients changes C_emp by a bounded factor
        let (g, masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 48);
        let suite = build_ratio_suite(&g, &quad, 6, 7);
        let coeffs = CoefficientSet::constant(&g, &[([0, 0], 0.5), ([1, 0], 0.25)]).unwrap();
        let doubled = coeffs.scaled(2.0);
        let s_range = [0.5, 1.0, 2.0, 4.0, 8.0];
        let a = ratio_sweep(&g, &suite, &coeffs, &params, &masks, &quad, &s_range).unwrap();
        let b = ratio_sweep(&g, &suite, &doubled, &params, &masks, &quad, &s_range).unwrap();
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            let f = rb.c_max / ra.c_max;
            assert!(
                (0.2..5.0).contains(&f),
                "doubling M0 changed C_emp by {f} at s = {}",
                ra.s
            );
        }
    }

    #[test]
    fn ratio_sweep_invariant_under_time_translation() {
        // the weights see only t - t0, so translating the window and the
        // field together reproduces C_emp exactly
        let (g, masks, _) = setup(101);
        let d = build_distance_fn(&g, &masks).unwrap();
        let p1 = WeightParams::new(1.0, 0.4, 0.25, 1.0, d.clone()).unwrap();
        let p2 = WeightParams::new(1.0, 0.6, 0.25, 1.0, d).unwrap();
        let q1 = WindowQuadrature::new(&p1, 48);
        let q2 = WindowQuadrature::new(&p2, 48);
        let suite1 = build_ratio_suite(&g, &q1, 4, 9);
        // same fields expressed relative to each window
        let suite2: Vec<SpaceTimeField> = suite1.to_vec();
        let s_range = [0.5, 1.0, 2.0, 4.0, 8.0];
        let a = ratio_sweep(&g, &suite1, &CoefficientSet::zero(), &p1, &masks, &q1, &s_range)
            .unwrap();
        let b = ratio_sweep(&g, &suite2, &CoefficientSet::zero(), &p2, &masks, &q2, &s_range)
            .unwrap();
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_relative_eq!(ra.c_max, rb.c_max, max_relative = 1e-12);
        }
    }

    #[test]
    fn energy_shift_zero_field() {
        let (g, _masks, params) = setup(101);
        let quad = WindowQuadrature::new(&params, 64);
        let z = SpaceTimeField::zeros(g.n_nodes(), quad.n_levels(), quad.dt);
        let es = check_energy_shift(&g, &z, &params, &quad, 2.0).unwrap();
        assert_eq!(es.lhs_point, 0.0);
        assert_eq!(es.rhs_int, 0.0);
    }

    #[test]
    fn energy_shift_inequality_and_identity() {
        let (g, _masks, params) = setup_len2(101);
        let quad = WindowQuadrature::new(&params, 512);
        let z = modal_field(&g, &quad, 1);
        let s = 1.0;
        let es = check_energy_shift(&g, &z, &params, &quad, s).unwrap();
        assert!(es.lhs_point > 0.0 && es.rhs_int > 0.0);
        let c = es.c_emp();
        assert!(c.is_finite());
        // fundamental-theorem identity within 1% on the fine grid
        assert!(
            es.ft_relative_gap() < 0.01,
            "identity gap {} too large",
            es.ft_relative_gap()
        );
    }

    #[test]
    fn energy_shift_constant_stable_under_refinement() {
        let (g1, _m1, p1) = setup_len2(101);
        let (g2, _m2, p2) = setup_len2(201);
        let s = 1.0;
        let q1 = WindowQuadrature::new(&p1, 256);
        let q2 = WindowQuadrature::new(&p2, 512);
        let z1 = modal_field(&g1, &q1, 1);
        let z2 = modal_field(&g2, &q2, 1);
        let c1 = check_energy_shift(&g1, &z1, &p1, &q1, s).unwrap().c_emp();
        let c2 = check_energy_shift(&g2, &z2, &p2, &q2, s).unwrap().c_emp();
        assert!(
            (c1 - c2).abs() / c1 < 0.25,
            "energy-shift constant drifted: {c1} vs {c2}"
        );
    }

    #[test]
    fn lebesgue_collapse_monotone() {
        let (_g, _masks, params) = setup(101);
        let s_range: Vec<f64> = std::iter::once(0.0)
            .chain((0..12).map(|i| 0.01 * 4f64.powi(i)))
            .collect();
        let table = check_lebesgue_collapse(&params, &s_range, 4096).unwrap();
        // I(0) = window length
        assert_relative_eq!(table[0].1, 2.0 * params.tau, max_relative = 1e-6);
        for w in table.windows(2) {
            assert!(w[1].1 < w[0].1, "I(s) not strictly decreasing");
        }
        // the far end has collapsed hard
        let first_positive = table[1].1;
        let last = table.last().unwrap().1;
        assert!(
            last < 0.01 * first_positive,
            "collapse too weak: {last} vs {first_positive}"
        );
    }
}
