//! The Carleman weight system: the spatial bump `d(x)`, the singular
//! time factor `h(t)`, the weights `alpha` and `phi`, level thresholds
//! for the cutoff construction, and the smooth cutoff itself.
//!
//! On the working window `(t0 - tau, t0 + tau)`:
//!
//! ```text
//!   h(t)        = ((t - (t0 - tau)) (t0 + tau - t))^{-1/2}
//!   alpha(x,t)  = h(t) (e^{lambda d(x)} - e^{2 lambda dmax})
//!   phi(x,t)    = h(t)  e^{lambda d(x)}
//! ```
//!
//! with `dmax = max d` over the closed working domain, the standard
//! normalization that makes `alpha < 0` everywhere.

use crate::error::{Error, Result};
use crate::grid::{Grid, SubdomainMasks};

/// The weight bump `d`: zero on the outer boundary, positive inside,
/// single critical point placed inside the control region.
///
/// Construction: per axis, a strictly monotone Moebius reparametrization
/// `m(x) = (x-a) / ((b-a) + k (b-x))` maps `[a,b]` to `[0,1]` with
/// `m(x*) = 1/2`, and the plateau bump `B(s) = 1 - (1-2s)^4` has its only
/// critical point at `s = 1/2`. The product over axes is C^4 (rational x
/// polynomial), vanishes exactly on the boundary, and its gradient
/// vanishes only at the chosen interior point (and, in 2D, at the box
/// corners, where the product structure forces it; corners are excluded
/// from the discrete check).
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub values: Vec<f64>,
    /// Analytic gradient per node (second component zero in 1D).
    pub grad: Vec<[f64; 2]>,
    pub d_max: f64,
    pub d_min: f64,
    /// The critical point (center of the control region).
    pub peak: [f64; 2],
}

struct AxisBump {
    a: f64,
    b: f64,
    k: f64,
}

impl AxisBump {
    fn new(a: f64, b: f64, x_star: f64) -> Self {
        let k = (2.0 * x_star - a - b) / (b - x_star);
        AxisBump { a, b, k }
    }

    fn m(&self, x: f64) -> f64 {
        (x - self.a) / ((self.b - self.a) + self.k * (self.b - x))
    }

    fn m_prime(&self, x: f64) -> f64 {
        let denom = (self.b - self.a) + self.k * (self.b - x);
        (self.b - self.a) * (1.0 + self.k) / (denom * denom)
    }

    fn value(&self, x: f64) -> f64 {
        let s = self.m(x);
        let w = 1.0 - 2.0 * s;
        1.0 - w * w * w * w
    }

    fn derivative(&self, x: f64) -> f64 {
        let s = self.m(x);
        let w = 1.0 - 2.0 * s;
        8.0 * w * w * w * self.m_prime(x)
    }
}

/// Build the explicit weight bump on the working domain, with the
/// critical point at the center of the control region `masks.omega`.
///
/// Fails (listing offending nodes) if the discrete gradient vanishes at
/// any node outside the control region; in 2D the box corners are
/// excluded from this check, since the product construction has
/// structural critical points there (the box corner is where the
/// smooth-domain assumption is relaxed).
pub fn build_distance_fn(grid: &Grid, masks: &SubdomainMasks) -> Result<DistanceField> {
    let omega_nodes = masks.omega_indices();
    if omega_nodes.is_empty() {
        return Err(Error::invalid("control region omega is empty"));
    }
    // bounding box center of omega
    let mut peak = [0.0f64; 2];
    for a in 0..grid.dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &idx in &omega_nodes {
            let c = grid.coord(idx)[a];
            lo = lo.min(c);
            hi = hi.max(c);
        }
        peak[a] = 0.5 * (lo + hi);
    }

    let bumps: Vec<AxisBump> = (0..grid.dim)
        .map(|a| AxisBump::new(grid.axes[a].lo(), grid.axes[a].hi(), peak[a]))
        .collect();

    let n = grid.n_nodes();
    let mut values = vec![0.0; n];
    let mut grad = vec![[0.0f64; 2]; n];
    for idx in 0..n {
        let p = grid.coord(idx);
        let per_axis: Vec<f64> = (0..grid.dim).map(|a| bumps[a].value(p[a])).collect();
        let v: f64 = per_axis.iter().product();
        values[idx] = v;
        for a in 0..grid.dim {
            let mut g = bumps[a].derivative(p[a]);
            for (b, pv) in per_axis.iter().enumerate() {
                if b != a {
                    g *= pv;
                }
            }
            grad[idx][a] = g;
        }
    }

    let d_max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let d_min = values.iter().cloned().fold(f64::INFINITY, f64::min);

    // boundary condition and positivity
    let mut offending = Vec::new();
    for idx in 0..n {
        if grid.is_boundary(idx) {
            if values[idx] != 0.0 {
                offending.push(idx);
            }
        } else if !(values[idx] > 0.0) {
            offending.push(idx);
        }
    }
    if !offending.is_empty() {
        offending.truncate(8);
        return Err(Error::InvariantViolation {
            reason: "bump must vanish on the boundary and be positive inside".into(),
            nodes: offending,
        });
    }

    // discrete gradient check outside the control region
    let mut zero_grad = Vec::new();
    for idx in 0..n {
        if masks.omega[idx] {
            continue;
        }
        if grid.dim == 2 {
            let (ix, iy) = grid.split_index(idx);
            let corner = (ix == 0 || ix == grid.nx() - 1) && (iy == 0 || iy == grid.ny() - 1);
            if corner {
                continue;
            }
        }
        let g = discrete_gradient_norm(grid, &values, idx);
        if !(g > 1e-12) {
            zero_grad.push(idx);
        }
    }
    if !zero_grad.is_empty() {
        zero_grad.truncate(16);
        return Err(Error::InvariantViolation {
            reason: "discrete |grad d| vanishes outside the control region".into(),
            nodes: zero_grad,
        });
    }

    Ok(DistanceField {
        values,
        grad,
        d_max,
        d_min,
        peak,
    })
}

/// Central-difference gradient magnitude (one-sided at the boundary).
fn discrete_gradient_norm(grid: &Grid, values: &[f64], idx: usize) -> f64 {
    let (ix, iy) = grid.split_index(idx);
    let mut acc = 0.0;
    for a in 0..grid.dim {
        let (i, n, h) = if a == 0 {
            (ix, grid.nx(), grid.axes[0].spacing)
        } else {
            (iy, grid.ny(), grid.axes[1].spacing)
        };
        let at = |j: usize| -> f64 {
            let id = if a == 0 {
                grid.index(j, iy)
            } else {
                grid.index(ix, j)
            };
            values[id]
        };
        let d = if i == 0 {
            (at(1) - at(0)) / h
        } else if i == n - 1 {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        };
        acc += d * d;
    }
    acc.sqrt()
}

/// The full weight parameter set for one working window.
#[derive(Debug, Clone)]
pub struct WeightParams {
    pub lambda: f64,
    pub t0: f64,
    pub tau: f64,
    pub d: DistanceField,
    /// `e^{2 lambda dmax}`, the normalizing constant.
    pub e2ld: f64,
}

/// Pointwise weight values at one space-time point.
#[derive(Debug, Clone, Copy)]
pub struct WeightValues {
    pub alpha: f64,
    pub phi: f64,
    pub h: f64,
}

impl WeightParams {
    pub fn new(lambda: f64, t0: f64, tau: f64, t_end: f64, d: DistanceField) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(tau > 0.0) || t0 - tau < 0.0 || t0 + tau > t_end {
            return Err(Error::invalid(format!(
                "window (t0 - tau, t0 + tau) = ({}, {}) must lie inside (0, {t_end})",
                t0 - tau,
                t0 + tau
            )));
        }
        let e2ld = (2.0 * lambda * d.d_max).exp();
        Ok(WeightParams {
            lambda,
            t0,
            tau,
            d,
            e2ld,
        })
    }

    /// `h(t) = ((t - (t0 - tau)) (t0 + tau - t))^{-1/2}` on the open window.
    pub fn h_of(&self, t: f64) -> Result<f64> {
        let q = (t - (self.t0 - self.tau)) * (self.t0 + self.tau - t);
        if !(q > 0.0) {
            return Err(Error::invalid(format!(
                "t = {t} outside the open window ({}, {}); the weight is undefined there",
                self.t0 - self.tau,
                self.t0 + self.tau
            )));
        }
        Ok(1.0 / q.sqrt())
    }

    /// Evaluate `(alpha, phi, h)` at a node and time strictly inside the
    /// window; values are returned unclamped.
    pub fn eval(&self, node: usize, t: f64) -> Result<WeightValues> {
        let h = self.h_of(t)?;
        let eld = (self.lambda * self.d.values[node]).exp();
        Ok(WeightValues {
            alpha: h * (eld - self.e2ld),
            phi: h * eld,
            h,
        })
    }

    /// Analytic `d(alpha)/dt = h'(t) (e^{lambda d} - e^{2 lambda dmax})`
    /// with `h'(t) = (t - t0) h(t)^3`.
    pub fn dt_alpha(&self, node: usize, t: f64) -> Result<f64> {
        let h = self.h_of(t)?;
        let hp = (t - self.t0) * h * h * h;
        let eld = (self.lambda * self.d.values[node]).exp();
        Ok(hp * (eld - self.e2ld))
    }

    /// Uniform time sampling strictly inside the window: `n_cells`
    /// subintervals with the two endpoint cells dropped (the weight is
    /// singular there and `e^{2 s alpha}` kills their mass).
    pub fn interior_window_times(&self, n_cells: usize) -> Vec<f64> {
        let a = self.t0 - self.tau;
        let dt = 2.0 * self.tau / n_cells as f64;
        (1..n_cells).map(|j| a + j as f64 * dt).collect()
    }

    /// Check `alpha < 0` at every node for a sample of window times.
    pub fn assert_alpha_negative(&self, grid: &Grid, n_cells: usize) -> Result<()> {
        for t in self.interior_window_times(n_cells) {
            for node in 0..grid.n_nodes() {
                let w = self.eval(node, t)?;
                if !(w.alpha < 0.0) {
                    return Err(Error::InvariantViolation {
                        reason: format!("alpha = {} not negative at t = {t}", w.alpha),
                        nodes: vec![node],
                    });
                }
            }
        }
        Ok(())
    }
}

/// The level thresholds of the cutoff construction.
///
/// With `E = e^{2 lambda dmax}` and `delta_floor = min d` over
/// `closure(omega0)`:
///
/// ```text
///   delta1   = (1 - E) / tau
///   delta(N) = N/sqrt(N^2-1) * (1/tau) * (e^{lambda delta_floor} - E)
/// ```
///
/// `delta(N)` increases in `N`; the cutoff needs the full ordering
/// `delta1 < delta(2) < delta(3) < delta(4)`, which holds only for a
/// window of `lambda` values determined by the geometry (see
/// [`select_lambda`]).
#[derive(Debug, Clone, Copy)]
pub struct LevelThresholds {
    pub delta1: f64,
    /// `delta(N)` for `N = 2, 3, 4`.
    pub delta_n: [f64; 3],
    /// `delta0 = delta(4) - delta(3)`, the gap that drives the Hoelder
    /// exponent.
    pub delta0: f64,
    /// The verified lower bound of `d` on `closure(omega0)`.
    pub delta_floor: f64,
}

impl LevelThresholds {
    pub fn delta(&self, n: usize) -> f64 {
        self.delta_n[n - 2]
    }

    pub fn ordering_holds(&self) -> bool {
        self.delta1 < self.delta_n[0]
            && self.delta_n[0] < self.delta_n[1]
            && self.delta_n[1] < self.delta_n[2]
    }
}

pub fn kappa_factor(n: usize) -> f64 {
    let nf = n as f64;
    nf / (nf * nf - 1.0).sqrt()
}

/// Minimum of `d` over the discrete closure of `omega0` (its open nodes
/// plus adjacent gamma nodes).
pub fn omega0_floor(grid: &Grid, masks: &SubdomainMasks, d: &DistanceField) -> Result<f64> {
    let nodes = masks.omega0_indices();
    if nodes.is_empty() {
        return Err(Error::invalid(
            "omega0 mask is empty; thresholds need a target region",
        ));
    }
    let mut floor = f64::INFINITY;
    for &idx in &nodes {
        floor = floor.min(d.values[idx]);
    }
    // closure can touch gamma
    for idx in masks.gamma_indices() {
        let (ix, iy) = grid.split_index(idx);
        let mut near = Vec::new();
        if ix > 0 {
            near.push(grid.index(ix - 1, iy));
        }
        if ix + 1 < grid.nx() {
            near.push(grid.index(ix + 1, iy));
        }
        if grid.dim == 2 {
            if iy > 0 {
                near.push(grid.index(ix, iy - 1));
            }
            if iy + 1 < grid.ny() {
                near.push(grid.index(ix, iy + 1));
            }
        }
        if near.into_iter().any(|j| masks.omega0[j]) {
            floor = floor.min(d.values[idx]);
        }
    }
    if !(floor > 0.0) {
        return Err(Error::invalid(format!(
            "d does not stay positive on closure(omega0): floor = {floor}"
        )));
    }
    Ok(floor)
}

/// Evaluate the thresholds at the parameters' `lambda`; asserts the
/// ordering and reports diagnostics when it fails.
pub fn compute_thresholds(
    params: &WeightParams,
    grid: &Grid,
    masks: &SubdomainMasks,
) -> Result<LevelThresholds> {
    let floor = omega0_floor(grid, masks, &params.d)?;
    let t = thresholds_at(params.lambda, params.tau, params.d.d_max, floor);
    if !t.ordering_holds() {
        return Err(Error::ParameterSelection(format!(
            "threshold ordering fails at lambda = {}: delta1 = {:.6}, delta(2) = {:.6}, \
             delta(3) = {:.6}, delta(4) = {:.6} (floor/dmax = {:.4}; the ordering needs \
             floor/dmax > 2 (1 - sqrt(3)/2) ~ 0.268 and lambda below a geometry ceiling)",
            params.lambda,
            t.delta1,
            t.delta_n[0],
            t.delta_n[1],
            t.delta_n[2],
            floor / params.d.d_max
        )));
    }
    Ok(t)
}

/// Raw threshold formulas at given parameters.
pub fn thresholds_at(lambda: f64, tau: f64, d_max: f64, delta_floor: f64) -> LevelThresholds {
    let e2ld = (2.0 * lambda * d_max).exp();
    let eld = (lambda * delta_floor).exp();
    let delta1 = (1.0 - e2ld) / tau;
    let mut delta_n = [0.0; 3];
    for (i, n) in (2..=4usize).enumerate() {
        delta_n[i] = kappa_factor(n) * (1.0 / tau) * (eld - e2ld);
    }
    LevelThresholds {
        delta1,
        delta_n,
        delta0: delta_n[2] - delta_n[1],
        delta_floor,
    }
}

/// Pick the largest `lambda` in a geometric sweep `{cap, cap/2, ...}`
/// for which the threshold ordering holds, then build the weight
/// system. The ordering degrades for large `lambda` (the `delta1`
/// comparison), so the sweep walks downward; failing every candidate is
/// a geometry defect and is reported with diagnostics.
pub fn select_lambda(
    grid: &Grid,
    masks: &SubdomainMasks,
    d: DistanceField,
    t0: f64,
    tau: f64,
    t_end: f64,
    lambda_cap: f64,
) -> Result<(WeightParams, LevelThresholds)> {
    if !(lambda_cap > 0.0) {
        return Err(Error::invalid("lambda_cap must be positive"));
    }
    let floor = omega0_floor(grid, masks, &d)?;
    let mut lambda = lambda_cap;
    let mut tried = Vec::new();
    for _ in 0..24 {
        let t = thresholds_at(lambda, tau, d.d_max, floor);
        if t.ordering_holds() {
            let params = WeightParams::new(lambda, t0, tau, t_end, d)?;
            return Ok((params, t));
        }
        tried.push(lambda);
        lambda *= 0.5;
    }
    Err(Error::ParameterSelection(format!(
        "no lambda in {:?} satisfies the threshold ordering; floor/dmax = {:.4} \
         (needs > ~0.268): move omega0 closer to the bump or enlarge the pad",
        tried,
        floor / d.d_max
    )))
}

/// C^4 ramp on [0,1]: the degree-9 smoothstep with four vanishing
/// derivatives at both ends; antisymmetric about 1/2.
pub fn ramp_c4(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let u2 = u * u;
    let u4 = u2 * u2;
    u4 * u * (126.0 + u * (-420.0 + u * (540.0 + u * (-315.0 + u * 70.0))))
}

/// k-th derivative of the ramp, k in 0..=4 (chain-rule building block
/// for cutoff derivatives).
pub fn ramp_c4_deriv(u: f64, k: usize) -> f64 {
    assert!(k <= 4, "ramp derivatives available up to order 4");
    if k == 0 {
        return ramp_c4(u);
    }
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    // coefficients of S(u) = 126 u^5 - 420 u^6 + 540 u^7 - 315 u^8 + 70 u^9
    let mut coef: Vec<(f64, i32)> = vec![
        (126.0, 5),
        (-420.0, 6),
        (540.0, 7),
        (-315.0, 8),
        (70.0, 9),
    ];
    for _ in 0..k {
        coef = coef
            .into_iter()
            .map(|(c, p)| (c * p as f64, p - 1))
            .collect();
    }
    coef.into_iter().map(|(c, p)| c * u.powi(p)).sum()
}

/// The cutoff `chi(x, t)`: 1 where `alpha >= delta(3)`, 0 where
/// `alpha <= delta(2)`, and the C^4 ramp in `alpha` across the band.
pub fn cutoff_value(alpha: f64, thresholds: &LevelThresholds) -> f64 {
    let lo = thresholds.delta_n[0];
    let hi = thresholds.delta_n[1];
    ramp_c4((alpha - lo) / (hi - lo))
}

/// Cutoff evaluated on the whole grid for a list of window times
/// (level-major layout).
pub fn build_cutoff(
    params: &WeightParams,
    thresholds: &LevelThresholds,
    grid: &Grid,
    times: &[f64],
) -> Result<Vec<f64>> {
    if !(thresholds.delta_n[1] > thresholds.delta_n[0]) {
        return Err(Error::invalid(
            "empty cutoff transition band: delta(2) must be below delta(3)",
        ));
    }
    let n = grid.n_nodes();
    let mut out = vec![0.0; n * times.len()];
    for (m, &t) in times.iter().enumerate() {
        for node in 0..n {
            let w = params.eval(node, t)?;
            out[m * n + node] = cutoff_value(w.alpha, thresholds);
        }
    }
    Ok(out)
}

/// Report from the boundedness diagnostics.
#[derive(Debug, Clone)]
pub struct WeightBoundsReport {
    /// `(s, max over the grid of log(s^7 phi^7 e^{2 s alpha}))`.
    pub s7_phi7_log_max: Vec<(f64, f64)>,
    /// Empirical `max |dt alpha| / phi^2` over the sampled window.
    pub dt_alpha_ratio_max: f64,
    /// Empirical `max |dt alpha| / phi^3` (the exponent the square-root
    /// singular weight supports uniformly in time).
    pub dt_alpha_cubic_ratio_max: f64,
}

/// Diagnostics for the two boundedness remarks: the `s^7 phi^7 e^{2 s
/// alpha}` sup over a sweep of `s` (computed in log space) and the
/// empirical constant in `|dt alpha| <= C phi^p`.
pub fn check_weight_bounds(
    params: &WeightParams,
    grid: &Grid,
    s_list: &[f64],
    n_cells: usize,
) -> Result<WeightBoundsReport> {
    let times = params.interior_window_times(n_cells);
    let mut s7 = Vec::with_capacity(s_list.len());
    for &s in s_list {
        let mut log_max = f64::NEG_INFINITY;
        for &t in &times {
            for node in 0..grid.n_nodes() {
                let w = params.eval(node, t)?;
                let log_term = 2.0 * s * w.alpha + 7.0 * (s.ln() + w.phi.ln());
                log_max = log_max.max(log_term);
            }
        }
        s7.push((s, log_max));
    }
    let mut ratio2 = 0.0f64;
    let mut ratio3 = 0.0f64;
    for &t in &times {
        for node in 0..grid.n_nodes() {
            let w = params.eval(node, t)?;
            let da = params.dt_alpha(node, t)?.abs();
            ratio2 = ratio2.max(da / (w.phi * w.phi));
            ratio3 = ratio3.max(da / (w.phi * w.phi * w.phi));
        }
    }
    Ok(WeightBoundsReport {
        s7_phi7_log_max: s7,
        dt_alpha_ratio_max: ratio2,
        dt_alpha_cubic_ratio_max: ratio3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_grid, build_subdomains, extend_domain, set_omega0, BoxSpec, GammaSpec, Side,
        SubdomainSpec,
    };
    use approx::assert_relative_eq;

    /// The continuation geometry used across the weight tests:
    /// Omega = (0, 2) extended across gamma = {0} by 0.7, omega0 = (0, 1).
    fn continuation_geometry() -> (Grid, SubdomainMasks) {
        let g = build_grid(1, &[[0.0, 2.0]], &[201], 0.6, 240).unwrap();
        let gamma = GammaSpec {
            axis: 0,
            side: Side::Lo,
            span: None,
        };
        let (g1, mut masks) = extend_domain(&g, &gamma, 0.7).unwrap();
        set_omega0(&g1, &mut masks, &BoxSpec::new_1d(0.0, 1.0)).unwrap();
        (g1, masks)
    }

    fn interior_geometry() -> (Grid, SubdomainMasks) {
        let g = build_grid(1, &[[0.0, 1.0]], &[101], 1.0, 100).unwrap();
        let spec = SubdomainSpec {
            omega: BoxSpec::new_1d(0.4, 0.6),
            omega0: None,
            gamma: None,
        };
        let masks = build_subdomains(&g, &spec).unwrap();
        (g, masks)
    }

    #[test]
    fn bump_boundary_and_positivity() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        assert_eq!(d.values[0], 0.0);
        assert_eq!(*d.values.last().unwrap(), 0.0);
        assert_relative_eq!(d.d_max, 1.0, epsilon = 1e-3);
        // peak inside the control region
        let peak_x = d.peak[0];
        assert!(peak_x > -0.56 && peak_x < -0.14);
        assert_eq!(d.d_min, 0.0);
    }

    #[test]
    fn bump_gradient_nonzero_outside_control() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        for idx in 0..g1.n_nodes() {
            if !masks.omega[idx] {
                let g = discrete_gradient_norm(&g1, &d.values, idx);
                assert!(g > 1e-12, "zero gradient at node {idx}");
            }
        }
    }

    #[test]
    fn bump_gradient_check_also_passes_interior_geometry() {
        let (g, masks) = interior_geometry();
        let d = build_distance_fn(&g, &masks).unwrap();
        assert!(d.d_max > 0.99);
        // symmetric omega at the center: peak at 0.5
        assert_relative_eq!(d.peak[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn bump_2d_product_structure() {
        let g = build_grid(2, &[[0.0, 1.0], [0.0, 1.0]], &[33, 33], 1.0, 16).unwrap();
        let spec = SubdomainSpec {
            omega: BoxSpec::new_2d([0.3, 0.4], [0.6, 0.7]),
            omega0: None,
            gamma: None,
        };
        let masks = build_subdomains(&g, &spec).unwrap();
        let d = build_distance_fn(&g, &masks).unwrap();
        for idx in 0..g.n_nodes() {
            if g.is_boundary(idx) {
                assert_eq!(d.values[idx], 0.0);
            } else {
                assert!(d.values[idx] > 0.0);
            }
        }
    }

    #[test]
    fn h_midpoint_and_subwindow_bounds() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let _ = masks;
        // a window poking out of (0, t_end) is rejected
        assert!(WeightParams::new(1.0, 0.5, 0.6, 1.0, d.clone()).is_err());
        let params = WeightParams::new(1.0, 0.3, 0.25, 0.6, d).unwrap();
        // h(t0) = 1/tau exactly
        assert_relative_eq!(params.h_of(0.3).unwrap(), 1.0 / 0.25, epsilon = 1e-12);
        // h(t0 +/- tau/2) = 2/(sqrt(3) tau), the N = 2 subwindow bound
        let expect = 2.0 / (3.0f64.sqrt() * 0.25);
        assert_relative_eq!(params.h_of(0.3 + 0.125).unwrap(), expect, epsilon = 1e-11);
        assert_relative_eq!(params.h_of(0.3 - 0.125).unwrap(), expect, epsilon = 1e-11);
        // outside the open window: rejected
        assert!(params.h_of(0.3 + 0.25).is_err());
        assert!(params.h_of(0.59).is_err());
    }

    #[test]
    fn alpha_direct_evaluation() {
        // d(x) = 0, lambda = 1, dmax = 1, t = t0, tau = 1:
        // alpha = 1 * (1 - e^2)
        let g = build_grid(1, &[[0.0, 1.0]], &[101], 4.0, 16).unwrap();
        let spec = SubdomainSpec {
            omega: BoxSpec::new_1d(0.45, 0.55),
            omega0: None,
            gamma: None,
        };
        let masks = build_subdomains(&g, &spec).unwrap();
        let mut d = build_distance_fn(&g, &masks).unwrap();
        // normalize to dmax exactly 1 for the frozen value
        let scale = 1.0 / d.d_max;
        for v in &mut d.values {
            *v *= scale;
        }
        d.d_max = 1.0;
        let params = WeightParams::new(1.0, 2.0, 1.0, 4.0, d).unwrap();
        let w = params.eval(0, 2.0).unwrap(); // boundary node: d = 0
        let expect = 1.0 - std::f64::consts::E.powi(2);
        assert_relative_eq!(w.alpha, expect, epsilon = 1e-12);
        assert_relative_eq!(w.alpha, -6.389056098930650, epsilon = 1e-9);
        assert!(w.alpha < 0.0 && w.phi > 0.0);
    }

    #[test]
    fn alpha_negative_everywhere_and_blows_down_at_endpoints() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let _ = masks;
        let params = WeightParams::new(0.5, 0.3, 0.25, 0.6, d).unwrap();
        params.assert_alpha_negative(&g1, 64).unwrap();
        // last interior node of a very fine window grid: alpha below
        // -1/eps^{1/4}
        let n = 20_000_000usize;
        let a = params.t0 - params.tau;
        let dt = 2.0 * params.tau / n as f64;
        let t_last = a + (n - 1) as f64 * dt;
        let threshold = -1.0 / f64::EPSILON.powf(0.25);
        for node in [0usize, g1.n_nodes() / 2] {
            let w = params.eval(node, t_last).unwrap();
            assert!(
                w.alpha < threshold,
                "alpha = {} not below {threshold} at the last interior node",
                w.alpha
            );
        }
    }

    #[test]
    fn alpha_comparison_identity() {
        // alpha(x,t) - alpha(x,t0) = (h(t) - h(t0)) (e^{lambda d} - E);
        // the uniform upper bound uses the max of d (the min variant is
        // not an upper bound: E - e^{lambda d} is smallest where d is
        // largest), giving alpha(t) - alpha(t0) <= -(h - h0) (E - e^{lambda dmax})
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let _ = masks;
        let d_max = d.d_max;
        let params = WeightParams::new(0.5, 0.3, 0.25, 0.6, d).unwrap();
        let h0 = params.h_of(params.t0).unwrap();
        for &t in &params.interior_window_times(32) {
            let h = params.h_of(t).unwrap();
            for node in (0..g1.n_nodes()).step_by(17) {
                let a_t = params.eval(node, t).unwrap().alpha;
                let a_0 = params.eval(node, params.t0).unwrap().alpha;
                let eld = (params.lambda * params.d.values[node]).exp();
                let identity = (h - h0) * (eld - params.e2ld);
                assert_relative_eq!(a_t - a_0, identity, max_relative = 1e-11, epsilon = 1e-11);
                let bound = -(h - h0) * (params.e2ld - (params.lambda * d_max).exp());
                assert!(a_t - a_0 <= bound + 1e-11);
            }
        }
    }

    #[test]
    fn tilde_weight_substitution_identity() {
        // the alternative weight alpha~ = E * alpha satisfies
        // s~ alpha = s alpha~ with s~ = s E, so both exponents agree
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let _ = masks;
        let params = WeightParams::new(0.5, 0.3, 0.25, 0.6, d).unwrap();
        let s = 3.7;
        let s_tilde = s * params.e2ld;
        for &t in &params.interior_window_times(16) {
            for node in (0..g1.n_nodes()).step_by(29) {
                let w = params.eval(node, t).unwrap();
                let alpha_tilde = params.e2ld * w.alpha;
                assert_relative_eq!(s_tilde * w.alpha, s * alpha_tilde, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn threshold_formulas_frozen_values() {
        // direct evaluation at lambda = 2, dmax = 1, floor = 0.2, tau = 0.5
        let t = thresholds_at(2.0, 0.5, 1.0, 0.2);
        let e4 = 4.0f64.exp();
        let e04 = 0.4f64.exp();
        assert_relative_eq!(t.delta1, (1.0 - e4) / 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            t.delta_n[0],
            (2.0 / 3.0f64.sqrt()) * 2.0 * (e04 - e4),
            epsilon = 1e-10
        );
        assert_relative_eq!(t.delta1, -107.19630007, epsilon = 1e-6);
        assert_relative_eq!(t.delta_n[0], -122.64377842, epsilon = 1e-4);
        // delta(N) increases in N always; at this floor/dmax ratio the
        // delta1 comparison fails (floor/dmax = 0.2 < 0.268), which is
        // exactly what the ordering check reports
        assert!(t.delta_n[0] < t.delta_n[1] && t.delta_n[1] < t.delta_n[2]);
        assert!(!t.ordering_holds());
        assert!(t.delta0 > 0.0);
    }

    #[test]
    fn threshold_large_n_limit() {
        // N/sqrt(N^2-1) -> 1: delta(N) increases toward (e^{l f} - E)/tau
        let (lambda, tau, dmax, floor) = (0.5, 0.25, 1.0, 0.5);
        let t = thresholds_at(lambda, tau, dmax, floor);
        let limit = ((lambda * floor).exp() - (2.0 * lambda * dmax).exp()) / tau;
        assert!(t.delta_n[0] < t.delta_n[1] && t.delta_n[1] < t.delta_n[2]);
        assert!(t.delta_n[2] < limit);
        let t_big =
            kappa_factor(64) * (1.0 / tau) * ((lambda * floor).exp() - (2.0 * lambda * dmax).exp());
        assert_relative_eq!(t_big, limit, max_relative = 2e-4);
    }

    #[test]
    fn degenerate_floor_error_path() {
        // floor = 0 makes e^{lambda floor} = 1 and the ordering fail
        let t = thresholds_at(1.0, 0.5, 1.0, 0.0);
        assert!(!t.ordering_holds());
    }

    #[test]
    fn lambda_selection_on_continuation_geometry() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let (params, thresholds) = select_lambda(&g1, &masks, d, 0.3, 0.075, 0.6, 64.0).unwrap();
        assert!(thresholds.ordering_holds());
        assert!(params.lambda > 0.0 && params.lambda <= 64.0);
        // selected lambda is the largest passing: doubling it must fail
        let floor = thresholds.delta_floor;
        let doubled = thresholds_at(2.0 * params.lambda, params.tau, params.d.d_max, floor);
        assert!(!doubled.ordering_holds());
        // alpha >= delta(N) on closure(omega0) x the N-subwindow (nodewise)
        for n in 2..=4usize {
            let dn = thresholds.delta(n);
            let half = params.tau / n as f64;
            for &frac in &[-1.0, -0.5, 0.0, 0.5, 1.0] {
                let t = params.t0 + frac * half;
                for &idx in &masks.omega0_indices() {
                    let w = params.eval(idx, t).unwrap();
                    assert!(
                        w.alpha >= dn - 1e-9,
                        "alpha {} below delta({n}) = {dn} at node {idx}",
                        w.alpha
                    );
                }
            }
        }
        // boundary nodes stay at or below delta1 for all window times
        for &t in &params.interior_window_times(16) {
            for idx in 0..g1.n_nodes() {
                if g1.is_boundary(idx) {
                    let w = params.eval(idx, t).unwrap();
                    assert!(w.alpha <= thresholds.delta1 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn lambda_selection_fails_with_diagnostics_on_bad_geometry() {
        // omega0 stretching almost to the far boundary: floor/dmax too
        // small at any lambda
        let g = build_grid(1, &[[0.0, 2.0]], &[201], 0.6, 240).unwrap();
        let gamma = GammaSpec {
            axis: 0,
            side: Side::Lo,
            span: None,
        };
        let (g1, mut masks) = extend_domain(&g, &gamma, 0.7).unwrap();
        set_omega0(&g1, &mut masks, &BoxSpec::new_1d(0.0, 1.95)).unwrap();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let err = select_lambda(&g1, &masks, d, 0.3, 0.075, 0.6, 64.0);
        assert!(err.is_err());
    }

    #[test]
    fn ramp_and_cutoff_shape() {
        assert_eq!(ramp_c4(-0.5), 0.0);
        assert_eq!(ramp_c4(1.5), 1.0);
        assert_relative_eq!(ramp_c4(0.5), 0.5, epsilon = 1e-12);
        // C^4: derivatives vanish at the ends
        for k in 1..=4usize {
            assert_relative_eq!(ramp_c4_deriv(1e-9, k), 0.0, epsilon = 1e-4);
            assert_relative_eq!(ramp_c4_deriv(1.0 - 1e-9, k), 0.0, epsilon = 1e-4);
        }
        // finite-difference check of the first derivative
        let u = 0.37;
        let eps = 1e-6;
        let fd = (ramp_c4(u + eps) - ramp_c4(u - eps)) / (2.0 * eps);
        assert_relative_eq!(fd, ramp_c4_deriv(u, 1), max_relative = 1e-6);
    }

    #[test]
    fn cutoff_levels() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let (params, th) = select_lambda(&g1, &masks, d, 0.3, 0.075, 0.6, 64.0).unwrap();
        // alpha = delta(4) -> chi = 1 (inside the chi = 1 plateau)
        assert_eq!(cutoff_value(th.delta(4), &th), 1.0);
        // alpha = delta1 < delta(2) -> chi = 0
        assert_eq!(cutoff_value(th.delta1, &th), 0.0);
        // midband -> 1/2 by ramp symmetry
        let mid = 0.5 * (th.delta(2) + th.delta(3));
        assert_relative_eq!(cutoff_value(mid, &th), 0.5, epsilon = 1e-12);
        // chi vanishes at boundary nodes for every window time
        let times = params.interior_window_times(8);
        let chi = build_cutoff(&params, &th, &g1, &times).unwrap();
        for (m, _) in times.iter().enumerate() {
            for idx in 0..g1.n_nodes() {
                if g1.is_boundary(idx) {
                    assert_eq!(chi[m * g1.n_nodes() + idx], 0.0);
                }
            }
        }
        // chi * (field supported where alpha <= delta(2)) = 0
        for (m, &t) in times.iter().enumerate() {
            for idx in 0..g1.n_nodes() {
                let w = params.eval(idx, t).unwrap();
                if w.alpha <= th.delta(2) {
                    assert_eq!(chi[m * g1.n_nodes() + idx], 0.0);
                }
            }
        }
    }

    #[test]
    fn weight_bounds_sweep() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let (params, _) = select_lambda(&g1, &masks, d, 0.3, 0.075, 0.6, 64.0).unwrap();
        let report = check_weight_bounds(&params, &g1, &[1.0, 10.0, 100.0, 1000.0], 64).unwrap();
        // sup of s^7 phi^7 e^{2 s alpha} does not grow with s (log scale)
        for w in report.s7_phi7_log_max.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-9,
                "s^7 phi^7 e^(2 s alpha) grew from {} to {}",
                w[0].1,
                w[1].1
            );
        }
        // dt-alpha ratios finite on the sampled window
        assert!(report.dt_alpha_ratio_max.is_finite());
        assert!(report.dt_alpha_cubic_ratio_max.is_finite());
    }

    #[test]
    fn dt_alpha_vanishes_at_midpoint() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let _ = masks;
        let params = WeightParams::new(0.5, 0.3, 0.25, 0.6, d).unwrap();
        for node in (0..g1.n_nodes()).step_by(31) {
            assert_eq!(params.dt_alpha(node, params.t0).unwrap(), 0.0);
        }
    }

    #[test]
    fn dt_alpha_finite_for_small_and_large_lambda() {
        let (g1, masks) = continuation_geometry();
        let d = build_distance_fn(&g1, &masks).unwrap();
        let _ = masks;
        for lambda in [1.0, 4.0] {
            let params = WeightParams::new(lambda, 0.3, 0.25, 0.6, d.clone()).unwrap();
            let report = check_weight_bounds(&params, &g1, &[1.0], 64).unwrap();
            assert!(report.dt_alpha_ratio_max.is_finite());
        }
    }
}
