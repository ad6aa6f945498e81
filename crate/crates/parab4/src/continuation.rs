//! Continuation from lateral Cauchy data: reconstruct the solution on
//! an interior region `omega0 x (eps, T - eps)` from the four normal
//! traces on a subboundary `gamma x (0, T)`, and measure the
//! Hoelder-type conditional stability of the reconstruction.
//!
//! The method is Carleman-weighted quasi-reversibility. The data enter
//! through a normal-coordinate Taylor extension `u~` supported near
//! `gamma`; the unknown correction `v` (with zero Cauchy data on
//! `gamma`, discretely a seven-node zero band) minimizes the weighted
//! residual `int |P v - F|^2 e^{2 s alpha} + reg |v|^2` over the
//! enlarged domain, where `F = -P u~` inside the original domain and 0
//! in the pad strip. Reconstructions are reliable exactly where the
//! theory says: on `omega0`, on the quarter window of each working
//! window, assembled over a covering of `(eps, T - eps)`.

use crate::band::SpdBandMatrix;
use crate::error::{Error, Result};
use crate::forward::SpaceTimeField;
use crate::grid::{GammaSpec, Grid, Region, Side, SubdomainMasks};
use crate::ops::{
    apply_derivative, l2_sq_masked, multi_indices_up_to, sobolev_norm_sq,
    time_trapezoid_weight, trace_norm_surrogate, CoefficientSet, TraceSeries,
};
use crate::stencil::fornberg_weights;
use crate::weights::{DistanceField, LevelThresholds, WeightParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The four normal traces on `gamma x (0, T)` plus their data size.
#[derive(Debug, Clone)]
pub struct CauchyTrace {
    /// `g_j = d_nu^j u` for `j = 0..=3`.
    pub g: [TraceSeries; 4],
}

impl CauchyTrace {
    pub fn zeros(n_tang: usize, n_levels: usize, dt: f64, tang_spacing: Option<f64>) -> Self {
        CauchyTrace {
            g: std::array::from_fn(|_| TraceSeries::zeros(n_tang, n_levels, dt, tang_spacing)),
        }
    }

    /// `D = sum_j |g_j|_surrogate + |g_0|_{H^1(0,T; L^2(gamma))}`;
    /// nonnegative, zero iff all traces vanish.
    pub fn data_size(&self) -> Result<f64> {
        let mut d = 0.0;
        for j in 0..4 {
            d += trace_norm_surrogate(&self.g[j], j)?;
        }
        d += self.g[0].h1t_l2();
        Ok(d)
    }

    pub fn n_levels(&self) -> usize {
        self.g[0].n_levels
    }

    /// Additive Gaussian noise on every trace sample, scaled so the
    /// noise's own data size equals `target_d`. Returns the noisy
    /// traces and the realized noise size.
    pub fn with_noise(&self, target_d: f64, seed: u64) -> Result<(CauchyTrace, f64)> {
        if target_d == 0.0 {
            return Ok((self.clone(), 0.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut noise = self.clone();
        for j in 0..4 {
            for v in noise.g[j].values.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        let raw = noise.data_size()?;
        if raw == 0.0 {
            return Err(Error::invalid("degenerate noise draw"));
        }
        let scale = target_d / raw;
        let mut out = self.clone();
        for j in 0..4 {
            for (o, n) in out.g[j].values.iter_mut().zip(noise.g[j].values.iter()) {
                *o += scale * n;
            }
        }
        Ok((out, target_d))
    }
}

/// The a-priori budget of the conditional stability estimate.
#[derive(Debug, Clone, Copy)]
pub struct StabilityBudget {
    /// `M`: bound on the energy norm of the unknown solution.
    pub m: f64,
    /// `delta0 = delta(4) - delta(3)`.
    pub delta0: f64,
    /// The fitted constant in the `e^{c s} D^2` term.
    pub c_balance: f64,
    /// `kappa = delta0 / (c + delta0)`, in (0, 1).
    pub kappa: f64,
}

impl StabilityBudget {
    pub fn new(m: f64, delta0: f64, c_balance: f64) -> Result<Self> {
        if !(m > 0.0) || !(delta0 > 0.0) || !(c_balance > 0.0) {
            return Err(Error::invalid("budget parameters must be positive"));
        }
        let kappa = delta0 / (c_balance + delta0);
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::invalid(format!("kappa = {kappa} outside (0,1)")));
        }
        Ok(StabilityBudget {
            m,
            delta0,
            c_balance,
            kappa,
        })
    }
}

/// Geometry of the data boundary inside the enlarged grid.
#[derive(Debug, Clone, Copy)]
pub struct GammaFrame {
    pub gamma: GammaSpec,
    /// Axis index of the gamma face inside the enlarged grid.
    pub face_index: usize,
    /// Physical coordinate of the gamma face.
    pub face_coord: f64,
    /// Pad depth in physical units.
    pub pad_depth: f64,
}

impl GammaFrame {
    pub fn locate(grid1: &Grid, masks: &SubdomainMasks, gamma: GammaSpec) -> Result<Self> {
        let idx = masks
            .gamma_indices()
            .into_iter()
            .next()
            .ok_or_else(|| Error::invalid("masks carry no gamma nodes"))?;
        let (ix, iy) = grid1.split_index(idx);
        let face_index = [ix, iy][gamma.axis];
        let face_coord = grid1.axes[gamma.axis].coords[face_index];
        let pad_depth = match gamma.side {
            Side::Lo => face_coord - grid1.axes[gamma.axis].lo(),
            Side::Hi => grid1.axes[gamma.axis].hi() - face_coord,
        };
        if !(pad_depth > 0.0) {
            return Err(Error::invalid("gamma face has no pad in front of it"));
        }
        Ok(GammaFrame {
            gamma,
            face_index,
            face_coord,
            pad_depth,
        })
    }

    /// Signed distance along the outward normal (positive in the pad).
    #[inline]
    pub fn r_of(&self, x: f64) -> f64 {
        match self.gamma.side {
            Side::Lo => self.face_coord - x,
            Side::Hi => x - self.face_coord,
        }
    }
}

/// Fraction of the pad depth where the extension's plateau ends and
/// where its support ends.
const EXTENSION_PLATEAU: f64 = 0.3;
const EXTENSION_SUPPORT: f64 = 0.9;

fn extension_cut(frame: &GammaFrame, r: f64) -> f64 {
    let r_in = EXTENSION_PLATEAU * frame.pad_depth;
    let r_out = EXTENSION_SUPPORT * frame.pad_depth;
    let a = r.abs();
    if a <= r_in {
        1.0
    } else if a >= r_out {
        0.0
    } else {
        crate::weights::ramp_c4((r_out - a) / (r_out - r_in))
    }
}

/// Normal-coordinate Taylor extension of the Cauchy data:
/// `u~(x, t) = cut(r) sum_j g_j(x_gamma, t) r^j / j!` with `r` the
/// signed normal distance. Matches all four traces on `gamma` and is
/// supported in `|r| < 0.9 pad`.
pub fn extend_cauchy(
    grid1: &Grid,
    frame: &GammaFrame,
    traces: &CauchyTrace,
) -> Result<SpaceTimeField> {
    let n_levels = traces.n_levels();
    if grid1.dim == 2 && traces.g[0].n_tang != grid1.axes[1 - frame.gamma.axis].len() {
        return Err(Error::invalid(
            "trace tangential sampling does not match the grid face",
        ));
    }
    if grid1.dim == 1 && traces.g[0].n_tang != 1 {
        return Err(Error::invalid("1D traces must have a single tangential sample"));
    }
    let n = grid1.n_nodes();
    let mut out = SpaceTimeField::zeros(n, n_levels, traces.g[0].dt);
    for m in 0..n_levels {
        let lvl = out.level_mut(m);
        for idx in 0..n {
            let p = grid1.coord(idx);
            let r = frame.r_of(p[frame.gamma.axis]);
            let cut = extension_cut(frame, r);
            if cut == 0.0 {
                continue;
            }
            let tang = if grid1.dim == 2 {
                let (ix, iy) = grid1.split_index(idx);
                [ix, iy][1 - frame.gamma.axis]
            } else {
                0
            };
            let mut taylor = 0.0;
            let mut rj = 1.0;
            let mut fact = 1.0;
            for j in 0..4 {
                if j > 0 {
                    rj *= r;
                    fact *= j as f64;
                }
                taylor += traces.g[j].at(m, tang) * rj / fact;
            }
            lvl[idx] = cut * taylor;
        }
    }
    Ok(out)
}

/// Discrete Cauchy-trace magnitudes of a field at `gamma` (one-sided
/// stencils into the original domain), maximized over time levels.
pub fn max_discrete_traces(
    grid1: &Grid,
    frame: &GammaFrame,
    v: &SpaceTimeField,
) -> Result<[f64; 4]> {
    if grid1.dim != 1 {
        // tangential loop in 2D
    }
    let h = grid1.axes[frame.gamma.axis].spacing;
    // one-sided nodes into the original domain
    let dir: i64 = match frame.gamma.side {
        Side::Lo => 1,
        Side::Hi => -1,
    };
    let offsets: Vec<f64> = (0..6).map(|k| k as f64).collect();
    let weights = fornberg_weights(0.0, &offsets, 3);
    let mut worst = [0.0f64; 4];
    let tang_len = if grid1.dim == 2 {
        grid1.axes[1 - frame.gamma.axis].len()
    } else {
        1
    };
    for m in 0..v.n_levels {
        let lvl = v.level(m);
        for q in 0..tang_len {
            for (j, w) in worst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &wk) in weights[j].iter().enumerate() {
                    let off = frame.face_index as i64 + dir * k as i64;
                    let node = if frame.gamma.axis == 0 {
                        grid1.index(off as usize, q.min(grid1.ny() - 1))
                    } else {
                        grid1.index(q, off as usize)
                    };
                    acc += wk * lvl[node];
                }
                // d/dr = -dir * d/dx for side Lo, + for Hi; magnitudes only
                let scale = h.powi(j as i32);
                *w = w.max((acc / scale).abs());
            }
        }
    }
    Ok(worst)
}

/// Extend a field by zero into the pad strip after checking that its
/// four discrete traces at `gamma` vanish within `tol` (per order).
pub fn zero_extend(
    grid1: &Grid,
    masks: &SubdomainMasks,
    frame: &GammaFrame,
    v: &SpaceTimeField,
    tol: &[f64; 4],
) -> Result<SpaceTimeField> {
    let traces = max_discrete_traces(grid1, frame, v)?;
    for j in 0..4 {
        if traces[j] > tol[j] {
            return Err(Error::InvalidTrace {
                order: j,
                magnitude: traces[j],
                tolerance: tol[j],
            });
        }
    }
    let mut out = v.clone();
    for m in 0..out.n_levels {
        let lvl = out.level_mut(m);
        for idx in 0..grid1.n_nodes() {
            if masks.region[idx] == Region::PadInterior
                || (grid1.is_boundary(idx) && masks.region[idx] == Region::OuterBoundary)
            {
                let p = grid1.coord(idx);
                let r = frame.r_of(p[frame.gamma.axis]);
                if r > 0.0 {
                    lvl[idx] = 0.0;
                }
            }
            if masks.gamma[idx] {
                lvl[idx] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Configuration of the quasi-reversibility reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct QrConfig {
    /// Carleman parameter of the weighted residual.
    pub s: f64,
    /// Relative Tikhonov term (scaled by the operator norm estimate).
    pub reg: f64,
    /// Window half-width; the covering needs `eps > tau`.
    pub tau: f64,
    /// Continuation margin: reconstruct on `(eps, T - eps)`.
    pub eps: f64,
}

/// Reconstruction output.
pub struct QrSolution {
    /// Reconstructed field on the enlarged grid; meaningful on the
    /// omega0 nodes of the covered levels, zero elsewhere.
    pub u_rec: SpaceTimeField,
    /// Global level range covered by the quarter-window tiles.
    pub covered: (usize, usize),
    /// The window centers used.
    pub window_centers: Vec<f64>,
}

const ZERO_BAND_RADIUS: usize = 3;

struct WindowSystem {
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    n_dof_x: usize,
}

fn build_dof_map(grid1: &Grid, frame: &GammaFrame) -> WindowSystem {
    let n = grid1.n_nodes();
    let mut dof_of_node = vec![None; n];
    let mut node_of_dof = Vec::new();
    for idx in 0..n {
        let (ix, iy) = grid1.split_index(idx);
        let a = [ix, iy][frame.gamma.axis];
        if a.abs_diff(frame.face_index) <= ZERO_BAND_RADIUS {
            continue; // zero Cauchy band
        }
        dof_of_node[idx] = Some(node_of_dof.len());
        node_of_dof.push(idx);
    }
    let n_dof_x = node_of_dof.len();
    WindowSystem {
        dof_of_node,
        node_of_dof,
        n_dof_x,
    }
}

/// Spatial stencil of `Lap^2 + sum p_beta d^beta` at a stencil-fitting
/// node, as `(node, coefficient)` pairs on the raw (no-BC) grid.
fn spatial_stencil(
    grid1: &Grid,
    coeffs: &CoefficientSet,
    ix: usize,
    iy: usize,
) -> Vec<(usize, f64)> {
    let hx = grid1.axes[0].spacing;
    let hx4 = hx.powi(4);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(16);
    if grid1.dim == 1 {
        let c4 = [1.0, -4.0, 6.0, -4.0, 1.0];
        for (k, &c) in c4.iter().enumerate() {
            entries.push((grid1.index(ix + k - 2, iy), c / hx4));
        }
    } else {
        let hy = grid1.axes[1].spacing;
        let hy4 = hy.powi(4);
        let c4 = [1.0, -4.0, 6.0, -4.0, 1.0];
        for (k, &c) in c4.iter().enumerate() {
            entries.push((grid1.index(ix + k - 2, iy), c / hx4));
            entries.push((grid1.index(ix, iy + k - 2), c / hy4));
        }
        // mixed term 2 d2x d2y
        let c2 = [1.0, -2.0, 1.0];
        for (a, &ca) in c2.iter().enumerate() {
            for (b, &cb) in c2.iter().enumerate() {
                entries.push((
                    grid1.index(ix + a - 1, iy + b - 1),
                    2.0 * ca * cb / (hx * hx * hy * hy),
                ));
            }
        }
    }
    let node = grid1.index(ix, iy);
    for (beta, p) in coeffs.entries() {
        let pv = p[node];
        if pv == 0.0 {
            continue;
        }
        let sx: &[(i64, f64)] = match beta[0] {
            0 => &[(0, 1.0)],
            1 => &[(-1, -0.5), (1, 0.5)],
            2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
            _ => unreachable!(),
        };
        let sy: &[(i64, f64)] = match beta[1] {
            0 => &[(0, 1.0)],
            1 => &[(-1, -0.5), (1, 0.5)],
            2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
            _ => unreachable!(),
        };
        let hxp = hx.powi(beta[0] as i32);
        let hyp = if grid1.dim == 2 {
            grid1.axes[1].spacing.powi(beta[1] as i32)
        } else {
            1.0
        };
        for &(ox, cx) in sx {
            for &(oy, cy) in sy {
                let jx = (ix as i64 + ox) as usize;
                let jy = (iy as i64 + oy) as usize;
                entries.push((grid1.index(jx, jy), pv * cx * cy / (hxp * hyp)));
            }
        }
    }
    // merge duplicates
    entries.sort_by_key(|&(n, _)| n);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (n, v) in entries {
        if let Some(last) = merged.last_mut() {
            if last.0 == n {
                last.1 += v;
                continue;
            }
        }
        merged.push((n, v));
    }
    merged
}

/// The discrete right-hand side `F = -P u~` inside the original domain
/// (zero in the pad and on the band), sampled per level with the same
/// backward time difference the residual rows use.
fn discrete_rhs(
    grid1: &Grid,
    masks: &SubdomainMasks,
    frame: &GammaFrame,
    coeffs: &CoefficientSet,
    u_tilde: &SpaceTimeField,
) -> Vec<f64> {
    let n = grid1.n_nodes();
    let dt = u_tilde.dt;
    let mut f = vec![0.0; n * u_tilde.n_levels];
    for m in 1..u_tilde.n_levels {
        let lvl = u_tilde.level(m);
        let prev = u_tilde.level(m - 1);
        for idx in 0..n {
            let (ix, iy) = grid1.split_index(idx);
            let a = [ix, iy][frame.gamma.axis];
            // F lives strictly inside the original domain
            let inside = match frame.gamma.side {
                Side::Lo => a > frame.face_index,
                Side::Hi => a < frame.face_index,
            };
            if !inside || !stencil_fits(grid1, ix, iy) {
                continue;
            }
            if masks.region[idx] == Region::PadInterior {
                continue;
            }
            let st = spatial_stencil(grid1, coeffs, ix, iy);
            let mut acc = (lvl[idx] - prev[idx]) / dt;
            for &(node, c) in &st {
                acc += c * lvl[node];
            }
            f[m * n + idx] = -acc;
        }
    }
    f
}

#[inline]
fn stencil_fits(grid1: &Grid, ix: usize, iy: usize) -> bool {
    let ok_x = ix >= 2 && ix + 2 < grid1.nx();
    let ok_y = grid1.dim == 1 || (iy >= 2 && iy + 2 < grid1.ny());
    ok_x && ok_y
}

/// Solve one working window; returns the correction `v` on the window
/// levels (level-major over all grid nodes, zero on the band).
#[allow(clippy::too_many_arguments)]
fn qr_window(
    grid1: &Grid,
    _masks: &SubdomainMasks,
    _frame: &GammaFrame,
    coeffs: &CoefficientSet,
    d: &DistanceField,
    lambda: f64,
    rhs_f: &[f64],
    t_end: f64,
    t0: f64,
    cfg: &QrConfig,
    sys: &WindowSystem,
) -> Result<(Vec<f64>, std::ops::Range<usize>)> {
    let dt = t_end / ((rhs_f.len() / grid1.n_nodes() - 1) as f64);
    let params = WeightParams::new(lambda, t0, cfg.tau, t_end, d.clone())?;
    let n = grid1.n_nodes();
    let n_levels = rhs_f.len() / n;
    // global levels strictly inside the window, one cell margin
    let m_lo = ((t0 - cfg.tau) / dt).floor() as usize + 1;
    let m_hi = ((t0 + cfg.tau) / dt).ceil() as usize - 1;
    let m_hi = m_hi.min(n_levels - 1);
    if m_hi <= m_lo + 4 {
        return Err(Error::invalid(
            "window holds too few time levels; refine the time grid",
        ));
    }
    let k_w = m_hi - m_lo + 1;
    let n_dof = sys.n_dof_x * k_w;
    let bw = sys.n_dof_x + 2;

    // precomputed weight pieces: e^{lambda d} per node, h per level
    let eld: Vec<f64> = (0..n).map(|idx| (lambda * d.values[idx]).exp()).collect();
    let e2ld = (2.0 * lambda * d.d_max).exp();
    let h_of: Vec<f64> = (m_lo..=m_hi)
        .map(|m| params.h_of(m as f64 * dt))
        .collect::<Result<_>>()?;
    let mut alpha_ref = f64::NEG_INFINITY;
    for &h in &h_of {
        for idx in 0..n {
            alpha_ref = alpha_ref.max(h * (eld[idx] - e2ld));
        }
    }
    let hx = grid1.axes[0].spacing;
    let sigma = 16.0 / hx.powi(4) + 1.0 / dt;

    // spatial stencils are time-independent: build one row template per
    // stencil-fitting node, already merged and mapped to x-dofs
    struct RowTemplate {
        node: usize,
        /// (x-dof, coefficient) of the spatial part plus 1/dt diagonal
        cols: Vec<(usize, f64)>,
        /// x-dof of the node itself (time coupling), if free
        self_dof: Option<usize>,
        quad_sqrt: f64,
    }
    let mut templates: Vec<RowTemplate> = Vec::new();
    for idx in 0..n {
        let (ix, iy) = grid1.split_index(idx);
        if !stencil_fits(grid1, ix, iy) {
            continue;
        }
        let mut cols: Vec<(usize, f64)> = Vec::with_capacity(8);
        if let Some(j) = sys.dof_of_node[idx] {
            cols.push((j, 1.0 / dt));
        }
        for (node, coef) in spatial_stencil(grid1, coeffs, ix, iy) {
            if let Some(j) = sys.dof_of_node[node] {
                cols.push((j, coef));
            }
        }
        if cols.is_empty() {
            continue;
        }
        cols.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(cols.len());
        for (c, v) in cols {
            if let Some(last) = merged.last_mut() {
                if last.0 == c {
                    last.1 += v;
                    continue;
                }
            }
            merged.push((c, v));
        }
        templates.push(RowTemplate {
            node: idx,
            cols: merged,
            self_dof: sys.dof_of_node[idx],
            quad_sqrt: (grid1.quad_weight(idx) * dt).sqrt(),
        });
    }

    let mut mat = SpdBandMatrix::zeros(n_dof, bw);
    let mut rhs = vec![0.0; n_dof];
    let mut scaled: Vec<(usize, f64)> = Vec::with_capacity(10);
    for m in (m_lo + 1)..=m_hi {
        let mw = m - m_lo;
        let h = h_of[mw];
        let base = mw * sys.n_dof_x;
        let prev = base - sys.n_dof_x;
        for tpl in &templates {
            let alpha = h * (eld[tpl.node] - e2ld);
            let weight = (cfg.s * (alpha - alpha_ref)).exp() * tpl.quad_sqrt / sigma;
            if weight == 0.0 {
                continue;
            }
            scaled.clear();
            if let Some(j) = tpl.self_dof {
                scaled.push((prev + j, -weight / dt));
            }
            for &(j, c) in &tpl.cols {
                scaled.push((base + j, weight * c));
            }
            let fval = weight * rhs_f[m * n + tpl.node];
            for (a, &(c1, v1)) in scaled.iter().enumerate() {
                if fval != 0.0 {
                    rhs[c1] += v1 * fval;
                }
                for &(c2, v2) in &scaled[a..] {
                    mat.add_sym(c2, c1, v1 * v2);
                }
            }
        }
    }
    // Tikhonov mass term keeps the system SPD where the weight died.
    // The whole objective is scaled by 1/sigma^2 (rows carry 1/sigma),
    // so the reg term carries it too and the minimizer matches the
    // unscaled functional `int int |P v - F|^2 e^{2 s alpha} + reg |v|^2`.
    for j in 0..n_dof {
        let node = sys.node_of_dof[j % sys.n_dof_x];
        mat.add_sym(
            j,
            j,
            cfg.reg * grid1.quad_weight(node) * dt / (sigma * sigma),
        );
    }
    let v = mat.solve_equilibrated(&rhs)?;

    // embed into level-major full-grid storage for the window levels
    let mut out = vec![0.0; n * k_w];
    for mw in 0..k_w {
        for j in 0..sys.n_dof_x {
            out[mw * n + sys.node_of_dof[j]] = v[mw * sys.n_dof_x + j];
        }
    }
    Ok((out, m_lo..m_hi + 1))
}

/// Full reconstruction: tile `(eps, T - eps)` with quarter windows of a
/// sliding working window, solve each, and assemble `u = v + u~` on the
/// tiles (overlaps averaged).
pub fn qr_continue(
    grid1: &Grid,
    masks: &SubdomainMasks,
    frame: &GammaFrame,
    coeffs: &CoefficientSet,
    d: &DistanceField,
    lambda: f64,
    traces: &CauchyTrace,
    t_end: f64,
    cfg: &QrConfig,
) -> Result<QrSolution> {
    if !(cfg.eps > cfg.tau) {
        return Err(Error::invalid(format!(
            "continuation window needs eps > tau (eps = {}, tau = {})",
            cfg.eps, cfg.tau
        )));
    }
    if !(cfg.eps < 0.5 * t_end) {
        return Err(Error::invalid("eps must be below T/2"));
    }
    let u_tilde = extend_cauchy(grid1, frame, traces)?;
    let rhs_f = discrete_rhs(grid1, masks, frame, coeffs, &u_tilde);
    let sys = build_dof_map(grid1, frame);
    let n = grid1.n_nodes();
    let n_levels = u_tilde.n_levels;
    let dt = u_tilde.dt;

    // window centers tiling (eps, T-eps) by quarter windows
    let mut centers = Vec::new();
    let mut t0 = cfg.eps + 0.25 * cfg.tau;
    let t0_max = t_end - cfg.eps - 0.25 * cfg.tau;
    loop {
        centers.push(t0.min(t0_max));
        if t0 >= t0_max {
            break;
        }
        t0 += 0.5 * cfg.tau;
    }

    let mut acc = vec![0.0; n * n_levels];
    let mut hits = vec![0u32; n_levels];
    for &c in &centers {
        let (v, levels) = qr_window(
            grid1, masks, frame, coeffs, d, lambda, &rhs_f, t_end, c, cfg, &sys,
        )?;
        // quarter-window tile
        for m in levels.clone() {
            let t = m as f64 * dt;
            if (t - c).abs() <= 0.25 * cfg.tau + 1e-12 {
                let mw = m - levels.start;
                for idx in 0..n {
                    acc[m * n + idx] += v[mw * n + idx] + u_tilde.level(m)[idx];
                }
                hits[m] += 1;
            }
        }
    }
    let mut u_rec = SpaceTimeField::zeros(n, n_levels, dt);
    let mut first = None;
    let mut last = 0;
    for m in 0..n_levels {
        if hits[m] > 0 {
            let lvl = u_rec.level_mut(m);
            for idx in 0..n {
                lvl[idx] = acc[m * n + idx] / hits[m] as f64;
            }
            if first.is_none() {
                first = Some(m);
            }
            last = m;
        }
    }
    let first = first.ok_or_else(|| Error::invalid("covering produced no tiles"))?;
    Ok(QrSolution {
        u_rec,
        covered: (first, last),
        window_centers: centers,
    })
}

/// The pointwise functional `J(w) = sum_{|beta|<=2} |d^beta w| +
/// |grad(Lap w)| + |Lap^2 w| + |dt w|`, each magnitude once.
pub fn j_functional_level(
    grid: &Grid,
    w: &[f64],
    dtw: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = w[i].abs() + dtw[i].abs();
    }
    for beta in multi_indices_up_to(grid.dim, 2) {
        let d = apply_derivative(grid, w, beta)?;
        for i in 0..n {
            out[i] += d[i].abs();
        }
    }
    // grad(Lap w) and Lap^2 w with raw interior stencils
    let lap = {
        let mut acc = apply_derivative(grid, w, [2, 0])?;
        if grid.dim == 2 {
            let dyy = apply_derivative(grid, w, [0, 2])?;
            for (a, b) in acc.iter_mut().zip(dyy.iter()) {
                *a += b;
            }
        }
        acc
    };
    let mut gl2 = vec![0.0; n];
    for a in 0..grid.dim {
        let mut beta = [0usize; 2];
        beta[a] = 1;
        let g = apply_derivative(grid, &lap, beta)?;
        for i in 0..n {
            gl2[i] += g[i] * g[i];
        }
    }
    let bih = {
        let mut acc = apply_derivative(grid, &lap, [2, 0])?;
        if grid.dim == 2 {
            let dyy = apply_derivative(grid, &lap, [0, 2])?;
            for (a, b) in acc.iter_mut().zip(dyy.iter()) {
                *a += b;
            }
        }
        acc
    };
    for i in 0..n {
        out[i] += gl2[i].sqrt() + bih[i].abs();
    }
    Ok(out)
}

/// `|J(w)|^2_{L^2(omega0 x tile)}` for a field sampled on consecutive
/// levels.
pub fn j_norm_sq(
    grid: &Grid,
    masks: &SubdomainMasks,
    w: &SpaceTimeField,
) -> Result<f64> {
    let mut acc = 0.0;
    for m in 0..w.n_levels {
        let tw = time_trapezoid_weight(m, 0, w.n_levels - 1) * w.dt;
        let dtw = w.dt_field(m);
        let j = j_functional_level(grid, w.level(m), &dtw)?;
        acc += tw * l2_sq_masked(grid, &j, &masks.omega0);
    }
    Ok(acc)
}

/// Case split of the parameter balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceCase {
    /// `M > D`: minimize the two-term bound at `s* > 0`.
    DataBelowBudget,
    /// `M <= D`: the data term dominates outright; `s* = 0`.
    DataDominates,
}

/// The balancing parameter `s* = 2 log(M/D) / (c + delta0)` of the
/// two-term bound; Case 2 (`M <= D`) returns zero.
pub fn balance_s(d: f64, m: f64, c: f64, delta0: f64) -> Result<(f64, BalanceCase)> {
    if !(d > 0.0) {
        return Err(Error::invalid("data size D must be positive"));
    }
    if m <= d {
        return Ok((0.0, BalanceCase::DataDominates));
    }
    Ok((
        2.0 / (c + delta0) * (m / d).ln(),
        BalanceCase::DataBelowBudget,
    ))
}

/// One evaluated entry of the two-term table.
#[derive(Debug, Clone, Copy)]
pub struct TwoTermEntry {
    pub noise_d: f64,
    pub s: f64,
    /// `|J(u_rec - u_true)|^2` on `omega0 x` the quarter window.
    pub measured_sq: f64,
}

#[derive(Debug, Clone)]
pub struct TwoTermTable {
    pub entries: Vec<TwoTermEntry>,
    pub m_budget: f64,
    pub delta0: f64,
    /// Fitted exponent constant `c` (median of per-noise knee fits).
    pub c_fit: f64,
    /// Fitted multiplicative constant making the bound hold across the
    /// table.
    pub c_mult: f64,
    /// Empirical knee `argmin_s measured` per noise level: `(D, s_knee)`.
    pub knees: Vec<(f64, f64)>,
}

impl TwoTermTable {
    /// The bound `c_mult (e^{c_fit s} D^2 + e^{-s delta0} M^2)` at an entry.
    pub fn bound_at(&self, e: &TwoTermEntry) -> f64 {
        self.c_mult
            * ((self.c_fit * e.s).exp() * e.noise_d * e.noise_d
                + (-e.s * self.delta0).exp() * self.m_budget * self.m_budget)
    }
}

/// Evaluate the two-term structure: for each trace-noise level and each
/// `s`, reconstruct on one working window and measure
/// `|J(u_rec - u_true)|^2` on `omega0 x` the quarter window; then fit
/// the constants of `C (e^{c s} D^2 + e^{-s delta0} M^2)`.
#[allow(clippy::too_many_arguments)]
pub fn two_term_bound_check(
    grid1: &Grid,
    masks: &SubdomainMasks,
    frame: &GammaFrame,
    coeffs: &CoefficientSet,
    d: &DistanceField,
    lambda: f64,
    thresholds: &LevelThresholds,
    traces_clean: &CauchyTrace,
    u_true: &SpaceTimeField,
    noise_levels: &[f64],
    s_range: &[f64],
    t_end: f64,
    cfg: &QrConfig,
    reg_rule: impl Fn(f64) -> f64,
    seed: u64,
) -> Result<TwoTermTable> {
    if noise_levels.len() < 3 {
        return Err(Error::invalid("need at least 3 noise levels"));
    }
    let lo = noise_levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = noise_levels.iter().cloned().fold(0.0f64, f64::max);
    if hi / lo < 1e3 {
        return Err(Error::invalid("noise levels must span at least 3 decades"));
    }
    let m_budget = energy_budget(grid1, masks, u_true)?;
    let t0 = 0.5 * t_end;
    let sys = build_dof_map(grid1, frame);
    let mut entries = Vec::new();
    let mut knees = Vec::new();
    let mut c_fits = Vec::new();
    for (i, &level) in noise_levels.iter().enumerate() {
        let (noisy, d_noise) = traces_clean.with_noise(level, seed + i as u64)?;
        let u_tilde = extend_cauchy(grid1, frame, &noisy)?;
        let rhs_f = discrete_rhs(grid1, masks, frame, coeffs, &u_tilde);
        let mut best = (f64::INFINITY, s_range[0]);
        for &s in s_range {
            let mut c = *cfg;
            c.s = s;
            c.reg = reg_rule(d_noise);
            let (v, levels) = qr_window(
                grid1, masks, frame, coeffs, d, lambda, &rhs_f, t_end, t0, &c, &sys,
            )?;
            // quarter-window tile of u_rec - u_true
            let dt = u_true.dt;
            let tile: Vec<usize> = levels
                .clone()
                .filter(|&m| ((m as f64 * dt) - t0).abs() <= 0.25 * cfg.tau + 1e-12)
                .collect();
            let mut w = SpaceTimeField::zeros(grid1.n_nodes(), tile.len(), dt);
            for (k, &m) in tile.iter().enumerate() {
                let mw = m - levels.start;
                let lvl = w.level_mut(k);
                for idx in 0..grid1.n_nodes() {
                    lvl[idx] =
                        v[mw * grid1.n_nodes() + idx] + u_tilde.level(m)[idx] - u_true.level(m)[idx];
                }
            }
            let measured = j_norm_sq(grid1, masks, &w)?;
            entries.push(TwoTermEntry {
                noise_d: d_noise,
                s,
                measured_sq: measured,
            });
            if measured < best.0 {
                best = (measured, s);
            }
        }
        knees.push((d_noise, best.1));
        if d_noise > 0.0 && m_budget > d_noise {
            // balance relation: s* = 2 ln(M/D) / (c + delta0)
            let c_i = 2.0 * (m_budget / d_noise).ln() / best.1 - thresholds.delta0;
            if c_i.is_finite() && c_i > 0.0 {
                c_fits.push(c_i);
            }
        }
    }
    c_fits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let c_fit = if c_fits.is_empty() {
        1.0
    } else {
        c_fits[c_fits.len() / 2]
    };
    let mut c_mult = 0.0f64;
    for e in &entries {
        let denom = (c_fit * e.s).exp() * e.noise_d * e.noise_d
            + (-e.s * thresholds.delta0).exp() * m_budget * m_budget;
        if denom > 0.0 {
            c_mult = c_mult.max(e.measured_sq / denom);
        }
    }
    Ok(TwoTermTable {
        entries,
        m_budget,
        delta0: thresholds.delta0,
        c_fit,
        c_mult,
        knees,
    })
}

/// The a-priori budget `M = |u|_{L^2(0,T; H^3(Omega))}` over the
/// original domain.
pub fn energy_budget(
    grid1: &Grid,
    masks: &SubdomainMasks,
    u: &SpaceTimeField,
) -> Result<f64> {
    let domain = masks.original_domain_mask();
    let mut acc = 0.0;
    for m in 0..u.n_levels {
        let tw = time_trapezoid_weight(m, 0, u.n_levels - 1) * u.dt;
        acc += tw * sobolev_norm_sq(grid1, u.level(m), 3, &domain)?;
    }
    Ok(acc.sqrt())
}

/// Power-law fit of reconstruction error against data size.
#[derive(Debug, Clone, Copy)]
pub struct HolderFit {
    pub kappa_hat: f64,
    pub c_hat: f64,
    pub r_squared: f64,
}

/// Least squares of `log err` against `log D`; needs >= 5 levels
/// spanning >= 3 decades.
pub fn holder_fit(points: &[(f64, f64)]) -> Result<HolderFit> {
    if points.len() < 5 {
        return Err(Error::invalid("need at least 5 noise levels for the fit"));
    }
    let dmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let dmax = points.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if !(dmax / dmin >= 1e3) {
        return Err(Error::invalid(format!(
            "noise levels span {:.2} decades; need at least 3",
            (dmax / dmin).log10()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let nf = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| {
            let p = slope * x + intercept;
            (y - p) * (y - p)
        })
        .sum();
    Ok(HolderFit {
        kappa_hat: slope,
        c_hat: intercept.exp(),
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// One pass of the Hoelder-stability sweep.
#[derive(Debug, Clone)]
pub struct HolderSweepResult {
    /// `(noise data size D, relative response)` per level.
    pub points: Vec<(f64, f64)>,
    pub s_used: Vec<f64>,
    pub fit: HolderFit,
}

/// Sweep trace-noise levels, reconstruct with the balanced Carleman
/// parameter per level, and fit the response power law.
///
/// The response is `|u_rec(noisy) - u_rec(clean)|` on `omega0` over the
/// covered levels, relative to `|u_true|` there: the quantity pairwise
/// conditional stability bounds. (The plain error against the truth
/// floors out at the discretization error, which would flatten the
/// small-noise decades of the fit.)
#[allow(clippy::too_many_arguments)]
pub fn holder_sweep(
    grid1: &Grid,
    masks: &SubdomainMasks,
    frame: &GammaFrame,
    coeffs: &CoefficientSet,
    d: &DistanceField,
    lambda: f64,
    thresholds: &LevelThresholds,
    traces_clean: &CauchyTrace,
    u_true: &SpaceTimeField,
    relative_levels: &[f64],
    c_prior: f64,
    reg0: f64,
    t_end: f64,
    cfg_base: &QrConfig,
    seed: u64,
) -> Result<HolderSweepResult> {
    let d_clean = traces_clean.data_size()?;
    if !(d_clean > 0.0) {
        return Err(Error::invalid("clean traces carry no data"));
    }
    let m_budget = energy_budget(grid1, masks, u_true)?;
    let tile_norm = |a: &SpaceTimeField, b: &SpaceTimeField, m0: usize, m1: usize| -> f64 {
        let mut e = 0.0;
        for m in m0..=m1 {
            let diff: Vec<f64> = a
                .level(m)
                .iter()
                .zip(b.level(m).iter())
                .map(|(x, y)| x - y)
                .collect();
            e += l2_sq_masked(grid1, &diff, &masks.omega0);
        }
        e.sqrt()
    };
    let mut points = Vec::with_capacity(relative_levels.len());
    let mut s_used = Vec::with_capacity(relative_levels.len());
    let mut uref = None;
    for (i, &rel) in relative_levels.iter().enumerate() {
        let dn = rel * d_clean;
        let (s_bal, _) = balance_s(dn, m_budget, c_prior, thresholds.delta0)?;
        let s_i = s_bal.clamp(0.5, 5.66);
        let reg_i = (reg0 * rel * rel).max(1e-14);
        let mut cfg = *cfg_base;
        cfg.s = s_i;
        cfg.reg = reg_i;
        let clean = qr_continue(
            grid1, masks, frame, coeffs, d, lambda, traces_clean, t_end, &cfg,
        )?;
        let (noisy_tr, d_noise) = traces_clean.with_noise(dn, seed + i as u64)?;
        let noisy = qr_continue(
            grid1, masks, frame, coeffs, d, lambda, &noisy_tr, t_end, &cfg,
        )?;
        let (m0, m1) = clean.covered;
        let scale = *uref.get_or_insert_with(|| {
            let z = SpaceTimeField::zeros(grid1.n_nodes(), u_true.n_levels, u_true.dt);
            tile_norm(u_true, &z, m0, m1)
        });
        let resp = tile_norm(&noisy.u_rec, &clean.u_rec, m0, m1) / scale;
        points.push((d_noise, resp));
        s_used.push(s_i);
    }
    let fit = holder_fit(&points)?;
    Ok(HolderSweepResult {
        points,
        s_used,
        fit,
    })
}

/// Synthetic modal Cauchy data for `u = exp(-rate t) sin(k pi (x-lo)/L)`
/// on a low-side gamma face in 1D; `lo` and `len` describe the original
/// domain the solution lives on (not the enlarged grid).
pub fn modal_cauchy_trace(
    _lo: f64,
    len: f64,
    k: usize,
    n_levels: usize,
    dt: f64,
) -> CauchyTrace {
    let khat = k as f64 * std::f64::consts::PI / len;
    let rate = khat.powi(4);
    let mut traces = CauchyTrace::zeros(1, n_levels, dt, None);
    for m in 0..n_levels {
        let amp = (-rate * (m as f64 * dt)).exp();
        // d_nu^j = (-d/dx)^j at the low end; sin(khat (x - lo)) there:
        // j=0: 0, j=1: -khat, j=2: 0, j=3: khat^3 (times amp)
        traces.g[1].level_mut(m)[0] = -khat * amp;
        traces.g[3].level_mut(m)[0] = khat.powi(3) * amp;
    }
    traces
}

/// The matching modal solution on the enlarged grid (analytic
/// continuation across gamma).
pub fn modal_solution_on(grid1: &Grid, k: usize, lo: f64, len: f64, n_levels: usize, dt: f64) -> SpaceTimeField {
    let khat = k as f64 * std::f64::consts::PI / len;
    let rate = khat.powi(4);
    let mut u = SpaceTimeField::zeros(grid1.n_nodes(), n_levels, dt);
    for m in 0..n_levels {
        let amp = (-rate * (m as f64 * dt)).exp();
        let lvl = u.level_mut(m);
        for idx in 0..grid1.n_nodes() {
            let x = grid1.coord(idx)[0];
            lvl[idx] = amp * (khat * (x - lo)).sin();
        }
    }
    u
}
