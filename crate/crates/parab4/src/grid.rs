//! Tensor-product space-time grids and subdomain structures.
//!
//! The spatial domain is a box in 1 or 2 dimensions discretized by a
//! uniform node grid including the boundary; time is a uniform mesh on
//! `[0, T]` with `nt` steps. Subdomain masks identify the observation
//! region `omega`, the target region `omega0`, the data subboundary
//! `gamma` and, after [`extend_domain`], the enlarged domain with its
//! pad strip and control region.

use crate::error::{Error, Result};

pub const MIN_NODES_PER_AXIS: usize = 8;
pub const MIN_TIME_STEPS: usize = 8;

/// One spatial axis: uniform nodes including both endpoints.
#[derive(Debug, Clone)]
pub struct Axis {
    pub coords: Vec<f64>,
    pub spacing: f64,
}

impl Axis {
    fn uniform(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let coords = (0..n).map(|i| lo + i as f64 * h).collect();
        Axis { coords, spacing: h }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.coords[0]
    }

    pub fn hi(&self) -> f64 {
        *self.coords.last().unwrap()
    }
}

/// Uniform tensor-product grid. Node storage is x-fastest:
/// `idx = iy * nx + ix` (1D uses `iy = 0`).
#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub axes: Vec<Axis>,
    pub t_end: f64,
    pub nt: usize,
    pub dt: f64,
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.axes[0].len()
    }

    pub fn ny(&self) -> usize {
        if self.dim == 2 {
            self.axes[1].len()
        } else {
            1
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn n_time_levels(&self) -> usize {
        self.nt + 1
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx() && iy < self.ny());
        iy * self.nx() + ix
    }

    #[inline]
    pub fn split_index(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx(), idx / self.nx())
    }

    /// Physical coordinates of a node; the second entry is 0 in 1D.
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let (ix, iy) = self.split_index(idx);
        let x = self.axes[0].coords[ix];
        let y = if self.dim == 2 {
            self.axes[1].coords[iy]
        } else {
            0.0
        };
        [x, y]
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Index of the 1D node nearest a coordinate.
    pub fn coord_index_near(&self, x: f64) -> Option<usize> {
        if self.dim != 1 {
            return None;
        }
        let h = self.axes[0].spacing;
        let i = ((x - self.axes[0].lo()) / h).round();
        if i < 0.0 || i >= self.nx() as f64 {
            return None;
        }
        Some(i as usize)
    }

    /// True for nodes on the outer box boundary.
    pub fn is_boundary(&self, idx: usize) -> bool {
        let (ix, iy) = self.split_index(idx);
        ix == 0 || ix == self.nx() - 1 || (self.dim == 2 && (iy == 0 || iy == self.ny() - 1))
    }

    pub fn boundary_count(&self) -> usize {
        (0..self.n_nodes()).filter(|&i| self.is_boundary(i)).count()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Trapezoidal quadrature weight of a node for integrals over the
    /// whole box (product of per-axis trapezoid weights).
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let (ix, iy) = self.split_index(idx);
        let wx = axis_trapezoid(ix, self.nx()) * self.axes[0].spacing;
        if self.dim == 2 {
            wx * axis_trapezoid(iy, self.ny()) * self.axes[1].spacing
        } else {
            wx
        }
    }

    /// Trapezoidal weight for integrals over a masked region: along each
    /// axis a node at the edge of a mask run counts with weight 1/2.
    pub fn quad_weight_masked(&self, idx: usize, mask: &[bool]) -> f64 {
        debug_assert!(mask[idx]);
        let (ix, iy) = self.split_index(idx);
        let inm = |jx: i64, jy: i64| -> bool {
            if jx < 0 || jx >= self.nx() as i64 || jy < 0 || jy >= self.ny() as i64 {
                return false;
            }
            mask[self.index(jx as usize, jy as usize)]
        };
        let run = |l: bool, r: bool| -> f64 {
            match (l, r) {
                (true, true) => 1.0,
                (false, false) => 1.0, // isolated run of one node
                _ => 0.5,
            }
        };
        let ix = ix as i64;
        let iy = iy as i64;
        let mut w = run(inm(ix - 1, iy), inm(ix + 1, iy)) * self.axes[0].spacing;
        if self.dim == 2 {
            w *= run(inm(ix, iy - 1), inm(ix, iy + 1)) * self.axes[1].spacing;
        }
        w
    }
}

fn axis_trapezoid(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Build a uniform grid. `extents[a] = [lo, hi]` per axis, `nodes[a]`
/// counts nodes including both endpoints.
pub fn build_grid(
    dim: usize,
    extents: &[[f64; 2]],
    nodes: &[usize],
    t_end: f64,
    nt: usize,
) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(Error::invalid(format!("dim must be 1 or 2, got {dim}")));
    }
    if extents.len() != dim || nodes.len() != dim {
        return Err(Error::invalid(format!(
            "expected {dim} extents and node counts, got {} and {}",
            extents.len(),
            nodes.len()
        )));
    }
    for a in 0..dim {
        if nodes[a] < MIN_NODES_PER_AXIS {
            return Err(Error::invalid(format!(
                "axis {a}: need at least {MIN_NODES_PER_AXIS} nodes for fourth-order stencils, got {}",
                nodes[a]
            )));
        }
        if !(extents[a][1] - extents[a][0]).is_finite() || extents[a][1] <= extents[a][0] {
            return Err(Error::invalid(format!(
                "axis {a}: extent [{}, {}] must be a positive interval",
                extents[a][0], extents[a][1]
            )));
        }
    }
    if !(t_end > 0.0) {
        return Err(Error::invalid("time extent T must be positive"));
    }
    if nt < MIN_TIME_STEPS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TIME_STEPS} time steps, got {nt}"
        )));
    }
    let axes = (0..dim)
        .map(|a| Axis::uniform(extents[a][0], extents[a][1], nodes[a]))
        .collect();
    Ok(Grid {
        dim,
        axes,
        t_end,
        nt,
        dt: t_end / nt as f64,
    })
}

/// Axis-aligned coordinate box, given as `[lo, hi]` per axis.
#[derive(Debug, Clone, Copy, serde::Deserialize, serde::Serialize)]
pub struct BoxSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl BoxSpec {
    pub fn new_1d(lo: f64, hi: f64) -> Self {
        BoxSpec {
            lo: [lo, 0.0],
            hi: [hi, 0.0],
        }
    }

    pub fn new_2d(lo: [f64; 2], hi: [f64; 2]) -> Self {
        BoxSpec { lo, hi }
    }

    /// Strict interior membership of a point (open box).
    pub fn contains_open(&self, p: [f64; 2], dim: usize) -> bool {
        (0..dim).all(|a| p[a] > self.lo[a] && p[a] < self.hi[a])
    }

    pub fn center(&self, dim: usize) -> [f64; 2] {
        let mut c = [0.0; 2];
        for a in 0..dim {
            c[a] = 0.5 * (self.lo[a] + self.hi[a]);
        }
        c
    }
}

/// Which side of an axis a boundary face lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lo,
    Hi,
}

/// A subboundary: one face of the box (1D endpoint, 2D edge), optionally
/// restricted to a tangential interval.
#[derive(Debug, Clone, Copy, serde::Deserialize, serde::Serialize)]
pub struct GammaSpec {
    pub axis: usize,
    pub side: Side,
    /// Tangential sub-interval for 2D edges; `None` means the full face.
    #[serde(default)]
    pub span: Option<[f64; 2]>,
}

/// Subdomain request: observation region, optional target region,
/// optional data subboundary.
#[derive(Debug, Clone)]
pub struct SubdomainSpec {
    pub omega: BoxSpec,
    pub omega0: Option<BoxSpec>,
    pub gamma: Option<GammaSpec>,
}

/// Per-node region classification within the working domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Interior of the original domain.
    Interior,
    /// Boundary of the original domain (excluding nodes swallowed by a pad).
    Boundary,
    /// Interior of the pad strip `Omega1 \ closure(Omega)`.
    PadInterior,
    /// Outer boundary of the enlarged domain.
    OuterBoundary,
}

/// Node masks for all the subdomains a problem needs.
#[derive(Debug, Clone)]
pub struct SubdomainMasks {
    pub omega: Vec<bool>,
    pub omega0: Vec<bool>,
    pub gamma: Vec<bool>,
    /// Node set of the working (possibly enlarged) domain; all nodes of
    /// the grid the masks were built on.
    pub omega1: Vec<bool>,
    pub region: Vec<Region>,
    /// Stencil clearance (in nodes) kept between `omega0` and where
    /// fourth-order stencils are evaluated.
    pub omega0_interior_margin: usize,
}

impl SubdomainMasks {
    pub fn omega_indices(&self) -> Vec<usize> {
        mask_indices(&self.omega)
    }

    pub fn omega0_indices(&self) -> Vec<usize> {
        mask_indices(&self.omega0)
    }

    pub fn gamma_indices(&self) -> Vec<usize> {
        mask_indices(&self.gamma)
    }

    /// Nodes of the original domain (interior plus its boundary), defined
    /// on the grid the masks belong to. Gamma nodes sit between the pad
    /// and the original domain and belong to closure(Omega) as well.
    pub fn original_domain_mask(&self) -> Vec<bool> {
        self.region
            .iter()
            .zip(self.gamma.iter())
            .map(|(r, &g)| g || matches!(r, Region::Interior | Region::Boundary))
            .collect()
    }
}

pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| if m { Some(i) } else { None })
        .collect()
}

fn gamma_mask(grid: &Grid, gamma: &GammaSpec) -> Result<Vec<bool>> {
    if gamma.axis >= grid.dim {
        return Err(Error::invalid(format!(
            "gamma axis {} out of range for dim {}",
            gamma.axis, grid.dim
        )));
    }
    let face_ix = match gamma.side {
        Side::Lo => 0,
        Side::Hi => grid.axes[gamma.axis].len() - 1,
    };
    let mut mask = vec![false; grid.n_nodes()];
    for idx in 0..grid.n_nodes() {
        let (ix, iy) = grid.split_index(idx);
        let along = [ix, iy];
        if along[gamma.axis] != face_ix {
            continue;
        }
        if grid.dim == 2 {
            let tang_axis = 1 - gamma.axis;
            let t = grid.axes[tang_axis].coords[along[tang_axis]];
            if let Some([s0, s1]) = gamma.span {
                if t < s0 - 1e-12 || t > s1 + 1e-12 {
                    continue;
                }
            }
            // corners of the box are never gamma nodes
            if along[tang_axis] == 0 || along[tang_axis] == grid.axes[tang_axis].len() - 1 {
                continue;
            }
        }
        mask[idx] = true;
    }
    if mask.iter().all(|&m| !m) {
        return Err(Error::invalid("gamma selects no nodes"));
    }
    Ok(mask)
}

/// Build subdomain masks on `grid` from coordinate boxes.
///
/// `omega` must be nonempty and strictly interior to the domain. The
/// closure of `omega0` must stay inside `Omega union gamma`, checked
/// discretely: every node of `closure(omega0)` is interior, or a gamma
/// node, or within one spacing of a gamma node.
pub fn build_subdomains(grid: &Grid, spec: &SubdomainSpec) -> Result<SubdomainMasks> {
    let n = grid.n_nodes();
    let mut omega = vec![false; n];
    for idx in 0..n {
        if spec.omega.contains_open(grid.coord(idx), grid.dim) {
            omega[idx] = true;
        }
    }
    if omega.iter().all(|&m| !m) {
        return Err(Error::invalid("omega contains no grid nodes"));
    }
    for idx in 0..n {
        if omega[idx] && grid.is_boundary(idx) {
            return Err(Error::invalid(
                "omega touches the outer boundary; it must be strictly interior",
            ));
        }
    }

    let gamma = match &spec.gamma {
        Some(g) => gamma_mask(grid, g)?,
        None => vec![false; n],
    };

    let mut omega0 = vec![false; n];
    if let Some(b0) = &spec.omega0 {
        // closure: nodes inside the closed box
        let mut offending = Vec::new();
        for idx in 0..n {
            let p = grid.coord(idx);
            let tol = 1e-12;
            let in_closed = (0..grid.dim)
                .all(|a| p[a] >= b0.lo[a] - tol && p[a] <= b0.hi[a] + tol);
            if !in_closed {
                continue;
            }
            if !grid.is_boundary(idx) {
                omega0[idx] = true;
                continue;
            }
            // boundary node of the closure: allowed only on or next to gamma
            let ok = gamma[idx] || neighbors(grid, idx).iter().any(|&j| gamma[j]);
            if ok {
                // keep closure nodes on gamma out of the open mask
                continue;
            }
            offending.push(idx);
        }
        if !offending.is_empty() {
            offending.truncate(8);
            return Err(Error::InvariantViolation {
                reason: "closure(omega0) leaves Omega union gamma".into(),
                nodes: offending,
            });
        }
        if omega0.iter().all(|&m| !m) {
            return Err(Error::invalid("omega0 contains no grid nodes"));
        }
    }

    let region = (0..n)
        .map(|idx| {
            if grid.is_boundary(idx) {
                Region::Boundary
            } else {
                Region::Interior
            }
        })
        .collect();

    Ok(SubdomainMasks {
        omega,
        omega0,
        gamma,
        omega1: vec![true; n],
        region,
        omega0_interior_margin: 2,
    })
}

fn neighbors(grid: &Grid, idx: usize) -> Vec<usize> {
    let (ix, iy) = grid.split_index(idx);
    let mut out = Vec::with_capacity(4);
    if ix > 0 {
        out.push(grid.index(ix - 1, iy));
    }
    if ix + 1 < grid.nx() {
        out.push(grid.index(ix + 1, iy));
    }
    if grid.dim == 2 {
        if iy > 0 {
            out.push(grid.index(ix, iy - 1));
        }
        if iy + 1 < grid.ny() {
            out.push(grid.index(ix, iy + 1));
        }
    }
    out
}

/// Fraction of the pad depth (measured from the outer pad boundary)
/// where the canonical control region starts and ends. For a pad of
/// depth `p` across `gamma` at the low side of the axis, the control
/// region is the strip `(lo + 0.2 p, lo + 0.8 p)` in the normal
/// direction, i.e. `(-0.8 p, -0.2 p)` relative to the old boundary.
const CONTROL_INSET: (f64, f64) = (0.2, 0.8);

/// Enlarge the domain across `gamma` by `pad` (in physical units,
/// rounded to whole node spacings, at least two). Returns the enlarged
/// grid together with masks identifying the original domain, the pad
/// strip, `gamma`, and a canonical control region `omega` whose closure
/// lies inside the pad strip.
///
/// The retained axis coordinates are reused verbatim, so the
/// restriction of the enlarged grid to the original domain reproduces
/// the original node coordinates bit-exactly.
pub fn extend_domain(grid: &Grid, gamma: &GammaSpec, pad: f64) -> Result<(Grid, SubdomainMasks)> {
    if gamma.axis >= grid.dim {
        return Err(Error::invalid("gamma axis out of range"));
    }
    let h = grid.axes[gamma.axis].spacing;
    if !(pad > 0.0) {
        return Err(Error::invalid("pad must be positive"));
    }
    let k = (pad / h).round() as usize;
    if k < 2 {
        return Err(Error::invalid(format!(
            "pad {pad} is smaller than two node spacings (h = {h}); the cutoff band needs room"
        )));
    }

    let mut axes = grid.axes.clone();
    let old_axis = &grid.axes[gamma.axis];
    let mut coords = Vec::with_capacity(old_axis.len() + k);
    match gamma.side {
        Side::Lo => {
            let lo = old_axis.lo();
            for j in (1..=k).rev() {
                coords.push(lo - j as f64 * h);
            }
            coords.extend_from_slice(&old_axis.coords);
        }
        Side::Hi => {
            let hi = old_axis.hi();
            coords.extend_from_slice(&old_axis.coords);
            for j in 1..=k {
                coords.push(hi + j as f64 * h);
            }
        }
    }
    axes[gamma.axis] = Axis {
        coords,
        spacing: h,
    };
    let enlarged = Grid {
        dim: grid.dim,
        axes,
        t_end: grid.t_end,
        nt: grid.nt,
        dt: grid.dt,
    };

    // index of the old boundary face (the gamma face) inside the new axis
    let gamma_ix = match gamma.side {
        Side::Lo => k,
        Side::Hi => old_axis.len() - 1,
    };

    let n = enlarged.n_nodes();
    let mut gamma_mask_v = vec![false; n];
    let mut region = vec![Region::Interior; n];
    for idx in 0..n {
        let (ix, iy) = enlarged.split_index(idx);
        let along = [ix, iy];
        let a = along[gamma.axis];
        let in_pad = match gamma.side {
            Side::Lo => a < gamma_ix,
            Side::Hi => a > gamma_ix,
        };
        let on_gamma_face = a == gamma_ix;
        if enlarged.is_boundary(idx) {
            region[idx] = Region::OuterBoundary;
        } else if in_pad {
            region[idx] = Region::PadInterior;
        } else if on_gamma_face {
            gamma_mask_v[idx] = true;
            region[idx] = Region::Interior; // gamma is interior to Omega1
        } else {
            // inside the original domain: interior or old-boundary face
            let old_boundary = (0..grid.dim).any(|ax| {
                if ax == gamma.axis {
                    match gamma.side {
                        Side::Lo => a == enlarged.axes[ax].len() - 1,
                        Side::Hi => a == 0,
                    }
                } else {
                    along[ax] == 0 || along[ax] == enlarged.axes[ax].len() - 1
                }
            });
            region[idx] = if old_boundary {
                Region::Boundary
            } else {
                Region::Interior
            };
        }
    }
    // 1D gamma is a single interior node; in 2D restrict to non-corner
    // face nodes (corners of the enlarged box are outer boundary anyway)
    if grid.dim == 2 {
        for idx in 0..n {
            if gamma_mask_v[idx] && enlarged.is_boundary(idx) {
                gamma_mask_v[idx] = false;
            }
        }
    }

    // canonical control region inside the pad strip
    let depth = k as f64 * h;
    let (ctrl_lo, ctrl_hi) = match gamma.side {
        Side::Lo => {
            let b = old_axis.lo();
            (b - CONTROL_INSET.1 * depth, b - CONTROL_INSET.0 * depth)
        }
        Side::Hi => {
            let b = old_axis.hi();
            (b + CONTROL_INSET.0 * depth, b + CONTROL_INSET.1 * depth)
        }
    };
    let mut ctrl = BoxSpec {
        lo: [f64::NEG_INFINITY; 2],
        hi: [f64::INFINITY; 2],
    };
    ctrl.lo[gamma.axis] = ctrl_lo;
    ctrl.hi[gamma.axis] = ctrl_hi;
    for a in 0..grid.dim {
        if a != gamma.axis {
            // inset tangentially so closure(omega) stays inside the strip
            let lo = enlarged.axes[a].lo();
            let hi = enlarged.axes[a].hi();
            let inset = 0.1 * (hi - lo);
            ctrl.lo[a] = lo + inset;
            ctrl.hi[a] = hi - inset;
        }
    }
    let mut omega = vec![false; n];
    for idx in 0..n {
        if region[idx] == Region::PadInterior && ctrl.contains_open(enlarged.coord(idx), grid.dim)
        {
            omega[idx] = true;
        }
    }
    if omega.iter().all(|&m| !m) {
        return Err(Error::invalid(
            "pad too small: canonical control region contains no nodes",
        ));
    }

    let masks = SubdomainMasks {
        omega,
        omega0: vec![false; n],
        gamma: gamma_mask_v,
        omega1: vec![true; n],
        region,
        omega0_interior_margin: 2,
    };
    Ok((enlarged, masks))
}

/// Fill `masks.omega0` from a coordinate box on an enlarged grid; the
/// closure check against `Omega union gamma` is the same as in
/// [`build_subdomains`].
pub fn set_omega0(grid: &Grid, masks: &mut SubdomainMasks, b0: &BoxSpec) -> Result<()> {
    let n = grid.n_nodes();
    let mut omega0 = vec![false; n];
    let mut offending = Vec::new();
    for idx in 0..n {
        let p = grid.coord(idx);
        let tol = 1e-12;
        let in_closed =
            (0..grid.dim).all(|a| p[a] >= b0.lo[a] - tol && p[a] <= b0.hi[a] + tol);
        if !in_closed {
            continue;
        }
        match masks.region[idx] {
            Region::Interior => {
                if masks.gamma[idx] {
                    continue; // closure may touch gamma but the open set stops there
                }
                omega0[idx] = true;
            }
            Region::Boundary | Region::OuterBoundary => {
                let ok = masks.gamma[idx] || neighbors(grid, idx).iter().any(|&j| masks.gamma[j]);
                if !ok {
                    offending.push(idx);
                }
            }
            Region::PadInterior => offending.push(idx),
        }
    }
    if !offending.is_empty() {
        offending.truncate(8);
        return Err(Error::InvariantViolation {
            reason: "closure(omega0) leaves Omega union gamma".into(),
            nodes: offending,
        });
    }
    if omega0.iter().all(|&m| !m) {
        return Err(Error::invalid("omega0 contains no grid nodes"));
    }
    masks.omega0 = omega0;
    Ok(())
}
