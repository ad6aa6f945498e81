//! Experiment configuration: a TOML file with sections mirroring the
//! library modules. Every tunable the estimates leave existential
//! (sweep ranges, caps, tolerances) is surfaced here.

use crate::error::{Error, Result};
use crate::grid::{BoxSpec, GammaSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub grid: GridConfig,
    pub subdomains: SubdomainConfig,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    pub weights: WeightConfig,
    pub forward: ForwardConfig,
    pub carleman: CarlemanConfig,
    pub inverse_source: InverseSourceConfig,
    pub continuation: ContinuationConfig,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub nodes: Vec<usize>,
    pub extents: Vec<[f64; 2]>,
    pub t_end: f64,
    pub nt: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxConfig {
    pub fn to_box(&self) -> BoxSpec {
        let pick = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(0.0);
        BoxSpec {
            lo: [pick(&self.lo, 0), pick(&self.lo, 1)],
            hi: [pick(&self.hi, 0), pick(&self.hi, 1)],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SubdomainConfig {
    /// Observation region for the interior-data problem.
    pub omega: BoxConfig,
    /// Continuation target region.
    pub omega0: BoxConfig,
    /// Data subboundary.
    pub gamma: GammaSpec,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    /// Constant lower-order terms `(b1, b2, value)`.
    #[serde(default)]
    pub terms: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    /// Weight strength for the base-domain estimate checks.
    pub lambda: f64,
    /// Auto-selection cap for the enlarged-domain threshold system.
    pub lambda_cap: f64,
    /// Working-window half width for the estimate checks.
    pub tau: f64,
    /// Window midpoint.
    pub t0: f64,
    /// Time cells per window for quadrature.
    pub window_cells: usize,
    /// Index of the time-regularity trace surrogate (0 = plain L2 on
    /// gamma); recorded here as a visible constant.
    #[serde(default)]
    pub mu_surrogate: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    /// Sine mode of the synthetic source / initial data.
    pub mode_k: usize,
    /// Constant known factor R.
    pub source_r: f64,
    /// Nondegeneracy floor for |R| at the observation time.
    pub r0: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub factor: f64,
    pub count: usize,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| self.start * self.factor.powi(i as i32))
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanConfig {
    pub s_sweep: SweepRange,
    pub suite_size: usize,
    pub collapse_s: SweepRange,
    /// Window cells for the energy-shift identity check.
    pub energy_cells: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSourceConfig {
    pub theta: f64,
    pub t1: f64,
    pub reg_sweep: SweepRange,
    pub ensemble: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub pad: f64,
    pub eps: f64,
    pub tau: f64,
    /// Carleman parameter of the noise-free reconstruction.
    pub s: f64,
    pub reg: f64,
    pub mode_k: usize,
    /// Relative trace-noise levels for the stability sweep.
    pub noise_levels: Vec<f64>,
    /// Prior for the balance constant when choosing s per level.
    pub c_prior: f64,
    /// Base of the noise-proportional regularization rule.
    pub reg0: f64,
    pub s_sweep: SweepRange,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.dim != 1 && g.dim != 2 {
            return Err(Error::Config("grid.dim must be 1 or 2".into()));
        }
        if g.nodes.len() != g.dim || g.extents.len() != g.dim {
            return Err(Error::Config(
                "grid.nodes and grid.extents must have one entry per dimension".into(),
            ));
        }
        if !(g.t_end > 0.0) {
            return Err(Error::Config("grid.t_end must be positive".into()));
        }
        let w = &self.weights;
        if !(w.lambda > 0.0) || !(w.lambda_cap > 0.0) {
            return Err(Error::Config(
                "weights.lambda and weights.lambda_cap must be positive".into(),
            ));
        }
        if !(w.tau > 0.0) || w.t0 - w.tau < 0.0 || w.t0 + w.tau > g.t_end {
            return Err(Error::Config(format!(
                "weights window (t0 - tau, t0 + tau) = ({}, {}) must lie inside (0, {})",
                w.t0 - w.tau,
                w.t0 + w.tau,
                g.t_end
            )));
        }
        if w.window_cells < 8 {
            return Err(Error::Config("weights.window_cells must be at least 8".into()));
        }
        let inv = &self.inverse_source;
        if !(inv.t1 > 0.0) || inv.theta - inv.t1 <= 0.0 || inv.theta + inv.t1 >= g.t_end {
            return Err(Error::Config(format!(
                "inverse_source window ({}, {}) must lie strictly inside (0, {})",
                inv.theta - inv.t1,
                inv.theta + inv.t1,
                g.t_end
            )));
        }
        if inv.ensemble < 2 {
            return Err(Error::Config("inverse_source.ensemble must be at least 2".into()));
        }
        let c = &self.continuation;
        if !(c.eps > c.tau) {
            return Err(Error::Config(format!(
                "continuation.eps ({}) must exceed continuation.tau ({})",
                c.eps, c.tau
            )));
        }
        if !(c.eps < 0.5 * g.t_end) {
            return Err(Error::Config("continuation.eps must be below t_end / 2".into()));
        }
        if !(c.pad > 0.0) {
            return Err(Error::Config("continuation.pad must be positive".into()));
        }
        if c.noise_levels.len() < 3 {
            return Err(Error::Config(
                "continuation.noise_levels needs at least 3 entries".into(),
            ));
        }
        if self.carleman.s_sweep.count < 5 {
            return Err(Error::Config("carleman.s_sweep.count must be at least 5".into()));
        }
        if self.forward.r0 <= 0.0 {
            return Err(Error::Config("forward.r0 must be positive".into()));
        }
        Ok(())
    }

    /// The canonical desk-scale experiment.
    pub fn default_1d() -> Config {
        Config {
            seed: 7,
            grid: GridConfig {
                dim: 1,
                nodes: vec![201],
                extents: vec![[0.0, 2.0]],
                t_end: 0.6,
                nt: 240,
            },
            subdomains: SubdomainConfig {
                omega: BoxConfig {
                    lo: vec![0.8],
                    hi: vec![1.2],
                },
                omega0: BoxConfig {
                    lo: vec![0.0],
                    hi: vec![1.0],
                },
                gamma: GammaSpec {
                    axis: 0,
                    side: crate::grid::Side::Lo,
                    span: None,
                },
            },
            coefficients: CoefficientConfig::default(),
            weights: WeightConfig {
                lambda: 1.0,
                lambda_cap: 64.0,
                tau: 0.25,
                t0: 0.3,
                window_cells: 64,
                mu_surrogate: 0,
            },
            forward: ForwardConfig {
                mode_k: 1,
                source_r: 1.0,
                r0: 0.5,
            },
            carleman: CarlemanConfig {
                s_sweep: SweepRange {
                    start: 0.5,
                    factor: 2.0,
                    count: 7,
                },
                suite_size: 10,
                collapse_s: SweepRange {
                    start: 0.01,
                    factor: 4.0,
                    count: 12,
                },
                energy_cells: 512,
            },
            inverse_source: InverseSourceConfig {
                theta: 0.25,
                t1: 0.125,
                reg_sweep: SweepRange {
                    start: 1e-2,
                    factor: 1e-2,
                    count: 5,
                },
                ensemble: 20,
                cg_tol: 1e-10,
                cg_max_iter: 400,
            },
            continuation: ContinuationConfig {
                pad: 0.7,
                eps: 0.15,
                tau: 0.075,
                s: 2.0,
                reg: 1e-10,
                mode_k: 1,
                noise_levels: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
                c_prior: 6.0,
                reg0: 1e-6,
                s_sweep: SweepRange {
                    start: 0.5,
                    factor: std::f64::consts::SQRT_2,
                    count: 8,
                },
            },
        }
    }
}
