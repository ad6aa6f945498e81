//! Experiment harness for the fourth-order parabolic laboratory.
//!
//! Subcommands: `forward`, `carleman-check`, `inverse-source`,
//! `continuation`, `stability-sweep`, plus `report` to consolidate a
//! finished run directory. Each run writes a config copy, CSV tables,
//! SVG plots and a `summary.toml` with one pass/fail entry per check.
//! Exit codes: 0 all checks pass, 1 validation error, 2 check failure.

use clap::{Parser, Subcommand};
use parab4::carleman::{
    build_ratio_suite, carleman_sides, check_energy_shift, check_lebesgue_collapse, ratio_sweep,
    WindowQuadrature,
};
use parab4::config::Config;
use parab4::continuation::{
    balance_s, energy_budget, holder_sweep, modal_cauchy_trace, modal_solution_on, qr_continue,
    two_term_bound_check, CauchyTrace, GammaFrame, QrConfig,
};
use parab4::error::Error;
use parab4::forward::{
    manufactured_convergence, solve_forward, SourceFactor, SourceModel, SpaceTimeField,
};
use parab4::grid::{build_grid, build_subdomains, extend_domain, set_omega0, Grid, SubdomainMasks, SubdomainSpec};
use parab4::inverse_source::{
    direct_formula_reconstruct, lipschitz_ensemble, tikhonov_reconstruct, ForwardMap,
};
use parab4::ops::{
    apply_biharmonic_navier, l2_norm_masked, time_trapezoid_weight, CoefficientSet,
};
use parab4::report::{emit_report, CheckResult, LinePlot, RunDir, Summary};
use parab4::weights::{
    build_distance_fn, check_weight_bounds, select_lambda, WeightParams,
};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "parab4", about = "fourth-order parabolic equation laboratory")]
struct Cli {
    /// Experiment configuration (TOML); omitted = built-in default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output run directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,

    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward solver checks: manufactured convergence, spectral and
    /// symmetry checks, solution snapshot export.
    Forward,
    /// Weighted-estimate checks: ratio sweep, weight bounds, level
    /// thresholds, energy shift, collapse integral.
    CarlemanCheck,
    /// Inverse source recovery: direct formula, regularized sweep,
    /// adjoint consistency, stability ensemble.
    InverseSource,
    /// Continuation from lateral Cauchy data: reconstruction,
    /// uniqueness, stability sweep and two-term diagnostics.
    Continuation,
    /// Both stability ensembles plus an in-process determinism check.
    StabilitySweep,
    /// Consolidate a finished run directory.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> parab4::Result<bool> {
    if let Cmd::Report { run_dir } = &cli.cmd {
        let text = emit_report(run_dir)?;
        print!("{text}");
        return Ok(true);
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default_1d(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = RunDir::create(&cli.out)?;
    dir.save_config_copy(&cfg)?;
    let summary = match cli.cmd {
        Cmd::Forward => run_forward(&cfg, &dir)?,
        Cmd::CarlemanCheck => run_carleman(&cfg, &dir)?,
        Cmd::InverseSource => run_inverse_source(&cfg, &dir)?,
        Cmd::Continuation => run_continuation(&cfg, &dir)?,
        Cmd::StabilitySweep => run_stability_sweep(&cfg, &dir)?,
        Cmd::Report { .. } => unreachable!(),
    };
    dir.write_summary(&summary)?;
    for c in &summary.checks {
        println!(
            "[{}] {} - {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!(
        "{}: {} (artifacts in {})",
        summary.subcommand,
        if summary.all_passed() { "PASS" } else { "FAIL" },
        dir.path.display()
    );
    Ok(summary.all_passed())
}

struct BaseSetup {
    grid: Grid,
    masks: SubdomainMasks,
    coeffs: CoefficientSet,
}

fn base_setup(cfg: &Config) -> parab4::Result<BaseSetup> {
    let grid = build_grid(
        cfg.grid.dim,
        &cfg.grid.extents,
        &cfg.grid.nodes,
        cfg.grid.t_end,
        cfg.grid.nt,
    )?;
    let spec = SubdomainSpec {
        omega: cfg.subdomains.omega.to_box(),
        omega0: Some(cfg.subdomains.omega0.to_box()),
        gamma: Some(cfg.subdomains.gamma),
    };
    let masks = build_subdomains(&grid, &spec)?;
    let terms: Vec<([usize; 2], f64)> = cfg
        .coefficients
        .terms
        .iter()
        .map(|&(b1, b2, v)| ([b1, b2], v))
        .collect();
    let coeffs = CoefficientSet::constant(&grid, &terms)?;
    Ok(BaseSetup {
        grid,
        masks,
        coeffs,
    })
}

struct ContinuationSetup {
    grid1: Grid,
    masks1: SubdomainMasks,
    frame: GammaFrame,
    coeffs1: CoefficientSet,
    d: parab4::weights::DistanceField,
    lambda: f64,
    thresholds: parab4::weights::LevelThresholds,
}

fn continuation_setup(cfg: &Config) -> parab4::Result<ContinuationSetup> {
    let grid = build_grid(
        cfg.grid.dim,
        &cfg.grid.extents,
        &cfg.grid.nodes,
        cfg.grid.t_end,
        cfg.grid.nt,
    )?;
    let (grid1, mut masks1) = extend_domain(&grid, &cfg.subdomains.gamma, cfg.continuation.pad)?;
    set_omega0(&grid1, &mut masks1, &cfg.subdomains.omega0.to_box())?;
    let frame = GammaFrame::locate(&grid1, &masks1, cfg.subdomains.gamma)?;
    let d = build_distance_fn(&grid1, &masks1)?;
    let t0 = 0.5 * cfg.grid.t_end;
    let (params, thresholds) = select_lambda(
        &grid1,
        &masks1,
        d.clone(),
        t0,
        cfg.continuation.tau,
        cfg.grid.t_end,
        cfg.weights.lambda_cap,
    )?;
    let terms: Vec<([usize; 2], f64)> = cfg
        .coefficients
        .terms
        .iter()
        .map(|&(b1, b2, v)| ([b1, b2], v))
        .collect();
    let coeffs1 = CoefficientSet::constant(&grid1, &terms)?;
    Ok(ContinuationSetup {
        grid1,
        masks1,
        frame,
        coeffs1,
        d,
        lambda: params.lambda,
        thresholds,
    })
}

fn sine_mode(grid: &Grid, k: usize) -> Vec<f64> {
    let lo = grid.axes[0].lo();
    let len = grid.axes[0].hi() - lo;
    (0..grid.n_nodes())
        .map(|i| {
            if grid.is_boundary(i) {
                0.0
            } else {
                let x = grid.coord(i)[0];
                let mut v = (k as f64 * PI * (x - lo) / len).sin();
                if grid.dim == 2 {
                    let y = grid.coord(i)[1];
                    let ly = grid.axes[1].hi() - grid.axes[1].lo();
                    v *= (PI * (y - grid.axes[1].lo()) / ly).sin();
                }
                v
            }
        })
        .collect()
}

fn run_forward(cfg: &Config, dir: &RunDir) -> parab4::Result<Summary> {
    let mut checks = Vec::new();
    let mut metrics = Vec::new();
    let setup = base_setup(cfg)?;
    let grid = &setup.grid;

    // convergence study on the canonical unit-interval sequences
    let table = manufactured_convergence(&[17, 33, 65], &[16, 32, 64], 0.01)?;
    let rows: Vec<Vec<f64>> = table
        .spatial
        .iter()
        .map(|r| vec![r.resolution as f64, r.error])
        .collect();
    dir.write_csv("convergence_spatial.csv", &["nodes", "rel_error"], &rows)?;
    let rows: Vec<Vec<f64>> = table
        .temporal
        .iter()
        .map(|r| vec![r.resolution as f64, r.error])
        .collect();
    dir.write_csv("convergence_temporal.csv", &["nt", "rel_error"], &rows)?;
    checks.push(CheckResult::new(
        "spatial_order_in_range",
        (1.7..2.3).contains(&table.spatial_order),
        format!("observed {:.3}", table.spatial_order),
    ));
    checks.push(CheckResult::new(
        "temporal_order_in_range",
        (0.8..1.2).contains(&table.temporal_order),
        format!("observed {:.3}", table.temporal_order),
    ));
    metrics.push(("spatial_order".into(), table.spatial_order));
    metrics.push(("temporal_order".into(), table.temporal_order));
    metrics.push(("coarse_relative_error".into(), table.coarse_relative_error));

    // spectral check of the Navier biharmonic on the config grid
    let len = grid.axes[0].hi() - grid.axes[0].lo();
    let mut spectral_rows = Vec::new();
    let mut spectral_ok = true;
    for k in 1..=4usize {
        let f = sine_mode(grid, k);
        let b = apply_biharmonic_navier(grid, &f)?;
        let exact = (k as f64 * PI / len).powi(4)
            + if grid.dim == 2 {
                let ly = grid.axes[1].hi() - grid.axes[1].lo();
                2.0 * (k as f64 * PI / len).powi(2) * (PI / ly).powi(2) + (PI / ly).powi(4)
            } else {
                0.0
            };
        let mut worst = 0.0f64;
        for i in 0..grid.n_nodes() {
            if f[i].abs() > 0.5 {
                worst = worst.max((b[i] / f[i] - exact).abs() / exact);
            }
        }
        spectral_rows.push(vec![k as f64, exact, worst]);
        let h = grid.axes[0].spacing;
        // second-order stencils: relative error ~ (k pi h / L)^2 / 3
        let budget = (k as f64 * PI * h / len).powi(2) * 2.0;
        spectral_ok &= worst < budget.max(1e-6);
    }
    dir.write_csv(
        "spectral.csv",
        &["mode", "eigenvalue", "relative_error"],
        &spectral_rows,
    )?;
    checks.push(CheckResult::new(
        "biharmonic_spectral",
        spectral_ok,
        "mode eigenvalues within the second-order budget",
    ));

    // symmetry on random pairs
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sym_ok = true;
    for _ in 0..10 {
        let mut u = vec![0.0; grid.n_nodes()];
        let mut v = vec![0.0; grid.n_nodes()];
        for i in 0..grid.n_nodes() {
            if !grid.is_boundary(i) {
                u[i] = rng.random_range(-1.0..1.0);
                v[i] = rng.random_range(-1.0..1.0);
            }
        }
        let bu = apply_biharmonic_navier(grid, &u)?;
        let bv = apply_biharmonic_navier(grid, &v)?;
        let lhs: f64 = bu.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(bv.iter()).map(|(a, b)| a * b).sum();
        sym_ok &= (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300);
    }
    checks.push(CheckResult::new(
        "navier_symmetry",
        sym_ok,
        "<Lap^2 u, v> = <u, Lap^2 v> to 1e-10 on 10 random pairs",
    ));

    // synthetic solve + snapshot at the level nearest theta
    let f_true = sine_mode(grid, cfg.forward.mode_k);
    let src = SourceModel::new(
        SourceFactor::Constant(cfg.forward.source_r),
        f_true,
        cfg.forward.r0,
    )?;
    let sol = solve_forward(grid, &setup.coeffs, &src, &vec![0.0; grid.n_nodes()])?;
    let theta_level = (cfg.inverse_source.theta / grid.dt).round() as usize;
    dir.write_field("y_theta.csv", grid, sol.level(theta_level))?;
    checks.push(CheckResult::new(
        "navier_trace",
        sol.max_boundary_trace(grid) == 0.0,
        "solution trace vanishes on the boundary at every level",
    ));
    let _ = setup.masks;

    Ok(Summary {
        subcommand: "forward".into(),
        seed: cfg.seed,
        checks,
        metrics,
    })
}

fn run_carleman(cfg: &Config, dir: &RunDir) -> parab4::Result<Summary> {
    let mut checks = Vec::new();
    let mut metrics = Vec::new();
    let setup = base_setup(cfg)?;
    let grid = &setup.grid;
    let d = build_distance_fn(grid, &setup.masks)?;
    let params = WeightParams::new(
        cfg.weights.lambda,
        cfg.weights.t0,
        cfg.weights.tau,
        grid.t_end,
        d,
    )?;
    let quad = WindowQuadrature::new(&params, cfg.weights.window_cells);

    // h(t0) and negativity
    let h0 = params.h_of(params.t0)?;
    checks.push(CheckResult::new(
        "h_midpoint_exact",
        (h0 - 1.0 / params.tau).abs() < 1e-12 * h0,
        format!("h(t0) = {h0}, 1/tau = {}", 1.0 / params.tau),
    ));
    checks.push(CheckResult::new(
        "alpha_negative",
        params.assert_alpha_negative(grid, 64).is_ok(),
        "alpha < 0 at all nodes and sampled times",
    ));

    // s^7 phi^7 e^{2 s alpha} boundedness across the decade sweep
    let bounds = check_weight_bounds(&params, grid, &[1.0, 10.0, 100.0, 1000.0], 64)?;
    let rows: Vec<Vec<f64>> = bounds
        .s7_phi7_log_max
        .iter()
        .map(|&(s, v)| vec![s, v])
        .collect();
    dir.write_csv("s7phi7_logmax.csv", &["s", "log_max"], &rows)?;
    let mono = bounds
        .s7_phi7_log_max
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 + 1e-9);
    checks.push(CheckResult::new(
        "s7phi7_nonincreasing",
        mono,
        "sup of s^7 phi^7 e^(2 s alpha) non-increasing across s in {1,10,100,1000}",
    ));
    metrics.push(("dt_alpha_over_phi2_max".into(), bounds.dt_alpha_ratio_max));
    metrics.push((
        "dt_alpha_over_phi3_max".into(),
        bounds.dt_alpha_cubic_ratio_max,
    ));

    // estimate ratio sweep
    let suite = build_ratio_suite(grid, &quad, cfg.carleman.suite_size, cfg.seed);
    let s_values = cfg.carleman.s_sweep.values();
    let sweep = ratio_sweep(
        grid,
        &suite,
        &setup.coeffs,
        &params,
        &setup.masks,
        &quad,
        &s_values,
    )?;
    let rows: Vec<Vec<f64>> = sweep.rows.iter().map(|r| vec![r.s, r.c_max]).collect();
    dir.write_csv("carleman_sweep.csv", &["s", "c_emp_max"], &rows)?;
    let mut plot = LinePlot::new("empirical estimate constant", "s", "C_emp").logx().logy();
    plot.add(
        "max over suite",
        sweep.rows.iter().map(|r| (r.s, r.c_max)).collect(),
    );
    dir.write_svg("carleman_sweep.svg", &plot)?;
    let knee_c = sweep.rows[sweep.knee_index].c_max;
    checks.push(CheckResult::new(
        "c_emp_bounded_past_knee",
        sweep.max_c_at_or_after_knee() <= 1.2 * knee_c && knee_c.is_finite(),
        format!(
            "knee at s = {}, C_emp = {:.4e}",
            sweep.knee_s(),
            knee_c
        ),
    ));
    checks.push(CheckResult::new(
        "sweep_points_past_knee",
        sweep.rows.len() - sweep.knee_index >= 5,
        format!("{} points at or above the knee", sweep.rows.len() - sweep.knee_index),
    ));
    metrics.push(("empirical_s0".into(), sweep.knee_s()));
    metrics.push(("c_emp_max".into(), sweep.max_c_at_or_after_knee()));

    // zero field maps to the zero triple
    let zero = SpaceTimeField::zeros(grid.n_nodes(), quad.n_levels(), quad.dt);
    let sides = carleman_sides(
        grid,
        &zero,
        &setup.coeffs,
        &params,
        &setup.masks,
        &quad,
        s_values[0],
    )?;
    checks.push(CheckResult::new(
        "zero_field_zero_triple",
        sides.lhs == 0.0 && sides.rhs_pde == 0.0 && sides.rhs_obs == 0.0,
        "lhs = rhs_pde = rhs_obs = 0",
    ));

    // energy shift at the window midpoint
    let fine = WindowQuadrature::new(&params, cfg.carleman.energy_cells);
    let len = grid.axes[0].hi() - grid.axes[0].lo();
    let rate = (PI / len).powi(4);
    let mut z = SpaceTimeField::zeros(grid.n_nodes(), fine.n_levels(), fine.dt);
    for (m, &t) in fine.times.iter().enumerate() {
        let amp = (-rate * (t - fine.times[0])).exp();
        let lvl = z.level_mut(m);
        let mode = sine_mode(grid, 1);
        for i in 0..grid.n_nodes() {
            lvl[i] = amp * mode[i];
        }
    }
    let es = check_energy_shift(grid, &z, &params, &fine, 1.0)?;
    checks.push(CheckResult::new(
        "energy_shift_identity",
        es.ft_relative_gap() < 0.01,
        format!("fundamental-theorem gap {:.3e}", es.ft_relative_gap()),
    ));
    metrics.push(("energy_shift_c_emp".into(), es.c_emp()));

    // collapse of the weighted time integral
    let collapse_s: Vec<f64> = std::iter::once(0.0)
        .chain(cfg.carleman.collapse_s.values())
        .collect();
    let collapse = check_lebesgue_collapse(&params, &collapse_s, 4096)?;
    let rows: Vec<Vec<f64>> = collapse.iter().map(|&(s, v)| vec![s, v]).collect();
    dir.write_csv("lebesgue_collapse.csv", &["s", "integral"], &rows)?;
    let strictly_decreasing = collapse.windows(2).all(|w| w[1].1 < w[0].1);
    let first_pos = collapse[1].1;
    let last = collapse.last().unwrap().1;
    checks.push(CheckResult::new(
        "collapse_strictly_decreasing",
        strictly_decreasing,
        "I(s) strictly decreasing across the sweep",
    ));
    checks.push(CheckResult::new(
        "collapse_reaches_one_percent",
        last < 0.01 * first_pos,
        format!("I(s_max)/I(s_min) = {:.3e}", last / first_pos),
    ));
    checks.push(CheckResult::new(
        "collapse_zero_limit",
        (collapse[0].1 - 2.0 * params.tau).abs() < 1e-6,
        format!("I(0) = {:.6} vs window length {}", collapse[0].1, 2.0 * params.tau),
    ));

    // threshold system on the enlarged geometry
    let cs = continuation_setup(cfg)?;
    checks.push(CheckResult::new(
        "threshold_ordering",
        cs.thresholds.ordering_holds(),
        format!(
            "delta1 = {:.4} < delta(2) = {:.4} < delta(3) = {:.4} < delta(4) = {:.4} at lambda = {}",
            cs.thresholds.delta1,
            cs.thresholds.delta(2),
            cs.thresholds.delta(3),
            cs.thresholds.delta(4),
            cs.lambda
        ),
    ));
    metrics.push(("lambda_auto".into(), cs.lambda));
    metrics.push(("delta0".into(), cs.thresholds.delta0));
    metrics.push(("delta1".into(), cs.thresholds.delta1));
    metrics.push(("delta2".into(), cs.thresholds.delta(2)));
    metrics.push(("delta3".into(), cs.thresholds.delta(3)));
    metrics.push(("delta4".into(), cs.thresholds.delta(4)));

    Ok(Summary {
        subcommand: "carleman-check".into(),
        seed: cfg.seed,
        checks,
        metrics,
    })
}

fn run_inverse_source(cfg: &Config, dir: &RunDir) -> parab4::Result<Summary> {
    let mut checks = Vec::new();
    let mut metrics = Vec::new();
    let setup = base_setup(cfg)?;
    let grid = &setup.grid;
    let mask_all = vec![true; grid.n_nodes()];

    let f_true = sine_mode(grid, cfg.forward.mode_k);
    let src = SourceModel::new(
        SourceFactor::Constant(cfg.forward.source_r),
        f_true.clone(),
        cfg.forward.r0,
    )?;
    let sol = solve_forward(grid, &setup.coeffs, &src, &vec![0.0; grid.n_nodes()])?;
    let f_direct =
        direct_formula_reconstruct(grid, &sol, &setup.coeffs, &src, cfg.inverse_source.theta)?;
    dir.write_field("f_true.csv", grid, &f_true)?;
    dir.write_field("f_direct.csv", grid, &f_direct)?;
    let diff: Vec<f64> = f_direct.iter().zip(f_true.iter()).map(|(a, b)| a - b).collect();
    let direct_err =
        l2_norm_masked(grid, &diff, &mask_all) / l2_norm_masked(grid, &f_true, &mask_all);
    checks.push(CheckResult::new(
        "direct_formula_error",
        direct_err < 0.05,
        format!("relative L2 error {direct_err:.4}"),
    ));
    metrics.push(("direct_formula_error".into(), direct_err));

    let map = ForwardMap::new(
        grid,
        &setup.coeffs,
        SourceFactor::Constant(cfg.forward.source_r),
        &setup.masks,
        cfg.inverse_source.theta,
        cfg.inverse_source.t1,
    )?;
    let obs = map.apply(&f_true);

    // adjoint consistency on smooth random pairs
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ca1ab1e);
    let mut adjoint_gap = 0.0f64;
    for _ in 0..2 {
        let fa = parab4::inverse_source::random_source_field(grid, &mut rng);
        let fb = parab4::inverse_source::random_source_field(grid, &mut rng);
        let ga = map.apply(&fb);
        let af = map.apply(&fa);
        let lhs = map.data_inner(&af, &ga)?;
        let astar = map.apply_adjoint(&ga)?;
        let rhs: f64 = (0..grid.n_nodes())
            .map(|i| grid.quad_weight(i) * fa[i] * astar[i])
            .sum();
        adjoint_gap = adjoint_gap.max((lhs - rhs).abs() / lhs.abs().max(1e-300));
    }
    checks.push(CheckResult::new(
        "adjoint_consistency",
        adjoint_gap <= 1e-8,
        format!("relative gap {adjoint_gap:.3e}"),
    ));
    metrics.push(("adjoint_gap".into(), adjoint_gap));

    // regularization sweep, noise free
    let mut rows = Vec::new();
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut last_err = f64::INFINITY;
    let mut last_f = Vec::new();
    for reg in cfg.inverse_source.reg_sweep.values() {
        let (f_rec, stats) = tikhonov_reconstruct(
            &map,
            &obs,
            reg,
            cfg.inverse_source.cg_tol,
            cfg.inverse_source.cg_max_iter,
        )?;
        let diff: Vec<f64> = f_rec.iter().zip(f_true.iter()).map(|(a, b)| a - b).collect();
        let rel =
            l2_norm_masked(grid, &diff, &mask_all) / l2_norm_masked(grid, &f_true, &mask_all);
        rows.push(vec![reg, rel, stats.iterations as f64]);
        monotone &= rel <= prev * 1.001;
        prev = rel;
        last_err = rel;
        last_f = f_rec;
    }
    dir.write_csv(
        "tikhonov_sweep.csv",
        &["reg", "rel_error", "cg_iterations"],
        &rows,
    )?;
    dir.write_field("f_tikhonov.csv", grid, &last_f)?;
    let mut plot = LinePlot::new("regularization sweep", "reg", "relative error").logx().logy();
    plot.add("error", rows.iter().map(|r| (r[0], r[1])).collect());
    dir.write_svg("tikhonov_sweep.svg", &plot)?;
    checks.push(CheckResult::new(
        "tikhonov_monotone",
        monotone,
        "reconstruction error non-increasing through the sweep",
    ));
    checks.push(CheckResult::new(
        "tikhonov_plateau",
        last_err < 0.10,
        format!("plateau error {last_err:.4}"),
    ));
    metrics.push(("tikhonov_plateau_error".into(), last_err));

    // stability ensemble
    let table = lipschitz_ensemble(
        cfg.inverse_source.ensemble,
        grid,
        &setup.coeffs,
        &SourceFactor::Constant(cfg.forward.source_r),
        &setup.masks,
        cfg.inverse_source.theta,
        cfg.inverse_source.t1,
        cfg.seed,
    )?;
    let rows: Vec<Vec<f64>> = table
        .entries
        .iter()
        .map(|e| vec![e.member as f64, e.f_norm, e.data_norm, e.rho])
        .collect();
    dir.write_csv(
        "lipschitz_ratios.csv",
        &["member", "f_norm", "data_norm", "rho"],
        &rows,
    )?;
    checks.push(CheckResult::new(
        "ensemble_ratio_finite",
        table.max_ratio.is_finite() && table.max_ratio > 0.0,
        format!("max rho = {:.4}, median = {:.4}", table.max_ratio, table.median_ratio),
    ));
    metrics.push(("lipschitz_max_ratio".into(), table.max_ratio));
    metrics.push(("lipschitz_median_ratio".into(), table.median_ratio));

    Ok(Summary {
        subcommand: "inverse-source".into(),
        seed: cfg.seed,
        checks,
        metrics,
    })
}

fn run_continuation(cfg: &Config, dir: &RunDir) -> parab4::Result<Summary> {
    let mut checks = Vec::new();
    let mut metrics = Vec::new();
    let cs = continuation_setup(cfg)?;
    let grid1 = &cs.grid1;
    let nt = cfg.grid.nt;
    let dt = cfg.grid.t_end / nt as f64;
    let lo = cfg.grid.extents[0][0];
    let len = cfg.grid.extents[0][1] - lo;
    let traces = modal_cauchy_trace(lo, len, cfg.continuation.mode_k, nt + 1, dt);
    let u_true = modal_solution_on(grid1, cfg.continuation.mode_k, lo, len, nt + 1, dt);
    let qr_cfg = QrConfig {
        s: cfg.continuation.s,
        reg: cfg.continuation.reg,
        tau: cfg.continuation.tau,
        eps: cfg.continuation.eps,
    };

    // noise-free reconstruction over the covering
    let sol = qr_continue(
        grid1,
        &cs.masks1,
        &cs.frame,
        &cs.coeffs1,
        &cs.d,
        cs.lambda,
        &traces,
        cfg.grid.t_end,
        &qr_cfg,
    )?;
    let (m0, m1) = sol.covered;
    let mut err_sq = 0.0;
    let mut ref_sq = 0.0;
    for m in m0..=m1 {
        let tw = time_trapezoid_weight(m, m0, m1) * dt;
        let diff: Vec<f64> = sol
            .u_rec
            .level(m)
            .iter()
            .zip(u_true.level(m).iter())
            .map(|(a, b)| a - b)
            .collect();
        err_sq += tw * parab4::ops::l2_sq_masked(grid1, &diff, &cs.masks1.omega0);
        ref_sq += tw * parab4::ops::l2_sq_masked(grid1, u_true.level(m), &cs.masks1.omega0);
    }
    let rel = (err_sq / ref_sq).sqrt();
    checks.push(CheckResult::new(
        "noise_free_reconstruction",
        rel < 0.10,
        format!("relative L2 error {rel:.4e} on omega0 x (eps, T-eps)"),
    ));
    metrics.push(("qr_noise_free_error".into(), rel));
    dir.write_field("u_rec_mid.csv", grid1, sol.u_rec.level((m0 + m1) / 2))?;

    // uniqueness: zero data
    let zero_traces = CauchyTrace::zeros(traces.g[0].n_tang, nt + 1, dt, traces.g[0].tang_spacing);
    let zero_sol = qr_continue(
        grid1,
        &cs.masks1,
        &cs.frame,
        &cs.coeffs1,
        &cs.d,
        cs.lambda,
        &zero_traces,
        cfg.grid.t_end,
        &qr_cfg,
    )?;
    let worst = zero_sol.u_rec.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    checks.push(CheckResult::new(
        "zero_data_uniqueness",
        worst <= 1e-9,
        format!("max |u_rec| = {worst:.3e} for vanishing traces"),
    ));

    // stability sweep and power-law fit
    let hs = holder_sweep(
        grid1,
        &cs.masks1,
        &cs.frame,
        &cs.coeffs1,
        &cs.d,
        cs.lambda,
        &cs.thresholds,
        &traces,
        &u_true,
        &cfg.continuation.noise_levels,
        cfg.continuation.c_prior,
        cfg.continuation.reg0,
        cfg.grid.t_end,
        &qr_cfg,
        cfg.seed,
    )?;
    let rows: Vec<Vec<f64>> = hs
        .points
        .iter()
        .zip(hs.s_used.iter())
        .map(|(&(d, e), &s)| vec![d, e, s])
        .collect();
    dir.write_csv("holder_sweep.csv", &["data_size", "response", "s_used"], &rows)?;
    let mut plot = LinePlot::new("stability sweep", "D", "response").logx().logy();
    plot.add("response", hs.points.clone());
    plot.add(
        "fit",
        hs.points
            .iter()
            .map(|&(d, _)| (d, hs.fit.c_hat * d.powf(hs.fit.kappa_hat)))
            .collect(),
    );
    dir.write_svg("holder_sweep.svg", &plot)?;
    checks.push(CheckResult::new(
        "holder_exponent",
        hs.fit.kappa_hat > 0.0 && hs.fit.kappa_hat <= 1.05,
        format!("kappa_hat = {:.4}", hs.fit.kappa_hat),
    ));
    checks.push(CheckResult::new(
        "holder_fit_quality",
        hs.fit.r_squared >= 0.9,
        format!("R^2 = {:.4}", hs.fit.r_squared),
    ));
    metrics.push(("kappa_hat".into(), hs.fit.kappa_hat));
    metrics.push(("holder_r2".into(), hs.fit.r_squared));
    metrics.push(("holder_c_hat".into(), hs.fit.c_hat));

    // two-term structure at the mid window
    let d_clean = traces.data_size()?;
    let noise_abs: Vec<f64> = cfg
        .continuation
        .noise_levels
        .iter()
        .map(|r| r * d_clean)
        .collect();
    let s_values = cfg.continuation.s_sweep.values();
    let table = two_term_bound_check(
        grid1,
        &cs.masks1,
        &cs.frame,
        &cs.coeffs1,
        &cs.d,
        cs.lambda,
        &cs.thresholds,
        &traces,
        &u_true,
        &noise_abs,
        &s_values,
        cfg.grid.t_end,
        &qr_cfg,
        |dn| (cfg.continuation.reg0 * (dn / d_clean).powi(2)).max(1e-14),
        cfg.seed ^ 0x7001,
    )?;
    let rows: Vec<Vec<f64>> = table
        .entries
        .iter()
        .map(|e| vec![e.noise_d, e.s, e.measured_sq, table.bound_at(e)])
        .collect();
    dir.write_csv(
        "two_term.csv",
        &["data_size", "s", "measured_sq", "fitted_bound"],
        &rows,
    )?;
    let bound_holds = table
        .entries
        .iter()
        .all(|e| e.measured_sq <= table.bound_at(e) * (1.0 + 1e-9));
    checks.push(CheckResult::new(
        "two_term_bound_holds",
        bound_holds && table.c_fit.is_finite(),
        format!("fitted c = {:.3}, multiplier = {:.3e}", table.c_fit, table.c_mult),
    ));
    metrics.push(("two_term_c_fit".into(), table.c_fit));
    metrics.push(("two_term_c_mult".into(), table.c_mult));

    // balance formula against the fitted bound's knee at the median level
    let m_budget = energy_budget(grid1, &cs.masks1, &u_true)?;
    let case1: Vec<f64> = noise_abs
        .iter()
        .cloned()
        .filter(|&d| d < m_budget)
        .collect();
    if !case1.is_empty() {
        let d_mid = case1[case1.len() / 2];
        let (s_star, _) = balance_s(d_mid, m_budget, table.c_fit, cs.thresholds.delta0)?;
        // knee of the fitted bound over a fine s grid
        let mut knee = (f64::INFINITY, 0.0f64);
        let mut s = 0.05f64;
        while s < 64.0 {
            let b = (table.c_fit * s).exp() * d_mid * d_mid
                + (-s * cs.thresholds.delta0).exp() * m_budget * m_budget;
            if b < knee.0 {
                knee = (b, s);
            }
            s *= 1.02;
        }
        let ratio = if knee.1 > 0.0 { s_star / knee.1 } else { f64::INFINITY };
        checks.push(CheckResult::new(
            "balance_matches_bound_knee",
            (0.5..=2.0).contains(&ratio),
            format!("s* = {s_star:.3}, fitted-bound knee = {:.3} (ratio {ratio:.2})", knee.1),
        ));
        metrics.push(("balance_s_star".into(), s_star));
        metrics.push(("bound_knee_s".into(), knee.1));
    }
    metrics.push(("energy_budget_m".into(), m_budget));
    metrics.push(("data_size_clean".into(), d_clean));

    Ok(Summary {
        subcommand: "continuation".into(),
        seed: cfg.seed,
        checks,
        metrics,
    })
}

fn run_stability_sweep(cfg: &Config, dir: &RunDir) -> parab4::Result<Summary> {
    let mut checks = Vec::new();
    let mut metrics = Vec::new();
    let setup = base_setup(cfg)?;

    let make_lipschitz_rows = || -> parab4::Result<Vec<Vec<f64>>> {
        let table = lipschitz_ensemble(
            cfg.inverse_source.ensemble,
            &setup.grid,
            &setup.coeffs,
            &SourceFactor::Constant(cfg.forward.source_r),
            &setup.masks,
            cfg.inverse_source.theta,
            cfg.inverse_source.t1,
            cfg.seed,
        )?;
        Ok(table
            .entries
            .iter()
            .map(|e| vec![e.member as f64, e.f_norm, e.data_norm, e.rho])
            .collect())
    };
    let rows1 = make_lipschitz_rows()?;
    dir.write_csv(
        "lipschitz_ratios.csv",
        &["member", "f_norm", "data_norm", "rho"],
        &rows1,
    )?;
    let max_rho = rows1.iter().map(|r| r[3]).fold(0.0f64, f64::max);
    checks.push(CheckResult::new(
        "ensemble_ratio_finite",
        max_rho.is_finite() && max_rho > 0.0,
        format!("max rho = {max_rho:.4}"),
    ));
    metrics.push(("lipschitz_max_ratio".into(), max_rho));

    let cs = continuation_setup(cfg)?;
    let nt = cfg.grid.nt;
    let dt = cfg.grid.t_end / nt as f64;
    let lo = cfg.grid.extents[0][0];
    let len = cfg.grid.extents[0][1] - lo;
    let traces = modal_cauchy_trace(lo, len, cfg.continuation.mode_k, nt + 1, dt);
    let u_true = modal_solution_on(&cs.grid1, cfg.continuation.mode_k, lo, len, nt + 1, dt);
    let qr_cfg = QrConfig {
        s: cfg.continuation.s,
        reg: cfg.continuation.reg,
        tau: cfg.continuation.tau,
        eps: cfg.continuation.eps,
    };
    let make_holder_rows = || -> parab4::Result<(Vec<Vec<f64>>, f64, f64)> {
        let hs = holder_sweep(
            &cs.grid1,
            &cs.masks1,
            &cs.frame,
            &cs.coeffs1,
            &cs.d,
            cs.lambda,
            &cs.thresholds,
            &traces,
            &u_true,
            &cfg.continuation.noise_levels,
            cfg.continuation.c_prior,
            cfg.continuation.reg0,
            cfg.grid.t_end,
            &qr_cfg,
            cfg.seed,
        )?;
        let rows = hs
            .points
            .iter()
            .zip(hs.s_used.iter())
            .map(|(&(d, e), &s)| vec![d, e, s])
            .collect();
        Ok((rows, hs.fit.kappa_hat, hs.fit.r_squared))
    };
    let (hrows1, kappa, r2) = make_holder_rows()?;
    dir.write_csv("holder_sweep.csv", &["data_size", "response", "s_used"], &hrows1)?;
    checks.push(CheckResult::new(
        "holder_exponent",
        kappa > 0.0 && kappa <= 1.05,
        format!("kappa_hat = {kappa:.4}"),
    ));
    metrics.push(("kappa_hat".into(), kappa));
    metrics.push(("holder_r2".into(), r2));

    // determinism: recompute both tables and compare bit-identical CSV text
    let rows2 = make_lipschitz_rows()?;
    let (hrows2, _, _) = make_holder_rows()?;
    let to_text = |rows: &Vec<Vec<f64>>| -> String {
        rows.iter()
            .map(|r| {
                r.iter()
                    .map(|v| format!("{v:.17e}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let deterministic = to_text(&rows1) == to_text(&rows2) && to_text(&hrows1) == to_text(&hrows2);
    checks.push(CheckResult::new(
        "determinism",
        deterministic,
        "recomputed tables are bit-identical for the same config and seed",
    ));

    Ok(Summary {
        subcommand: "stability-sweep".into(),
        seed: cfg.seed,
        checks,
        metrics,
    })
}

fn _unused_error_bridge(e: Error) -> Error {
    e
}
