//! Run configuration, experiment orchestration and artifact emission.
//!
//! A [`RunConfig`] names one command. [`run`] executes it, writes CSV tables and
//! a `manifest.json` into the output directory, and returns a [`RunOutcome`]
//! whose `passed` flag is false if any recorded check failed.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ansatz::{gl_residual, residual_weighted_norm, write_table, MetricChoice, WeightedNormParams};
use crate::error::{GlError, Result};
use crate::geometry::{jacobi_operator, ModelManifold};
use crate::gluing::{gauge_residual, zero_set_distance, GluingContext, GluingSettings, InnerOptions, TestFunction};
use crate::linop::{assemble_gauge_fixed_operator_2d, spectrum_report, verify_inverse_estimate, Grid2d, ScaledGrid};
use crate::vortex2d::{check_vortex_identity, solve_vortex_profile, vortex_energy_flux};

pub use crate::gluing::{energy_concentration, EnergyReport, Pairing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Profile,
    Kernel,
    ModelOp,
    Glue,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Kernel => "kernel",
            Command::ModelOp => "model-op",
            Command::Glue => "glue",
            Command::Sweep => "sweep",
        }
    }
}

/// Grid parameters. Lengths without a suffix are absolute; `*_over_eps` are in units of `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Profile domain radius (default `20 eps`).
    pub r_max: Option<f64>,
    /// Profile nodes.
    pub nodes: usize,
    /// Half-width of the square for `kernel`.
    pub r: f64,
    /// Spacing for `kernel`.
    pub h: f64,
    /// Square half-width for `model-op`, in units of `eps`.
    pub r_over_eps: f64,
    /// Spacing for `model-op`, in units of `eps`.
    pub model_h_over_eps: f64,
    pub tube_over_eps: f64,
    pub h_over_eps: f64,
    /// Slices along `S`.
    pub nx: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        let s = GluingSettings::default();
        let m = ScaledGrid::default();
        Self {
            r_max: None,
            nodes: 4001,
            r: 15.0,
            h: 0.1,
            r_over_eps: m.r_over_eps,
            model_h_over_eps: m.h_over_eps,
            tube_over_eps: s.tube_over_eps,
            h_over_eps: s.h_over_eps,
            nx: s.nx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Inner Newton tolerance on the projected residual.
    pub newton: f64,
    /// Outer tolerance on `sup |B(v)|`.
    pub balancing: f64,
    pub max_outer: usize,
    pub gmres: f64,
    /// Acceptance threshold for the unprojected residual and `|u|`.
    pub residual: f64,
    /// Allowed relative deviation of the fiber energy from `2 pi`.
    pub fiber_energy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let i = InnerOptions::default();
        Self { newton: i.tol, balancing: 1e-9, max_outer: 20, gmres: i.gmres_tol, residual: 1e-7, fiber_energy: 0.02 }
    }
}

/// Holder-norm weight parameters. `mu` defaults to half the fitted decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightParams {
    pub mu: Option<f64>,
    pub gamma: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self { mu: None, gamma: 0.5 }
    }
}

/// Full description of one run, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default = "default_manifold")]
    pub manifold: ModelManifold,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub weights: WeightParams,
    /// Solve the sweep entries concurrently (each holds its own lattice).
    #[serde(default)]
    pub concurrent: bool,
    pub output: PathBuf,
}

fn default_manifold() -> ModelManifold {
    ModelManifold::warped3(2.0 * PI)
}

fn config_err(path: &str, message: impl Into<String>) -> GlError {
    GlError::Config { path: path.into(), message: message.into() }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(path, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn new(command: Command, output: impl Into<PathBuf>) -> Self {
        Self {
            command,
            manifold: default_manifold(),
            epsilon: None,
            epsilons: Vec::new(),
            grid: GridParams::default(),
            tolerances: Tolerances::default(),
            weights: WeightParams::default(),
            concurrent: false,
            output: output.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Checks positivity of all numeric fields and the shape of the scale list.
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            positive("epsilon", e)?;
        }
        for (i, e) in self.epsilons.iter().enumerate() {
            positive(&format!("epsilons[{i}]"), *e)?;
        }
        match self.command {
            Command::Profile | Command::Kernel | Command::Glue if self.epsilon.is_none() => {
                return Err(config_err("epsilon", "required for this command"));
            }
            Command::ModelOp | Command::Sweep if self.epsilons.is_empty() => {
                return Err(config_err("epsilons", "required for this command"));
            }
            _ => {}
        }
        if self.command == Command::Sweep {
            for (i, w) in self.epsilons.windows(2).enumerate() {
                if w[1] >= w[0] {
                    return Err(config_err(&format!("epsilons[{}]", i + 1), "sweep scales must be strictly decreasing"));
                }
            }
        }
        let g = &self.grid;
        if let Some(r) = g.r_max {
            positive("grid.r_max", r)?;
        }
        if g.nodes < 2 {
            return Err(config_err("grid.nodes", "need at least 2 nodes"));
        }
        positive("grid.r", g.r)?;
        positive("grid.h", g.h)?;
        positive("grid.r_over_eps", g.r_over_eps)?;
        positive("grid.model_h_over_eps", g.model_h_over_eps)?;
        positive("grid.tube_over_eps", g.tube_over_eps)?;
        positive("grid.h_over_eps", g.h_over_eps)?;
        if g.nx == 0 {
            return Err(config_err("grid.nx", "must be positive"));
        }
        let t = &self.tolerances;
        positive("tolerances.newton", t.newton)?;
        positive("tolerances.balancing", t.balancing)?;
        positive("tolerances.gmres", t.gmres)?;
        positive("tolerances.residual", t.residual)?;
        positive("tolerances.fiber_energy", t.fiber_energy)?;
        if t.max_outer == 0 {
            return Err(config_err("tolerances.max_outer", "must be positive"));
        }
        if let Some(mu) = self.weights.mu {
            positive("weights.mu", mu)?;
        }
        positive("weights.gamma", self.weights.gamma)?;
        if self.weights.gamma >= 1.0 {
            return Err(config_err("weights.gamma", "must lie in (0, 1)"));
        }
        if self.manifold.dimension() == 3 {
            positive("manifold.L0", self.manifold.l0)?;
        }
        if self.output.as_os_str().is_empty() {
            return Err(config_err("output", "empty path"));
        }
        Ok(())
    }

    fn gluing_settings(&self) -> GluingSettings {
        let t = &self.tolerances;
        GluingSettings {
            tube_over_eps: self.grid.tube_over_eps,
            h_over_eps: self.grid.h_over_eps,
            nx: self.grid.nx,
            inner: InnerOptions { tol: t.newton, gmres_tol: t.gmres, ..InnerOptions::default() },
        }
    }
}

/// One named check with its measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: String,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit: format!("< {limit:e}"), passed: value < limit }
    }

    fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("{target} +- {tol:e}"),
            passed: (value - target).abs() <= tol,
        }
    }

    fn flag(name: &str, ok: bool, limit: &str) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, limit: limit.into(), passed: ok }
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
    pub checks: Vec<Check>,
    pub failed: Vec<String>,
    pub error: Option<String>,
    pub passed: bool,
}

/// What [`run`] returns: the manifest and where it was written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }

    pub fn exit_code(&self) -> i32 {
        if self.manifest.passed {
            0
        } else {
            1
        }
    }
}

struct Sink {
    dir: PathBuf,
    artifacts: Vec<String>,
    checks: Vec<Check>,
}

impl Sink {
    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.artifacts.push(name.into());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        use std::io::Write;
        writeln!(f)?;
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let f = self.file(name)?;
        write_table(f, header, rows)
    }
}

/// Runs the configured command. Downstream solver errors are recorded in the
/// manifest and returned as `Err` unchanged; failed checks give `Ok` with
/// `passed == false`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.output)?;
    let mut sink = Sink { dir: config.output.clone(), artifacts: Vec::new(), checks: Vec::new() };
    let res = match config.command {
        Command::Profile => run_profile(config, &mut sink),
        Command::Kernel => run_kernel(config, &mut sink),
        Command::ModelOp => run_model_op(config, &mut sink),
        Command::Glue => run_glue(config, &mut sink),
        Command::Sweep => run_sweep(config, &mut sink),
    };
    let failed: Vec<String> = sink.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let manifest = Manifest {
        command: config.command.name().into(),
        config: config.clone(),
        artifacts: sink.artifacts.clone(),
        passed: res.is_ok() && failed.is_empty(),
        failed,
        checks: sink.checks.clone(),
        error: res.as_ref().err().map(|e| e.to_string()),
    };
    let manifest_path = config.output.join("manifest.json");
    let mut f = BufWriter::new(File::create(&manifest_path)?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    use std::io::Write;
    writeln!(f)?;
    res.map(|_| RunOutcome { manifest, manifest_path })
}

#[derive(Serialize)]
struct ProfileSummary {
    epsilon: f64,
    r_max: f64,
    nodes: usize,
    newton_iterations: usize,
    energy: f64,
    energy_over_2pi: f64,
    flux: f64,
    flux_over_2pi: f64,
    tail_estimate: f64,
    squared_identity: f64,
    f_equation: f64,
    a_equation: f64,
}

fn run_profile(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let eps = cfg.epsilon.unwrap_or(1.0);
    let r_max = cfg.grid.r_max.unwrap_or(20.0 * eps);
    let p = solve_vortex_profile(eps, r_max, cfg.grid.nodes)?;
    p.write_csv(sink.file("profile.csv")?)?;
    let ef = vortex_energy_flux(&p);
    let id = check_vortex_identity(&p);
    let summary = ProfileSummary {
        epsilon: eps,
        r_max,
        nodes: p.len(),
        newton_iterations: p.iterations,
        energy: ef.energy,
        energy_over_2pi: ef.energy / (2.0 * PI),
        flux: ef.flux,
        flux_over_2pi: ef.flux / (2.0 * PI),
        tail_estimate: ef.tail_estimate,
        squared_identity: id.squared_identity,
        f_equation: id.f_equation,
        a_equation: id.a_equation,
    };
    sink.json("profile.json", &summary)?;
    sink.checks.push(Check::within("energy_over_2pi", summary.energy_over_2pi, 1.0, 1e-4));
    sink.checks.push(Check::within("flux_over_2pi", summary.flux_over_2pi, 1.0, 1e-6));
    sink.checks.push(Check::below("ode_residual", id.f_equation.max(id.a_equation), 1e-10));
    Ok(())
}

fn run_kernel(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let eps = cfg.epsilon.unwrap_or(1.0);
    let grid = Grid2d::new(cfg.grid.r, cfg.grid.h);
    let r_need = (2.0f64).sqrt() * cfg.grid.r + eps;
    let r_max = cfg.grid.r_max.unwrap_or(r_need.max(20.0 * eps));
    let p = solve_vortex_profile(eps, r_max, cfg.grid.nodes)?;
    let op = assemble_gauge_fixed_operator_2d(&p, grid)?;
    let rep = spectrum_report(&op)?;
    sink.json("spectrum.json", &rep)?;
    let rows: Vec<Vec<f64>> = rep.eigenvalues.iter().enumerate().map(|(i, v)| vec![i as f64, *v, eps * eps * v]).collect();
    sink.table("eigenvalues.csv", &["index", "eigenvalue", "eigenvalue_eps2"], &rows)?;
    // thresholds are stated for eps = 1; the operator scales like eps^-2
    let e2 = eps * eps;
    sink.checks.push(Check::below("kernel_eigenvalue_eps2", e2 * rep.eigenvalues[1].abs(), 1e-3));
    sink.checks.push(Check {
        name: "spectral_gap_eps2".into(),
        value: e2 * rep.gap,
        limit: ">= 0.1".into(),
        passed: e2 * rep.gap >= 0.1,
    });
    let cmin = rep.principal_angles.iter().copied().fold(f64::INFINITY, f64::min);
    sink.checks.push(Check { name: "principal_cosine".into(), value: cmin, limit: ">= 0.999".into(), passed: cmin >= 0.999 });
    Ok(())
}

fn run_model_op(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let grid = ScaledGrid { r_over_eps: cfg.grid.r_over_eps, h_over_eps: cfg.grid.model_h_over_eps };
    let rows = verify_inverse_estimate(&cfg.epsilons, grid, 0.0)?;
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.epsilon, r.xi_sq, r.c, r.lower]).collect();
    sink.table("inverse_estimate.csv", &["epsilon", "xi_sq", "c", "lower"], &table)?;
    let cmax = rows.iter().map(|r| r.c).fold(0.0, f64::max);
    let cmin = rows.iter().map(|r| r.c).fold(f64::INFINITY, f64::min);
    sink.checks.push(Check { name: "c_ratio".into(), value: cmax / cmin, limit: "<= 2".into(), passed: cmax <= 2.0 * cmin });
    Ok(())
}

/// Measurements from one converged gluing run.
#[derive(Debug, Clone, Serialize)]
pub struct GlueSummary {
    pub epsilon: f64,
    pub dofs: usize,
    pub outer_iterations: usize,
    pub outer_trace: Vec<f64>,
    pub newton_iterations: usize,
    pub full_residual: f64,
    pub projected_residual: f64,
    pub gauge_sup: f64,
    pub v_sup: f64,
    pub zero_set_distance: f64,
    /// Weighted Holder norm of the ansatz residual at the final `v`.
    pub ansatz_residual_norm: f64,
    pub half_width: f64,
    pub half_width_over_eps: f64,
    pub tube_radius: f64,
    pub max_fiber_deviation: f64,
    pub total_energy: f64,
    pub total_energy_over_2pi: f64,
}

/// Energy report, balancing field and summary of a converged gluing solve.
#[derive(Debug, Clone)]
pub struct GlueRun {
    pub summary: GlueSummary,
    pub energy: EnergyReport,
    pub v: crate::ansatz::NormalField,
}

/// Builds the context for `eps`, solves the balancing problem and evaluates the diagnostics.
pub fn glue_once(m: &ModelManifold, eps: f64, cfg: &RunConfig) -> Result<GlueRun> {
    jacobi_operator(m, cfg.grid.nx).map_err(|e| match e {
        GlError::Degenerate { sigma } => GlError::DegenerateJacobi { sigma },
        other => other,
    })?;
    let settings = cfg.gluing_settings();
    let r_max = cfg.grid.r_max.unwrap_or((settings.tube_over_eps + 2.0) * eps);
    let profile = Arc::new(solve_vortex_profile(eps, r_max, cfg.grid.nodes)?);
    let ctx = GluingContext::new(m, profile, settings)?;
    let out = ctx.outer_solve(cfg.tolerances.balancing, cfg.tolerances.max_outer)?;
    let sol = &out.solution;
    let energy = energy_concentration(&ctx.lattice, &sol.x, &TestFunction::builtin());
    let gauge = gauge_residual(sol);
    let hw = energy.max_half_width();
    let apx = ctx.approximate(&out.v)?;
    let res = gl_residual(&apx, m, MetricChoice::Exact);
    let mut wp = WeightedNormParams::for_profile(&ctx.profile, cfg.weights.gamma);
    if let Some(mu) = cfg.weights.mu {
        wp.mu = mu;
    }
    let summary = GlueSummary {
        epsilon: eps,
        dofs: ctx.lattice.dim(),
        outer_iterations: out.iterations,
        outer_trace: out.trace.clone(),
        newton_iterations: sol.trace.len().saturating_sub(1),
        full_residual: sol.full_residual,
        projected_residual: sol.projected_residual,
        gauge_sup: gauge.u_sup,
        v_sup: out.v.max_abs(),
        zero_set_distance: zero_set_distance(sol),
        ansatz_residual_norm: residual_weighted_norm(&res, &wp),
        half_width: hw,
        half_width_over_eps: hw / eps,
        tube_radius: ctx.grid.half_width(),
        max_fiber_deviation: energy.max_fiber_deviation(),
        total_energy: energy.total_energy,
        total_energy_over_2pi: energy.total_energy / (2.0 * PI),
    };
    Ok(GlueRun { summary, energy, v: out.v })
}

fn glue_checks(run: &GlueRun, cfg: &RunConfig, prefix: &str) -> Vec<Check> {
    let s = &run.summary;
    let t = &cfg.tolerances;
    let all_positive = run.energy.fiber_energy.iter().all(|e| *e > 0.0);
    vec![
        Check::below(&format!("{prefix}full_residual"), s.full_residual, t.residual),
        Check::below(&format!("{prefix}gauge_sup"), s.gauge_sup, t.residual),
        Check::below(&format!("{prefix}fiber_energy_deviation"), s.max_fiber_deviation, t.fiber_energy),
        Check::flag(&format!("{prefix}fiber_energy_positive"), all_positive, "all > 0"),
        Check::flag(&format!("{prefix}half_width_within_tube"), s.half_width <= s.tube_radius, "<= tube radius"),
    ]
}

fn write_glue(run: &GlueRun, sink: &mut Sink, tag: &str) -> Result<()> {
    let e = &run.energy;
    let rows: Vec<Vec<f64>> = (0..e.fiber_energy.len())
        .map(|s| vec![s as f64, e.fiber_energy[s], e.fiber_energy_over_2pi[s], e.half_width[s]])
        .collect();
    sink.table(&format!("fiber_energy{tag}.csv"), &["slice", "energy", "energy_over_2pi", "half_width"], &rows)?;
    let two_pi = 2.0 * PI;
    let prow: Vec<Vec<f64>> = e
        .pairings
        .iter()
        .enumerate()
        .map(|(i, p)| vec![i as f64, p.integral, p.integral / two_pi, p.reference, p.reference / two_pi])
        .collect();
    sink.table(
        &format!("pairings{tag}.csv"),
        &["test", "integral", "integral_over_2pi", "reference", "reference_over_2pi"],
        &prow,
    )?;
    let vrows: Vec<Vec<f64>> = run
        .v
        .v
        .iter()
        .enumerate()
        .map(|(s, v)| vec![s as f64 * run.v.l0 / run.v.len() as f64, v[0], v[1]])
        .collect();
    sink.table(&format!("normal_field{tag}.csv"), &["x", "v1", "v2"], &vrows)?;
    sink.json(&format!("glue{tag}.json"), &run.summary)
}

fn run_glue(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let eps = cfg.epsilon.unwrap_or(0.2);
    let run = glue_once(&cfg.manifold, eps, cfg)?;
    write_glue(&run, sink, "")?;
    sink.checks.extend(glue_checks(&run, cfg, ""));
    Ok(())
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn run_sweep(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let m = cfg.manifold;
    let runs: Vec<Result<GlueRun>> = if cfg.concurrent {
        crate::par::map_slice(&cfg.epsilons, |&eps| glue_once(&m, eps, cfg))
    } else {
        cfg.epsilons.iter().map(|&eps| glue_once(&m, eps, cfg)).collect()
    };
    let runs: Vec<GlueRun> = runs.into_iter().collect::<Result<_>>()?;
    for r in &runs {
        let tag = format!("_eps{}", r.summary.epsilon);
        write_glue(r, sink, &tag)?;
        sink.checks.extend(glue_checks(r, cfg, &format!("eps{}.", r.summary.epsilon)));
    }
    let rows: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                s.epsilon,
                s.half_width,
                s.half_width_over_eps,
                s.zero_set_distance,
                s.v_sup,
                s.max_fiber_deviation,
                s.full_residual,
                s.gauge_sup,
                s.outer_iterations as f64,
            ]
        })
        .collect();
    sink.table(
        "sweep.csv",
        &[
            "epsilon",
            "half_width",
            "half_width_over_eps",
            "zero_set_distance",
            "v_sup",
            "fiber_energy_deviation",
            "full_residual",
            "gauge_sup",
            "outer_iterations",
        ],
        &rows,
    )?;
    let hw: Vec<f64> = runs.iter().map(|r| r.summary.half_width).collect();
    let zd: Vec<f64> = runs.iter().map(|r| r.summary.zero_set_distance).collect();
    sink.checks.push(Check::flag("half_width_decreasing", strictly_decreasing(&hw), "strictly decreasing"));
    sink.checks.push(Check::flag("zero_set_distance_decreasing", strictly_decreasing(&zd), "strictly decreasing"));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_requires_decreasing_scales() {
        let mut c = RunConfig::new(Command::Sweep, "/tmp/x");
        c.epsilons = vec![0.4, 0.3, 0.3];
        match c.validate().unwrap_err() {
            GlError::Config { path, .. } => assert_eq!(path, "epsilons[2]"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn negative_tolerance_names_field() {
        let text = r#"{"command":"glue","epsilon":0.2,"tolerances":{"residual":-1},"output":"o"}"#;
        match RunConfig::from_json(text).unwrap_err() {
            GlError::Config { path, .. } => assert_eq!(path, "tolerances.residual"),
            e => panic!("{e}"),
        }
    }
}
