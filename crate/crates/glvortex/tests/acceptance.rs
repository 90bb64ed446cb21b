//! Acceptance run: one line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 6`. Criteria listed in `KNOWN_RED`
//! are printed as FAIL when they fail but do not change the exit status,
//! unless `GLVORTEX_STRICT=1` is set. Any other failure exits nonzero.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use glvortex::ansatz::{
    build_approximate_solution, gl_residual, residual_weighted_norm, tangential_pairing, MetricChoice, NormalField, TubeGrid,
    WeightedNormParams,
};
use glvortex::diagnostics::{glue_once, run, Command, RunConfig};
use glvortex::geometry::{assemble_jacobi, jacobi_operator, warped3_discrete_mode, ModelManifold};
use glvortex::gluing::{GluingContext, GluingSettings};
use glvortex::linop::{
    assemble_gauge_fixed_operator_2d, quadratic_form_decomposition, spectrum_report, verify_inverse_estimate, Grid2d,
    ScaledGrid,
};
use glvortex::vortex2d::{check_vortex_identity, solve_vortex_profile, vortex_energy_flux};
use glvortex::GlError;

/// Criteria that fail for a documented reason (see the README).
const KNOWN_RED: &[u32] = &[10];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn c1() -> Verdict {
    let t = Instant::now();
    let p = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let id = check_vortex_identity(&p);
    let ef = vortex_energy_flux(&p);
    let ode = id.f_equation.max(id.a_equation);
    let flux = ef.flux / (2.0 * PI);
    let energy = ef.energy / (2.0 * PI);
    verdict(
        ode < 1e-10 && (flux - 1.0).abs() < 1e-6 && (energy - 1.0).abs() < 1e-4 && secs < 5.0,
        format!("ode residual {ode:.2e}, flux/2pi-1 {:.2e}, energy/2pi-1 {:.2e}, solve {secs:.2}s", flux - 1.0, energy - 1.0),
    )
}

fn c2() -> Verdict {
    let p = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
    let sq = check_vortex_identity(&p).squared_identity;
    verdict(sq < 1e-8, format!("max |eps^2 F^2 - (1-|psi|^2)^2/4eps^2| = {sq:.2e}"))
}

fn kernel_operator() -> glvortex::linop::DiscreteOperator {
    let p = solve_vortex_profile(1.0, 25.0, 5001).unwrap();
    assemble_gauge_fixed_operator_2d(&p, Grid2d::new(15.0, 0.1)).unwrap()
}

fn c3() -> Verdict {
    let t = Instant::now();
    let op = kernel_operator();
    let rep = spectrum_report(&op).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ev = &rep.eigenvalues;
    let cmin = rep.principal_angles.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        ev[0] < 1e-3 && ev[1] < 1e-3 && ev[2] >= 0.1 && cmin >= 0.999 && secs < 120.0,
        format!("eigenvalues {:.2e}, {:.2e}, {:.4}; min cosine {cmin:.6}; {secs:.1}s", ev[0], ev[1], ev[2]),
    )
}

fn c4() -> Verdict {
    let op = kernel_operator();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let pair = common::random_compact_pair(op.grid, op.epsilon, 8.0, 1000 + seed);
        let rep = quadratic_form_decomposition(&op, &pair).unwrap();
        worst = worst.max(rep.relative_defect());
    }
    verdict(worst < 1e-6, format!("max relative defect over 20 pairs {worst:.2e}"))
}

fn c5() -> Verdict {
    let rows = verify_inverse_estimate(&[0.4, 0.2, 0.1], ScaledGrid::default(), 0.0).unwrap();
    let cs: Vec<f64> = rows.iter().map(|r| r.c).collect();
    let ratio = cs.iter().copied().fold(0.0, f64::max) / cs.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(ratio <= 2.0, format!("c(eps) = {:.4}, {:.4}, {:.4}; ratio {ratio:.4}", cs[0], cs[1], cs[2]))
}

fn c6() -> Verdict {
    let j = jacobi_operator(&ModelManifold::warped3(2.0 * PI), 256).unwrap();
    let mut neg: Vec<f64> = j.eigenvalues.iter().map(|e| -e).collect();
    neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expect = [1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0];
    let worst = neg.iter().zip(&expect).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    let flat = matches!(jacobi_operator(&ModelManifold::flat3(2.0 * PI), 256), Err(GlError::Degenerate { .. }));
    verdict(
        worst < 0.01 && flat,
        format!("-J lowest ten within {worst:.2e} of 1+k^2; flat3 degenerate: {flat}"),
    )
}

fn c7() -> Verdict {
    let m = ModelManifold::warped3(2.0 * PI);
    let mut norms = Vec::new();
    for &eps in &[0.4, 0.3, 0.2, 0.15, 0.1] {
        let p = solve_vortex_profile(eps, 26.0 * eps, 4001).unwrap();
        let g = TubeGrid::new(2.0 * PI, 1, 24.0 * eps, eps / 20.0);
        let v = NormalField::zero(1, 2.0 * PI);
        let apx = build_approximate_solution(&m, &p, &v, g, Some((20.0 * eps, 24.0 * eps))).unwrap();
        let r = gl_residual(&apx, &m, MetricChoice::Exact);
        norms.push(residual_weighted_norm(&r, &WeightedNormParams::for_profile(&p, 0.5)));
    }
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().copied().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    let list: Vec<String> = norms.iter().map(|n| format!("{n:.3}")).collect();
    verdict(spread < 0.5, format!("weighted norms [{}]; spread {:.1}%", list.join(", "), 100.0 * spread))
}

fn c8() -> Verdict {
    let m = ModelManifold::warped3(2.0 * PI);
    let eps = 0.2;
    let p = solve_vortex_profile(eps, 26.0 * eps, 4001).unwrap();
    let g = TubeGrid::new(2.0 * PI, 32, 12.0 * eps, eps / 8.0);
    let mut worst = 0.0f64;
    for (k, dir, w) in [(1usize, 0usize, [1.0, 0.0]), (2, 1, [0.3, 1.0]), (1, 1, [1.0, -0.5])] {
        let v = NormalField::cosine_mode(32, 2.0 * PI, 0.01, k, dir);
        let apx = build_approximate_solution(&m, &p, &v, g, None).unwrap();
        for s in [3usize, 5] {
            let lhs = tangential_pairing(&apx, s, w);
            let rhs = -PI * (apx.dv[s][0] * w[0] + apx.dv[s][1] * w[1]);
            worst = worst.max((lhs - rhs).abs() / rhs.abs());
        }
    }
    verdict(worst < 0.01, format!("max relative error over 3 (v, w) choices and 2 slices {worst:.2e}"))
}

fn c9() -> Verdict {
    let eps = 0.1;
    let nx = 8;
    let l0 = 2.0 * PI;
    let m = ModelManifold::warped3(l0);
    let p = Arc::new(solve_vortex_profile(eps, 26.0 * eps, 4001).unwrap());
    let settings = GluingSettings { nx, ..GluingSettings::default() };
    let ctx = GluingContext::new(&m, p, settings).unwrap();
    let eig = assemble_jacobi(&m, nx);
    let d = eps / 20.0;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for k in 0..3usize {
        let bp = ctx.balancing_map(&NormalField::cosine_mode(nx, l0, d, k, 0)).unwrap();
        let bm = ctx.balancing_map(&NormalField::cosine_mode(nx, l0, -d, k, 0)).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..nx {
            let c = (2.0 * PI * (k * s) as f64 / nx as f64).cos();
            num += (bp.v[s][0] - bm.v[s][0]) / (2.0 * d) * c;
            den += c * c;
        }
        let lam = num / den;
        let target = -warped3_discrete_mode(l0, nx, k);
        let in_spectrum = eig.eigenvalues.iter().any(|e| (e - target).abs() < 1e-9);
        let rel = if in_spectrum { (lam - target).abs() / target.abs() } else { f64::INFINITY };
        worst = worst.max(rel);
        parts.push(format!("k={k}: {lam:.4} vs {target:.4}"));
    }
    verdict(worst < 0.05, format!("eps {eps}, {}; max rel {worst:.2e}", parts.join(", ")))
}

fn c10() -> Verdict {
    let t = Instant::now();
    let eps = 0.2;
    let mut cfg = RunConfig::new(Command::Glue, std::env::temp_dir().join("glvortex-acceptance-c10"));
    cfg.epsilon = Some(eps);
    let run = glue_once(&ModelManifold::warped3(2.0 * PI), eps, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let s = &run.summary;
    let checks = [
        ("dofs <= 1e6", s.dofs <= 1_000_000),
        ("residual < 1e-7", s.full_residual < 1e-7),
        ("|u| < 1e-7", s.gauge_sup < 1e-7),
        ("fiber energy within 2%", s.max_fiber_deviation <= 0.02),
        ("half-width <= 2 eps", s.half_width <= 2.0 * eps),
        ("runtime < 30 min", secs < 1800.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "{} dofs, Newton steps {}, residual {:.2e}, |u| {:.2e}, fiber dev {:.2e}, half-width {:.4} eps, {secs:.0}s{}",
            s.dofs,
            s.newton_iterations,
            s.full_residual,
            s.gauge_sup,
            s.max_fiber_deviation,
            s.half_width_over_eps,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn c11() -> Verdict {
    let mut cfg = RunConfig::new(Command::Sweep, std::env::temp_dir().join("glvortex-acceptance-c11"));
    cfg.epsilons = vec![0.4, 0.3, 0.2, 0.15];
    cfg.manifold = ModelManifold::warped3(2.0 * PI).with_perturbation(0.5);
    let out = run(&cfg).unwrap();
    let table = std::fs::read_to_string(out.manifest_path.with_file_name("sweep.csv")).unwrap();
    let mut hw = Vec::new();
    let mut zd = Vec::new();
    for line in table.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        hw.push(cols[1]);
        zd.push(cols[3]);
    }
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ");
    verdict(
        dec(&hw) && dec(&zd),
        format!("half-width [{}]; zero-set distance [{}]", fmt(&hw), fmt(&zd)),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 11] = [
        (1, "vortex solver", c1),
        (2, "vortex identity", c2),
        (3, "kernel of the linearization", c3),
        (4, "sum-of-squares identity", c4),
        (5, "inverse estimate", c5),
        (6, "Jacobi spectrum", c6),
        (7, "ansatz residual", c7),
        (8, "tangential coefficient", c8),
        (9, "balancing linearization", c9),
        (10, "end-to-end glue", c10),
        (11, "eps sweep", c11),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("GLVORTEX_STRICT").map(|v| v == "1").unwrap_or(false);
    let mut unexpected = 0;
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let known = KNOWN_RED.contains(&id);
        let tag = match (v.passed, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {tag:<12} {name}: {} [{:.1}s]", v.detail, t.elapsed().as_secs_f64());
        if !v.passed {
            failed += 1;
            if !known || strict {
                unexpected += 1;
            }
        }
    }
    println!("acceptance: {failed} failed, {unexpected} counted against the exit status");
    if unexpected > 0 {
        std::process::exit(1);
    }
}
