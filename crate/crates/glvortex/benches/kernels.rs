//! Hot kernels timed on a one-thread rayon pool and on the global pool. Built
//! with `--no-default-features` the kernels take their sequential code paths
//! and only the `sequential` rows are produced.

use std::f64::consts::PI;
use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use glvortex::ansatz::{build_approximate_solution, NormalField, TubeGrid};
use glvortex::geometry::ModelManifold;
use glvortex::gluing::{GluingProblem, Lattice};
use glvortex::linop::{assemble_gauge_fixed_operator_2d, kernel_pair, Grid2d};
use glvortex::vortex2d::{evaluate_vortex_fields, solve_vortex_profile, VortexProfile};

struct Fixture {
    profile: VortexProfile,
    problem: GluingProblem,
}

fn fixture() -> Fixture {
    let eps = 0.2;
    let profile = solve_vortex_profile(eps, 14.0 * eps, 4001).unwrap();
    let m = ModelManifold::warped3(2.0 * PI);
    let grid = TubeGrid::new(2.0 * PI, 4, 12.0 * eps, 0.25 * eps);
    let lat = Arc::new(Lattice::new(&m, grid, eps).unwrap());
    let v = NormalField::zero(4, 2.0 * PI);
    let apx = build_approximate_solution(&m, &profile, &v, grid, Some((11.0 * eps, grid.half_width()))).unwrap();
    let problem = GluingProblem::new(lat, &profile, apx, None).unwrap();
    Fixture { profile, problem }
}

/// Runs `f` on a one-thread pool (`sequential`) or the global pool (`parallel`).
struct Pool(Option<rayon::ThreadPool>);

impl Pool {
    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.0 {
            Some(p) => p.install(f),
            None => f(),
        }
    }
}

fn pools() -> Vec<(&'static str, Pool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut v = vec![("sequential", Pool(Some(one)))];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Pool(None)));
    }
    v
}

fn benches(c: &mut Criterion) {
    let fx = fixture();
    let lat = &fx.problem.lattice;
    let x0 = &fx.problem.x0;
    let u = vec![0.0; lat.grid.len()];
    let jac = lat.assemble_jacobian(x0, x0, &u);
    let mut y = vec![0.0; jac.n];
    let points: Vec<[f64; 2]> = (0..20000).map(|k| [(k % 200) as f64 * 0.01 - 1.0, (k / 200) as f64 * 0.01 - 1.0]).collect();
    let p1 = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
    let op = assemble_gauge_fixed_operator_2d(&p1, Grid2d::new(10.0, 0.1)).unwrap();
    let k = kernel_pair(&op, [1.0, 0.0]).to_vec();

    for (tag, pool) in pools() {
        c.bench_function(&format!("csr_matvec/{tag}"), |b| b.iter(|| pool.run(|| jac.apply(black_box(x0), &mut y))));
        c.bench_function(&format!("half_gradient/{tag}"), |b| b.iter(|| pool.run(|| lat.half_gradient(black_box(x0)))));
        c.bench_function(&format!("jacobian_assembly/{tag}"), |b| b.iter(|| pool.run(|| lat.assemble_jacobian(x0, x0, &u))));
        c.bench_function(&format!("obstruction_projection/{tag}"), |b| {
            b.iter(|| pool.run(|| fx.problem.projector.apply(black_box(x0))))
        });
        c.bench_function(&format!("vortex_fields/{tag}"), |b| {
            b.iter(|| pool.run(|| evaluate_vortex_fields(&fx.profile, black_box(&points))))
        });
        c.bench_function(&format!("linop_apply/{tag}"), |b| b.iter(|| pool.run(|| op.apply(black_box(&k)))));
    }
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(kernels);
