mod common;

use glvortex::ansatz::quintic_step;
use glvortex::linop::*;
use glvortex::vortex2d::solve_vortex_profile;
use num_complex::Complex64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn op() -> &'static DiscreteOperator {
    static OP: OnceLock<DiscreteOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let p = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
        assemble_gauge_fixed_operator_2d(&p, Grid2d::new(10.0, 0.125)).unwrap()
    })
}

fn kernel_residual(h: f64) -> f64 {
    let p = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
    let op = assemble_gauge_fixed_operator_2d(&p, Grid2d::new(10.0, h)).unwrap();
    let k = kernel_pair(&op, [1.0, 0.0]).to_vec();
    op.norm(&op.apply(&k)) / op.norm(&k)
}

/// `L2` norm of `L k` on the annulus `1 <= |y| <= 8`, away from the truncation
/// boundary and the node at the zero of `psi`.
fn annulus_residual(h: f64) -> f64 {
    let p = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
    let op = assemble_gauge_fixed_operator_2d(&p, Grid2d::new(10.0, h)).unwrap();
    let lk = op.apply(&kernel_pair(&op, [1.0, 0.0]).to_vec());
    let mut sum = 0.0;
    for n in 0..op.grid.nodes() {
        let y = op.grid.point(n);
        if (1.0..=8.0).contains(&y[0].hypot(y[1])) {
            sum += lk[4 * n..4 * n + 4].iter().map(|v| v * v).sum::<f64>() * h * h;
        }
    }
    sum.sqrt()
}

#[test]
fn kernel_residual_is_second_order() {
    let r1 = annulus_residual(0.125);
    let r2 = annulus_residual(0.0625);
    assert!(r1 / r2 > 3.5 && r1 / r2 < 4.5, "{r1:e} {r2:e}");
}

#[test]
fn kernel_pair_squares_are_small() {
    let p = solve_vortex_profile(1.0, 25.0, 5001).unwrap();
    let op = assemble_gauge_fixed_operator_2d(&p, Grid2d::new(15.0, 0.125)).unwrap();
    let mut k = kernel_pair(&op, [1.0, 0.0]);
    // cut off the exponentially small tail so the pair vanishes at the boundary
    for n in 0..op.grid.nodes() {
        let y = op.grid.point(n);
        let chi = 1.0 - quintic_step(y[0].hypot(y[1]), 11.0, 14.0).0;
        k.a[n] = [chi * k.a[n][0], chi * k.a[n][1]];
        k.f[n] *= chi;
    }
    let rep = quadratic_form_decomposition(&op, &k).unwrap();
    let scale = op.inner(&k.to_vec(), &k.to_vec());
    assert!(rep.square1 / scale < 1e-6 && rep.square2 / scale < 1e-6, "{rep:?}");
}

#[test]
fn kernel_pairs_rotate_into_each_other() {
    let op = op();
    let g = op.grid;
    let (k1, k2) = (kernel_pair(op, [1.0, 0.0]), kernel_pair(op, [0.0, 1.0]));
    let m = g.m;
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            // rotation by 90 degrees: (y1, y2) -> (-y2, y1)
            let n = i * m + j;
            let r = (m - 1 - j) * m + i;
            let a = k1.a[n];
            let ra = [-a[1], a[0]];
            worst = worst.max((k2.a[r][0] - ra[0]).abs()).max((k2.a[r][1] - ra[1]).abs());
            worst = worst.max((k2.f[r] - Complex64::i() * k1.f[n]).norm());
        }
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn zero_shift_model_is_the_planar_operator() {
    let op = op();
    let p = solve_vortex_profile(1.0, 20.0, 4001).unwrap();
    let model = assemble_model_mode_operator(&p, op.grid, 0.0).unwrap();
    let x = common::random_compact_pair(op.grid, 1.0, 6.0, 5).to_vec();
    assert_eq!(op.apply(&x), model.apply(&x));
}

#[test]
fn shifted_solve_returns_kernel_element() {
    let op = op().with_shift(1.0);
    let k = kernel_pair(&op, [1.0, 0.0]).to_vec();
    let (x, _) = solve_mode(&op, &k, 1e-10, 2000).unwrap();
    let diff: Vec<f64> = x.iter().zip(&k).map(|(a, b)| a - b).collect();
    let base = kernel_residual(0.125);
    assert!(op.norm(&diff) / op.norm(&k) < 2.0 * base, "{}", op.norm(&diff) / op.norm(&k));
}

#[test]
fn kernel_directions_collapse_the_estimate() {
    let op = op();
    let free = inverse_estimate(op, &[]).unwrap();
    let k = [kernel_pair(op, [1.0, 0.0]).to_vec(), kernel_pair(op, [0.0, 1.0]).to_vec()];
    let constrained = inverse_estimate(op, &k).unwrap();
    assert!(free.c < 1e-4 * constrained.c, "{free:?}");
    assert!(constrained.c > 0.5, "{constrained:?}");
    assert!(constrained.lower <= constrained.c);
}

#[test]
fn large_fourier_shift_dominates() {
    let eps = 0.4;
    let rows = verify_inverse_estimate(&[eps], ScaledGrid::default(), 1.0 / (eps * eps)).unwrap();
    assert!(rows[0].lower >= 1.0 - 1e-6 && rows[0].c >= 1.0 - 1e-6, "{rows:?}");
}

#[test]
fn nonzero_boundary_data_is_rejected() {
    let op = op();
    let mut p = GaugePair::zeros(op.grid, 1.0);
    p.f[0] = Complex64::new(1.0, 0.0);
    assert!(matches!(quadratic_form_decomposition(op, &p), Err(glvortex::GlError::BoundaryLeak { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn operator_is_symmetric(s1 in 0u64..10_000, s2 in 0u64..10_000) {
        let op = op();
        let x = common::random_compact_pair(op.grid, 1.0, 8.0, s1).to_vec();
        let y = common::random_compact_pair(op.grid, 1.0, 8.0, s2).to_vec();
        let (lxy, xly) = (op.inner(&op.apply(&x), &y), op.inner(&x, &op.apply(&y)));
        let scale = op.norm(&op.apply(&x)) * op.norm(&y) + op.norm(&x) * op.norm(&op.apply(&y));
        prop_assert!((lxy - xly).abs() / scale < 1e-12);
    }

    #[test]
    fn form_is_nonnegative_and_splits_into_squares(seed in 0u64..10_000) {
        let op = op();
        let x = common::random_compact_pair(op.grid, 1.0, 8.0, seed);
        let rep = quadratic_form_decomposition(op, &x).unwrap();
        prop_assert!(op.quadratic_form(&x.to_vec()) >= 0.0);
        prop_assert!(rep.relative_defect() < 1e-6);
    }

    #[test]
    fn shift_raises_the_form(seed in 0u64..10_000, xi in 0.1f64..3.0) {
        let op = op().with_shift(xi * xi);
        let x = common::random_compact_pair(op.grid, 1.0, 8.0, seed).to_vec();
        prop_assert!(op.quadratic_form(&x) >= xi * xi * op.inner(&x, &x) * (1.0 - 1e-12));
    }
}
