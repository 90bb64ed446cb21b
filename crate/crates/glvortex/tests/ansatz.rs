use std::f64::consts::PI;

use glvortex::ansatz::*;
use glvortex::geometry::ModelManifold;
use glvortex::vortex2d::{solve_vortex_profile, VortexProfile};
use glvortex::GlError;
use proptest::prelude::*;

const EPS: f64 = 0.2;
const L0: f64 = 2.0 * PI;

fn profile() -> VortexProfile {
    solve_vortex_profile(EPS, 14.0 * EPS, 2801).unwrap()
}

fn grid(nx: usize) -> TubeGrid {
    TubeGrid::new(L0, nx, 12.0 * EPS, EPS / 8.0)
}

fn circle(nx: usize, delta: f64) -> NormalField {
    NormalField::from_fn(nx, L0, |x| [delta * x.cos(), delta * x.sin()])
}

#[test]
fn narrow_tube_is_rejected() {
    let g = TubeGrid::new(L0, 4, 5.0 * EPS, EPS / 8.0);
    let err = build_approximate_solution(&ModelManifold::warped3(L0), &profile(), &NormalField::zero(4, L0), g, None).unwrap_err();
    assert!(matches!(err, GlError::TubeTooNarrow { .. }));
}

#[test]
fn large_normal_field_is_rejected() {
    let v = NormalField::cosine_mode(8, L0, EPS, 1, 0);
    let err = build_approximate_solution(&ModelManifold::warped3(L0), &profile(), &v, grid(8), None).unwrap_err();
    assert!(matches!(err, GlError::VTooLarge { .. }));
}

#[test]
fn straight_ansatz_has_no_tangential_potential() {
    let apx = build_approximate_solution(&ModelManifold::warped3(L0), &profile(), &NormalField::zero(4, L0), grid(4), None).unwrap();
    assert!(apx.a.iter().all(|a| a[0] == 0.0));
}

#[test]
fn each_fiber_carries_unit_flux() {
    let apx = build_approximate_solution(&ModelManifold::warped3(L0), &profile(), &circle(8, EPS / 10.0), grid(8), None).unwrap();
    for flux in apx.fiber_flux() {
        assert!((flux / (2.0 * PI) - 1.0).abs() < 1e-3, "{flux}");
    }
}

#[test]
fn zeros_follow_the_normal_field() {
    let delta = EPS / 10.0;
    let g = grid(8);
    let apx = build_approximate_solution(&ModelManifold::warped3(L0), &profile(), &circle(8, delta), g, None).unwrap();
    for (s, c) in vortex_centers(&g, &apx.phi).iter().enumerate() {
        let x = g.x(s);
        let err = (c[0] - delta * x.cos()).hypot(c[1] - delta * x.sin());
        assert!(err < g.h * g.h, "slice {s}: {err:e}");
    }
}

#[test]
fn export_writes_every_component() {
    let g = TubeGrid::new(L0, 2, 10.0 * EPS, EPS / 2.0);
    let p = solve_vortex_profile(EPS, 12.0 * EPS, 601).unwrap();
    let apx = build_approximate_solution(&ModelManifold::warped3(L0), &p, &NormalField::zero(2, L0), g, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    apx.export(dir.path()).unwrap();
    for name in ["A_x", "A_1", "A_2", "phi_re", "phi_im"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y1,y2,value"));
        assert_eq!(lines.count(), g.len());
    }
    let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("header.json")).unwrap()).unwrap();
    assert_eq!(header["epsilon"], EPS);
}

#[test]
fn unweighted_constant_has_unit_norm() {
    let g = TubeGrid::new(L0, 3, 2.0, 0.1);
    let p = WeightedNormParams { mu: 0.0, gamma: 0.5, epsilon: 0.3, k: 0 };
    let n = weighted_holder_norm(&g, &vec![1.0; g.len()], 1, &p);
    assert_eq!(n.sup, 1.0);
    assert_eq!(n.seminorm, 0.0);
    assert_eq!(n.value, 1.0);
}

#[test]
fn weight_cancels_matching_decay() {
    let g = TubeGrid::new(L0, 2, 2.0, 0.1);
    let p = WeightedNormParams { mu: 0.7, gamma: 0.5, epsilon: 0.3, k: 0 };
    let data: Vec<f64> = (0..g.len())
        .map(|k| {
            let (_, y) = g.point(k);
            (-p.mu * y[0].hypot(y[1]) / p.epsilon).exp()
        })
        .collect();
    let n = weighted_holder_norm(&g, &data, 1, &p);
    assert!((n.sup - 1.0).abs() < 1e-12);
}

fn trig(coef: &[(f64, f64)]) -> impl Fn(f64) -> ([f64; 2], [f64; 2], [f64; 2]) + '_ {
    move |x| {
        let mut out = ([0.0; 2], [0.0; 2], [0.0; 2]);
        for (k, &(a, b)) in coef.iter().enumerate() {
            let k = k as f64;
            out.0[0] += a * (k * x).cos();
            out.0[1] += b * (k * x).sin();
            out.1[0] -= a * k * (k * x).sin();
            out.1[1] += b * k * (k * x).cos();
            out.2[0] -= a * k * k * (k * x).cos();
            out.2[1] -= b * k * k * (k * x).sin();
        }
        out
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_derivatives_are_exact(coef in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..5), x in 0.0f64..L0) {
        let f = trig(&coef);
        let nx = 16;
        let v = NormalField::from_fn(nx, L0, |x| f(x).0);
        let (d1, d2) = (v.derivative(1), v.derivative(2));
        for s in 0..nx {
            let exact = f(s as f64 * L0 / nx as f64);
            for c in 0..2 {
                prop_assert!((d1[s][c] - exact.1[c]).abs() < 1e-10);
                prop_assert!((d2[s][c] - exact.2[c]).abs() < 1e-9);
            }
        }
        let (val, der) = v.eval(x);
        let exact = f(x);
        for c in 0..2 {
            prop_assert!((val[c] - exact.0[c]).abs() < 1e-10);
            prop_assert!((der[c] - exact.1[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn c2_norm_is_homogeneous(coef in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..4), lambda in 0.01f64..10.0) {
        let f = trig(&coef);
        let v = NormalField::from_fn(12, L0, |x| f(x).0);
        let w = NormalField::from_fn(12, L0, |x| { let p = f(x).0; [lambda * p[0], lambda * p[1]] });
        let (a, b) = (v.c2_gamma_norm(0.5), w.c2_gamma_norm(0.5));
        prop_assert!((b - lambda * a).abs() <= 1e-12 * b.max(1.0));
    }
}
