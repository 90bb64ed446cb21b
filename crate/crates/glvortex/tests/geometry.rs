use std::f64::consts::PI;

use glvortex::geometry::*;
use glvortex::GlError;
use proptest::prelude::*;

type P = [f64; 3];

fn metric(m: &ModelManifold, p: P) -> P {
    m.exact_metric(p[0], [p[1], p[2]])
}

/// Christoffel symbols `Gamma^a_{bc}` of a diagonal metric by central differences.
fn christoffel(m: &ModelManifold, p: P) -> [[[f64; 3]; 3]; 3] {
    let h = 1e-4;
    let g = metric(m, p);
    let mut dg = [[0.0; 3]; 3]; // dg[c][a] = d_c g_aa
    for c in 0..3 {
        let (mut pp, mut pm) = (p, p);
        pp[c] += h;
        pm[c] -= h;
        let (gp, gm) = (metric(m, pp), metric(m, pm));
        for a in 0..3 {
            dg[c][a] = (gp[a] - gm[a]) / (2.0 * h);
        }
    }
    let d = |c: usize, a: usize, b: usize| if a == b { dg[c][a] } else { 0.0 };
    let mut out = [[[0.0; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                out[a][b][c] = 0.5 / g[a] * (d(b, a, c) + d(c, a, b) - d(a, b, c));
            }
        }
    }
    out
}

/// `g(R(d_c, d_d) d_b, d_a)` from differences of the Christoffel symbols.
fn riemann(m: &ModelManifold, p: P, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let h = 1e-3;
    let dgam = |k: usize| {
        let (mut pp, mut pm) = (p, p);
        pp[k] += h;
        pm[k] -= h;
        let (gp, gm) = (christoffel(m, pp), christoffel(m, pm));
        let mut out = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    out[i][j][l] = (gp[i][j][l] - gm[i][j][l]) / (2.0 * h);
                }
            }
        }
        out
    };
    let gam = christoffel(m, p);
    let (dc, dd) = (dgam(c), dgam(d));
    let mut r = dc[a][d][b] - dd[a][c][b];
    for e in 0..3 {
        r += gam[a][c][e] * gam[e][d][b] - gam[a][d][e] * gam[e][c][b];
    }
    metric(m, p)[a] * r
}

#[test]
fn warped3_curvature_matches_difference_oracle() {
    for m in [ModelManifold::warped3(2.0 * PI), ModelManifold::warped3(2.0 * PI).with_perturbation(0.5)] {
        for x in [0.0, 0.7, 2.0] {
            let pg = point_geometry(&m, x);
            for rho in 0..2 {
                for sigma in 0..2 {
                    let oracle = riemann(&m, [x, 0.0, 0.0], 0, 1 + sigma, 0, 1 + rho);
                    assert!((pg.r_tnnt_at(0, rho, sigma, 0) - oracle).abs() < 1e-5, "{rho}{sigma}: {oracle}");
                }
            }
            assert_eq!(pg.h_at(0, 0, 0), 0.0);
            assert_eq!(pg.h_at(0, 0, 1), 0.0);
        }
    }
}

#[test]
fn warped3_curvature_is_minus_identity() {
    let pg = point_geometry(&ModelManifold::warped3(2.0 * PI), 1.3);
    assert_eq!(pg.r_tnnt_at(0, 0, 0, 0), -1.0);
    assert_eq!(pg.r_tnnt_at(0, 1, 1, 0), -1.0);
    assert_eq!(pg.r_tnnt_at(0, 0, 1, 0), 0.0);
}

#[test]
fn flat3_data_vanishes() {
    let sg = submanifold_data(&ModelManifold::flat3(2.0 * PI), 16);
    for p in &sg.points {
        assert!(p.h.iter().chain(&p.c).chain(&p.r_tnnt).chain(&p.r_tnnn).chain(&p.r_nnnn).all(|v| *v == 0.0));
    }
}

#[test]
fn models_are_minimal() {
    for m in [
        ModelManifold::warped3(2.0 * PI),
        ModelManifold::warped3(2.0 * PI).with_perturbation(0.5),
        ModelManifold::flat3(2.0 * PI),
    ] {
        assert!(submanifold_data(&m, 64).max_mean_curvature() < 1e-10);
    }
}

#[test]
fn expansion_is_identity_on_s() {
    let e = fermi_metric_expansion(&ModelManifold::warped3(2.0 * PI), 0.4, [0.0, 0.0]).unwrap();
    assert_eq!(e.g_tt, vec![1.0]);
    assert_eq!(e.g_tn, vec![0.0, 0.0]);
    assert_eq!(e.g_nn, [[1.0, 0.0], [0.0, 1.0]]);
    assert_eq!(e.volume_ratio, 1.0);
}

#[test]
fn expansion_error_is_third_order() {
    let m = ModelManifold::warped3(2.0 * PI).with_perturbation(0.5);
    let err = |t: f64| {
        let y = [0.8 * t, 0.6 * t];
        (fermi_metric_expansion(&m, 0.0, y).unwrap().g_tt[0] - m.exact_metric(0.0, y)[0]).abs()
    };
    let ratio = err(0.2) / err(0.1);
    assert!(ratio > 7.0 && ratio < 9.0, "{ratio}");
}

#[test]
fn points_outside_tube_are_rejected() {
    let err = fermi_metric_expansion(&ModelManifold::warped3(2.0 * PI), 0.0, [0.6, 0.0]).unwrap_err();
    assert!(matches!(err, GlError::OutsideTube { .. }));
}

#[test]
fn flat3_is_degenerate() {
    let err = jacobi_operator(&ModelManifold::flat3(2.0 * PI), 32).unwrap_err();
    assert!(matches!(err, GlError::Degenerate { .. }));
    let j = assemble_jacobi(&ModelManifold::flat3(2.0 * PI), 32);
    let constant = vec![1.0; 64];
    assert!(j.apply(&constant).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn jacobi_error_is_second_order() {
    let m = ModelManifold::warped3(2.0 * PI);
    let err = |n: usize| {
        let mut e: Vec<f64> = assemble_jacobi(&m, n).eigenvalues.iter().map(|v| -v).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (e[6] - 5.0).abs()
    };
    let ratio = err(32) / err(64);
    assert!(ratio > 3.8 && ratio < 4.2, "{ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn warped3_expansion_is_exact(x in 0.0f64..2.0 * PI, t in 0.0f64..0.49, th in 0.0f64..2.0 * PI) {
        let m = ModelManifold::warped3(2.0 * PI);
        let y = [t * th.cos(), t * th.sin()];
        let e = fermi_metric_expansion(&m, x, y).unwrap();
        prop_assert!((e.g_tt[0] - (1.0 + t * t)).abs() < 1e-12);
        prop_assert!((e.volume_ratio - (1.0 + t * t).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn discrete_modes_are_in_the_spectrum(n in 8usize..96, k in 0usize..4) {
        let j = assemble_jacobi(&ModelManifold::warped3(2.0 * PI), n);
        let target = -warped3_discrete_mode(2.0 * PI, n, k);
        prop_assert!(j.eigenvalues.iter().any(|e| (e - target).abs() < 1e-9));
    }
}
