use hermite_moments::gram::entry_closed;
use hermite_moments::operators::{
    build_b, build_b_penalized, build_b_projection, build_d, build_d_penalized, build_d_projection, build_space,
    build_velocity, build_z, build_z_by_solve, skew_residual, symmetry_residual,
};
use hermite_moments::{GramMatrix, Method, OperatorKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn max_norm(m: &DMatrix<f64>) -> f64 {
    m.abs().max()
}

#[test]
fn raw_d_is_lower_bidiagonal() {
    for &e in &[1.0, -1.0, 0.3] {
        let d = build_d(10, e, 2.0).unwrap();
        let m = d.matrix();
        for i in 0..=10 {
            for j in 0..=10 {
                if i == j + 1 {
                    let want = -e * (2.0 * i as f64 / 2.0).sqrt();
                    assert!((m[(i, j)] - want).abs() < 1e-15);
                } else {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(d.kind(), OperatorKind::VelocityD);
        assert_eq!(d.method(), Method::Raw);
    }
}

#[test]
fn raw_b_is_symmetric_tridiagonal() {
    let b = build_b(12, 1.5).unwrap();
    let m = b.matrix();
    assert_eq!(m, &m.transpose());
    for i in 0..=12 {
        assert_eq!(m[(i, i)], 0.0);
        for j in 0..=12 {
            if i.abs_diff(j) > 1 {
                assert_eq!(m[(i, j)], 0.0);
            }
        }
    }
    assert!((m[(0, 1)] - (1.5f64 / 2.0).sqrt()).abs() < 1e-15);
}

#[test]
fn projection_changes_only_last_column() {
    for n in [1, 2, 5, 16, 40] {
        let raw_d = build_d(n, 1.0, 2.0).unwrap();
        let raw_b = build_b(n, 2.0).unwrap();
        for cons in [false, true] {
            let d = build_d_projection(n, 1.0, 2.0, cons).unwrap();
            let b = build_b_projection(n, 2.0, cons).unwrap();
            for i in 0..=n {
                for j in 0..n {
                    assert_eq!(d.matrix()[(i, j)], raw_d.matrix()[(i, j)]);
                    assert_eq!(b.matrix()[(i, j)], raw_b.matrix()[(i, j)]);
                }
            }
        }
    }
}

#[test]
fn small_stabilized_entries() {
    let d = build_d_projection(2, 1.0, 2.0, false).unwrap();
    assert!((d.matrix()[(1, 2)] - 1.060_660_171_779_821_3).abs() < 1e-15);
    let b = build_b_projection(2, 2.0, false).unwrap();
    assert!((b.matrix()[(1, 2)] - 0.353_553_390_593_273_8).abs() < 1e-15);
}

#[test]
fn closed_form_z_matches_dense_solve_for_small_n() {
    for n in 1..=12 {
        let t = 2.0;
        let a = GramMatrix::stable(n, t).unwrap();
        let closed = build_z(n).unwrap();
        let solved = build_z_by_solve(n, t, &a).unwrap();
        let scale = closed.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (c, s) in closed.as_slice().iter().zip(solved.as_slice()) {
            assert!((c - s).abs() <= 1e-9 * scale, "N = {n}: {c} vs {s}");
        }
    }
}

#[test]
fn z_solves_gram_system() {
    for n in [3, 8, 20, 40] {
        let z = build_z(n).unwrap();
        for m in 0..=n {
            let lhs: f64 = (0..=n).map(|k| entry_closed(m, k, 1.0) * z.as_slice()[k]).sum();
            let g = entry_closed(m, n + 1, 1.0);
            let scale = (0..=n).map(|k| (entry_closed(m, k, 1.0) * z.as_slice()[k]).abs()).sum::<f64>() + g.abs();
            assert!((lhs - g).abs() <= 1e-13 * scale, "N = {n}, row {m}");
        }
    }
}

#[test]
fn z_small_examples_and_parity() {
    let z3 = build_z(3).unwrap();
    let want = [-0.153_093_108_923_948_63, 0.0, -0.866_025_403_784_438_6, 0.0];
    for (g, w) in z3.as_slice().iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
    let z4 = build_z(4).unwrap();
    assert!((z4.as_slice()[1] + 0.342_326_598_440_728_8).abs() < 1e-15);
    assert!((z4.as_slice()[3] + 1.118_033_988_749_895).abs() < 1e-15);
    for n in 1..30 {
        let z = build_z(n).unwrap();
        assert_eq!(z.parity(), (n + 1) % 2);
        for (k, v) in z.as_slice().iter().enumerate() {
            if k % 2 == n % 2 {
                assert_eq!(*v, 0.0);
            } else {
                assert!(*v < 0.0);
            }
        }
    }
    assert!(build_z(0).is_err());
}

#[test]
fn projection_restores_skew_symmetry() {
    for n in [4, 16, 64] {
        for &t in &[1.0, 2.0] {
            let a = GramMatrix::stable(n, t).unwrap();
            for &e in &[1.0, -1.0] {
                let d = build_d_projection(n, e, t, false).unwrap();
                let bound = 1e-12 * max_norm(a.entries()) * max_norm(d.matrix());
                let r = skew_residual(a.entries(), d.matrix());
                assert!(r <= bound, "N = {n}, T = {t}, e = {e}: {r:e} > {bound:e}");
                let raw = build_d(n, e, t).unwrap();
                assert!(skew_residual(a.entries(), raw.matrix()) > 1e-12 * max_norm(a.entries()) * max_norm(raw.matrix()));
            }
            let b = build_b_projection(n, t, false).unwrap();
            let r = symmetry_residual(a.entries(), b.matrix());
            assert!(r <= 1e-12 * max_norm(a.entries()) * max_norm(b.matrix()), "B̄ N = {n}, T = {t}: {r:e}");
        }
    }
}

#[test]
fn raw_operators_violate_skew_symmetry_for_every_n() {
    for n in 1..=30 {
        let a = GramMatrix::stable(n, 1.0).unwrap();
        let d = build_d(n, 1.0, 1.0).unwrap();
        let b = build_b(n, 1.0).unwrap();
        assert!(skew_residual(a.entries(), d.matrix()) > 1e-12 * max_norm(a.entries()) * max_norm(d.matrix()));
        assert!(symmetry_residual(a.entries(), b.matrix()) > 1e-12 * max_norm(a.entries()) * max_norm(b.matrix()));
    }
}

#[test]
fn truncation_defect_sits_in_last_column() {
    let n = 10;
    let a = GramMatrix::stable(n, 2.0).unwrap();
    let d = build_d(n, 1.0, 2.0).unwrap();
    let pd = a.entries() * d.matrix();
    let s = &pd + pd.transpose();
    for i in 0..n {
        for j in 0..n {
            assert!(s[(i, j)].abs() < 1e-14, "({i},{j}) {}", s[(i, j)]);
        }
    }
    assert!(s.column(n).abs().max() > 1e-3);
}

#[test]
fn penalized_operators_are_metric_skew() {
    for n in [4, 16, 64] {
        for &t in &[1.0, 2.0] {
            let a = GramMatrix::stable(n, t).unwrap();
            let eps = 1e-10;
            let p = a.entries() + DMatrix::identity(n + 1, n + 1) * eps;
            for &e in &[1.0, -1.0] {
                let d = build_d_penalized(n, e, t, eps, &a).unwrap();
                let r = skew_residual(&p, d.matrix());
                assert!(r <= 1e-12 * max_norm(&p) * max_norm(d.matrix()), "N = {n}: {r:e}");
                let form = d.metric_form().unwrap();
                assert_eq!(form.generator, -form.generator.transpose());
                assert_eq!(form.reduced, -form.reduced.transpose());
                let llt = &form.factor * form.factor.transpose();
                assert!(max_norm(&(llt - &p)) <= 1e-14 * max_norm(&p));
            }
            let b = build_b_penalized(n, t, eps, &a).unwrap();
            assert!(symmetry_residual(&p, b.matrix()) <= 1e-12 * max_norm(&p) * max_norm(b.matrix()));
            let form = b.metric_form().unwrap();
            assert_eq!(form.reduced, form.reduced.transpose());
        }
    }
}

#[test]
fn parity_rows_are_exactly_conserved() {
    for n in 2..=41 {
        let raw = build_d(n, 1.0, 2.0).unwrap();
        let d = build_d_projection(n, 1.0, 2.0, false).unwrap();
        let diff = d.matrix() - raw.matrix();
        let rows: &[usize] = if n % 2 == 0 { &[0, 2] } else { &[1] };
        for &r in rows {
            assert!(diff.row(r).iter().all(|&v| v == 0.0), "N = {n}, row {r}");
        }
        assert!(d.matrix().row(0).iter().all(|&v| v == 0.0) || n % 2 == 1);
    }
}

#[test]
fn conservative_variant_for_n_40() {
    let raw = build_d(40, 1.0, 1.0).unwrap();
    let cons = build_d_projection(40, 1.0, 1.0, true).unwrap();
    let full = build_d_projection(40, 1.0, 1.0, false).unwrap();
    let defect = cons.matrix() - raw.matrix();
    for r in 0..3 {
        assert!(defect.row(r).iter().all(|&v| v == 0.0));
    }
    let gap = max_norm(&(cons.matrix() - full.matrix()));
    assert!(gap <= 2e-5, "{gap:e}");
    assert!((gap - 1.957_929_027_846_394_8e-5).abs() < 1e-18);
}

#[test]
fn scaled_operator_matches_rebuilt_field() {
    let unit = build_velocity(Method::Projection, 12, 1.0, 2.0, None).unwrap();
    let direct = build_velocity(Method::Projection, 12, -0.7, 2.0, None).unwrap();
    let scaled = unit.scaled(-0.7);
    assert!(max_norm(&(scaled.matrix() - direct.matrix())) < 1e-15);
    assert_eq!(scaled.field(), Some(-0.7));
}

#[test]
fn builders_reject_bad_arguments() {
    assert!(build_velocity(Method::Penalized, 8, 1.0, 2.0, None).is_err());
    assert!(build_space(Method::Penalized, 8, 2.0, Some(0.0)).is_err());
    assert!(build_space(Method::Penalized, 8, 2.0, Some(-1.0)).is_err());
    assert!(build_d_projection(0, 1.0, 2.0, false).is_err());
    assert!(build_d(4, f64::NAN, 2.0).is_err());
    assert!(build_b(4, 0.0).is_err());
    let a = GramMatrix::stable(5, 2.0).unwrap();
    assert!(build_d_penalized(6, 1.0, 2.0, 1e-10, &a).is_err());
    assert!(build_d_penalized(5, 1.0, 1.0, 1e-10, &a).is_err());
    assert!("x".parse::<Method>().is_err());
    assert_eq!("proj-cons".parse::<Method>().unwrap(), Method::ProjectionConservative);
    assert_eq!("b".parse::<OperatorKind>().unwrap(), OperatorKind::SpaceB);
}

proptest! {
    #[test]
    fn projection_is_skew_for_any_field(e in -5.0f64..5.0, n in 1usize..24, t in 0.5f64..3.0) {
        let a = GramMatrix::stable(n, t).unwrap();
        let d = build_d_projection(n, e, t, false).unwrap();
        let r = skew_residual(a.entries(), d.matrix());
        prop_assert!(r <= 1e-12 * max_norm(a.entries()) * max_norm(d.matrix()).max(1e-300));
    }
}
