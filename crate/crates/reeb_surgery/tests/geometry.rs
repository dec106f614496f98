use proptest::prelude::*;
use reeb_surgery::geometry::*;
use reeb_surgery::Error;

fn pt(f: &[f64]) -> SplitPoint {
    SplitPoint::from_flat(f)
}

#[test]
fn constructor_rejects_mismatch() {
    assert!(matches!(SplitPoint::new(0.0, 0.0, vec![1.0], vec![]), Err(Error::DimensionMismatch { .. })));
    assert!(SplitPoint::new(0.0, 0.0, vec![], vec![]).is_err());
    let a = pt(&[1.0, 0.0, 0.0, 0.0]);
    let b = pt(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(eval_symplectic(&a, &b).is_err());
    assert!(eval_alpha(&a, &b).is_err());
}

#[test]
fn standard_pairings() {
    let e = |k| SplitPoint::basis(2, k);
    // layout [x1, x2, y1, y2]
    assert_eq!(eval_symplectic(&e(0), &e(2)).unwrap(), 1.0);
    assert_eq!(eval_symplectic(&e(1), &e(3)).unwrap(), 1.0);
    assert_eq!(eval_symplectic(&e(0), &e(1)).unwrap(), 0.0);
    let p = pt(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(eval_alpha(&p, &e(2)).unwrap(), 2.0);
    assert_eq!(eval_alpha(&p, &e(0)).unwrap(), 3.0);
}

#[test]
fn jet_checks() {
    let good = JetPoint { q: vec![1.0, 0.0, 0.0], p: vec![0.0, 2.0, 0.0], z: 0.3 };
    check_jet_point(&good, JET_TOL).unwrap();
    let v = JetTangent { vq: vec![0.0, 1.0, 0.0], vp: vec![0.0; 3], vz: 5.0 };
    assert_eq!(eval_alpha_jet(&good, &v).unwrap(), 3.0);
    let bad = JetPoint { q: vec![1.0, 0.1, 0.0], ..good.clone() };
    assert!(matches!(check_jet_point(&bad, JET_TOL), Err(Error::InvalidJetPoint { .. })));
    let skew = JetPoint { p: vec![0.5, 0.0, 0.0], ..good };
    assert!(eval_alpha_jet(&skew, &v).is_err());
}

#[test]
fn gnomonic_far_side_fails() {
    let pole = vec![0.0, 0.0, 1.0];
    let frame = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
    assert!(matches!(gnomonic(&[0.0, 0.6, -0.8], &pole, &frame), Err(Error::OutOfChart { .. })));
    assert_eq!(gnomonic(&pole, &pole, &frame).unwrap(), vec![0.0, 0.0]);
}

proptest! {
    #[test]
    fn symplectic_form_is_antisymmetric_and_bilinear(
        u in proptest::collection::vec(-3.0f64..3.0, 6),
        v in proptest::collection::vec(-3.0f64..3.0, 6),
        w in proptest::collection::vec(-3.0f64..3.0, 6),
        a in -2.0f64..2.0,
    ) {
        let (u, v, w) = (pt(&u), pt(&v), pt(&w));
        let uv = eval_symplectic(&u, &v).unwrap();
        prop_assert_eq!(uv, -eval_symplectic(&v, &u).unwrap());
        prop_assert_eq!(eval_symplectic(&u, &u).unwrap(), 0.0);
        let lhs = eval_symplectic(&u.axpy(a, &w), &v).unwrap();
        let rhs = uv + a * eval_symplectic(&w, &v).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    /// d(alpha) = omega: the exterior derivative via the Stokes identity on a
    /// parallelogram, which is exact for a linear form.
    #[test]
    fn alpha_differential_is_omega(
        p in proptest::collection::vec(-3.0f64..3.0, 6),
        u in proptest::collection::vec(-1.0f64..1.0, 6),
        v in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (p, u, v) = (pt(&p), pt(&u), pt(&v));
        let line = |a: &SplitPoint, d: &SplitPoint| eval_alpha(&a.axpy(0.5, d), d).unwrap();
        let pu = p.axpy(1.0, &u);
        let pv = p.axpy(1.0, &v);
        let circ = line(&p, &u) + line(&pu, &v) - line(&pv, &u) - line(&p, &v);
        let om = eval_symplectic(&u, &v).unwrap();
        prop_assert!((circ - om).abs() <= 1e-12 * (1.0 + p.norm()));
    }

    #[test]
    fn flat_layout_round_trips(f in proptest::collection::vec(-5.0f64..5.0, 2..6usize).prop_map(|mut v| { if v.len() % 2 == 1 { v.pop(); } v })) {
        prop_assume!(f.len() >= 2);
        let p = pt(&f);
        prop_assert_eq!(p.to_flat(), f);
        prop_assert_eq!(SplitPoint::from_xy(&p.x(), &p.y()), p);
    }

    #[test]
    fn gnomonic_round_trip(g in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let pole = vec![0.0, 0.6, 0.8];
        let frame = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.8, -0.6]];
        let q = gnomonic_inv(&g, &pole, &frame);
        prop_assert!((norm(&q) - 1.0).abs() < 1e-15);
        let back = gnomonic(&q, &pole, &frame).unwrap();
        for (a, b) in back.iter().zip(&g) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn double_double_keeps_small_terms(a in 1.0f64..2.0, b in 1e-20f64..1e-17) {
        let dd = DoubleDouble::sum([a, b]);
        prop_assert_eq!(dd.to_f64(), a);
        prop_assert_eq!(dd.sub(DoubleDouble::from_f64(a)).to_f64(), b);
    }
}
