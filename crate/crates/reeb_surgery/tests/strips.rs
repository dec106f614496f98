use proptest::prelude::*;
use reeb_surgery::handle::HandleParams;
use reeb_surgery::strips::*;
use std::f64::consts::SQRT_2;

fn prm(eps: f64) -> HandleParams {
    HandleParams::default().with_epsilon(eps)
}

/// Closed-form arm area: int_0^X sqrt(2x^2+1) - int_{1/sqrt2}^X sqrt(2x^2-1).
fn arm_area_oracle(x: f64) -> f64 {
    let up = 0.5 * x * (2.0 * x * x + 1.0).sqrt() + (SQRT_2 * x).asinh() / (2.0 * SQRT_2);
    let lo = 0.5 * x * (2.0 * x * x - 1.0).sqrt() - (SQRT_2 * x).acosh() / (2.0 * SQRT_2);
    up - lo
}

/// Antiderivative of sqrt(c + 2x^2) - sqrt2 x, written without cancellation.
fn collar_antiderivative(c: f64, x: f64) -> f64 {
    let r = (c + 2.0 * x * x).sqrt();
    0.5 * x * c / (r + SQRT_2 * x) + c / (2.0 * SQRT_2) * (SQRT_2 * x / c.sqrt()).asinh()
}

#[test]
fn corner_markers_per_variant() {
    let p = HandleParams::default();
    let c = build_strip(&p, StripVariant::TwoCorner);
    let a = build_strip(&p, StripVariant::OneCorner);
    assert_eq!(c.corners.len(), 2);
    assert_eq!(a.corners.len(), 1);
    for s in [&c, &a] {
        for k in &s.corners {
            assert_eq!(k.point.to_flat().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
            assert_eq!(k.between, (SegmentKind::L, SegmentKind::C));
        }
    }
}

#[test]
fn samples_lie_in_region_and_planes() {
    let s = build_strip(&HandleParams::default(), StripVariant::TwoCorner);
    for arm in &s.arms {
        for p in arm.points.iter().flatten() {
            assert!((2.0 * p.x1 * p.x1 - p.y1 * p.y1).abs() <= 1.0 + 1e-12);
            assert!(p.x2.iter().chain(&p.y2).all(|v| *v == 0.0));
            assert!(p.x1 * arm.sign >= 0.0 && p.y1 * arm.sign >= 0.0);
        }
        let kinds: Vec<SegmentKind> = arm.boundary.iter().map(|b| b.kind).collect();
        assert_eq!(kinds.first(), Some(&SegmentKind::C));
        assert_eq!(kinds.last(), Some(&SegmentKind::L));
        for seg in &arm.boundary {
            for p in &seg.samples {
                match seg.kind {
                    SegmentKind::C => assert!(p.y1.abs() <= 1e-10),
                    SegmentKind::L => assert!(p.x1.abs() <= 1e-10),
                    SegmentKind::HyperbolaPlus => assert!((2.0 * p.x1 * p.x1 - p.y1 * p.y1 - 1.0).abs() <= 1e-9),
                    SegmentKind::HyperbolaMinus => assert!((2.0 * p.x1 * p.x1 - p.y1 * p.y1 + 1.0).abs() <= 1e-9),
                    SegmentKind::Truncation => assert!((p.x1.abs() - s.x_max).abs() <= 1e-12),
                }
            }
        }
        // consecutive segments share endpoints
        for w in arm.boundary.windows(2) {
            if let (Some(a), Some(b)) = (w[0].samples.last(), w[1].samples.first()) {
                assert!((a.x1 - b.x1).abs() + (a.y1 - b.y1).abs() < 1e-12, "{a:?} {b:?}");
            }
        }
    }
}

#[test]
fn holomorphicity_and_controls() {
    let p = HandleParams::default();
    let s = build_strip(&p, StripVariant::TwoCorner);
    assert!(holomorphicity_residual(&s).residual <= 1e-10);
    let shifted = s.translated_x2(0.5 * p.flat_radius());
    assert!(holomorphicity_residual(&shifted).holomorphic);
    let tilted = holomorphicity_residual(&s.tilted(0.1));
    assert!((tilted.residual - 0.1f64.sin()).abs() < 1e-9, "{}", tilted.residual);
    assert!(!tilted.holomorphic);
}

#[test]
fn area_matches_closed_form() {
    for eps in [0.35, 0.5, 0.7] {
        for v in [StripVariant::OneCorner, StripVariant::TwoCorner] {
            let s = build_strip(&prm(eps), v);
            let e = strip_energy(&s).unwrap();
            let exact = s.arms.len() as f64 * arm_area_oracle(s.x_max);
            assert!((e.area - exact).abs() <= 1e-10 * exact, "{} vs {exact}", e.area);
            assert!(e.stokes_defect <= 1e-8);
            assert!(e.corners.abs() <= 1e-14);
        }
    }
}

#[test]
fn area_scaling_slope() {
    let eps = [0.35, 0.45, 0.55];
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .map(|&e| ((e as f64).ln(), strip_energy(&build_strip(&prm(e), StripVariant::TwoCorner)).unwrap().area_unscaled.ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let target = 2.0 * HandleParams::default().p;
    assert!((slope - target).abs() <= 0.05 * target, "{slope}");
}

#[test]
fn collar_matches_closed_form() {
    let p = HandleParams::default();
    let (a, b) = (p.eps_pow(p.s + 1.0), p.eps_pow(p.s));
    let c = p.eps_pow(2.0 * p.p);
    let exact = collar_antiderivative(c, b) - collar_antiderivative(c, a);
    let got = collar_area(&p, a, b).unwrap();
    assert!((got - exact).abs() <= 1e-6 * exact, "{got} vs {exact}");
}

#[test]
fn monotonicity_defaults_pass() {
    let p = HandleParams::default();
    let r = monotonicity_probe(&p).unwrap();
    assert!(r.pass);
    assert!(r.ratio <= p.eps_pow(2.0 * (p.p - p.q)) * r.empirical_constant * (1.0 + 1e-12));
    assert!(r.empirical_constant > 0.0 && r.empirical_constant < 10.0);
}

#[test]
fn monotonicity_negative_control_fails() {
    let p = HandleParams::default();
    let r = monotonicity_probe_raw(&p, p.p).unwrap();
    assert!(!r.pass);
    assert!(r.ratio > 0.5 && r.ratio < 10.0, "{}", r.ratio);
    assert!(monotonicity_probe(&HandleParams { q: p.p, ..p }).is_err());
}

#[test]
fn monotonicity_ratio_shrinks_with_eps() {
    let r: Vec<f64> = [0.55, 0.45, 0.35].iter().map(|e| monotonicity_probe(&prm(*e)).unwrap().ratio).collect();
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn kernel_defaults_and_controls() {
    let p = HandleParams::default();
    let k = linearized_kernel_dim(&p, DEFAULT_T0, DEFAULT_DELTA, BoundaryPair::RealImaginary).unwrap();
    assert_eq!(k.dim, 0);
    assert!(!k.borderline);
    let b = linearized_kernel_dim(&p, DEFAULT_T0, 0.0, BoundaryPair::RealImaginary).unwrap();
    assert!(b.borderline);
    let m = linearized_kernel_dim(&p, DEFAULT_T0, DEFAULT_DELTA, BoundaryPair::Matching).unwrap();
    assert_eq!(m.per_component, 1);
    assert_eq!(m.dim, p.n);
    assert!(linearized_kernel_dim(&p, -1.0, 0.5, BoundaryPair::Matching).is_err());
}

#[test]
fn strip_json_round_trip() {
    let s = build_strip_with(&HandleParams::default(), StripVariant::OneCorner, 5, 4);
    let back: StripRegion = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(s, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stokes_holds_across_eps(eps in 0.3f64..0.8, two in any::<bool>()) {
        let v = if two { StripVariant::TwoCorner } else { StripVariant::OneCorner };
        let e = strip_energy(&build_strip_with(&prm(eps), v, 5, 5)).unwrap();
        prop_assert!(e.area > 0.0);
        prop_assert!(e.stokes_defect <= 1e-8);
    }

    #[test]
    fn translation_keeps_holomorphicity(d in -2.0f64..2.0) {
        let s = build_strip_with(&HandleParams::default(), StripVariant::TwoCorner, 9, 7).translated_x2(d);
        prop_assert!(holomorphicity_residual(&s).residual <= 1e-10);
    }
}
