use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reeb_surgery::asymptotics::*;
use reeb_surgery::Error;
use std::f64::consts::{PI, TAU};

/// Index of exp(J0 theta t) in one complex dimension, counted from the
/// rotation number: each full turn adds 2, the partial turn adds 1.
fn rotation_oracle(theta: f64) -> i64 {
    let k = (theta.abs() / TAU).floor() as i64;
    theta.signum() as i64 * (2 * k + 1)
}

fn diag_rotation(thetas: &[f64], samples: usize) -> Vec<DMatrix<f64>> {
    let m = thetas.len();
    (0..=samples)
        .map(|i| {
            let t = i as f64 / samples as f64;
            let mut r = DMatrix::zeros(2 * m, 2 * m);
            for (k, th) in thetas.iter().enumerate() {
                let a = th * t;
                r[(k, k)] = a.cos();
                r[(k + m, k + m)] = a.cos();
                r[(k, k + m)] = -a.sin();
                r[(k + m, k)] = a.sin();
            }
            r
        })
        .collect()
}

fn smooth_loop(m: usize) -> AsymptoticOperatorSpec {
    AsymptoticOperatorSpec::from_fn(1, m, |t| {
        let a = 0.4 * (TAU * t).cos();
        let b = 0.25 * (TAU * t).sin();
        DMatrix::from_row_slice(2, 2, &[0.3 + a, b, b, -0.2 + a])
    })
    .unwrap()
}

#[test]
fn free_spectrum_is_two_pi_k() {
    let s = spectrum(&AsymptoticOperatorSpec::constant(1, 65, 0.0), 4).unwrap();
    for (k, l) in s.levels.iter().enumerate() {
        assert!((l.eigenvalue + TAU * (k + 1) as f64).abs() < 1e-8, "{}", l.eigenvalue);
    }
    let all = operator_eigenvalues(&AsymptoticOperatorSpec::constant(1, 65, 0.0)).unwrap();
    for k in 1..=10 {
        let lam = TAU * k as f64;
        assert!(all.iter().any(|v| (v - lam).abs() < 1e-8));
        assert!(all.iter().any(|v| (v + lam).abs() < 1e-8));
    }
}

#[test]
fn constant_shift_is_exact() {
    let base = spectrum(&smooth_loop(65), 3).unwrap();
    for a in [0.5, -1.25, 2.0] {
        let shifted = AsymptoticOperatorSpec::from_fn(1, 65, |t| {
            smooth_loop(65).at(t) + DMatrix::identity(2, 2) * a
        })
        .unwrap();
        let all0 = operator_eigenvalues(&smooth_loop(65)).unwrap();
        let all1 = operator_eigenvalues(&shifted).unwrap();
        for (x, y) in all0.iter().zip(&all1) {
            assert!((y - (x - a)).abs() < 1e-10, "{x} {y}");
        }
    }
    assert!(base.refinement_error <= 1e-10, "{}", base.refinement_error);
}

#[test]
fn collocation_preconditions() {
    assert!(matches!(spectrum(&AsymptoticOperatorSpec::constant(1, 15, 0.0), 2), Err(Error::Precondition(_))));
    assert!(matches!(spectrum(&AsymptoticOperatorSpec::constant(1, 64, 0.0), 2), Err(Error::Precondition(_))));
    let mut bad = AsymptoticOperatorSpec::constant(1, 33, 0.0);
    bad.samples[3][(0, 1)] = 1e-6;
    assert!(bad.validate().is_err());
}

#[test]
fn cz_rotation_examples() {
    for theta in [0.3, 1.0, 3.0, 6.0] {
        let g = cz_grading(&rotation_path(1, theta, 200), 4).unwrap();
        assert_eq!(g.cz, 1);
        assert_eq!(g.grading, 2);
        let g2 = cz_grading(&rotation_path(1, theta + TAU, 400), 4).unwrap();
        assert_eq!(g2.cz, 3);
        let rev = cz_grading(&rotation_path(1, -theta, 200), 4).unwrap();
        assert_eq!(rev.cz, -1);
    }
}

#[test]
fn cz_degenerate_endpoint() {
    assert!(matches!(cz_grading(&rotation_path(1, TAU, 200), 3), Err(Error::Degenerate { .. })));
}

#[test]
fn cz_hyperbolic_path_is_zero() {
    let path: Vec<DMatrix<f64>> = (0..=50)
        .map(|i| {
            let a = i as f64 / 50.0;
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![a.exp(), (-a).exp()]))
        })
        .collect();
    assert_eq!(cz_grading(&path, 3).unwrap().cz, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn cz_matches_rotation_oracle(a in -15.0f64..15.0, b in -15.0f64..15.0) {
        let near = |x: f64| (x / TAU - (x / TAU).round()).abs() < 0.02;
        prop_assume!(!near(a) && !near(b));
        let g = cz_grading(&diag_rotation(&[a, b], 600), 3).unwrap();
        prop_assert_eq!(g.cz, rotation_oracle(a) + rotation_oracle(b));
    }
}

fn free_spec() -> SpectrumResult {
    spectrum(&AsymptoticOperatorSpec::constant(1, 65, 0.0), 4).unwrap()
}

fn s_grid(n: usize, s1: f64) -> Vec<f64> {
    (0..n).map(|i| s1 * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn planted_leading_one() {
    let spec = free_spec();
    let tail = synth_tail(&spec, &[(1, 1.0), (2, 0.3)], &s_grid(24, 1.0), 64, 0.0, 0);
    let fit = fit_tail(&tail, &spec).unwrap();
    assert_eq!(fit.leading_index, 1);
    assert!((fit.coefficients[0][0] - 1.0).abs() < 1e-6);
    assert!((fit.coefficients[1][0] - 0.3).abs() < 1e-6);
    assert!(fit.delta > 0.0);
}

#[test]
fn planted_leading_two() {
    let spec = free_spec();
    let tail = synth_tail(&spec, &[(1, 0.0), (2, 1.0)], &s_grid(24, 1.0), 64, 0.0, 0);
    assert_eq!(fit_tail(&tail, &spec).unwrap().leading_index, 2);
}

#[test]
fn noise_is_unclassifiable() {
    let spec = free_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = s_grid(24, 1.0);
    let t = circle_grid(64);
    let values = s
        .iter()
        .map(|si| t.iter().map(|_| vec![(-si).exp() * rng.gen_range(-1.0..1.0), (-si).exp() * rng.gen_range(-1.0..1.0)]).collect())
        .collect();
    let tail = TailSample { s_grid: s, t_grid: t, values };
    assert!(matches!(fit_tail(&tail, &spec), Err(Error::Unclassifiable { .. })));
}

#[test]
fn fit_round_trip_on_tail_end() {
    let spec = free_spec();
    let s = s_grid(32, 1.0);
    let tail = synth_tail(&spec, &[(2, 0.7), (3, -0.4), (4, 0.2)], &s, 64, 0.0, 0);
    let fit = fit_tail(&tail, &spec).unwrap();
    let back = synthesize_fit(&spec, &fit, &s);
    for i in 3 * s.len() / 4..s.len() {
        let scale = tail.sup_norms()[i];
        for (a, b) in tail.values[i].iter().flatten().zip(back.values[i].iter().flatten()) {
            assert!((a - b).abs() <= 1e-6 * scale);
        }
    }
}

#[test]
fn tail_json_round_trip() {
    let spec = free_spec();
    let tail = synth_tail(&spec, &[(1, 1.0)], &s_grid(4, 0.5), 8, 0.0, 0);
    let text = serde_json::to_string(&tail).unwrap();
    let back: TailSample = serde_json::from_str(&text).unwrap();
    assert_eq!(tail, back);
}

#[test]
fn arcs_match_planted_index() {
    let spec = free_spec();
    for k in 1..=3 {
        let tail = synth_tail(&spec, &[(k, 1.0)], &s_grid(40, 1.0), 96, 0.0, 0);
        let sup = tail.sup_norms();
        let r = sup[20];
        assert_eq!(count_arcs(&tail, r).unwrap(), k);
        assert!(matches!(count_arcs(&tail, 10.0 * sup[0]), Err(Error::Inconclusive(_))));
    }
}

#[test]
fn crossover_radius_separates_strata() {
    let spec = free_spec();
    // c3 dominates near the start of the tail, c2 deeper in
    let tail = synth_tail(&spec, &[(2, 1.0), (3, 40.0)], &s_grid(60, 1.5), 128, 0.0, 0);
    let sup = tail.sup_norms();
    assert_eq!(count_arcs(&tail, sup[1]).unwrap(), 3);
    assert_eq!(count_arcs(&tail, sup[50]).unwrap(), 2);
}

#[test]
fn select_radii_single_stratum_midpoint() {
    let spec = free_spec();
    let tail = synth_tail(&spec, &[(1, 1.0)], &s_grid(24, 1.0), 64, 0.0, 0);
    let fit = fit_tail(&tail, &spec).unwrap();
    let r = select_radii(&[fit.clone()], &spec, &[0.5]).unwrap();
    assert_eq!(r.len(), 1);
    let sup0 = synthesize_fit(&spec, &fit, &[0.0]).sup_norms()[0];
    assert!((r[0] - 0.5 * sup0 / 1.4).abs() < 1e-5 * sup0);
    assert!(matches!(select_radii(&[fit], &spec, &[0.0]), Err(Error::NoValidRadii(_))));
}

#[test]
fn select_radii_two_strata() {
    let spec = free_spec();
    let s = s_grid(24, 1.0);
    let fits: Vec<TailFit> = [vec![(1, 1.0), (2, 2.0)], vec![(2, 0.8), (3, 3.0)]]
        .iter()
        .map(|p| fit_tail(&synth_tail(&spec, p, &s, 64, 0.0, 0), &spec).unwrap())
        .collect();
    let r = select_radii(&fits, &spec, &[0.5, 0.5]).unwrap();
    assert_eq!(r.len(), 2);
    assert!(r[0] > r[1]);
}

/// Random families with leading indices 1..=3 and relative noise up to 1e-8.
#[test]
fn random_families_recover_index() {
    let spec = free_spec();
    let s = s_grid(24, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for fam in 0..100 {
        let mut fits = Vec::new();
        let mut planted = Vec::new();
        for k in 1..=3usize {
            let mut p = vec![(k, rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })];
            if k < 4 {
                p.push((k + 1, rng.gen_range(-1.0..1.0)));
            }
            let tail = synth_tail(&spec, &p, &s, 64, 1e-8, fam * 10 + k as u64);
            let fit = fit_tail(&tail, &spec).unwrap();
            assert_eq!(fit.leading_index, k, "family {fam}");
            fits.push(fit);
            planted.push(k);
        }
        let radii = select_radii(&fits, &spec, &[0.5, 0.5, 0.5]).unwrap();
        let r1 = radii[radii.len() - 1];
        for (fit, k) in fits.iter().zip(&planted) {
            let tail = synthesize_fit(&spec, fit, &s_grid(400, 6.0));
            assert_eq!(count_arcs(&tail, r1).unwrap(), *k, "family {fam}");
        }
    }
}

#[test]
fn spectrum_of_smooth_loop_refines() {
    let a = spectrum(&smooth_loop(33), 2).unwrap();
    let b = spectrum(&smooth_loop(67), 2).unwrap();
    assert!((a.levels[0].eigenvalue - b.levels[0].eigenvalue).abs() <= 1e-10);
    assert!(a.levels[0].eigenvalue < 0.0 && a.levels[0].eigenvalue > a.levels[1].eigenvalue);
    let _ = PI;
}
