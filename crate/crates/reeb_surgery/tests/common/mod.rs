#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reeb_surgery::ambient::{AmbientChord, ChordAtlas, LAMBDA0};

/// Small random atlas: up to 4 chords over 1..=2 components, optionally with L0,
/// cap up to 5x the smallest action.
pub fn random_small_atlas(rng: &mut ChaCha8Rng) -> ChordAtlas {
    let k = rng.gen_range(1..=2);
    let mut comps: Vec<String> = (1..=k).map(|i| format!("L{i}")).collect();
    if rng.gen_bool(0.3) {
        comps.push(LAMBDA0.to_string());
    }
    let n = rng.gen_range(1..=4);
    let chords: Vec<AmbientChord> = (0..n)
        .map(|i| AmbientChord {
            id: ((b'a' + i as u8) as char).to_string(),
            start: comps[rng.gen_range(0..comps.len())].clone(),
            end: comps[rng.gen_range(0..comps.len())].clone(),
            action: rng.gen_range(1.0..2.0),
            linear: DMatrix::identity(2, 2) * 0.5,
            offset: DVector::zeros(2),
        })
        .collect();
    let amin = chords.iter().map(|c| c.action).fold(f64::INFINITY, f64::min);
    let cap = amin * rng.gen_range(1.0..5.0);
    ChordAtlas { components: comps, chords, action_cap: cap, dimension: 3 }
}

fn all_sequences(atlas: &ChordAtlas) -> Vec<Vec<usize>> {
    let amin = atlas.chords.iter().map(|c| c.action).fold(f64::INFINITY, f64::min);
    let max_len = (atlas.action_cap / amin).ceil() as usize;
    let m = atlas.chords.len();
    let mut out = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &layer {
            for c in 0..m {
                let mut v = w.clone();
                v.push(c);
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

fn action(atlas: &ChordAtlas, w: &[usize]) -> f64 {
    let mut a: Vec<f64> = w.iter().map(|&i| atlas.chords[i].action).collect();
    a.sort_by(f64::total_cmp);
    a.iter().sum()
}

fn ids(atlas: &ChordAtlas, w: &[usize]) -> Vec<String> {
    w.iter().map(|&i| atlas.chords[i].id.clone()).collect()
}

/// Every sequence up to the length bound, filtered by the definition of a composable word.
pub fn brute_words(atlas: &ChordAtlas, from: &str, to: &str) -> BTreeSet<Vec<String>> {
    all_sequences(atlas)
        .into_iter()
        .filter(|w| {
            let c = |i: usize| &atlas.chords[w[i]];
            c(0).start == from
                && c(w.len() - 1).end == to
                && (0..w.len() - 1).all(|i| c(i).end == c(i + 1).start && c(i).end != LAMBDA0)
                && action(atlas, w) < atlas.action_cap
        })
        .map(|w| ids(atlas, &w))
        .collect()
}

/// Rotation classes of cyclically composable sequences, each as its least rotation.
pub fn brute_cyclic(atlas: &ChordAtlas) -> BTreeSet<Vec<String>> {
    all_sequences(atlas)
        .into_iter()
        .filter(|w| {
            let n = w.len();
            let c = |i: usize| &atlas.chords[w[i % n]];
            (0..n).all(|i| c(i).end == c(i + 1).start && c(i).end != LAMBDA0) && action(atlas, w) < atlas.action_cap
        })
        .map(|w| {
            let s = ids(atlas, &w);
            (0..s.len()).map(|r| [&s[r..], &s[..r]].concat()).min().unwrap()
        })
        .collect()
}

use reeb_surgery::geometry::{dot, norm, JetPoint, JetTangent, SplitPoint};
use reeb_surgery::handle::{defining_value, surface_residual, HandleParams, SurfaceId};

pub fn random_dir(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = random_dir(rng, n);
    let l = norm(&v);
    v.iter().map(|a| a / l).collect()
}

/// Unit vector `v` with the span of `normals` projected out.
pub fn orthogonalize(mut v: Vec<f64>, normals: &[Vec<f64>]) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for nrm in normals {
        let mut u = nrm.clone();
        for b in &basis {
            let c = dot(&u, b);
            u.iter_mut().zip(b).for_each(|(a, e)| *a -= c * e);
        }
        let l = norm(&u);
        basis.push(u.iter().map(|a| a / l).collect());
    }
    for b in &basis {
        let c = dot(&v, b);
        v.iter_mut().zip(b).for_each(|(a, e)| *a -= c * e);
    }
    let l = norm(&v);
    v.iter().map(|a| a / l).collect()
}

/// Five-point derivative of `f` at 0.
pub fn fd5<F: Fn(f64) -> Vec<f64>>(f: F, h: f64) -> Vec<f64> {
    let (a, b, c, d) = (f(-2.0 * h), f(-h), f(h), f(2.0 * h));
    (0..a.len()).map(|i| (a[i] - 8.0 * b[i] + 8.0 * c[i] - d[i]) / (12.0 * h)).collect()
}

pub fn jet_flat(j: &JetPoint) -> Vec<f64> {
    let mut v = j.q.clone();
    v.extend_from_slice(&j.p);
    v.push(j.z);
    v
}

pub fn jet_tangent(d: &[f64], n: usize) -> JetTangent {
    JetTangent { vq: d[..n].to_vec(), vp: d[n..2 * n].to_vec(), vz: d[2 * n] }
}

/// Random point of W = V_- cap {x.y = 0} with |x| small against |y|.
pub fn sample_w(rng: &mut ChaCha8Rng, prm: &HandleParams) -> SplitPoint {
    let n = prm.n;
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let c = dot(&x, &y) / dot(&y, &y);
    x.iter_mut().zip(&y).for_each(|(a, b)| *a -= c * b);
    let mut pt = SplitPoint::from_xy(&x, &y);
    let xx = pt.x1 * pt.x1 + prm.w2() * dot(&pt.x2, &pt.x2);
    let yy = pt.y1 * pt.y1 + prm.w2() * dot(&pt.y2, &pt.y2);
    let lam = ((1.0 + 2.0 * xx) / yy).sqrt();
    pt.y1 *= lam;
    pt.y2.iter_mut().for_each(|v| *v *= lam);
    pt
}

/// Point of V_+ with weighted |Y| = r and weighted directions `dx`, `dy`.
pub fn plus_point(prm: &HandleParams, r: f64, dx: &[f64], dy: &[f64]) -> SplitPoint {
    let rx = ((1.0 + r * r) / 2.0).sqrt();
    let ws = prm.ws();
    SplitPoint::new(
        rx * dx[0],
        r * dy[0],
        dx[1..].iter().map(|v| rx * v / ws).collect(),
        dy[1..].iter().map(|v| r * v / ws).collect(),
    )
    .unwrap()
}

pub fn regression_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Random point of the given surface: every coordinate but x1 is drawn, x1 solves h = 0.
pub fn sample_surface(rng: &mut ChaCha8Rng, prm: &HandleParams, surface: SurfaceId, spread: f64) -> SplitPoint {
    loop {
        let n = prm.n;
        let b = spread / prm.ws();
        let mut pt = SplitPoint::new(
            0.0,
            rng.gen_range(-spread..spread),
            (0..n - 1).map(|_| rng.gen_range(-b..b)).collect(),
            (0..n - 1).map(|_| rng.gen_range(-b..b)).collect(),
        )
        .unwrap();
        // h is affine in x1^2, so two evaluations pin it down
        let h0 = defining_value(prm, surface, &pt);
        let x1sq = -h0 / 2.0;
        if x1sq <= 0.0 {
            continue;
        }
        pt.x1 = x1sq.sqrt() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if surface_residual(prm, surface, &pt) < 1e-13 {
            return pt;
        }
    }
}
