//! Model holomorphic strips in the (x1, y1)-plane between the hyperbola
//! branches `2x^2 - y^2 = +-1` (rescaled), their energy accounting and the
//! uniqueness probes.
//!
//! Everything is computed in rescaled units; unscaled areas and actions are
//! obtained by multiplying with `eps^{2p}`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SplitPoint;
use crate::handle::HandleParams;

/// Tangent planes closer than this to J-invariance count as holomorphic.
pub const HOLOMORPHIC_TOL: f64 = 1e-10;
const QUAD_TOL: f64 = 1e-13;
/// Default half-length of the truncated strip for the kernel check.
pub const DEFAULT_T0: f64 = 1.0;
/// Default exponential weight; the smallest asymptotic eigenvalue is about pi/2.
pub const DEFAULT_DELTA: f64 = 0.5;
const X0: f64 = FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StripVariant {
    /// Two quadrants joined at the origin; two corners.
    TwoCorner,
    /// The first quadrant only; one corner.
    OneCorner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Co-core plane {y = 0}.
    C,
    /// Core plane {x = 0}.
    L,
    /// Branch 2x^2 - y^2 = 1.
    HyperbolaPlus,
    /// Branch 2x^2 - y^2 = -1.
    HyperbolaMinus,
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub kind: SegmentKind,
    pub samples: Vec<SplitPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    /// +1 for the first quadrant, -1 for the third.
    pub sign: f64,
    /// points[i][j] at x = x_max i/(nx-1), theta = j/(ntheta-1).
    pub points: Vec<Vec<SplitPoint>>,
    /// Counterclockwise: C, H+, truncation, H-, L; the corner sits between L and C.
    pub boundary: Vec<BoundarySegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub arm: usize,
    pub point: SplitPoint,
    /// Boundary kinds before and after the corner in counterclockwise order.
    pub between: (SegmentKind, SegmentKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripRegion {
    pub variant: StripVariant,
    pub params: HandleParams,
    /// Rescaled |x1| of the truncation edge.
    pub x_max: f64,
    pub arms: Vec<Arm>,
    pub corners: Vec<Corner>,
}

fn y_plus(x: f64) -> f64 {
    (2.0 * x * x - 1.0).max(0.0).sqrt()
}

fn y_minus(x: f64) -> f64 {
    (2.0 * x * x + 1.0).sqrt()
}

/// y_- - y_+, free of cancellation for large x.
fn width(x: f64) -> f64 {
    if x <= X0 {
        y_minus(x)
    } else {
        2.0 / (y_minus(x) + y_plus(x))
    }
}

/// Rescaled truncation abscissa: the upper branch leaves the window of radius eps^{q-p}.
pub fn truncation_x(params: &HandleParams) -> f64 {
    let r = params.flat_radius();
    ((r * r - 1.0) / 2.0).max(0.0).sqrt()
}

/// Hyperbolic parameters at which H+ and H- reach the truncation edge.
fn branch_params(x_max: f64) -> (f64, f64) {
    let p = if x_max > X0 { (SQRT_2 * x_max).acosh() } else { 0.0 };
    (p, (SQRT_2 * x_max).asinh())
}

fn plane_point(n: usize, x: f64, y: f64) -> SplitPoint {
    SplitPoint { x1: x, y1: y, x2: vec![0.0; n - 1], y2: vec![0.0; n - 1] }
}

fn build_arm(n: usize, sign: f64, x_max: f64, nx: usize, nt: usize, nb: usize) -> Arm {
    let pt = |x: f64, y: f64| plane_point(n, sign * x, sign * y);
    let points = (0..nx)
        .map(|i| {
            let x = x_max * i as f64 / (nx - 1) as f64;
            (0..nt)
                .map(|j| {
                    let th = j as f64 / (nt - 1) as f64;
                    pt(x, y_plus(x) + th * width(x))
                })
                .collect()
        })
        .collect();
    let lin = |a: f64, b: f64, k: usize| a + (b - a) * k as f64 / (nb - 1) as f64;
    let xc = X0.min(x_max);
    let c = (0..nb).map(|k| pt(lin(0.0, xc, k), 0.0)).collect();
    let (phi_p, phi_m) = branch_params(x_max);
    let hp = if x_max > X0 { (0..nb).map(|k| { let f = lin(0.0, phi_p, k); pt(f.cosh() * X0, f.sinh()) }).collect() } else { Vec::new() };
    let tr = (0..nb).map(|k| pt(x_max, y_plus(x_max) + lin(0.0, 1.0, k) * width(x_max))).collect();
    let hm = (0..nb).map(|k| { let f = lin(phi_m, 0.0, k); pt(f.sinh() * X0, f.cosh()) }).collect();
    let l = (0..nb).map(|k| pt(0.0, lin(1.0, 0.0, k))).collect();
    let seg = |kind, samples| BoundarySegment { kind, samples };
    Arm {
        sign,
        points,
        boundary: vec![
            seg(SegmentKind::C, c),
            seg(SegmentKind::HyperbolaPlus, hp),
            seg(SegmentKind::Truncation, tr),
            seg(SegmentKind::HyperbolaMinus, hm),
            seg(SegmentKind::L, l),
        ],
    }
}

/// Sampled strip with a 41 x 17 grid per arm.
pub fn build_strip(params: &HandleParams, variant: StripVariant) -> StripRegion {
    build_strip_with(params, variant, 41, 17)
}

pub fn build_strip_with(params: &HandleParams, variant: StripVariant, nx: usize, ntheta: usize) -> StripRegion {
    let (nx, nt) = (nx.max(3), ntheta.max(3));
    let x_max = truncation_x(params);
    let signs: &[f64] = match variant {
        StripVariant::TwoCorner => &[1.0, -1.0],
        StripVariant::OneCorner => &[1.0],
    };
    let n = params.n.max(2);
    let arms: Vec<Arm> = signs.iter().map(|&s| build_arm(n, s, x_max, nx, nt, 33)).collect();
    let corners = (0..arms.len())
        .map(|a| Corner { arm: a, point: plane_point(n, 0.0, 0.0), between: (SegmentKind::L, SegmentKind::C) })
        .collect();
    StripRegion { variant, params: *params, x_max, arms, corners }
}

impl StripRegion {
    fn map_points(&self, f: impl Fn(&SplitPoint) -> SplitPoint) -> Self {
        let mut out = self.clone();
        for arm in &mut out.arms {
            for row in &mut arm.points {
                for p in row.iter_mut() {
                    *p = f(p);
                }
            }
            for seg in &mut arm.boundary {
                for p in &mut seg.samples {
                    *p = f(p);
                }
            }
        }
        for c in &mut out.corners {
            c.point = f(&c.point);
        }
        out
    }

    /// Shift by `d` (rescaled) in the first x2 coordinate.
    pub fn translated_x2(&self, d: f64) -> Self {
        self.map_points(|p| {
            let mut q = p.clone();
            q.x2[0] += d;
            q
        })
    }

    /// Rotate the x1 axis towards x2 by `angle`.
    pub fn tilted(&self, angle: f64) -> Self {
        self.map_points(|p| {
            let mut q = p.clone();
            q.x1 = p.x1 * angle.cos();
            q.x2[0] = p.x2[0] + p.x1 * angle.sin();
            q
        })
    }

    /// Largest |z| over all samples, rescaled.
    pub fn max_radius(&self) -> f64 {
        self.arms
            .iter()
            .flat_map(|a| a.points.iter().flatten())
            .map(|p| p.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoloReport {
    pub residual: f64,
    pub holomorphic: bool,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = dot(&v, &v).sqrt();
    (n > 0.0).then(|| v.into_iter().map(|x| x / n).collect())
}

/// J dx_k = dy_k on the flat layout (x.., y..).
fn apply_j(v: &[f64]) -> Vec<f64> {
    let n = v.len() / 2;
    v[n..].iter().map(|y| -y).chain(v[..n].iter().copied()).collect()
}

/// Max over interior grid cells of the component of J e1 normal to the tangent plane.
pub fn holomorphicity_residual(strip: &StripRegion) -> HoloReport {
    let mut worst = 0.0f64;
    for arm in &strip.arms {
        let g: Vec<Vec<Vec<f64>>> = arm.points.iter().map(|r| r.iter().map(SplitPoint::to_flat).collect()).collect();
        for i in 1..g.len() - 1 {
            for j in 1..g[i].len() - 1 {
                let a = sub(&g[i + 1][j], &g[i - 1][j]);
                let b = sub(&g[i][j + 1], &g[i][j - 1]);
                let (Some(e1), Some(b)) = (unit(a), unit(b)) else { continue };
                let pb = dot(&b, &e1);
                let Some(e2) = unit(b.iter().zip(&e1).map(|(x, y)| x - pb * y).collect()) else { continue };
                let je = apply_j(&e1);
                let (c1, c2) = (dot(&je, &e1), dot(&je, &e2));
                let r: Vec<f64> = je.iter().zip(&e1).zip(&e2).map(|((j, u), v)| j - c1 * u - c2 * v).collect();
                worst = worst.max(dot(&r, &r).sqrt());
            }
        }
    }
    HoloReport { residual: worst, holomorphic: worst <= HOLOMORPHIC_TOL }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let out = quadrature::integrate(f, a, b, QUAD_TOL);
    if !out.integral.is_finite() || out.error_estimate > 1e-10 * out.integral.abs().max(1e-300) + 1e-15 {
        return Err(Error::Refinement(format!(
            "quadrature on [{a}, {b}] did not converge: estimate {:e}",
            out.error_estimate
        )));
    }
    Ok(out.integral)
}

/// beta = y dx + 2x dy, with d beta = dx ^ dy.
fn beta(x: f64, y: f64, dx: f64, dy: f64) -> f64 {
    y * dx + 2.0 * x * dy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripEnergy {
    /// Symplectic area, rescaled.
    pub area: f64,
    /// beta along the upper branch minus beta along the lower one, both outward.
    pub action_gap: f64,
    pub truncation: f64,
    pub corners: f64,
    /// |area - action_gap - truncation - corners| / area.
    pub stokes_defect: f64,
    pub area_unscaled: f64,
    pub action_gap_unscaled: f64,
}

/// Area of one arm as the integral of the pulled-back area form over (x, theta).
fn arm_area(x_max: f64) -> Result<f64> {
    // the (x, theta) Jacobian is y_- - y_+; its x-derivative is singular at
    // 1/sqrt 2, so the range is split there and x = x0 + u^2 is used past it
    let failed = std::cell::RefCell::new(None);
    let inner = |x: f64| {
        integrate(|_th| width(x), 0.0, 1.0).unwrap_or_else(|e| {
            failed.borrow_mut().get_or_insert(e);
            0.0
        })
    };
    let left = integrate(inner, 0.0, X0.min(x_max))?;
    let right = if x_max > X0 { integrate(|u| 2.0 * u * inner(X0 + u * u), 0.0, (x_max - X0).sqrt())? } else { 0.0 };
    match failed.into_inner() {
        Some(e) => Err(e),
        None => Ok(left + right),
    }
}

struct ArmLines {
    upper: f64,
    lower: f64,
    truncation: f64,
    corners: f64,
}

fn arm_lines(x_max: f64) -> Result<ArmLines> {
    let (phi_p, phi_m) = branch_params(x_max);
    // H+: x = cosh(phi)/sqrt 2, y = sinh(phi)
    let upper = integrate(|f| beta(f.cosh() * X0, f.sinh(), f.sinh() * X0, f.cosh()), 0.0, phi_p)?;
    // H-: x = sinh(phi)/sqrt 2, y = cosh(phi)
    let lower = integrate(|f| beta(f.sinh() * X0, f.cosh(), f.cosh() * X0, f.sinh()), 0.0, phi_m)?;
    let truncation = 2.0 * x_max * width(x_max);
    // C and L segments, evaluated on shrinking pieces ending at the origin
    let mut corners = 0.0;
    for k in 0..4 {
        let d = 10f64.powi(-3 * k - 1);
        corners = integrate(|x| beta(x, 0.0, 1.0, 0.0), d, X0.min(x_max))? + integrate(|y| beta(0.0, y, 0.0, -1.0), d, 1.0)?;
        corners += integrate(|x| beta(x, 0.0, 1.0, 0.0), 0.0, d)? + integrate(|y| beta(0.0, y, 0.0, -1.0), 0.0, d)?;
    }
    Ok(ArmLines { upper, lower, truncation, corners })
}

pub fn strip_energy(strip: &StripRegion) -> Result<StripEnergy> {
    let arms = strip.arms.len() as f64;
    let area = arms * arm_area(strip.x_max)?;
    let l = arm_lines(strip.x_max)?;
    let action_gap = arms * (l.upper - l.lower);
    let truncation = arms * l.truncation;
    let corners = arms * l.corners;
    let stokes_defect = (area - action_gap - truncation - corners).abs() / area.abs().max(f64::MIN_POSITIVE);
    let unit = strip.params.action_unit();
    Ok(StripEnergy {
        area,
        action_gap,
        truncation,
        corners,
        stokes_defect,
        area_unscaled: area * unit,
        action_gap_unscaled: action_gap * unit,
    })
}

/// Unscaled area between the diagonal y = sqrt2 x and the lower branch over
/// x in [a, b] (unscaled units), from the strip's width integrand.
pub fn collar_area(params: &HandleParams, a: f64, b: f64) -> Result<f64> {
    let ep = params.eps_pow(params.p);
    let f = |x: f64| 1.0 / (y_minus(x) + SQRT_2 * x);
    // log spacing keeps the quadrature well scaled on wide ranges
    let g = |t: f64| {
        let x = t.exp();
        f(x) * x
    };
    let (ra, rb) = (a / ep, b / ep);
    let v = if ra > 0.0 { integrate(g, ra.ln(), rb.ln())? } else { integrate(f, 0.0, rb)? };
    Ok(v * ep * ep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub epsilon: f64,
    pub q_escape: f64,
    pub a_strip: f64,
    pub a_escape: f64,
    pub ratio: f64,
    /// ratio / eps^{2(p - q)}.
    pub empirical_constant: f64,
    pub pass: bool,
}

/// PASS requires the strip area below this fraction of the escape scale.
pub const MONOTONICITY_MARGIN: f64 = 0.5;

pub fn monotonicity_probe(params: &HandleParams) -> Result<MonotonicityReport> {
    params.validate()?;
    monotonicity_probe_raw(params, params.q)
}

/// Compares the two-corner strip of `params` with the escape scale eps^{2 q_escape}.
/// `q_escape` is not validated, so q_escape = p is allowed.
pub fn monotonicity_probe_raw(params: &HandleParams, q_escape: f64) -> Result<MonotonicityReport> {
    let e = strip_energy(&build_strip_with(params, StripVariant::TwoCorner, 3, 3))?;
    let a_escape = params.eps_pow(2.0 * q_escape);
    let ratio = e.area_unscaled / a_escape;
    Ok(MonotonicityReport {
        epsilon: params.epsilon,
        q_escape,
        a_strip: e.area_unscaled,
        a_escape,
        ratio,
        empirical_constant: ratio / params.eps_pow(2.0 * (params.p - q_escape)),
        pass: ratio < MONOTONICITY_MARGIN,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPair {
    /// R^n on one side, iR^n on the other.
    RealImaginary,
    /// R^n on both sides.
    Matching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub dim: usize,
    pub per_component: usize,
    pub n: usize,
    pub t0: f64,
    pub delta: f64,
    /// Smallest nonzero eigenvalue magnitude of the discrete asymptotic operator.
    pub lambda_min: f64,
    /// delta outside (0, lambda_min).
    pub borderline: bool,
    /// Transverse cells and tau steps of the coarse grid.
    pub grid: (usize, usize),
    pub smallest_singular_values: Vec<f64>,
}

/// Discrete asymptotic operator A = [[0, G], [G^T, 0]] on a staggered grid of [0, 1].
fn asymptotic_operator(cells: usize, bc: BoundaryPair) -> DMatrix<f64> {
    let n = cells;
    let (h, nb) = match bc {
        BoundaryPair::RealImaginary => (1.0 / (n as f64 + 0.5), n),
        BoundaryPair::Matching => (1.0 / n as f64, n - 1),
    };
    let mut g = DMatrix::zeros(n, nb);
    for j in 0..n {
        if j < nb {
            g[(j, j)] = 1.0 / h;
        }
        if j >= 1 && j - 1 < nb {
            g[(j, j - 1)] = -1.0 / h;
        }
    }
    let d = n + nb;
    let mut a = DMatrix::zeros(d, d);
    a.view_mut((0, n), (n, nb)).copy_from(&g);
    a.view_mut((n, 0), (nb, n)).copy_from(&g.transpose());
    a
}

fn kernel_once(cells: usize, steps: usize, t0: f64, delta: f64, bc: BoundaryPair) -> Result<(usize, f64, Vec<f64>)> {
    let a = asymptotic_operator(cells, bc);
    let d = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    let is_zero = |l: f64| l.abs() <= 1e-10 * scale;
    let lambda_min = eig.eigenvalues.iter().filter(|l| !is_zero(**l)).fold(f64::INFINITY, |m, l| m.min(l.abs()));
    // left end keeps modes decaying towards -inf, right end towards +inf;
    // the zero modes are left free for the cut-off translation solutions
    let mut end_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if is_zero(l) {
            continue;
        }
        let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if l <= delta {
            end_rows.push((0, v.clone()));
        }
        if l >= -delta {
            end_rows.push((steps, v));
        }
    }
    let dt = 2.0 * t0 / steps as f64;
    let eye = DMatrix::<f64>::identity(d, d);
    let lhs = &eye - &a * (0.5 * dt);
    let rhs = &eye + &a * (0.5 * dt);
    let cols = d * (steps + 1);
    let rows = d * steps + end_rows.len();
    let mut m = DMatrix::zeros(rows, cols);
    for k in 0..steps {
        m.view_mut((k * d, (k + 1) * d), (d, d)).copy_from(&lhs);
        m.view_mut((k * d, k * d), (d, d)).copy_from(&(-&rhs));
    }
    for (r, (lvl, v)) in end_rows.iter().enumerate() {
        for (c, x) in v.iter().enumerate() {
            m[(d * steps + r, lvl * d + c)] = *x;
        }
    }
    for mut c in m.column_iter_mut() {
        let nrm = c.norm();
        if nrm > 0.0 {
            c /= nrm;
        }
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| x.total_cmp(y));
    // rows < cols leaves structurally missing singular values
    let missing = cols.saturating_sub(rows);
    let smax = sv.last().copied().unwrap_or(1.0);
    let dim = missing + sv.iter().filter(|s| **s <= 1e-8 * smax).count();
    sv.truncate(4);
    Ok((dim, lambda_min, sv))
}

/// Kernel dimension of the discretized linear Cauchy-Riemann operator on
/// [-t0, t0] x [0, 1] with exponential weight `delta` at both ends, checked
/// against a 2x refined grid.
pub fn linearized_kernel_dim(params: &HandleParams, t0: f64, delta: f64, bc: BoundaryPair) -> Result<KernelReport> {
    if !(t0 > 0.0 && t0.is_finite()) || !delta.is_finite() || delta < 0.0 {
        return Err(Error::Precondition(format!("need t0 > 0 and delta >= 0, got t0 = {t0}, delta = {delta}")));
    }
    let (cells, steps) = (6, 20);
    let (dim, lambda_min, sv) = kernel_once(cells, steps, t0, delta, bc)?;
    let (fine, _, _) = kernel_once(2 * cells, 2 * steps, t0, delta, bc)?;
    if fine != dim {
        return Err(Error::Resolution(format!("kernel dimension {dim} changes to {fine} under refinement")));
    }
    let n = params.n;
    Ok(KernelReport {
        dim: dim * n,
        per_component: dim,
        n,
        t0,
        delta,
        lambda_min,
        borderline: !(delta > 0.0 && delta < lambda_min),
        grid: (cells, steps),
        smallest_singular_values: sv,
    })
}
