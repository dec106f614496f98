//! The model handle in rescaled coordinates x~ = eps^-p x, y~ = eps^-p y.
//!
//! In these units the hypersurfaces read
//! `2x1^2 - y1^2 + w eps^2s (2|x2|^2 - |y2|^2) = +-1`, where `w = 1` or the
//! cutoff for the flattened variant. "Weighted" coordinates below mean
//! `X = (x1, eps^s x2)`, `Y = (y1, eps^s y2)`, in which the surfaces become
//! `2|X|^2 - |Y|^2 = +-1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, JetPoint, SplitPoint, TangentVec};

/// Surface membership tolerance, relative to the size of the terms in `h`.
pub const SURFACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandleParams {
    pub epsilon: f64,
    pub p: f64,
    pub s: f64,
    pub q: f64,
    pub l: f64,
    pub n: usize,
}

impl Default for HandleParams {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            p: 22.0,
            s: 3.0,
            q: 20.0,
            l: 21.0,
            n: 3,
        }
    }
}

impl HandleParams {
    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let Self { epsilon, p, s, q, l, n } = *self;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParams(format!("epsilon = {epsilon} not in (0,1)")));
        }
        if n < 2 {
            return Err(Error::InvalidParams(format!("n = {n} < 2")));
        }
        if !(p > 0.0 && s > 0.0 && q > 0.0 && l > 0.0) {
            return Err(Error::InvalidParams("exponents must be positive".into()));
        }
        if !(p / 10.0 < s && s < p / 5.0) {
            return Err(Error::InvalidParams(format!("need p/10 < s < p/5, got s = {s}, p = {p}")));
        }
        if !(5.0 * s + 5.0 < l && l < p) {
            return Err(Error::InvalidParams(format!("need 5s+5 < l < p, got l = {l}")));
        }
        if !(p - s < q && q < p) {
            return Err(Error::InvalidParams(format!("need p-s < q < p, got q = {q}")));
        }
        Ok(())
    }

    pub fn eps_pow(&self, k: f64) -> f64 {
        self.epsilon.powf(k)
    }

    /// eps^{2s}, the block-2 weight.
    pub fn w2(&self) -> f64 {
        self.eps_pow(2.0 * self.s)
    }

    /// eps^s, the factor between unweighted and weighted block-2 coordinates.
    pub fn ws(&self) -> f64 {
        self.eps_pow(self.s)
    }

    /// Block-2 rate of the rescaled-speed Reeb flow, sqrt(2) eps^{2s}.
    pub fn k2(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.w2()
    }

    /// Unscaled size of one rescaled action unit, eps^{2p}.
    pub fn action_unit(&self) -> f64 {
        self.eps_pow(2.0 * self.p)
    }

    /// Outer edge of the attaching band: x1^2 + eps^2s x2^2 = eps^{2s+2}/2, rescaled.
    pub fn a_minus(&self) -> f64 {
        0.5 * self.eps_pow(2.0 * self.s + 2.0 - 2.0 * self.p)
    }

    /// Inner edge of the attaching band, a_minus / 4.
    pub fn a_inner(&self) -> f64 {
        0.25 * self.a_minus()
    }

    /// Weighted y-radius of the boundary of N_-eps.
    pub fn r_minus(&self) -> f64 {
        (2.0 * self.a_minus() + 1.0).sqrt()
    }

    /// eps^{q-p}: the flattening radius in rescaled units.
    pub fn flat_radius(&self) -> f64 {
        self.eps_pow(self.q - self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurfaceId {
    pub sign: Sign,
    pub flattened: bool,
}

impl SurfaceId {
    pub const PLUS: SurfaceId = SurfaceId { sign: Sign::Plus, flattened: false };
    pub const MINUS: SurfaceId = SurfaceId { sign: Sign::Minus, flattened: false };
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

fn smoothstep_d(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    30.0 * u * u * (u - 1.0) * (u - 1.0)
}

/// beta_eps(r) for r in unscaled units.
pub fn cutoff_beta(params: &HandleParams, r: f64) -> f64 {
    let e = params.eps_pow(params.q);
    smoothstep((r - e) / e)
}

/// Derivative of [`cutoff_beta`] in unscaled units.
pub fn cutoff_beta_d(params: &HandleParams, r: f64) -> f64 {
    let e = params.eps_pow(params.q);
    smoothstep_d((r - e) / e) / e
}

/// beta_eps(eps^p r) and its r-derivative, for a rescaled radius r.
fn beta_rescaled(params: &HandleParams, r: f64) -> (f64, f64) {
    let rho = params.flat_radius();
    let u = (r - rho) / rho;
    (smoothstep(u), smoothstep_d(u) / rho)
}

fn block2_sq(point: &SplitPoint) -> (f64, f64, f64) {
    let xx = dot(&point.x2, &point.x2);
    let yy = dot(&point.y2, &point.y2);
    (xx, yy, (xx + yy).sqrt())
}

fn cutoff_weight(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> (f64, f64) {
    if !surface.flattened {
        return (1.0, 0.0);
    }
    let (_, _, r2) = block2_sq(point);
    beta_rescaled(params, r2)
}

/// h(point), whose zero set is the surface.
pub fn defining_value(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> f64 {
    let (xx, yy, _) = block2_sq(point);
    let (w, _) = cutoff_weight(params, surface, point);
    2.0 * point.x1 * point.x1 - point.y1 * point.y1 + w * params.w2() * (2.0 * xx - yy)
        - surface.sign.value()
}

/// |h| divided by the magnitude of the terms it is assembled from.
pub fn surface_residual(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> f64 {
    let (xx, yy, _) = block2_sq(point);
    let scale = 2.0 * point.x1 * point.x1 + point.y1 * point.y1 + params.w2() * (2.0 * xx + yy);
    defining_value(params, surface, point).abs() / scale.max(1.0)
}

pub fn check_on_surface(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> Result<()> {
    if point.dim() != params.n {
        return Err(Error::DimensionMismatch { expected: params.n, got: point.dim() });
    }
    let r = surface_residual(params, surface, point);
    if r > SURFACE_TOL {
        return Err(Error::OffSurface { residual: defining_value(params, surface, point) });
    }
    Ok(())
}

/// Gradient of h, laid out as a tangent vector.
pub fn gradient(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> TangentVec {
    let (xx, yy, r2) = block2_sq(point);
    let (w, dw) = cutoff_weight(params, surface, point);
    let e = params.w2();
    let h2 = 2.0 * xx - yy;
    let rad = if r2 > 0.0 { dw * h2 / r2 } else { 0.0 };
    SplitPoint {
        x1: 4.0 * point.x1,
        y1: -2.0 * point.y1,
        x2: point.x2.iter().map(|x| e * (4.0 * w * x + rad * x)).collect(),
        y2: point.y2.iter().map(|y| e * (-2.0 * w * y + rad * y)).collect(),
    }
}

/// Half the gradient of h; its pairing with the Liouville field is positive on the surfaces.
pub fn normal_field(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> TangentVec {
    gradient(params, surface, point).scale(0.5)
}

/// v = 2x d/dx - y d/dy.
pub fn liouville_field(point: &SplitPoint) -> TangentVec {
    SplitPoint {
        x1: 2.0 * point.x1,
        y1: -point.y1,
        x2: point.x2.iter().map(|x| 2.0 * x).collect(),
        y2: point.y2.iter().map(|y| -y).collect(),
    }
}

/// Reeb field of alpha on the surface through `point`.
pub fn reeb_field(params: &HandleParams, surface: SurfaceId, point: &SplitPoint) -> Result<TangentVec> {
    check_on_surface(params, surface, point)?;
    let g = gradient(params, surface, point);
    // Hamiltonian vector field of h/2, which spans ker(d alpha) on the surface.
    let xh = SplitPoint {
        x1: -0.5 * g.y1,
        y1: 0.5 * g.x1,
        x2: g.y2.iter().map(|v| -0.5 * v).collect(),
        y2: g.x2.iter().map(|v| 0.5 * v).collect(),
    };
    let ninv = 2.0 * dot(&point.x(), &xh.y()) + dot(&point.y(), &xh.x());
    Ok(xh.scale(1.0 / ninv))
}

/// Normalization N with N^-1 = 4x1^2 + y1^2 + eps^2s (4|x2|^2 + |y2|^2).
pub fn normalization(params: &HandleParams, point: &SplitPoint) -> f64 {
    let (xx, yy, _) = block2_sq(point);
    1.0 / (4.0 * point.x1 * point.x1 + point.y1 * point.y1 + params.w2() * (4.0 * xx + yy))
}

pub fn check_on_w(params: &HandleParams, point: &SplitPoint) -> Result<()> {
    check_on_surface(params, SurfaceId::MINUS, point)?;
    let x = point.x();
    let y = point.y();
    let xy = dot(&x, &y);
    if xy.abs() > SURFACE_TOL * (norm(&x) * norm(&y)).max(1.0) {
        return Err(Error::NotOnW { xy });
    }
    Ok(())
}

/// psi(x, y) = (y/|y|, -|y| x, 0) on W_-eps = V_-eps cap {x.y = 0}.
pub fn chart_psi(params: &HandleParams, point: &SplitPoint) -> Result<JetPoint> {
    check_on_w(params, point)?;
    Ok(psi_unchecked(point))
}

/// The chart formula without the membership check, for finite differences.
pub fn psi_unchecked(point: &SplitPoint) -> JetPoint {
    let x = point.x();
    let y = point.y();
    let ry = norm(&y);
    let q: Vec<f64> = y.iter().map(|v| v / ry).collect();
    let mut p: Vec<f64> = x.iter().map(|v| -ry * v).collect();
    let pq = dot(&p, &q);
    for (pk, qk) in p.iter_mut().zip(&q) {
        *pk -= pq * qk;
    }
    JetPoint { q, p, z: 0.0 }
}

/// Psi(w, t) = (psi(w), t); `t` is the rescaled unit-speed Reeb time.
pub fn embed_psi(params: &HandleParams, base: &SplitPoint, t: f64) -> Result<JetPoint> {
    if (t * params.action_unit()).abs() >= 1.0 {
        return Err(Error::Domain(format!("|t| = {t} exceeds the collar")));
    }
    let mut j = chart_psi(params, base)?;
    j.z = t;
    Ok(j)
}

/// Default capture radius of [`project_to_surface`], relative to the term scale.
pub const CAPTURE_RADIUS: f64 = 0.5;

/// Moves `point` along the Liouville flow onto the surface.
pub fn project_to_surface(
    params: &HandleParams,
    surface: SurfaceId,
    point: &SplitPoint,
    capture: f64,
) -> Result<SplitPoint> {
    let r0 = surface_residual(params, surface, point);
    if r0 > capture {
        return Err(Error::Domain(format!("relative residual {r0:e} beyond capture radius {capture}")));
    }
    let mut t = 0.0f64;
    let mut cur = point.clone();
    for it in 0..50 {
        let h = defining_value(params, surface, &cur);
        if surface_residual(params, surface, &cur) <= 1e-14 || h == 0.0 {
            return Ok(cur);
        }
        let dh = dot(&gradient(params, surface, &cur).to_flat(), &liouville_field(&cur).to_flat());
        if dh == 0.0 || !dh.is_finite() {
            return Err(Error::NoConvergence { what: "surface projection", iterations: it, residual: h });
        }
        t -= h / dh;
        cur = crate::flows::liouville_flow(point, t);
    }
    let h = defining_value(params, surface, &cur);
    if surface_residual(params, surface, &cur) <= 1e-13 {
        return Ok(cur);
    }
    Err(Error::NoConvergence { what: "surface projection", iterations: 50, residual: h })
}
