//! Closed-form flows in the handle, flow-time solvers and the handle passage.
//!
//! The Reeb flow used here is the rescaled-speed field `y d/dx + 2x d/dy` per
//! block (block 2 at rate eps^2s). Along it, in each block,
//! `int alpha = (3/2) d(x.y) + (H/2) dt_block` with `H = 2|x|^2 - |y|^2`,
//! so on V_{+-} the action of a segment of parameter length t is
//! `(3/2) d(x.y) +- t/2`. Block 1 is evaluated in light-cone coordinates
//! `u = sqrt2 x1 + y1`, `v = sqrt2 x1 - y1`, with the small one recovered from
//! `uv = H1`, which keeps passages accurate when |x| ~ eps^{s+1-p}.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, JetPoint, SplitPoint};
use crate::handle::{check_on_surface, psi_unchecked, HandleParams, Sign, SurfaceId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub t_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { t_max: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub endpoint: SplitPoint,
    pub elapsed: f64,
    /// Unscaled units.
    pub action: f64,
}

/// The cosh/sinh solution of the rescaled-speed Reeb flow.
pub fn reeb_flow_handle(params: &HandleParams, point: &SplitPoint, t: f64) -> SplitPoint {
    let (c1, s1) = ((SQRT_2 * t).cosh(), (SQRT_2 * t).sinh());
    let k = params.k2() * t;
    let (c2, s2) = (k.cosh(), k.sinh());
    SplitPoint {
        x1: c1 * point.x1 + s1 * point.y1 / SQRT_2,
        y1: SQRT_2 * s1 * point.x1 + c1 * point.y1,
        x2: point.x2.iter().zip(&point.y2).map(|(x, y)| c2 * x + s2 * y / SQRT_2).collect(),
        y2: point.x2.iter().zip(&point.y2).map(|(x, y)| SQRT_2 * s2 * x + c2 * y).collect(),
    }
}

pub fn liouville_flow(point: &SplitPoint, t: f64) -> SplitPoint {
    let ex = (2.0 * t).exp();
    let ey = (-t).exp();
    SplitPoint {
        x1: point.x1 * ex,
        y1: point.y1 * ey,
        x2: point.x2.iter().map(|x| x * ex).collect(),
        y2: point.y2.iter().map(|y| y * ey).collect(),
    }
}

/// Block-2 hyperbolic quantity 2|x2|^2 - |y2|^2 (unweighted).
fn h2(point: &SplitPoint) -> f64 {
    2.0 * dot(&point.x2, &point.x2) - dot(&point.y2, &point.y2)
}

/// Unweighted x.y.
pub fn xy(point: &SplitPoint) -> f64 {
    point.x1 * point.y1 + dot(&point.x2, &point.y2)
}

/// Weighted |X|^2 = x1^2 + eps^2s |x2|^2.
pub fn weighted_x2(params: &HandleParams, point: &SplitPoint) -> f64 {
    point.x1 * point.x1 + params.w2() * dot(&point.x2, &point.x2)
}

/// Weighted |Y|^2 = y1^2 + eps^2s |y2|^2.
pub fn weighted_y2(params: &HandleParams, point: &SplitPoint) -> f64 {
    point.y1 * point.y1 + params.w2() * dot(&point.y2, &point.y2)
}

/// Light-cone coordinates of block 1 for a point on V_sign.
#[derive(Debug, Clone, Copy)]
struct Cone {
    u: f64,
    v: f64,
}

impl Cone {
    fn of(params: &HandleParams, point: &SplitPoint, sign: Sign) -> Self {
        let h1 = sign.value() - params.w2() * h2(point);
        let u = SQRT_2 * point.x1 + point.y1;
        let v = SQRT_2 * point.x1 - point.y1;
        if u.abs() >= v.abs() {
            Cone { u, v: if u != 0.0 { h1 / u } else { v } }
        } else {
            Cone { u: h1 / v, v }
        }
    }

    fn at(&self, t: f64) -> (f64, f64) {
        let u = self.u * (SQRT_2 * t).exp();
        let v = self.v * (-SQRT_2 * t).exp();
        ((u + v) / (2.0 * SQRT_2), (u - v) / 2.0)
    }

    fn xy_at(&self, t: f64) -> f64 {
        let u = self.u * (SQRT_2 * t).exp();
        let v = self.v * (-SQRT_2 * t).exp();
        (u - v) * (u + v) / (4.0 * SQRT_2)
    }
}

/// Reeb flow of a point on V_sign, with block 1 evaluated in light-cone form.
pub fn reeb_flow_on(params: &HandleParams, point: &SplitPoint, sign: Sign, t: f64) -> SplitPoint {
    let cone = Cone::of(params, point, sign);
    let (x1, y1) = cone.at(t);
    let mut out = reeb_flow_handle(params, point, t);
    out.x1 = x1;
    out.y1 = y1;
    out
}

fn block2_xy_at(params: &HandleParams, point: &SplitPoint, t: f64) -> f64 {
    let k = params.k2() * t;
    let (c, s) = (k.cosh(), k.sinh());
    point
        .x2
        .iter()
        .zip(&point.y2)
        .map(|(x, y)| (c * x + s * y / SQRT_2) * (SQRT_2 * s * x + c * y))
        .sum()
}

/// Reeb flow on V_sign for parameter time t, with its alpha-action.
pub fn reeb_flow_segment(params: &HandleParams, point: &SplitPoint, sign: Sign, t: f64) -> Result<FlowResult> {
    check_on_surface(params, SurfaceId { sign, flattened: false }, point)?;
    let end = reeb_flow_on(params, point, sign, t);
    let a = 1.5 * (xy(&end) - xy(point)) + sign.value() * t / 2.0;
    Ok(FlowResult { endpoint: end, elapsed: t, action: a * params.action_unit() })
}

/// Liouville time taking a point with weighted |X|^2 = a from V_from to V_to.
///
/// Solves `2a(1+u)^3 - s_to (1+u) - (2a - s_from) = 0` in `u = e^{2T} - 1`.
pub fn flow_time_between(a: f64, from: Sign, to: Sign) -> Result<f64> {
    let sf = from.value();
    let st = to.value();
    let c0 = sf - st;
    let c1 = 6.0 * a - st;
    let c2 = 6.0 * a;
    let c3 = 2.0 * a;
    let f = |u: f64| c0 + u * (c1 + u * (c2 + u * c3));
    let df = |u: f64| c1 + u * (2.0 * c2 + u * 3.0 * c3);
    if c0 == 0.0 {
        return Ok(0.0);
    }
    let mut u = -c0 / c1;
    for _ in 0..100 {
        let step = f(u) / df(u);
        u -= step;
        if step.abs() <= 1e-17 * u.abs() {
            break;
        }
    }
    let scale = c0.abs() + (c1 * u).abs() + (c2 * u * u).abs() + (c3 * u * u * u).abs();
    let res = f(u).abs() / scale;
    if !(res <= 1e-14) || u <= -1.0 {
        return Err(Error::NoConvergence { what: "flow time cubic", iterations: 100, residual: res });
    }
    Ok(u.ln_1p() / 2.0)
}

/// T with Omega^T(point) on V_+, for a point of V_- in the attaching band.
pub fn flow_time_t(params: &HandleParams, point: &SplitPoint) -> Result<f64> {
    check_on_surface(params, SurfaceId::MINUS, point)?;
    let a = weighted_x2(params, point);
    let lo = params.a_inner() * (1.0 - 1e-9);
    let hi = params.a_minus() * (1.0 + 1e-9);
    if a < lo || a > hi {
        return Err(Error::Domain(format!("a = {a:e} outside the band [{lo:e}, {hi:e}]")));
    }
    flow_time_between(a, Sign::Minus, Sign::Plus)
}

/// x1 y1 + eps^4s x2.y2, a quarter of d/dt |Y|^2 at t = 0.
pub fn hemisphere_criterion(params: &HandleParams, point: &SplitPoint) -> f64 {
    point.x1 * point.y1 + params.w2() * params.w2() * dot(&point.x2, &point.y2)
}

/// Bisection for the sign change of `f` on [lo, hi] with f(lo) <= 0 < f(hi).
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Doubling search for the first t > 0 with f(t) > 0, given f <= 0 before it.
fn bracket_up<F: Fn(f64) -> f64>(f: &F, t0: f64, t_max: f64) -> Result<(f64, f64)> {
    let mut lo = 0.0;
    let mut t = t0;
    loop {
        if f(t) > 0.0 {
            return Ok((lo, t));
        }
        if t >= t_max {
            return Err(Error::UnboundedFlow { t_max });
        }
        lo = t;
        t = (2.0 * t).min(t_max);
    }
}

/// Time until the flow leaves the weighted y-disk through the entry's radius.
pub fn exit_time_tau(params: &HandleParams, entry: &SplitPoint, cfg: &FlowConfig) -> Result<f64> {
    check_on_surface(params, SurfaceId::PLUS, entry)?;
    if hemisphere_criterion(params, entry) >= 0.0 {
        return Ok(0.0);
    }
    let r2 = weighted_y2(params, entry);
    exit_time_to_radius(params, entry, r2.sqrt(), cfg)
}

/// Time at which the weighted |Y| of the V_+ flow from `point` first exceeds `radius`
/// after the initial dip (or rise, when starting inside).
pub fn exit_time_to_radius(params: &HandleParams, point: &SplitPoint, radius: f64, cfg: &FlowConfig) -> Result<f64> {
    let cone = Cone::of(params, point, Sign::Plus);
    let w2 = params.w2();
    let r2 = radius * radius;
    let f = |t: f64| {
        let (_, y1) = cone.at(t);
        let p = reeb_flow_handle(params, point, t);
        y1 * y1 + w2 * dot(&p.y2, &p.y2) - r2
    };
    let (lo, hi) = bracket_up(&f, 0.25, cfg.t_max)?;
    Ok(bisect(f, lo, hi))
}

/// Largest exit time tau over `samples` random entries on the weighted sphere
/// of radius `r0` in V_+ (the landing radius of the N_-eps boundary).
pub fn tau_bound(params: &HandleParams, samples: usize, seed: u64, cfg: &FlowConfig) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let (_, r) = boundary_times(params)?;
    let rx = ((1.0 + r * r) / 2.0).sqrt();
    let ws = params.ws();
    let n = params.n;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut unit = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = norm(&v);
        if m > 1e-3 && m <= 1.0 {
            return v.into_iter().map(|c| c / m).collect::<Vec<f64>>();
        }
    };
    let entries: Vec<SplitPoint> = (0..samples)
        .map(|_| {
            let (dx, dy) = (unit(&mut rng), unit(&mut rng));
            SplitPoint::new(
                rx * dx[0],
                r * dy[0],
                dx[1..].iter().map(|v| rx * v / ws).collect(),
                dy[1..].iter().map(|v| r * v / ws).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let taus: Vec<f64> = entries.par_iter().map(|e| exit_time_tau(params, e, cfg)).collect::<Result<_>>()?;
    Ok(taus.into_iter().fold(0.0, f64::max))
}

/// Signed parameter time s with Phi^s(point) on W = {x.y = 0}, for a point on V_sign.
pub fn time_to_w(params: &HandleParams, point: &SplitPoint, sign: Sign) -> Result<f64> {
    let cone = Cone::of(params, point, sign);
    let g = |t: f64| cone.xy_at(t) + block2_xy_at(params, point, t);
    let g0 = g(0.0);
    if g0 == 0.0 {
        return Ok(0.0);
    }
    // x.y is strictly increasing along the flow.
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let h = |t: f64| dir * g(dir * t);
    let mut lo = 0.0;
    let mut t = 0.25;
    while h(t) <= 0.0 {
        lo = t;
        t *= 2.0;
        if t > 1e6 {
            return Err(Error::NoConvergence { what: "time to W", iterations: 0, residual: g0 });
        }
    }
    Ok(dir * bisect(h, lo, t))
}

/// Jet coordinates (psi(w), z) of a point of V_- near the core sphere, together
/// with the time s from the point to its base w on W.
pub fn jet_coordinates(params: &HandleParams, point: &SplitPoint) -> Result<(JetPoint, f64)> {
    check_on_surface(params, SurfaceId::MINUS, point)?;
    let s = time_to_w(params, point, Sign::Minus)?;
    let base = reeb_flow_on(params, point, Sign::Minus, s);
    let mut j = psi_unchecked(&base);
    j.z = jet_height_with(point, s);
    Ok((j, s))
}

fn jet_height_with(point: &SplitPoint, s: f64) -> f64 {
    1.5 * xy(point) + 0.5 * s
}

/// Rescaled jet height z of a point of V_-.
pub fn jet_height(params: &HandleParams, point: &SplitPoint) -> Result<f64> {
    let s = time_to_w(params, point, Sign::Minus)?;
    Ok(jet_height_with(point, s))
}

/// Point of the boundary of N_-eps with weighted directions `q` (of Y) and `p` (of X).
pub fn boundary_point(params: &HandleParams, q: &[f64], p: &[f64]) -> Result<SplitPoint> {
    let n = params.n;
    if q.len() != n || p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: q.len().min(p.len()) });
    }
    let ra = params.a_minus().sqrt();
    let ry = params.r_minus();
    let nq = norm(q);
    let np = norm(p);
    let ws = params.ws();
    Ok(SplitPoint {
        x1: ra * p[0] / np,
        y1: ry * q[0] / nq,
        x2: p[1..].iter().map(|v| ra * v / np / ws).collect(),
        y2: q[1..].iter().map(|v| ry * v / nq / ws).collect(),
    })
}

/// Weighted unit directions (of Y, of X) of a point.
pub fn directions(params: &HandleParams, point: &SplitPoint) -> (Vec<f64>, Vec<f64>) {
    let ws = params.ws();
    let mut y = vec![point.y1];
    y.extend(point.y2.iter().map(|v| v * ws));
    let mut x = vec![point.x1];
    x.extend(point.x2.iter().map(|v| v * ws));
    let ny = norm(&y);
    let nx = norm(&x);
    (y.iter().map(|v| v / ny).collect(), x.iter().map(|v| v / nx).collect())
}

/// One Liouville-conjugated passage through the handle, all in rescaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub entry: SplitPoint,
    pub exit: SplitPoint,
    /// Liouville time T of the attaching band edge.
    pub t_liouville: f64,
    pub tau: f64,
    /// Time from the entry forward to W (positive).
    pub s_entry: f64,
    /// Time from the exit to W (negative).
    pub s_exit: f64,
    /// alpha-action of the V_+ segment.
    pub action_v_plus: f64,
    /// action_v_plus + z(entry) - z(exit).
    pub deviation: f64,
}

/// Liouville time of the boundary of N_-eps, and the radius it lands on in V_+.
pub fn boundary_times(params: &HandleParams) -> Result<(f64, f64)> {
    let t = flow_time_between(params.a_minus(), Sign::Minus, Sign::Plus)?;
    Ok((t, params.r_minus() * (-t).exp()))
}

pub fn handle_passage(params: &HandleParams, entry: &SplitPoint, cfg: &FlowConfig) -> Result<Passage> {
    let t = flow_time_t(params, entry)?;
    let pp = liouville_flow(entry, t);
    if hemisphere_criterion(params, &pp) >= 0.0 {
        return Err(Error::Domain("entry is not in the inward hemisphere".into()));
    }
    let r0 = weighted_y2(params, &pp).sqrt();
    let tau = exit_time_to_radius(params, &pp, r0, cfg)?;
    let qp = reeb_flow_on(params, &pp, Sign::Plus, tau);
    let exit = liouville_flow(&qp, -t);
    let s_entry = time_to_w(params, entry, Sign::Minus)?;
    let s_exit = time_to_w(params, &exit, Sign::Minus)?;
    let action_v_plus = 1.5 * (xy(&qp) - xy(&pp)) + 0.5 * tau;
    let deviation = 1.5 * t.exp_m1() * (xy(&exit) - xy(entry)) + 0.5 * (tau + s_entry - s_exit);
    Ok(Passage { entry: entry.clone(), exit, t_liouville: t, tau, s_entry, s_exit, action_v_plus, deviation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandleExit {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Unscaled units.
    pub action: f64,
    pub passage: Passage,
}

/// Entry (q, p) on the boundary of N_-eps to the exit (q, p) of the passage.
pub fn through_handle_map(params: &HandleParams, q: &[f64], p: &[f64], cfg: &FlowConfig) -> Result<HandleExit> {
    let entry = boundary_point(params, q, p)?;
    let passage = handle_passage(params, &entry, cfg)?;
    let (qe, pe) = directions(params, &passage.exit);
    Ok(HandleExit { q: qe, p: pe, action: passage.action_v_plus * params.action_unit(), passage })
}

/// The backwards passage, conjugate to the forward one by x -> -x.
pub fn through_handle_map_backward(params: &HandleParams, q: &[f64], p: &[f64], cfg: &FlowConfig) -> Result<HandleExit> {
    let neg: Vec<f64> = p.iter().map(|v| -v).collect();
    let mut out = through_handle_map(params, q, &neg, cfg)?;
    out.p.iter_mut().for_each(|v| *v = -*v);
    Ok(out)
}

/// Batch version of [`through_handle_map`]; output order follows input order.
pub fn through_handle_batch(
    params: &HandleParams,
    entries: &[(Vec<f64>, Vec<f64>)],
    cfg: &FlowConfig,
) -> Vec<Result<HandleExit>> {
    entries.par_iter().map(|(q, p)| through_handle_map(params, q, p, cfg)).collect()
}

/// Flow line launched from the co-core sphere Gamma = {y = 0} of V_+.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Launch {
    pub start: SplitPoint,
    pub exit: SplitPoint,
    pub tau: f64,
    pub s_exit: f64,
    pub action_v_plus: f64,
    /// action_v_plus - z(exit).
    pub deviation: f64,
}

/// Launch from the Gamma point with weighted x-direction `dir`.
pub fn gamma_launch(params: &HandleParams, dir: &[f64], cfg: &FlowConfig) -> Result<Launch> {
    let nd = norm(dir);
    let c = 1.0 / (SQRT_2 * nd);
    let ws = params.ws();
    let start = SplitPoint {
        x1: dir[0] * c,
        y1: 0.0,
        x2: dir[1..].iter().map(|v| v * c / ws).collect(),
        y2: vec![0.0; params.n - 1],
    };
    let (t, r0) = boundary_times(params)?;
    let tau = exit_time_to_radius(params, &start, r0, cfg)?;
    let qp = reeb_flow_on(params, &start, Sign::Plus, tau);
    let exit = liouville_flow(&qp, -t);
    let s_exit = time_to_w(params, &exit, Sign::Minus)?;
    let action_v_plus = 1.5 * xy(&qp) + 0.5 * tau;
    let deviation = 1.5 * t.exp_m1() * xy(&exit) + 0.5 * (tau - s_exit);
    Ok(Launch { start, exit, tau, s_exit, action_v_plus, deviation })
}

/// Approach to Gamma of the flow line entering the handle at `entry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landing {
    pub entry: SplitPoint,
    /// Point where y1 vanishes.
    pub landing: SplitPoint,
    pub t_star: f64,
    /// Weighted |Y| at the landing point (0 iff the line hits Gamma).
    pub residual: f64,
    pub action_v_plus: f64,
    /// action_v_plus + z(entry).
    pub deviation: f64,
}

pub fn gamma_landing(params: &HandleParams, entry: &SplitPoint) -> Result<Landing> {
    let t = flow_time_t(params, entry)?;
    let pp = liouville_flow(entry, t);
    let cone = Cone::of(params, &pp, Sign::Plus);
    if !(cone.u > 0.0 && cone.v > 0.0) {
        return Err(Error::Domain("flow line does not cross y1 = 0 inside the handle".into()));
    }
    let t_star = (cone.v / cone.u).ln() / (2.0 * SQRT_2);
    let mut landing = reeb_flow_on(params, &pp, Sign::Plus, t_star);
    landing.y1 = 0.0;
    let residual = weighted_y2(params, &landing).sqrt();
    let s_entry = time_to_w(params, entry, Sign::Minus)?;
    let action_v_plus = 1.5 * (xy(&landing) - xy(&pp)) + 0.5 * t_star;
    let deviation = 1.5 * (xy(&landing) - t.exp_m1() * xy(entry)) + 0.5 * (t_star + s_entry);
    Ok(Landing { entry: entry.clone(), landing, t_star, residual, action_v_plus, deviation })
}

/// Integral of alpha along the polygon through `samples`, Richardson-extrapolated
/// against the polygon through every other sample. Units follow the samples.
pub fn action_along_path(samples: &[SplitPoint]) -> f64 {
    fn polygon(pts: &[&SplitPoint]) -> f64 {
        pts.windows(2)
            .map(|w| {
                let (a, b) = (w[0].to_flat(), w[1].to_flat());
                let n = a.len() / 2;
                (0..n)
                    .map(|j| {
                        let xm = 0.5 * (a[j] + b[j]);
                        let ym = 0.5 * (a[n + j] + b[n + j]);
                        2.0 * xm * (b[n + j] - a[n + j]) + ym * (b[j] - a[j])
                    })
                    .sum::<f64>()
            })
            .sum()
    }
    if samples.len() < 2 {
        return 0.0;
    }
    let fine: Vec<&SplitPoint> = samples.iter().collect();
    let a_fine = polygon(&fine);
    if samples.len() >= 5 && samples.len() % 2 == 1 {
        let coarse: Vec<&SplitPoint> = samples.iter().step_by(2).collect();
        (4.0 * a_fine - polygon(&coarse)) / 3.0
    } else {
        a_fine
    }
}
