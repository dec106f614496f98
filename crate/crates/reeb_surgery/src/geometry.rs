//! Split coordinates on C^n = C x C^{n-1} and the standard forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of C^n written as (x1 + i y1) + (x2 + i y2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPoint {
    pub x1: f64,
    pub y1: f64,
    pub x2: Vec<f64>,
    pub y2: Vec<f64>,
}

/// Tangent vectors share the point layout.
pub type TangentVec = SplitPoint;

impl SplitPoint {
    pub fn new(x1: f64, y1: f64, x2: Vec<f64>, y2: Vec<f64>) -> Result<Self> {
        if x2.len() != y2.len() {
            return Err(Error::DimensionMismatch {
                expected: x2.len(),
                got: y2.len(),
            });
        }
        if x2.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            x1: 0.0,
            y1: 0.0,
            x2: vec![0.0; n - 1],
            y2: vec![0.0; n - 1],
        }
    }

    /// Complex dimension n.
    pub fn dim(&self) -> usize {
        self.x2.len() + 1
    }

    /// Unit vector along coordinate `k` of the flat layout (see [`SplitPoint::to_flat`]).
    pub fn basis(n: usize, k: usize) -> Self {
        let mut flat = vec![0.0; 2 * n];
        flat[k] = 1.0;
        Self::from_flat(&flat)
    }

    /// Flat layout `[x1, x2.., y1, y2..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim());
        v.push(self.x1);
        v.extend_from_slice(&self.x2);
        v.push(self.y1);
        v.extend_from_slice(&self.y2);
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let n = v.len() / 2;
        Self {
            x1: v[0],
            x2: v[1..n].to_vec(),
            y1: v[n],
            y2: v[n + 1..].to_vec(),
        }
    }

    pub fn x(&self) -> Vec<f64> {
        let mut v = vec![self.x1];
        v.extend_from_slice(&self.x2);
        v
    }

    pub fn y(&self) -> Vec<f64> {
        let mut v = vec![self.y1];
        v.extend_from_slice(&self.y2);
        v
    }

    pub fn from_xy(x: &[f64], y: &[f64]) -> Self {
        Self {
            x1: x[0],
            x2: x[1..].to_vec(),
            y1: y[0],
            y2: y[1..].to_vec(),
        }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        let f: Vec<f64> = self
            .to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(u, v)| u + a * v)
            .collect();
        Self::from_flat(&f)
    }

    pub fn scale(&self, a: f64) -> Self {
        let f: Vec<f64> = self.to_flat().iter().map(|u| a * u).collect();
        Self::from_flat(&f)
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|u| u * u).sum::<f64>().sqrt()
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() || self.x2.len() != self.y2.len() || other.x2.len() != other.y2.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// omega_st = dx ^ dy.
pub fn eval_symplectic(u: &TangentVec, v: &TangentVec) -> Result<f64> {
    u.check_same(v)?;
    let mut s = u.x1 * v.y1 - u.y1 * v.x1;
    for j in 0..u.x2.len() {
        s += u.x2[j] * v.y2[j] - u.y2[j] * v.x2[j];
    }
    Ok(s)
}

/// alpha = 2x.dy + y.dx at `point`.
pub fn eval_alpha(point: &SplitPoint, v: &TangentVec) -> Result<f64> {
    point.check_same(v)?;
    let mut s = 2.0 * point.x1 * v.y1 + point.y1 * v.x1;
    for j in 0..point.x2.len() {
        s += 2.0 * point.x2[j] * v.y2[j] + point.y2[j] * v.x2[j];
    }
    Ok(s)
}

/// A point (q, p, z) of J^1(S^{n-1}) = T*S^{n-1} x R, with q, p in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetTangent {
    pub vq: Vec<f64>,
    pub vp: Vec<f64>,
    pub vz: f64,
}

pub const JET_TOL: f64 = 1e-12;

pub fn check_jet_point(pt: &JetPoint, tol: f64) -> Result<()> {
    if pt.q.len() != pt.p.len() {
        return Err(Error::DimensionMismatch {
            expected: pt.q.len(),
            got: pt.p.len(),
        });
    }
    let nd = (norm(&pt.q) - 1.0).abs();
    let pq = dot(&pt.p, &pt.q).abs() / (1.0 + norm(&pt.p));
    if nd > tol || pq > tol {
        return Err(Error::InvalidJetPoint {
            norm_defect: nd,
            orthogonality: pq,
        });
    }
    Ok(())
}

/// alpha_st = dz - p.dq.
pub fn eval_alpha_jet(pt: &JetPoint, v: &JetTangent) -> Result<f64> {
    check_jet_point(pt, JET_TOL)?;
    if v.vq.len() != pt.q.len() {
        return Err(Error::DimensionMismatch {
            expected: pt.q.len(),
            got: v.vq.len(),
        });
    }
    Ok(v.vz - dot(&pt.p, &v.vq))
}

/// Gnomonic coordinates of the unit vector `q` around `pole`, in the basis `frame`
/// of the tangent space at the pole. Fails on the far hemisphere.
pub fn gnomonic(q: &[f64], pole: &[f64], frame: &[Vec<f64>]) -> Result<Vec<f64>> {
    let c = dot(q, pole);
    if c <= 0.0 {
        return Err(Error::OutOfChart {
            norm: f64::INFINITY,
            radius: f64::MAX,
        });
    }
    Ok(frame.iter().map(|e| dot(q, e) / c).collect())
}

/// Inverse of [`gnomonic`]: the unit vector with the given coordinates.
pub fn gnomonic_inv(g: &[f64], pole: &[f64], frame: &[Vec<f64>]) -> Vec<f64> {
    let mut v = pole.to_vec();
    for (gi, e) in g.iter().zip(frame) {
        for (vk, ek) in v.iter_mut().zip(e) {
            *vk += gi * ek;
        }
    }
    let r = norm(&v);
    v.iter().map(|c| c / r).collect()
}

/// Unnormalized double-double value `hi + lo`, used for action sums whose
/// deviations sit far below the f64 resolution of the total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

impl DoubleDouble {
    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn add_f64(self, x: f64) -> Self {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, e + self.lo);
        Self { hi, lo }
    }

    pub fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = two_sum(s, e + self.lo + o.lo);
        Self { hi, lo }
    }

    pub fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn sum<I: IntoIterator<Item = f64>>(it: I) -> Self {
        it.into_iter().fold(Self::default(), |acc, x| acc.add_f64(x))
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(std::cmp::Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            o => o,
        }
    }
}
