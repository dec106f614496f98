//! Asymptotic operators at Reeb orbits (period normalized to 1), their
//! negative spectrum, Conley-Zehnder indices, and tail fitting with the
//! arc-count machinery for fiber disks.
//!
//! Real layout: a loop z(t) in C^d is stored as 2d reals (Re z, Im z), so
//! J0 = [[0, -I], [I, 0]] is multiplication by i.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
/// Relative significance floor for fitted coefficients.
pub const NOISE_FLOOR: f64 = 1e-8;
/// Relative (per-circle weighted) residual above which a tail is unclassifiable.
pub const FIT_RESIDUAL_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticOperatorSpec {
    /// Complex dimension n - 1.
    pub dim: usize,
    /// S0 at t = j/M for j = 0..=M; the last sample repeats the first.
    pub samples: Vec<DMatrix<f64>>,
}

/// JSON form of an operator: `samples[j][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDoc {
    pub dim: usize,
    pub samples: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<OperatorDoc> for AsymptoticOperatorSpec {
    type Error = Error;

    fn try_from(doc: OperatorDoc) -> Result<Self> {
        let n = 2 * doc.dim;
        let mut samples = Vec::with_capacity(doc.samples.len());
        for rows in &doc.samples {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Schema(format!("operator samples must be {n}x{n}")));
            }
            samples.push(DMatrix::from_fn(n, n, |i, j| rows[i][j]));
        }
        AsymptoticOperatorSpec::new(doc.dim, samples)
    }
}

impl From<&AsymptoticOperatorSpec> for OperatorDoc {
    fn from(spec: &AsymptoticOperatorSpec) -> Self {
        OperatorDoc {
            dim: spec.dim,
            samples: spec
                .samples
                .iter()
                .map(|s| (0..s.nrows()).map(|i| (0..s.ncols()).map(|j| s[(i, j)]).collect()).collect())
                .collect(),
        }
    }
}

fn dirichlet(m: usize, x: f64) -> f64 {
    let s = (std::f64::consts::PI * x).sin();
    if s.abs() < 1e-14 {
        let k = x.round();
        // cos(pi M k) / cos(pi k) for odd M is 1
        if (k as i64).rem_euclid(2) == 0 || m % 2 == 1 {
            return 1.0;
        }
        return -1.0;
    }
    (std::f64::consts::PI * m as f64 * x).sin() / (m as f64 * s)
}

impl AsymptoticOperatorSpec {
    pub fn new(dim: usize, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        let spec = Self { dim, samples };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_fn<F: Fn(f64) -> DMatrix<f64>>(dim: usize, m: usize, f: F) -> Result<Self> {
        let mut samples: Vec<DMatrix<f64>> = (0..m).map(|j| f(j as f64 / m as f64)).collect();
        samples.push(samples[0].clone());
        Self::new(dim, samples)
    }

    pub fn constant(dim: usize, m: usize, a: f64) -> Self {
        let s = DMatrix::identity(2 * dim, 2 * dim) * a;
        Self { dim, samples: vec![s; m + 1] }
    }

    /// Number of grid points M.
    pub fn m(&self) -> usize {
        self.samples.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = 2 * self.dim;
        if self.dim == 0 || self.samples.len() < 2 {
            return Err(Error::Precondition("operator needs dim >= 1 and at least one period sample".into()));
        }
        for s in &self.samples {
            if s.nrows() != n || s.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.nrows() });
            }
            if (s - s.transpose()).amax() > SYMMETRY_TOL {
                return Err(Error::Precondition("S0 sample is not symmetric".into()));
            }
        }
        let (first, last) = (&self.samples[0], &self.samples[self.samples.len() - 1]);
        if (first - last).amax() > SYMMETRY_TOL {
            return Err(Error::Precondition("S0 loop does not close".into()));
        }
        Ok(())
    }

    /// Trigonometric interpolant of the samples (odd M).
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let m = self.m();
        let mut out = DMatrix::zeros(2 * self.dim, 2 * self.dim);
        for j in 0..m {
            out += &self.samples[j] * dirichlet(m, t - j as f64 / m as f64);
        }
        out
    }

    /// Resampled on 2M + 1 points.
    pub fn refined(&self) -> Self {
        let m2 = 2 * self.m() + 1;
        let mut samples: Vec<DMatrix<f64>> = (0..m2).map(|j| {
            let s = self.at(j as f64 / m2 as f64);
            (&s + s.transpose()) * 0.5
        }).collect();
        samples.push(samples[0].clone());
        Self { dim: self.dim, samples }
    }
}

/// Fourier differentiation matrix on M (odd) points of the unit circle.
fn diff_matrix(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |j, l| {
        if j == l {
            0.0
        } else {
            let k = j as i64 - l as i64;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            std::f64::consts::PI * sign / (std::f64::consts::PI * k as f64 / m as f64).sin()
        }
    })
}

/// Collocation matrix of -J0 d/dt - S0(t); index (c, j) -> c M + j.
fn operator_matrix(spec: &AsymptoticOperatorSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let m = spec.m();
    if m % 2 == 0 {
        return Err(Error::Precondition(format!("collocation needs an odd grid size, got {m}")));
    }
    let d = spec.dim;
    let n = 2 * d * m;
    let dm = diff_matrix(m);
    let mut h = DMatrix::zeros(n, n);
    // J0 = [[0, -I], [I, 0]]: block (c, c + d) = -D, block (c + d, c) = D; negated.
    for c in 0..d {
        for j in 0..m {
            for l in 0..m {
                h[(c * m + j, (c + d) * m + l)] = dm[(j, l)];
                h[((c + d) * m + j, c * m + l)] = -dm[(j, l)];
            }
        }
    }
    for j in 0..m {
        let s = &spec.samples[j];
        for a in 0..2 * d {
            for b in 0..2 * d {
                h[(a * m + j, b * m + j)] -= s[(a, b)];
            }
        }
    }
    Ok(h)
}

/// All eigenvalues of the collocated operator, ascending.
pub fn operator_eigenvalues(spec: &AsymptoticOperatorSpec) -> Result<Vec<f64>> {
    let h = operator_matrix(spec)?;
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().cloned().collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue from the symmetric solver".into()));
    }
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// One distinct eigenvalue with an orthonormal real basis of its eigenspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLevel {
    pub eigenvalue: f64,
    pub multiplicity: usize,
    /// Each mode sampled at t = j/M, row-major by t, normalized to mean |phi|^2 = 1.
    pub modes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub dim: usize,
    pub m: usize,
    /// Negative levels, closest to zero first.
    pub levels: Vec<SpectralLevel>,
    /// max |lambda_k(M) - lambda_k(2M + 1)| over the returned levels.
    pub refinement_error: f64,
}

impl SpectrumResult {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.eigenvalue).collect()
    }

    /// Mode `mode` of level `k` (0-based) evaluated at t, by trigonometric interpolation.
    pub fn mode_at(&self, k: usize, mode: usize, t: f64) -> Vec<f64> {
        let w = 2 * self.dim;
        let phi = &self.levels[k].modes[mode];
        let mut out = vec![0.0; w];
        for j in 0..self.m {
            let c = dirichlet(self.m, t - j as f64 / self.m as f64);
            for a in 0..w {
                out[a] += c * phi[j * w + a];
            }
        }
        out
    }
}

fn negative_levels(spec: &AsymptoticOperatorSpec, count: usize) -> Result<Vec<SpectralLevel>> {
    let h = operator_matrix(spec)?;
    let m = spec.m();
    let w = 2 * spec.dim;
    let eig = SymmetricEigen::new(h);
    let zero = 1e-10 * eig.eigenvalues.amax().max(1.0);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] < -zero).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut levels: Vec<SpectralLevel> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        let lam = eig.eigenvalues[i];
        if !lam.is_finite() {
            return Err(Error::Numerical("non-finite eigenvalue from the symmetric solver".into()));
        }
        match members.last_mut() {
            Some(g) if (eig.eigenvalues[g[0]] - lam).abs() <= 1e-8 * (1.0 + lam.abs()) => g.push(i),
            _ => {
                if members.len() == count {
                    break;
                }
                members.push(vec![i]);
            }
        }
    }
    for g in members {
        let lam = g.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / g.len() as f64;
        let modes = g
            .iter()
            .map(|&i| {
                let v = eig.eigenvectors.column(i);
                let scale = (m as f64).sqrt() / v.norm();
                let mut out = vec![0.0; m * w];
                for j in 0..m {
                    for a in 0..w {
                        out[j * w + a] = v[a * m + j] * scale;
                    }
                }
                out
            })
            .collect();
        levels.push(SpectralLevel { eigenvalue: lam, multiplicity: g.len(), modes });
    }
    Ok(levels)
}

/// The `count` negative eigenvalues closest to zero, with eigenfunctions and a
/// refinement error estimate from the 2M + 1 grid.
pub fn spectrum(spec: &AsymptoticOperatorSpec, count: usize) -> Result<SpectrumResult> {
    let m = spec.m();
    if count == 0 || m < 8 * count {
        return Err(Error::Precondition(format!("need M >= 8K (M = {m}, K = {count})")));
    }
    let levels = negative_levels(spec, count)?;
    if levels.len() < count {
        return Err(Error::Numerical(format!("only {} negative levels resolved", levels.len())));
    }
    let fine = negative_levels(&spec.refined(), count)?;
    let refinement_error = levels
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a.eigenvalue - b.eigenvalue).abs())
        .fold(0.0, f64::max);
    Ok(SpectrumResult { dim: spec.dim, m, levels, refinement_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grading {
    pub cz: i64,
    /// cz + (n - 3).
    pub grading: i64,
}

fn to_complex(v: &[f64], m: usize) -> Vec<Complex64> {
    (0..m).map(|k| Complex64::new(v[k], v[k + m])).collect()
}

/// Unitary frame (columns) of the Lagrangian spanned by the real columns of `f`
/// in C^N, N = rows / 2 with (Re, Im) stacking.
fn unitary_frame(f: &DMatrix<f64>) -> DMatrix<Complex64> {
    let q = f.clone().qr().q();
    let n = f.nrows() / 2;
    DMatrix::from_fn(n, f.ncols(), |r, c| Complex64::new(q[(r, c)], q[(r + n, c)]))
}

/// Real (Re, Im) stacking of the graph frame {(conj v, Phi v)} in C^{2m}.
fn graph_frame(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let m = phi.nrows() / 2;
    let mut f = DMatrix::zeros(8 * m / 2, 2 * m);
    for k in 0..2 * m {
        let mut e = vec![0.0; 2 * m];
        e[k] = 1.0;
        let a = to_complex(&e, m);
        let img: Vec<f64> = (0..2 * m).map(|r| phi[(r, k)]).collect();
        let b = to_complex(&img, m);
        for r in 0..m {
            f[(r, k)] = a[r].re;
            f[(2 * m + r, k)] = -a[r].im;
            f[(m + r, k)] = b[r].re;
            f[(3 * m + r, k)] = b[r].im;
        }
    }
    f
}

/// Conley-Zehnder index of a sampled symplectic path with Phi(0) = I and
/// Phi(1) nondegenerate, via the spectral flow of the graph against the diagonal.
pub fn cz_grading(path: &[DMatrix<f64>], n: usize) -> Result<Grading> {
    if path.len() < 2 {
        return Err(Error::Precondition("path needs at least two samples".into()));
    }
    let dim = path[0].nrows();
    if dim % 2 != 0 || path.iter().any(|p| p.nrows() != dim || p.ncols() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: path.iter().map(|p| p.nrows()).find(|&r| r != dim).unwrap_or(dim) });
    }
    let m = dim / 2;
    if (&path[0] - DMatrix::<f64>::identity(dim, dim)).amax() > 1e-10 {
        return Err(Error::Precondition("path does not start at the identity".into()));
    }
    let last = &path[path.len() - 1];
    let det = (last - DMatrix::<f64>::identity(dim, dim)).determinant();
    if det.abs() < 1e-9 {
        return Err(Error::Degenerate { det });
    }
    let v = unitary_frame(&graph_frame(&DMatrix::identity(dim, dim)));
    let vh = v.adjoint();
    let souriau = |phi: &DMatrix<f64>| {
        let w = &vh * unitary_frame(&graph_frame(phi));
        &w * w.transpose()
    };
    let mut total = 0.0;
    let mut prev = Complex64::new(1.0, 0.0);
    let mut last_m = DMatrix::identity(2 * m, 2 * m);
    for phi in &path[1..] {
        let mm = souriau(phi);
        let d = mm.determinant();
        let step = (d / prev).arg();
        if step.abs() > 2.0 {
            return Err(Error::Numerical("symplectic path sampled too coarsely".into()));
        }
        total += step;
        prev = d;
        last_m = mm;
    }
    let ev = last_m
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("Schur form of the endpoint failed".into()))?;
    let tau = std::f64::consts::TAU;
    let phases: f64 = ev.iter().map(|z| z.arg().rem_euclid(tau)).sum();
    let windings = (total - phases) / tau;
    if (windings - windings.round()).abs() > 1e-6 {
        return Err(Error::Numerical(format!("inconsistent phase bookkeeping ({windings})")));
    }
    // Each endpoint phase lies strictly inside (0, 2 pi) and counts one half.
    let cz = windings.round() as i64 + m as i64;
    Ok(Grading { cz, grading: cz + n as i64 - 3 })
}

/// exp(J0 theta t) on R^{2m}, sampled at `samples + 1` points.
pub fn rotation_path(m: usize, theta: f64, samples: usize) -> Vec<DMatrix<f64>> {
    (0..=samples)
        .map(|i| {
            let a = theta * i as f64 / samples as f64;
            let mut r = DMatrix::zeros(2 * m, 2 * m);
            for k in 0..m {
                r[(k, k)] = a.cos();
                r[(k + m, k + m)] = a.cos();
                r[(k, k + m)] = -a.sin();
                r[(k + m, k)] = a.sin();
            }
            r
        })
        .collect()
}

/// Samples z(s, t) of a curve tail; `values[i][j]` interleaves (Re, Im) per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSample {
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl TailSample {
    pub fn dim(&self) -> usize {
        self.values.first().and_then(|r| r.first()).map_or(0, |v| v.len() / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.s_grid.len();
        let nt = self.t_grid.len();
        if ns < 2 || nt < 2 {
            return Err(Error::Precondition("tail grid too small".into()));
        }
        if self.s_grid.windows(2).any(|w| !(w[1] > w[0])) || self.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("tail grids must be strictly increasing".into()));
        }
        let w = self.values.first().and_then(|r| r.first()).map_or(0, |v| v.len());
        if w == 0 || w % 2 != 0 || self.values.len() != ns || self.values.iter().any(|r| r.len() != nt || r.iter().any(|v| v.len() != w)) {
            return Err(Error::Precondition("tail values do not match the grids".into()));
        }
        if self.values.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("non-finite tail value".into()));
        }
        let sup = self.sup_norms();
        if !(sup[ns - 1] < sup[0]) {
            return Err(Error::Precondition("tail is not decaying".into()));
        }
        Ok(())
    }

    /// sup over t of |z(s, t)| for each s.
    pub fn sup_norms(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max))
            .collect()
    }
}

/// Interleaved sample from the (Re block, Im block) layout.
fn interleave(v: &[f64]) -> Vec<f64> {
    let d = v.len() / 2;
    (0..d).flat_map(|c| [v[c], v[c + d]]).collect()
}

/// Tail with coefficient vectors `coeffs[k]` on the modes of level k.
pub fn synthesize(spec: &SpectrumResult, coeffs: &[Vec<f64>], s_grid: &[f64], t_grid: &[f64]) -> TailSample {
    let w = 2 * spec.dim;
    let modes: Vec<Vec<Vec<f64>>> = t_grid
        .iter()
        .map(|&t| {
            (0..coeffs.len().min(spec.levels.len()))
                .map(|k| {
                    let mut acc = vec![0.0; w];
                    for (mi, c) in coeffs[k].iter().enumerate() {
                        if *c != 0.0 {
                            let phi = spec.mode_at(k, mi, t);
                            acc.iter_mut().zip(&phi).for_each(|(a, p)| *a += c * p);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let values = s_grid
        .iter()
        .map(|&s| {
            modes
                .iter()
                .map(|per_level| {
                    let mut z = vec![0.0; w];
                    for (k, m) in per_level.iter().enumerate() {
                        let e = (spec.levels[k].eigenvalue * s).exp();
                        z.iter_mut().zip(m).for_each(|(a, b)| *a += e * b);
                    }
                    interleave(&z)
                })
                .collect()
        })
        .collect();
    TailSample { s_grid: s_grid.to_vec(), t_grid: t_grid.to_vec(), values }
}

/// Uniform grid of `n` points on [0, 1).
pub fn circle_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / n as f64).collect()
}

/// Planted tail: coefficient `c` on the first mode of each listed level (1-based),
/// plus uniform noise of relative size `noise` per s-circle.
pub fn synth_tail(
    spec: &SpectrumResult,
    planted: &[(usize, f64)],
    s_grid: &[f64],
    t_count: usize,
    noise: f64,
    seed: u64,
) -> TailSample {
    let depth = planted.iter().map(|(k, _)| *k).max().unwrap_or(1);
    let mut coeffs: Vec<Vec<f64>> = spec.levels.iter().take(depth).map(|l| vec![0.0; l.multiplicity]).collect();
    for &(k, c) in planted {
        if k >= 1 && k <= coeffs.len() {
            coeffs[k - 1][0] = c;
        }
    }
    let mut tail = synthesize(spec, &coeffs, s_grid, &circle_grid(t_count));
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sup = tail.sup_norms();
        for (row, a) in tail.values.iter_mut().zip(sup) {
            for v in row.iter_mut().flatten() {
                *v += noise * a * rng.gen_range(-1.0..1.0);
            }
        }
    }
    tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// 1-based index of the leading level.
    pub leading_index: usize,
    pub eigenvalues: Vec<f64>,
    /// Coefficients on each level's modes, multiplying exp(lambda_k s).
    pub coefficients: Vec<Vec<f64>>,
    pub magnitudes: Vec<f64>,
    pub significant: Vec<bool>,
    /// Gap between the leading eigenvalue and the next one.
    pub delta: f64,
    pub residual: f64,
    pub s_range: (f64, f64),
    pub t_count: usize,
}

/// Weighted least-squares fit of a tail in the eigenbasis.
pub fn fit_tail(tail: &TailSample, spec: &SpectrumResult) -> Result<TailFit> {
    tail.validate()?;
    if tail.dim() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, got: tail.dim() });
    }
    let w = 2 * spec.dim;
    let s0 = tail.s_grid[0];
    let ns = tail.s_grid.len();
    let nt = tail.t_grid.len();
    let cols: Vec<(usize, usize)> = spec
        .levels
        .iter()
        .enumerate()
        .flat_map(|(k, l)| (0..l.multiplicity).map(move |m| (k, m)))
        .collect();
    let rows = ns * nt * w;
    if rows <= cols.len() {
        return Err(Error::Precondition("tail has fewer samples than unknowns".into()));
    }
    let weights: Vec<f64> = tail.sup_norms().iter().map(|a| 1.0 / a.max(f64::MIN_POSITIVE)).collect();
    let modes: Vec<Vec<Vec<f64>>> = tail
        .t_grid
        .iter()
        .map(|&t| cols.iter().map(|&(k, m)| interleave(&spec.mode_at(k, m, t))).collect())
        .collect();
    let mut a = DMatrix::zeros(rows, cols.len());
    let mut b = DVector::zeros(rows);
    for (i, &s) in tail.s_grid.iter().enumerate() {
        for j in 0..nt {
            for c in 0..w {
                let r = (i * nt + j) * w + c;
                b[r] = weights[i] * tail.values[i][j][c];
                for (q, &(k, _)) in cols.iter().enumerate() {
                    a[(r, q)] = weights[i] * (spec.levels[k].eigenvalue * (s - s0)).exp() * modes[j][q][c];
                }
            }
        }
    }
    let norms: Vec<f64> = (0..cols.len()).map(|q| a.column(q).norm().max(f64::MIN_POSITIVE)).collect();
    for (q, n) in norms.iter().enumerate() {
        a.column_mut(q).scale_mut(1.0 / n);
    }
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    let res = &a * &x - &b;
    let residual = res.norm() / b.norm().max(f64::MIN_POSITIVE);
    if !(residual <= FIT_RESIDUAL_MAX) {
        return Err(Error::Unclassifiable { residual });
    }
    // Standard errors in normalized units: sigma^2 * diag((A^T A)^-1) = sigma^2 sum (V_qi / s_i)^2.
    let sigma2 = res.norm_squared() / (rows - cols.len()) as f64;
    let vt = svd.v_t.as_ref().expect("svd computed with V");
    let var: Vec<f64> = (0..cols.len())
        .map(|q| {
            (0..svd.singular_values.len())
                .map(|i| {
                    let sv = svd.singular_values[i];
                    if sv > 0.0 { (vt[(i, q)] / sv).powi(2) } else { 0.0 }
                })
                .sum::<f64>()
                * sigma2
        })
        .collect();
    let nl = spec.levels.len();
    let mut coefficients: Vec<Vec<f64>> = spec.levels.iter().map(|l| vec![0.0; l.multiplicity]).collect();
    let mut se2 = vec![0.0; nl];
    for (q, &(k, m)) in cols.iter().enumerate() {
        let unscale = (-spec.levels[k].eigenvalue * s0).exp() / norms[q];
        coefficients[k][m] = x[q] * unscale;
        se2[k] += var[q] * unscale * unscale;
    }
    let magnitudes: Vec<f64> = coefficients.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let top = magnitudes.iter().cloned().fold(0.0, f64::max);
    let significant: Vec<bool> = magnitudes
        .iter()
        .zip(&se2)
        .map(|(m, s)| *m > NOISE_FLOOR * top && *m > 5.0 * s.sqrt())
        .collect();
    let lead = significant.iter().position(|s| *s).ok_or(Error::Unclassifiable { residual })?;
    let lam = spec.eigenvalues();
    let delta = if lead + 1 < nl { lam[lead] - lam[lead + 1] } else if lead > 0 { lam[lead - 1] - lam[lead] } else { lam[0].abs() };
    Ok(TailFit {
        leading_index: lead + 1,
        eigenvalues: lam,
        coefficients,
        magnitudes,
        significant,
        delta,
        residual,
        s_range: (s0, tail.s_grid[ns - 1]),
        t_count: nt,
    })
}

/// Batch fits, in input order.
pub fn fit_tails(tails: &[TailSample], spec: &SpectrumResult) -> Vec<Result<TailFit>> {
    tails.par_iter().map(|t| fit_tail(t, spec)).collect()
}

/// Resynthesizes a fitted tail on the given s grid.
pub fn synthesize_fit(spec: &SpectrumResult, fit: &TailFit, s_grid: &[f64]) -> TailSample {
    let coeffs: Vec<Vec<f64>> = fit
        .coefficients
        .iter()
        .zip(&fit.significant)
        .map(|(c, s)| if *s { c.clone() } else { vec![0.0; c.len()] })
        .collect();
    synthesize(spec, &coeffs, s_grid, &circle_grid(fit.t_count))
}

fn runs_on_circle(inside: &[bool]) -> usize {
    let n = inside.len();
    (0..n).filter(|&j| inside[j] && !inside[(j + n - 1) % n]).count()
}

/// Arcs of the preimage of the fiber disk of radius r centred at the marker
/// image z(s, t_0), counted on the circles where the tail has size about r.
pub fn count_arcs(tail: &TailSample, r: f64) -> Result<usize> {
    tail.validate()?;
    if !(r > 0.0) {
        return Err(Error::Inconclusive(format!("radius {r} is not positive")));
    }
    let sup = tail.sup_norms();
    let band: Vec<usize> = (0..sup.len()).filter(|&i| sup[i] >= 0.75 * r && sup[i] <= 1.25 * r).collect();
    if band.is_empty() {
        return Err(Error::Inconclusive(format!(
            "radius {r:e} outside the resolvable range [{:e}, {:e}]",
            sup[sup.len() - 1],
            sup[0]
        )));
    }
    let mut count = None;
    for i in band {
        let row = &tail.values[i];
        let marker = &row[0];
        let inside: Vec<bool> = row
            .iter()
            .map(|v| v.iter().zip(marker).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < r)
            .collect();
        if inside.iter().all(|x| *x) {
            return Err(Error::Inconclusive("disk contains a whole circle".into()));
        }
        let c = runs_on_circle(&inside);
        match count {
            None => count = Some(c),
            Some(prev) if prev != c => return Err(Error::Inconclusive(format!("arc count varies over the tail ({prev} vs {c})"))),
            _ => {}
        }
    }
    Ok(count.unwrap_or(0))
}

/// Radius below which the leading term dominates the later ones by a factor 4.
fn crossover_radius(spec: &SpectrumResult, fit: &TailFit) -> f64 {
    let j = fit.leading_index - 1;
    let cj = fit.magnitudes[j];
    let lam = &fit.eigenvalues;
    let rest = |s: f64| -> f64 {
        (j + 1..lam.len())
            .filter(|&k| fit.significant[k])
            .map(|k| fit.magnitudes[k] * (lam[k] * s).exp())
            .sum::<f64>()
    };
    let g = |s: f64| cj * (lam[j] * s).exp() - 4.0 * rest(s);
    let s0 = fit.s_range.0;
    if rest(s0) == 0.0 || g(s0) >= 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (s0, s0 + 1.0);
    while g(hi) < 0.0 && hi < s0 + 1e6 {
        hi = s0 + 2.0 * (hi - s0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 { lo = mid } else { hi = mid }
    }
    let t = synthesize_fit(spec, fit, &[hi, hi + 1e-9]);
    t.sup_norms()[0]
}

/// Radii r_m > ... > r_1 (returned in that order) such that every fit with
/// leading index >= j shows its leading index as the arc count at r_j.
pub fn select_radii(fits: &[TailFit], spec: &SpectrumResult, floors: &[f64]) -> Result<Vec<f64>> {
    if fits.is_empty() {
        return Err(Error::NoValidRadii("empty family".into()));
    }
    let m = fits.iter().map(|f| f.leading_index).max().unwrap_or(1);
    if floors.len() < m || floors[..m].iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::NoValidRadii("coefficient floors must be positive for every stratum".into()));
    }
    for f in fits {
        if f.magnitudes[f.leading_index - 1] < floors[f.leading_index - 1] {
            return Err(Error::NoValidRadii(format!(
                "leading coefficient {:e} below the floor {:e} of stratum {}",
                f.magnitudes[f.leading_index - 1],
                floors[f.leading_index - 1],
                f.leading_index
            )));
        }
    }
    let tails: Vec<TailSample> = fits
        .iter()
        .map(|f| {
            // the fitted model is extrapolated until the leading term has decayed by e^-14
            let n = 128;
            let lead = f.eigenvalues[f.leading_index - 1].abs();
            let end = f.s_range.1.max(f.s_range.0 + 14.0 / lead);
            let grid: Vec<f64> = (0..n).map(|i| f.s_range.0 + (end - f.s_range.0) * i as f64 / (n - 1) as f64).collect();
            synthesize_fit(spec, f, &grid)
        })
        .collect();
    let bands: Vec<(f64, f64)> = tails
        .iter()
        .map(|t| {
            let s = t.sup_norms();
            (1.4 * s[s.len() - 1], s[0] / 1.4)
        })
        .collect();
    let cross: Vec<f64> = fits.iter().map(|f| crossover_radius(spec, f)).collect();
    let mut radii = vec![0.0; m];
    let mut above = f64::INFINITY;
    for j in (1..=m).rev() {
        let family: Vec<usize> = (0..fits.len()).filter(|&i| fits[i].leading_index >= j).collect();
        let mut hi = 0.7 * above;
        let mut lo = 0.0f64;
        for &i in &family {
            hi = hi.min(0.5 * cross[i]).min(bands[i].1);
            lo = lo.max(bands[i].0);
        }
        if family.is_empty() {
            hi = hi.min(above * 0.7);
        }
        if !(lo < hi) || !hi.is_finite() {
            return Err(Error::NoValidRadii(format!("stratum {j}: empty radius window [{lo:e}, {hi:e}]")));
        }
        let r = 0.5 * (lo + hi);
        for &i in &family {
            match count_arcs(&tails[i], r) {
                Ok(k) if k == fits[i].leading_index => {}
                Ok(k) => return Err(Error::NoValidRadii(format!("stratum {j}: {k} arcs for leading index {}", fits[i].leading_index))),
                Err(e) => return Err(Error::NoValidRadii(format!("stratum {j}: {e}"))),
            }
        }
        radii[j - 1] = r;
        above = r;
    }
    radii.reverse();
    Ok(radii)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_operator_levels() {
        let s = spectrum(&AsymptoticOperatorSpec::constant(1, 33, 0.0), 3).unwrap();
        for (k, l) in s.levels.iter().enumerate() {
            assert!((l.eigenvalue + std::f64::consts::TAU * (k + 1) as f64).abs() < 1e-8);
            assert_eq!(l.multiplicity, 2);
        }
    }

    #[test]
    fn rotation_index() {
        let g = cz_grading(&rotation_path(1, 1.0, 64), 3).unwrap();
        assert_eq!(g.cz, 1);
        assert_eq!(g.grading, 1);
    }

    #[test]
    fn arcs_on_circle_wrap() {
        assert_eq!(runs_on_circle(&[true, false, true]), 1);
        assert_eq!(runs_on_circle(&[true, false, true, false]), 2);
    }
}
