//! Post-surgery Reeb dynamics: ambient affine steps alternating with exact
//! handle passages, chord shooting from the co-core sphere, orbit fixed
//! points, and the word/chord bijection check.
//!
//! States live in two normalized charts around the handle pole e1:
//! - hemisphere coordinates `eta` at a chord end c+ (entry position -e1): the
//!   weighted x-direction of the entry is `(e1 + kappa eta)/|.|` with
//!   `kappa = 1/r0`, so the open unit ball is exactly the set of entries whose
//!   passage exits on the far side of the sphere;
//! - position coordinates `u` at a chord start c- (exit position +e1): the
//!   gnomonic coordinates of the exit direction divided by `kappa_pos`, chosen
//!   so that the passage eta -> u is tangent to the identity at 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambient::{transition_map, AmbientChord, ChordAtlas};
use crate::error::{Error, Result};
use crate::flows::{self, FlowConfig, Landing, Launch, Passage};
use crate::geometry::{norm, SplitPoint};
use crate::handle::HandleParams;
use crate::words::{self, CyclicWord, Word};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub flow: FlowConfig,
    /// Residual tolerance, rescaled units.
    pub tol: f64,
    pub max_iter: usize,
    pub multistart: usize,
    pub multistart_radius: f64,
    pub spread_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            tol: 1e-9,
            max_iter: 10_000,
            multistart: 10,
            multistart_radius: 0.5,
            spread_tol: 1e-6,
        }
    }
}

/// Scales of the normalized charts for one parameter tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Charts {
    pub params: HandleParams,
    pub flow: FlowConfig,
    pub t_liouville: f64,
    pub r0: f64,
    pub kappa: f64,
    pub kappa_pos: f64,
    /// Exit time of the planar passage.
    pub tau0: f64,
}

fn vnorm(v: &[f64]) -> f64 {
    norm(v)
}

impl Charts {
    pub fn new(params: &HandleParams, flow: &FlowConfig) -> Result<Self> {
        params.validate()?;
        let (t, r0) = flows::boundary_times(params)?;
        let kappa = 1.0 / r0;
        let mut c = Charts { params: *params, flow: *flow, t_liouville: t, r0, kappa, kappa_pos: 1.0, tau0: 0.0 };
        let planar = flows::handle_passage(params, &c.entry_point(&vec![0.0; params.n - 1])?, flow)?;
        let a = 0.5 * (1.0 + r0 * r0);
        c.tau0 = planar.tau;
        c.kappa_pos = (2.0 * a).sqrt() * (params.k2() * planar.tau).sinh() / (r0 * r0);
        Ok(c)
    }

    fn d(&self) -> usize {
        self.params.n - 1
    }

    /// Entry point on the boundary of N_-eps at c+ for hemisphere state `eta`.
    pub fn entry_point(&self, eta: &[f64]) -> Result<SplitPoint> {
        if eta.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: eta.len() });
        }
        let r = vnorm(eta);
        if !(r < 1.0) {
            return Err(Error::OutOfChart { norm: r, radius: 1.0 });
        }
        let mut p = vec![1.0];
        p.extend(eta.iter().map(|e| self.kappa * e));
        let mut q = vec![0.0; self.params.n];
        q[0] = -1.0;
        flows::boundary_point(&self.params, &q, &p)
    }

    /// Position state of an exit point on the boundary of N_-eps near c-.
    pub fn position_of(&self, exit: &SplitPoint) -> Result<Vec<f64>> {
        let (q, _) = flows::directions(&self.params, exit);
        if !(q[0] > 0.0) {
            return Err(Error::Domain("exit lies on the entry side of the sphere".into()));
        }
        Ok(q[1..].iter().map(|v| v / q[0] / self.kappa_pos).collect())
    }

    /// The passage from hemisphere state `eta` to the next position state.
    pub fn handle(&self, eta: &[f64]) -> Result<(Vec<f64>, Passage)> {
        let entry = self.entry_point(eta)?;
        let pass = flows::handle_passage(&self.params, &entry, &self.flow)?;
        Ok((self.position_of(&pass.exit)?, pass))
    }

    /// Radial profile of the passage: |u| as a function of |eta|.
    fn handle_radius(&self, r: f64) -> Result<f64> {
        let mut eta = vec![0.0; self.d()];
        eta[0] = r;
        Ok(self.handle(&eta)?.0[0])
    }

    /// Inverse of [`Charts::handle`] by radial bisection.
    pub fn handle_inverse(&self, u: &[f64]) -> Result<Vec<f64>> {
        let target = vnorm(u);
        if target == 0.0 {
            return Ok(vec![0.0; self.d()]);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match self.handle_radius(mid) {
                Ok(v) if v <= target => lo = mid,
                Ok(_) => hi = mid,
                Err(Error::UnboundedFlow { .. }) => hi = mid,
                Err(e) => return Err(e),
            }
        }
        let r = 0.5 * (lo + hi);
        Ok(u.iter().map(|v| v * r / target).collect())
    }

    /// Launch from Gamma with weighted x-direction (1, sigma).
    pub fn launch_from(&self, sigma: &[f64]) -> Result<(Vec<f64>, Launch)> {
        let mut dir = vec![1.0];
        dir.extend_from_slice(sigma);
        let l = flows::gamma_launch(&self.params, &dir, &self.flow)?;
        Ok((self.position_of(&l.exit)?, l))
    }

    /// The Gamma launch whose exit has position state `u`, by radial bisection in log |sigma|.
    pub fn launch_to(&self, u: &[f64]) -> Result<(Vec<f64>, Launch)> {
        let target = vnorm(u);
        if target == 0.0 {
            let sigma = vec![0.0; self.d()];
            let (_, l) = self.launch_from(&sigma)?;
            return Ok((sigma, l));
        }
        let dir: Vec<f64> = u.iter().map(|v| v / target).collect();
        let radius = |ls: f64| -> Result<f64> {
            let s = ls.exp();
            let sigma: Vec<f64> = dir.iter().map(|v| v * s).collect();
            Ok(vnorm(&self.launch_from(&sigma)?.0))
        };
        let (mut lo, mut hi) = (-60.0f64, 60.0f64);
        if radius(lo)? > target {
            return Err(Error::Domain("launch target below the resolvable radius".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match radius(mid) {
                Ok(v) if v <= target => lo = mid,
                Ok(_) => hi = mid,
                Err(Error::UnboundedFlow { .. }) => hi = mid,
                Err(e) => return Err(e),
            }
        }
        let s = (0.5 * (lo + hi)).exp();
        let sigma: Vec<f64> = dir.iter().map(|v| v * s).collect();
        let (got, l) = self.launch_from(&sigma)?;
        let miss: f64 = got.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if miss > 1e-8 * (1.0 + target) {
            return Err(Error::NotFound { word: "gamma launch".into(), residual: miss });
        }
        Ok((sigma, l))
    }

    /// Approach to Gamma from hemisphere state `eta`.
    pub fn landing(&self, eta: &[f64]) -> Result<Landing> {
        flows::gamma_landing(&self.params, &self.entry_point(eta)?)
    }
}

/// Result of one composite step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    /// Hemisphere state at the chord end.
    pub hemisphere: Vec<f64>,
    /// Position state at the next chord start.
    pub state: Vec<f64>,
    /// Chord action plus the step's deviation, unscaled units.
    pub action: f64,
    /// alpha-action of the handle segment, unscaled units.
    pub handle_action: f64,
    /// Net change against the chord action, unscaled units.
    pub deviation: f64,
}

/// Ambient transition of `chord` followed by the exact handle passage.
pub fn composite_step(charts: &Charts, chord: &AmbientChord, state: &[f64]) -> Result<StepResult> {
    let mut acc = 0.0;
    let eta = transition_map(chord, state, &mut acc)?;
    let (u, pass) = charts.handle(&eta)?;
    let unit = charts.params.action_unit();
    Ok(StepResult {
        hemisphere: eta,
        state: u,
        action: acc + unit * pass.deviation,
        handle_action: unit * pass.action_v_plus,
        deviation: unit * pass.deviation,
    })
}

fn chords_of<'a>(atlas: &'a ChordAtlas, ids: &[String]) -> Result<Vec<&'a AmbientChord>> {
    ids.iter()
        .map(|id| atlas.chord(id).ok_or_else(|| Error::Precondition(format!("unknown chord {id}"))))
        .collect()
}

fn check_word(atlas: &ChordAtlas, chords: &[&AmbientChord], cyclic: bool) -> Result<()> {
    if chords.is_empty() {
        return Err(Error::Precondition("empty word".into()));
    }
    for w in chords.windows(2) {
        if w[0].end != w[1].start || !atlas.is_surgered(&w[0].end) {
            return Err(Error::Precondition(format!("{} -> {} is not composable", w[0].id, w[1].id)));
        }
    }
    if cyclic {
        let (l, f) = (chords[chords.len() - 1], chords[0]);
        if l.end != f.start || !atlas.is_surgered(&l.end) {
            return Err(Error::Precondition("word is not cyclically composable".into()));
        }
    }
    let ids: Vec<String> = chords.iter().map(|c| c.id.clone()).collect();
    let a = words::word_action(atlas, &ids).to_f64();
    if !(a < atlas.action_cap) {
        return Err(Error::Precondition(format!("word action {a} is not below the cap {}", atlas.action_cap)));
    }
    Ok(())
}

/// Hemisphere state at the last chord end, starting from position `u0` at the first chord start.
struct Chain {
    end: Vec<f64>,
    deviation: f64,
}

fn run_chain(charts: &Charts, chords: &[&AmbientChord], u0: &[f64]) -> Result<Chain> {
    let mut u = u0.to_vec();
    let mut dev = 0.0;
    for (j, ch) in chords.iter().enumerate() {
        let mut acc = 0.0;
        let eta = transition_map(ch, &u, &mut acc)?;
        if j + 1 == chords.len() {
            return Ok(Chain { end: eta, deviation: dev });
        }
        let (next, pass) = charts.handle(&eta)?;
        dev += pass.deviation;
        u = next;
    }
    unreachable!("chain over a non-empty word")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundChord {
    pub word: Word,
    pub from: String,
    pub to: String,
    /// Position state of the first exit (the unknown of the shooting problem).
    pub launch_state: Vec<f64>,
    /// Launch point on the co-core sphere (rescaled), when the word starts on a surgered component.
    pub launch_point: Option<SplitPoint>,
    /// Rescaled landing residual: weighted distance from Gamma, or the final
    /// hemisphere state norm when landing on Lambda_0.
    pub landing_residual: f64,
    pub action: f64,
    /// act(c') - act(word), unscaled units, computed without cancellation.
    pub deviation: f64,
    pub iterations: usize,
    pub multistart_spread: f64,
    pub multistart_converged: usize,
}

fn seed_of(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Damped Newton on u0 -> final hemisphere state.
fn newton(charts: &Charts, chords: &[&AmbientChord], start: &[f64], tol: f64) -> (Option<Vec<f64>>, f64, usize) {
    let d = start.len();
    let resid = |u: &[f64]| run_chain(charts, chords, u).map(|c| c.end);
    let mut u = start.to_vec();
    let mut r = match resid(&u) {
        Ok(r) => r,
        Err(_) => return (None, f64::INFINITY, 0),
    };
    let mut rn = vnorm(&r);
    for it in 0..100 {
        if rn <= tol {
            return (Some(u), rn, it);
        }
        let h = 1e-7 * (1.0 + vnorm(&u));
        let mut jac = nalgebra::DMatrix::zeros(d, d);
        for k in 0..d {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let (fp, fm) = match (resid(&up), resid(&dn)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return (None, rn, it),
            };
            for i in 0..d {
                jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let step = match jac.lu().solve(&nalgebra::DVector::from_column_slice(&r)) {
            Some(s) => s,
            None => return (None, rn, it),
        };
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a - lam * s).collect();
            if let Ok(rt) = resid(&trial) {
                let tn = vnorm(&rt);
                if tn < rn {
                    u = trial;
                    r = rt;
                    rn = tn;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            return (if rn <= tol { Some(u) } else { None }, rn, it);
        }
    }
    (if rn <= tol { Some(u) } else { None }, rn, 100)
}

/// Direct solution by propagating the landing condition backwards through the word.
pub fn backward_solution(charts: &Charts, atlas: &ChordAtlas, ids: &[String]) -> Result<Vec<f64>> {
    let chords = chords_of(atlas, ids)?;
    let mut eta = vec![0.0; charts.params.n - 1];
    for (j, ch) in chords.iter().enumerate().rev() {
        let rhs = nalgebra::DVector::from_column_slice(&eta) - &ch.offset;
        let u = ch
            .linear
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular transition".into()))?;
        let u: Vec<f64> = u.iter().cloned().collect();
        if j == 0 {
            return Ok(u);
        }
        eta = charts.handle_inverse(&u)?;
    }
    unreachable!("non-empty word")
}

/// Shooting for the post-surgery chord corresponding to `word`.
pub fn find_chord_for_word(charts: &Charts, atlas: &ChordAtlas, word: &Word, cfg: &SolverConfig) -> Result<FoundChord> {
    let chords = chords_of(atlas, &word.chords)?;
    check_word(atlas, &chords, false)?;
    let d = charts.params.n - 1;
    let from = chords[0].start.clone();
    let to = chords[chords.len() - 1].end.clone();
    let newton_tol = cfg.tol * 1e-4;
    let (sol, best, iters) = newton(charts, &chords, &vec![0.0; d], newton_tol);
    let u0 = sol.ok_or_else(|| Error::NotFound { word: word.label(), residual: best })?;
    let chain = run_chain(charts, &chords, &u0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&word.label()));
    let mut spread = 0.0f64;
    let mut converged = 0;
    for _ in 0..cfg.multistart {
        let mut s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sn = vnorm(&s).max(1e-300);
        let rad = cfg.multistart_radius * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
        s.iter_mut().for_each(|v| *v *= rad / sn);
        if let (Some(v), _, _) = newton(charts, &chords, &s, newton_tol) {
            converged += 1;
            let dist = vnorm(&v.iter().zip(&u0).map(|(a, b)| a - b).collect::<Vec<_>>());
            spread = spread.max(dist);
        } else {
            spread = f64::INFINITY;
        }
    }

    let mut dev = chain.deviation;
    let mut launch_point = None;
    if atlas.is_surgered(&from) {
        let (_, launch) = charts.launch_to(&u0)?;
        dev += launch.deviation;
        launch_point = Some(launch.start);
    }
    let landing_residual = if atlas.is_surgered(&to) {
        let land = charts.landing(&chain.end)?;
        dev += land.deviation;
        land.residual
    } else {
        vnorm(&chain.end)
    };
    if landing_residual > cfg.tol {
        return Err(Error::NotFound { word: word.label(), residual: landing_residual });
    }
    let unit = charts.params.action_unit();
    let total = word.action_dd.add_f64(unit * dev);
    Ok(FoundChord {
        word: word.clone(),
        from,
        to,
        launch_state: u0,
        launch_point,
        landing_residual,
        action: total.to_f64(),
        deviation: total.sub(word.action_dd).to_f64(),
        iterations: iters,
        multistart_spread: spread,
        multistart_converged: converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundOrbit {
    pub cyclic_word: CyclicWord,
    /// Position state q0 at the marked chord start.
    pub q0: Vec<f64>,
    /// Hemisphere state p0 at the marked chord end.
    pub p0: Vec<f64>,
    pub forward_residual: f64,
    pub backward_residual: f64,
    pub action: f64,
    pub deviation: f64,
    pub contraction: f64,
    pub iterations: usize,
    /// (position, hemisphere) states at each chord of the marked word.
    pub junctions: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Once-around map on the hemisphere state at the end of the first chord.
fn once_around_f(charts: &Charts, chords: &[&AmbientChord], eta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = chords.len();
    let mut e = eta.to_vec();
    let mut dev = 0.0;
    for j in 0..m {
        let (u, pass) = charts.handle(&e)?;
        dev += pass.deviation;
        let mut acc = 0.0;
        e = transition_map(chords[(j + 1) % m], &u, &mut acc)?;
    }
    Ok((e, dev))
}

/// Once-around map on the position state at the start of the first chord.
fn once_around_g(charts: &Charts, chords: &[&AmbientChord], u: &[f64]) -> Result<Vec<f64>> {
    let mut v = u.to_vec();
    for ch in chords {
        let mut acc = 0.0;
        let eta = transition_map(ch, &v, &mut acc)?;
        v = charts.handle(&eta)?.0;
    }
    Ok(v)
}

fn iterate<F: Fn(&[f64]) -> Result<Vec<f64>>>(map: F, seed: Vec<f64>, cap: usize, label: &str) -> Result<(Vec<f64>, usize)> {
    let mut x = seed;
    let mut trace: Vec<f64> = Vec::new();
    for it in 0..cap {
        let y = map(&x).map_err(|e| Error::Divergence { word: label.to_string(), trace: format!("step {it}: {e}") })?;
        let step = vnorm(&y.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        x = y;
        if trace.len() >= 8 {
            trace.remove(0);
        }
        trace.push(step);
        if step <= 1e-14 * (1.0 + vnorm(&x)) {
            return Ok((x, it + 1));
        }
    }
    Err(Error::Divergence { word: label.to_string(), trace: format!("no convergence in {cap} steps; last steps {trace:?}") })
}

/// Fixed point of the once-around maps for a cyclic word (marked at its first chord).
pub fn find_orbit_for_cyclic_word(charts: &Charts, atlas: &ChordAtlas, word: &CyclicWord, cfg: &SolverConfig) -> Result<FoundOrbit> {
    let chords = chords_of(atlas, &word.chords)?;
    check_word(atlas, &chords, true)?;
    let d = charts.params.n - 1;
    let label = word.label();
    let f = |e: &[f64]| once_around_f(charts, &chords, e).map(|r| r.0);
    let g = |u: &[f64]| once_around_g(charts, &chords, u);
    let (p0, it_f) = iterate(f, vec![0.0; d], cfg.max_iter, &label)?;
    let (q0, it_g) = iterate(g, vec![0.0; d], cfg.max_iter, &label)?;

    let (fp, dev) = once_around_f(charts, &chords, &p0)?;
    let forward_residual = vnorm(&fp.iter().zip(&p0).map(|(a, b)| a - b).collect::<Vec<_>>());
    let gq = once_around_g(charts, &chords, &q0)?;
    let mut backward_residual = vnorm(&gq.iter().zip(&q0).map(|(a, b)| a - b).collect::<Vec<_>>());
    let mut acc = 0.0;
    let p_from_q = transition_map(chords[0], &q0, &mut acc)?;
    backward_residual = backward_residual.max(vnorm(&p_from_q.iter().zip(&p0).map(|(a, b)| a - b).collect::<Vec<_>>()));
    if forward_residual > cfg.tol || backward_residual > cfg.tol {
        return Err(Error::Divergence {
            word: label,
            trace: format!("fixed-point residuals {forward_residual:e}, {backward_residual:e}"),
        });
    }

    let delta = 1e-6;
    let mut contraction = 0.0f64;
    for k in 0..d {
        let mut e = p0.clone();
        e[k] += delta;
        let (fe, _) = once_around_f(charts, &chords, &e)?;
        let dist = vnorm(&fe.iter().zip(&fp).map(|(a, b)| a - b).collect::<Vec<_>>());
        contraction = contraction.max(dist / delta);
    }

    let mut junctions = Vec::with_capacity(chords.len());
    let mut u = q0.clone();
    for ch in &chords {
        let mut acc = 0.0;
        let eta = transition_map(ch, &u, &mut acc)?;
        junctions.push((u.clone(), eta.clone()));
        u = charts.handle(&eta)?.0;
    }

    let unit = charts.params.action_unit();
    let total = word.action_dd.add_f64(unit * dev);
    Ok(FoundOrbit {
        cyclic_word: word.clone(),
        q0,
        p0,
        forward_residual,
        backward_residual,
        action: total.to_f64(),
        deviation: total.sub(word.action_dd).to_f64(),
        contraction,
        iterations: it_f.max(it_g),
        junctions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordEntry {
    pub from: String,
    pub to: String,
    pub word: String,
    pub word_action: f64,
    pub found: bool,
    pub residual: Option<f64>,
    pub spread: Option<f64>,
    pub action: Option<f64>,
    pub deviation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitEntry {
    pub word: String,
    pub word_action: f64,
    pub found: bool,
    pub residual: Option<f64>,
    pub contraction: Option<f64>,
    pub action: Option<f64>,
    pub deviation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub from: String,
    pub to: String,
    pub words: usize,
    pub found: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BijectionReport {
    pub epsilon: f64,
    pub pass: bool,
    pub action_gap: f64,
    pub pairs: Vec<PairCount>,
    pub chords: Vec<ChordEntry>,
    pub orbits: Vec<OrbitEntry>,
    pub misses: Vec<String>,
    pub multiplicities: Vec<String>,
    pub action_mismatches: Vec<String>,
}

fn chord_entry(charts: &Charts, atlas: &ChordAtlas, from: &str, to: &str, w: &Word, cfg: &SolverConfig) -> ChordEntry {
    let base = ChordEntry {
        from: from.to_string(),
        to: to.to_string(),
        word: w.label(),
        word_action: w.action,
        found: false,
        residual: None,
        spread: None,
        action: None,
        deviation: None,
        error: None,
    };
    match find_chord_for_word(charts, atlas, w, cfg) {
        Ok(fc) => ChordEntry {
            found: true,
            residual: Some(fc.landing_residual),
            spread: Some(fc.multistart_spread),
            action: Some(fc.action),
            deviation: Some(fc.deviation),
            ..base
        },
        Err(e) => ChordEntry { error: Some(e.to_string()), ..base },
    }
}

/// Runs every word and cyclic word through the solvers and checks the correspondence.
pub fn verify_bijection(params: &HandleParams, atlas: &ChordAtlas, cfg: &SolverConfig) -> Result<BijectionReport> {
    let gap = words::min_action_gap(atlas).value;
    let word_sets = words::enumerate_all_words(atlas);
    let cyclic = words::enumerate_cyclic(atlas);
    let total_words: usize = word_sets.iter().map(|(_, w)| w.len()).sum();
    if total_words == 0 && cyclic.is_empty() {
        return Ok(BijectionReport {
            epsilon: params.epsilon,
            pass: true,
            action_gap: gap,
            pairs: Vec::new(),
            chords: Vec::new(),
            orbits: Vec::new(),
            misses: Vec::new(),
            multiplicities: Vec::new(),
            action_mismatches: Vec::new(),
        });
    }
    let charts = Charts::new(params, &cfg.flow)?;
    let jobs: Vec<(String, String, Word)> = word_sets
        .iter()
        .flat_map(|((f, t), ws)| ws.iter().map(move |w| (f.clone(), t.clone(), w.clone())))
        .collect();
    let chords: Vec<ChordEntry> = jobs
        .par_iter()
        .map(|(f, t, w)| chord_entry(&charts, atlas, f, t, w, cfg))
        .collect();
    let orbits: Vec<OrbitEntry> = cyclic
        .par_iter()
        .map(|w| {
            let base = OrbitEntry {
                word: w.label(),
                word_action: w.action,
                found: false,
                residual: None,
                contraction: None,
                action: None,
                deviation: None,
                error: None,
            };
            match find_orbit_for_cyclic_word(&charts, atlas, w, cfg) {
                Ok(o) => OrbitEntry {
                    found: true,
                    residual: Some(o.forward_residual.max(o.backward_residual)),
                    contraction: Some(o.contraction),
                    action: Some(o.action),
                    deviation: Some(o.deviation),
                    ..base
                },
                Err(e) => OrbitEntry { error: Some(e.to_string()), ..base },
            }
        })
        .collect();

    let half_gap = 0.5 * gap;
    let mut misses = Vec::new();
    let mut multiplicities = Vec::new();
    let mut mismatches = Vec::new();
    for c in &chords {
        let tag = format!("{}->{}:{}", c.from, c.to, c.word);
        if !c.found {
            misses.push(tag);
            continue;
        }
        if c.spread.map_or(true, |s| !(s <= cfg.spread_tol)) {
            multiplicities.push(tag.clone());
        }
        let a = c.action.unwrap_or(f64::NAN);
        if !(c.deviation.unwrap_or(f64::NAN).abs() < half_gap) || !(a < atlas.action_cap) {
            mismatches.push(tag);
        }
    }
    for o in &orbits {
        let tag = format!("({})", o.word);
        if !o.found {
            misses.push(tag);
            continue;
        }
        if o.contraction.map_or(true, |c| !(c < 1.0)) {
            multiplicities.push(tag.clone());
        }
        let a = o.action.unwrap_or(f64::NAN);
        if !(o.deviation.unwrap_or(f64::NAN).abs() < half_gap) || !(a < atlas.action_cap) {
            mismatches.push(tag);
        }
    }
    let pairs: Vec<PairCount> = word_sets
        .iter()
        .map(|((f, t), ws)| PairCount {
            from: f.clone(),
            to: t.clone(),
            words: ws.len(),
            found: chords.iter().filter(|c| &c.from == f && &c.to == t && c.found).count(),
        })
        .collect();
    let pass = misses.is_empty() && multiplicities.is_empty() && mismatches.is_empty();
    Ok(BijectionReport {
        epsilon: params.epsilon,
        pass,
        action_gap: gap,
        pairs,
        chords,
        orbits,
        misses,
        multiplicities,
        action_mismatches: mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub epsilon0: f64,
    pub bracket: (f64, f64),
    pub scan: Vec<(f64, bool)>,
    pub non_monotone: bool,
}

/// Largest passing epsilon: scan, then bisect between the last pass and the next failure.
pub fn epsilon_threshold(
    template: &HandleParams,
    atlas: &ChordAtlas,
    cfg: &SolverConfig,
    grid: &[f64],
    width: f64,
) -> Result<ThresholdReport> {
    let passes = |eps: f64| -> bool {
        let prm = template.with_epsilon(eps);
        prm.validate().is_ok() && verify_bijection(&prm, atlas, cfg).map(|r| r.pass).unwrap_or(false)
    };
    let scan: Vec<(f64, bool)> = grid.iter().map(|&e| (e, passes(e))).collect();
    let lo_grid = grid.first().copied().unwrap_or(0.0);
    let hi_grid = grid.last().copied().unwrap_or(0.0);
    let first_fail = scan.iter().position(|(_, p)| !p);
    let last_pass_before = match first_fail {
        Some(i) => i.checked_sub(1),
        None => scan.len().checked_sub(1),
    };
    let Some(ip) = last_pass_before else {
        return Err(Error::ThresholdNotFound { lo: lo_grid, hi: hi_grid });
    };
    let non_monotone = first_fail.map_or(false, |i| scan[i..].iter().any(|(_, p)| *p));
    let (mut lo, mut hi) = match first_fail {
        None => (scan[ip].0, scan[ip].0),
        Some(i) => (scan[ip].0, scan[i].0),
    };
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdReport { epsilon0: lo, bracket: (lo, hi), scan, non_monotone })
}
