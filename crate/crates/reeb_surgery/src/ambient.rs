//! Chord atlas: a finite model of the ambient Reeb dynamics near the link.
//!
//! Each chord carries an affine transition from exit-position coordinates at
//! its start point c- to hemisphere coordinates at its end point c+. Both
//! coordinate systems are normalized gnomonic charts; see `surgery` for how
//! they are attached to the handle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::words;

/// Component label reserved for the unsurgered component Lambda_0.
pub const LAMBDA0: &str = "L0";

/// Radius of the modeled neighborhood for position states.
pub const POSITION_CHART_RADIUS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub gap_floor: f64,
    /// Floor on the smallest principal angle, radians.
    pub angle_floor: f64,
    /// Upper bound on the number of words examined by the gap scan.
    pub max_words: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { gap_floor: 1e-6, angle_floor: 0.1, max_words: 200_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbientChord {
    pub id: String,
    pub start: String,
    pub end: String,
    pub action: f64,
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AmbientChord {
    /// Smallest principal angle between the graph of the linear part and the
    /// horizontal (Lambda-tangent) subspace.
    pub fn transversality_angle(&self) -> f64 {
        let sv = self.linear.clone().svd(false, false).singular_values;
        sv.iter().cloned().fold(f64::INFINITY, f64::min).atan()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChordAtlas {
    pub components: Vec<String>,
    pub chords: Vec<AmbientChord>,
    pub action_cap: f64,
    pub dimension: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixDoc {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChordDoc {
    id: String,
    start: String,
    end: String,
    action: f64,
    linear: MatrixDoc,
    offset: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasDoc {
    components: Vec<String>,
    chords: Vec<ChordDoc>,
    action_cap: f64,
    dimension: usize,
}

impl ChordAtlas {
    pub fn chord(&self, id: &str) -> Option<&AmbientChord> {
        self.chords.iter().find(|c| c.id == id)
    }

    /// Real dimension n-1 of the chart states.
    pub fn state_dim(&self) -> usize {
        self.dimension - 1
    }

    pub fn is_surgered(&self, component: &str) -> bool {
        component != LAMBDA0
    }

    pub fn to_json(&self) -> String {
        let doc = AtlasDoc {
            components: self.components.clone(),
            chords: self
                .chords
                .iter()
                .map(|c| ChordDoc {
                    id: c.id.clone(),
                    start: c.start.clone(),
                    end: c.end.clone(),
                    action: c.action,
                    linear: MatrixDoc::Nested(
                        (0..c.linear.nrows()).map(|i| c.linear.row(i).iter().cloned().collect()).collect(),
                    ),
                    offset: c.offset.iter().cloned().collect(),
                })
                .collect(),
            action_cap: self.action_cap,
            dimension: self.dimension,
        };
        serde_json::to_string_pretty(&doc).expect("atlas serializes")
    }

    pub fn validate(&self, cfg: &ValidationConfig) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::Schema(format!("dimension {} < 2", self.dimension)));
        }
        if !(self.action_cap.is_finite() && self.action_cap > 0.0) {
            return Err(Error::Schema(format!("action_cap {} must be positive", self.action_cap)));
        }
        let mut labels = std::collections::BTreeSet::new();
        for c in &self.components {
            if c.is_empty() || !labels.insert(c.as_str()) {
                return Err(Error::Schema(format!("component label {c:?} empty or repeated")));
            }
        }
        let d = self.state_dim();
        let mut ids = std::collections::BTreeSet::new();
        for ch in &self.chords {
            if ch.id.is_empty() || !ids.insert(ch.id.as_str()) {
                return Err(Error::Schema(format!("duplicate or empty chord id {:?}", ch.id)));
            }
            for comp in [&ch.start, &ch.end] {
                if !labels.contains(comp.as_str()) {
                    return Err(Error::Composability(format!("chord {} refers to unknown component {comp:?}", ch.id)));
                }
            }
            if !(ch.action.is_finite() && ch.action > 0.0) {
                return Err(Error::Schema(format!("chord {} has non-positive action {}", ch.id, ch.action)));
            }
            if ch.linear.nrows() != d || ch.linear.ncols() != d || ch.offset.len() != d {
                return Err(Error::Schema(format!("chord {} transition is not {d}-dimensional", ch.id)));
            }
            if ch.linear.iter().chain(ch.offset.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("chord {} has non-finite entries", ch.id)));
            }
            let ang = ch.transversality_angle();
            if ang < cfg.angle_floor {
                return Err(Error::Transversality(format!(
                    "chord {}: principal angle {ang:.4} below floor {}",
                    ch.id, cfg.angle_floor
                )));
            }
        }
        let levels = words::action_levels(self, cfg.max_words)
            .ok_or_else(|| Error::ActionGap(format!("more than {} words below the cap", cfg.max_words)))?;
        let gap = words::gap_of_levels(&levels);
        if gap.value < cfg.gap_floor {
            return Err(Error::ActionGap(format!("minimal gap {:e} below floor {:e}", gap.value, cfg.gap_floor)));
        }
        // words at or just above the cap are not in `levels`, so rescan past it
        let mut wider = self.clone();
        wider.action_cap += cfg.gap_floor;
        let near = words::action_levels(&wider, cfg.max_words)
            .ok_or_else(|| Error::ActionGap(format!("more than {} words below the cap", cfg.max_words)))?;
        if let Some(v) = near.iter().map(|l| (l.to_f64() - self.action_cap).abs()).reduce(f64::min) {
            if v < cfg.gap_floor {
                return Err(Error::ActionGap(format!("action_cap lies within {v:e} of the action set")));
            }
        }
        Ok(())
    }

    /// The affine step on a position state, adding the chord action to `acc`.
    pub fn transition_map(&self, chord: &AmbientChord, state: &[f64], acc: &mut f64) -> Result<Vec<f64>> {
        transition_map(chord, state, acc)
    }
}

pub fn transition_map(chord: &AmbientChord, state: &[f64], acc: &mut f64) -> Result<Vec<f64>> {
    if state.len() != chord.offset.len() {
        return Err(Error::DimensionMismatch { expected: chord.offset.len(), got: state.len() });
    }
    let n = state.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n <= POSITION_CHART_RADIUS) {
        return Err(Error::OutOfChart { norm: n, radius: POSITION_CHART_RADIUS });
    }
    let out = &chord.linear * DVector::from_column_slice(state) + &chord.offset;
    *acc += chord.action;
    Ok(out.iter().cloned().collect())
}

fn matrix_from_doc(m: &MatrixDoc, d: usize, id: &str) -> Result<DMatrix<f64>> {
    match m {
        MatrixDoc::Nested(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Schema(format!("chord {id}: linear must be {d}x{d}")));
            }
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        }
        MatrixDoc::Flat(v) => {
            if v.len() != d * d {
                return Err(Error::Schema(format!("chord {id}: linear must have {} entries", d * d)));
            }
            Ok(DMatrix::from_row_slice(d, d, v))
        }
    }
}

/// Parses and validates an atlas document.
pub fn load_atlas(document: &str) -> Result<ChordAtlas> {
    load_atlas_with(document, &ValidationConfig::default())
}

pub fn load_atlas_with(document: &str, cfg: &ValidationConfig) -> Result<ChordAtlas> {
    let doc: AtlasDoc = serde_json::from_str(document)?;
    if doc.dimension < 2 {
        return Err(Error::Schema(format!("dimension {} < 2", doc.dimension)));
    }
    let d = doc.dimension - 1;
    let mut chords = Vec::with_capacity(doc.chords.len());
    for c in &doc.chords {
        chords.push(AmbientChord {
            id: c.id.clone(),
            start: c.start.clone(),
            end: c.end.clone(),
            action: c.action,
            linear: matrix_from_doc(&c.linear, d, &c.id)?,
            offset: DVector::from_vec(c.offset.clone()),
        });
    }
    let atlas = ChordAtlas { components: doc.components, chords, action_cap: doc.action_cap, dimension: doc.dimension };
    atlas.validate(cfg)?;
    Ok(atlas)
}

fn chord_label(i: usize, n: usize) -> String {
    if n <= 26 {
        ((b'a' + i as u8) as char).to_string()
    } else {
        format!("c{i:04}")
    }
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

/// Deterministic pseudo-random atlas.
///
/// Linear parts have singular values in [0.4, 0.7]; offsets are L w with
/// |w| <= 0.1; actions lie in [1, 2] with gap >= 1e-3 and the cap in
/// [2.2, 3.2] times the smallest action.
pub fn synth_atlas(seed: u64, k_components: usize, n_chords: usize, dimension: usize, include_lambda0: bool) -> ChordAtlas {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dimension.max(2) - 1;
    let mut components: Vec<String> = (1..=k_components.max(1)).map(|i| format!("L{i}")).collect();
    if include_lambda0 {
        components.insert(0, LAMBDA0.to_string());
    }
    let surgered: Vec<String> = components.iter().filter(|c| *c != LAMBDA0).cloned().collect();
    let mut ends = Vec::with_capacity(n_chords);
    for i in 0..n_chords {
        let pick = |rng: &mut ChaCha8Rng| components[rng.gen_range(0..components.len())].clone();
        let pick_s = |rng: &mut ChaCha8Rng| surgered[rng.gen_range(0..surgered.len())].clone();
        let e = if include_lambda0 {
            match i {
                0 => (LAMBDA0.to_string(), pick_s(&mut rng)),
                1 => (pick_s(&mut rng), LAMBDA0.to_string()),
                2 => (LAMBDA0.to_string(), LAMBDA0.to_string()),
                _ => (pick(&mut rng), pick(&mut rng)),
            }
        } else {
            (pick(&mut rng), pick(&mut rng))
        };
        ends.push(e);
    }
    let mut transitions = Vec::with_capacity(n_chords);
    for _ in 0..n_chords {
        let u = random_orthogonal(&mut rng, d);
        let v = random_orthogonal(&mut rng, d);
        let sv = DVector::from_fn(d, |_, _| rng.gen_range(0.4..0.7));
        let l = &u * DMatrix::from_diagonal(&sv) * v.transpose();
        let mut w = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let wn = w.norm();
        if wn > 0.0 {
            w *= rng.gen_range(0.0..0.1) / wn;
        }
        let b = &l * w;
        transitions.push((l, b));
    }
    let cfg = ValidationConfig { gap_floor: 1e-3, ..Default::default() };
    for _ in 0..10_000 {
        let actions: Vec<f64> = (0..n_chords).map(|_| rng.gen_range(1.0..2.0)).collect();
        let amin = actions.iter().cloned().fold(f64::INFINITY, f64::min);
        let cap = if n_chords == 0 { 1.0 } else { amin * rng.gen_range(2.2..3.2) };
        let atlas = ChordAtlas {
            components: components.clone(),
            chords: (0..n_chords)
                .map(|i| AmbientChord {
                    id: chord_label(i, n_chords),
                    start: ends[i].0.clone(),
                    end: ends[i].1.clone(),
                    action: actions[i],
                    linear: transitions[i].0.clone(),
                    offset: transitions[i].1.clone(),
                })
                .collect(),
            action_cap: cap,
            dimension: d + 1,
        };
        if atlas.validate(&cfg).is_ok() {
            return atlas;
        }
    }
    panic!("synth_atlas: no admissible action draw for seed {seed}");
}
