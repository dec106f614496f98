//! Composable words and cyclic words of atlas chords below the action cap.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ambient::ChordAtlas;
use crate::geometry::DoubleDouble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub chords: Vec<String>,
    pub action: f64,
    #[serde(skip)]
    pub action_dd: DoubleDouble,
}

/// A cyclic word stored by its canonical (lexicographically least) rotation.
pub type CyclicWord = Word;

impl Word {
    pub fn label(&self) -> String {
        self.chords.join("")
    }
}

/// Compensated action of a chord sequence; depends only on the multiset of chords.
pub fn word_action(atlas: &ChordAtlas, ids: &[String]) -> DoubleDouble {
    let mut a: Vec<f64> = ids.iter().map(|id| atlas.chord(id).map_or(f64::NAN, |c| c.action)).collect();
    a.sort_by(|x, y| x.total_cmp(y));
    DoubleDouble::sum(a)
}

fn make_word(atlas: &ChordAtlas, ids: Vec<String>) -> Word {
    let dd = word_action(atlas, &ids);
    Word { chords: ids, action: dd.to_f64(), action_dd: dd }
}

fn sort_words(words: &mut [Word]) {
    words.sort_by(|a, b| {
        a.action_dd
            .partial_cmp(&b.action_dd)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chords.cmp(&b.chords))
    });
}

fn below_cap(atlas: &ChordAtlas, a: DoubleDouble) -> bool {
    a.to_f64() < atlas.action_cap
}

/// All composable words from `from` to `to` with action below the cap.
pub fn enumerate_words(atlas: &ChordAtlas, from: &str, to: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    fn dfs(atlas: &ChordAtlas, at: &str, to: &str, stack: &mut Vec<String>, out: &mut Vec<Word>) {
        for ch in &atlas.chords {
            if ch.start != at {
                continue;
            }
            stack.push(ch.id.clone());
            let a = word_action(atlas, stack);
            if below_cap(atlas, a) {
                if ch.end == to {
                    out.push(make_word(atlas, stack.clone()));
                }
                if atlas.is_surgered(&ch.end) {
                    dfs(atlas, &ch.end, to, stack, out);
                }
            }
            stack.pop();
        }
    }
    dfs(atlas, from, to, &mut stack, &mut out);
    sort_words(&mut out);
    out
}

/// Words for every ordered component pair, in label order.
pub fn enumerate_all_words(atlas: &ChordAtlas) -> Vec<((String, String), Vec<Word>)> {
    let mut labels = atlas.components.clone();
    labels.sort();
    let mut out = Vec::new();
    for f in &labels {
        for t in &labels {
            out.push(((f.clone(), t.clone()), enumerate_words(atlas, f, t)));
        }
    }
    out
}

/// Lexicographically least rotation.
pub fn canonical_rotation<T: Ord + Clone>(w: &[T]) -> Vec<T> {
    let n = w.len();
    (0..n)
        .map(|r| w[r..].iter().chain(&w[..r]).cloned().collect::<Vec<T>>())
        .min()
        .unwrap_or_default()
}

pub fn rotate<T: Clone>(w: &[T], r: usize) -> Vec<T> {
    if w.is_empty() {
        return Vec::new();
    }
    let r = r % w.len();
    w[r..].iter().chain(&w[..r]).cloned().collect()
}

/// One canonical representative per rotation class of cyclically composable
/// words below the cap. Every junction lies on a surgered component.
pub fn enumerate_cyclic(atlas: &ChordAtlas) -> Vec<CyclicWord> {
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut stack: Vec<String> = Vec::new();
    fn dfs(atlas: &ChordAtlas, first_start: &str, at: &str, stack: &mut Vec<String>, seen: &mut BTreeSet<Vec<String>>) {
        for ch in &atlas.chords {
            if ch.start != at || !atlas.is_surgered(&ch.end) {
                continue;
            }
            stack.push(ch.id.clone());
            if below_cap(atlas, word_action(atlas, stack)) {
                if ch.end == first_start {
                    seen.insert(canonical_rotation(stack));
                }
                dfs(atlas, first_start, &ch.end, stack, seen);
            }
            stack.pop();
        }
    }
    for ch in &atlas.chords {
        if !atlas.is_surgered(&ch.start) || !atlas.is_surgered(&ch.end) {
            continue;
        }
        stack.clear();
        stack.push(ch.id.clone());
        if !below_cap(atlas, word_action(atlas, &stack)) {
            continue;
        }
        if ch.end == ch.start {
            seen.insert(stack.clone());
        }
        dfs(atlas, &ch.start, &ch.end, &mut stack, &mut seen);
    }
    let mut out: Vec<Word> = seen.into_iter().map(|ids| make_word(atlas, ids)).collect();
    sort_words(&mut out);
    out
}

/// Distinct action values of all words and cyclic words below the cap, sorted;
/// `None` if more than `limit` words would be examined.
pub fn action_levels(atlas: &ChordAtlas, limit: usize) -> Option<Vec<DoubleDouble>> {
    // Action depends only on the chord multiset, so enumerate multisets reachable
    // by some composable word via a bounded DFS over words.
    let mut count = 0usize;
    let mut levels: Vec<DoubleDouble> = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    fn dfs(atlas: &ChordAtlas, at: &str, stack: &mut Vec<String>, levels: &mut Vec<DoubleDouble>, count: &mut usize, limit: usize) -> bool {
        for ch in &atlas.chords {
            if ch.start != at {
                continue;
            }
            stack.push(ch.id.clone());
            let a = word_action(atlas, stack);
            if below_cap(atlas, a) {
                *count += 1;
                if *count > limit {
                    return false;
                }
                levels.push(a);
                if atlas.is_surgered(&ch.end) && !dfs(atlas, &ch.end, stack, levels, count, limit) {
                    return false;
                }
            }
            stack.pop();
        }
        true
    }
    for c in &atlas.components {
        if !dfs(atlas, c, &mut stack, &mut levels, &mut count, limit) {
            return None;
        }
        stack.clear();
    }
    // Cyclic word actions are sums over closed composable walks, which are
    // also words from their first start point, so they are already included.
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    levels.dedup();
    Some(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Minimal positive gap; +inf when fewer than two levels exist.
    pub value: f64,
    pub vacuous: bool,
}

pub fn gap_of_levels(levels: &[DoubleDouble]) -> GapReport {
    let value = levels
        .windows(2)
        .map(|w| w[1].sub(w[0]).to_f64())
        .fold(f64::INFINITY, f64::min);
    GapReport { value, vacuous: levels.len() < 2 }
}

/// Delta_act: minimal positive difference of word and cyclic-word actions below the cap.
pub fn min_action_gap(atlas: &ChordAtlas) -> GapReport {
    let levels = action_levels(atlas, usize::MAX).unwrap_or_default();
    gap_of_levels(&levels)
}

/// Aligned plain-text listing.
pub fn format_words(words: &[Word]) -> String {
    let width = words.iter().map(|w| w.label().len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<width$}  {:>22}\n", "word", "action");
    for w in words {
        s.push_str(&format!("{:<width$}  {:>22.15}\n", w.label(), w.action));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{AmbientChord, ChordAtlas};
    use nalgebra::{DMatrix, DVector};

    fn atlas(chords: &[(&str, &str, &str, f64)], comps: &[&str], cap: f64) -> ChordAtlas {
        ChordAtlas {
            components: comps.iter().map(|s| s.to_string()).collect(),
            chords: chords
                .iter()
                .map(|(id, s, e, a)| AmbientChord {
                    id: id.to_string(),
                    start: s.to_string(),
                    end: e.to_string(),
                    action: *a,
                    linear: DMatrix::identity(2, 2) * 0.5,
                    offset: DVector::zeros(2),
                })
                .collect(),
            action_cap: cap,
            dimension: 3,
        }
    }

    fn labels(ws: &[Word]) -> Vec<String> {
        ws.iter().map(|w| w.label()).collect()
    }

    #[test]
    fn single_self_chord() {
        let a = atlas(&[("c", "L1", "L1", 1.0)], &["L1"], 3.5);
        assert_eq!(labels(&enumerate_words(&a, "L1", "L1")), ["c", "cc", "ccc"]);
        assert_eq!(labels(&enumerate_cyclic(&a)), ["c", "cc", "ccc"]);
        assert_eq!(min_action_gap(&a).value, 1.0);
    }

    #[test]
    fn two_chords_one_component() {
        let a = atlas(&[("a", "L1", "L1", 1.0), ("b", "L1", "L1", 1.2)], &["L1"], 2.5);
        assert_eq!(labels(&enumerate_words(&a, "L1", "L1")), ["a", "b", "aa", "ab", "ba", "bb"]);
        assert_eq!(labels(&enumerate_cyclic(&a)), ["a", "b", "aa", "ab", "bb"]);
        assert!((min_action_gap(&a).value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn alternating_components() {
        let a = atlas(&[("a", "L1", "L2", 1.0), ("b", "L2", "L1", 1.2)], &["L1", "L2"], 3.0);
        assert_eq!(labels(&enumerate_words(&a, "L1", "L1")), ["ab"]);
        assert_eq!(labels(&enumerate_cyclic(&a)), ["ab"]);
    }

    #[test]
    fn empty_gap_is_flagged() {
        let a = atlas(&[], &["L1"], 3.0);
        let g = min_action_gap(&a);
        assert!(g.vacuous && g.value.is_infinite());
    }
}
