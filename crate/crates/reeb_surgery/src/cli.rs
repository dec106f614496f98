//! Command-line front end.
//!
//! Every subcommand prints a plain-text summary to stdout and, with `--out`,
//! writes a JSON document `{command, input, meta?, result}`. Exit codes: 0 on
//! success, 2 when a verification fails, 1 on usage or runtime errors. Error
//! lines on stderr start with `error[<kind>]:`.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ambient::{load_atlas, synth_atlas, ChordAtlas};
use crate::asymptotics::{
    cz_grading, fit_tail, rotation_path, select_radii, spectrum, synth_tail, AsymptoticOperatorSpec, OperatorDoc,
    SpectrumResult, TailFit, TailSample,
};
use crate::error::Error;
use crate::flows::FlowConfig;
use crate::handle::HandleParams;
use crate::strips::{
    build_strip_with, holomorphicity_residual, linearized_kernel_dim, monotonicity_probe, monotonicity_probe_raw,
    strip_energy, BoundaryPair, StripVariant, DEFAULT_DELTA, DEFAULT_T0,
};
use crate::surgery::{
    epsilon_threshold, find_chord_for_word, find_orbit_for_cyclic_word, verify_bijection, Charts, SolverConfig,
};
use crate::words::{enumerate_all_words, enumerate_cyclic, format_words, min_action_gap};

#[derive(Parser, Debug)]
#[command(name = "reeb-surgery", version, about = "Reeb chords and orbits after Legendrian surgery on a model handle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List composable words and cyclic words below the action cap
    Enumerate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        atlas: AtlasArgs,
    },
    /// Solve for one chord per word
    FindChords {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        atlas: AtlasArgs,
    },
    /// Solve for one periodic orbit per cyclic word
    FindOrbits {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        atlas: AtlasArgs,
    },
    /// Check the chord/word and orbit/cyclic-word correspondence
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        atlas: AtlasArgs,
    },
    /// Largest epsilon for which verification passes
    Threshold {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        atlas: AtlasArgs,
        /// Scan grid as lo:hi:step
        #[arg(long, default_value = "0.3:0.95:0.05")]
        grid: String,
        /// Bisection stops at this bracket width
        #[arg(long, default_value_t = 0.01)]
        width: f64,
    },
    /// Negative eigenvalues of an asymptotic operator
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        op: OperatorArgs,
        /// Number of negative levels
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Also grade the rotation path exp(J0 theta t) in this dimension
        #[arg(long)]
        rotation: Option<f64>,
    },
    /// Fit sampled curve tails against the operator spectrum
    FitTail {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        op: OperatorArgs,
        /// Tail sample documents
        #[arg(long)]
        tail: Vec<PathBuf>,
        /// Synthesize a tail with planted coefficients, e.g. "1:1.0,2:0.3" (requires --seed)
        #[arg(long)]
        planted: Option<String>,
        /// Relative noise for synthesized tails
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Coefficient floors per stratum; enables radius selection
        #[arg(long, value_delimiter = ',')]
        floors: Option<Vec<f64>>,
    },
    /// Build a model strip and report holomorphicity and energy
    Strip {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = VariantArg::TwoCorner)]
        variant: VariantArg,
        #[arg(long, default_value_t = 41)]
        nx: usize,
        #[arg(long, default_value_t = 17)]
        ntheta: usize,
        /// Include the sampled grid in the JSON output
        #[arg(long)]
        export: bool,
    },
    /// Monotonicity and linearized-kernel probes
    Probe {
        #[command(flatten)]
        common: Common,
        /// Override q for the escape scale only
        #[arg(long)]
        q_escape: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_T0)]
        t0: f64,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        /// Use R^n on both boundary components
        #[arg(long)]
        matching: bool,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON config with the same keys as the flags; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON result document here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the meta block (version, timestamp)
    #[arg(long)]
    no_meta: bool,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
struct AtlasArgs {
    /// Atlas document
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Use a synthetic atlas (requires --seed)
    #[arg(long)]
    synth: bool,
    #[arg(long, default_value_t = 2)]
    components: usize,
    #[arg(long, default_value_t = 4)]
    chords: usize,
    #[arg(long, default_value_t = 3)]
    dimension: usize,
    /// Add the unsurgered component L0
    #[arg(long)]
    lambda0: bool,
}

#[derive(Args, Debug, Clone)]
struct OperatorArgs {
    /// Operator document {dim, samples}
    #[arg(long)]
    operator: Option<PathBuf>,
    /// Constant operator S = a I when no document is given
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    constant: f64,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Collocation points (odd)
    #[arg(long, default_value_t = 65)]
    m: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VariantArg {
    TwoCorner,
    OneCorner,
}

/// Config document; keys mirror the flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub p: Option<f64>,
    pub s: Option<f64>,
    pub q: Option<f64>,
    pub l: Option<f64>,
    pub n: Option<usize>,
    pub atlas: Option<PathBuf>,
    pub tol: Option<f64>,
    pub multistart: Option<usize>,
    pub t_max: Option<f64>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Outcome {
    text: String,
    input: Value,
    result: Value,
    pass: bool,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn read(path: &PathBuf) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Core(Error::Io(format!("{}: {e}", path.display()))))
}

struct Resolved {
    params: HandleParams,
    solver: SolverConfig,
    seed: Option<u64>,
    jobs: Option<usize>,
    atlas_path: Option<PathBuf>,
}

fn resolve(common: &Common) -> CliResult<Resolved> {
    let cfg: RunConfig = match &common.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(Error::from)?,
        None => RunConfig::default(),
    };
    let d = HandleParams::default();
    let params = HandleParams {
        epsilon: common.epsilon.or(cfg.epsilon).unwrap_or(d.epsilon),
        p: common.p.or(cfg.p).unwrap_or(d.p),
        s: common.s.or(cfg.s).unwrap_or(d.s),
        q: common.q.or(cfg.q).unwrap_or(d.q),
        l: common.l.or(cfg.l).unwrap_or(d.l),
        n: common.n.or(cfg.n).unwrap_or(d.n),
    };
    let mut solver = SolverConfig::default();
    if let Some(t) = cfg.tol {
        solver.tol = t;
    }
    if let Some(m) = cfg.multistart {
        solver.multistart = m;
    }
    if let Some(t) = cfg.t_max {
        solver.flow = FlowConfig { t_max: t };
    }
    Ok(Resolved {
        params,
        solver,
        seed: common.seed.or(cfg.seed),
        jobs: common.jobs.or(cfg.jobs),
        atlas_path: cfg.atlas,
    })
}

fn get_atlas(args: &AtlasArgs, r: &Resolved) -> CliResult<(ChordAtlas, Value)> {
    if args.synth {
        let seed = r.seed.ok_or_else(|| Failure::Usage("--synth requires --seed".into()))?;
        let atlas = synth_atlas(seed, args.components, args.chords, args.dimension, args.lambda0);
        let src = json!({"synth": {"seed": seed, "components": args.components, "chords": args.chords,
            "dimension": args.dimension, "lambda0": args.lambda0}});
        return Ok((atlas, src));
    }
    let path = args.atlas.clone().or_else(|| r.atlas_path.clone()).ok_or_else(|| Failure::Usage("an atlas is required: --atlas <path> or --synth".into()))?;
    let atlas = load_atlas(&read(&path)?)?;
    Ok((atlas, json!({"atlas": path.display().to_string()})))
}

fn operator(args: &OperatorArgs) -> CliResult<AsymptoticOperatorSpec> {
    match &args.operator {
        Some(p) => {
            let doc: OperatorDoc = serde_json::from_str(&read(p)?).map_err(Error::from)?;
            Ok(AsymptoticOperatorSpec::try_from(doc)?)
        }
        None => Ok(AsymptoticOperatorSpec::constant(args.dim, args.m, args.constant)),
    }
}

fn input_of(r: &Resolved, extra: Value) -> Value {
    let mut v = json!({"params": to_value(&r.params), "seed": r.seed});
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

fn cmd_enumerate(common: &Common, a: &AtlasArgs) -> CliResult<Outcome> {
    let r = resolve(common)?;
    let (atlas, src) = get_atlas(a, &r)?;
    let pairs = enumerate_all_words(&atlas);
    let cyclic = enumerate_cyclic(&atlas);
    let gap = min_action_gap(&atlas);
    let mut text = String::new();
    for ((f, t), ws) in &pairs {
        text.push_str(&format!("{f} -> {t}: {} words\n", ws.len()));
        if !ws.is_empty() {
            text.push_str(&format_words(ws));
        }
    }
    text.push_str(&format!("cyclic: {} words\n", cyclic.len()));
    if !cyclic.is_empty() {
        text.push_str(&format_words(&cyclic));
    }
    let total: usize = pairs.iter().map(|(_, w)| w.len()).sum();
    text.push_str(&format!("total words: {total}\naction gap: {:e}{}\n", gap.value, if gap.vacuous { " (vacuous)" } else { "" }));
    let result = json!({
        "pairs": pairs.iter().map(|((f, t), ws)| json!({"from": f, "to": t, "words": to_value(ws)})).collect::<Vec<_>>(),
        "cyclic": to_value(&cyclic),
        "total_words": total,
        "action_gap": to_value(&gap),
    });
    Ok(Outcome { text, input: input_of(&r, src), result, pass: true })
}

fn cmd_find_chords(common: &Common, a: &AtlasArgs) -> CliResult<Outcome> {
    let r = resolve(common)?;
    r.params.validate()?;
    let (atlas, src) = get_atlas(a, &r)?;
    let charts = Charts::new(&r.params, &r.solver.flow)?;
    let jobs: Vec<_> = enumerate_all_words(&atlas).into_iter().flat_map(|((f, t), ws)| ws.into_iter().map(move |w| (f.clone(), t.clone(), w))).collect();
    let found: Vec<Value> = jobs
        .par_iter()
        .map(|(f, t, w)| match find_chord_for_word(&charts, &atlas, w, &r.solver) {
            Ok(c) => json!({"from": f, "to": t, "word": w.label(), "chord": to_value(&c)}),
            Err(e) => json!({"from": f, "to": t, "word": w.label(), "error": e.to_string()}),
        })
        .collect();
    let mut text = format!("{:<12}  {:<8}  {:>22}  {:>12}  {:>10}\n", "word", "pair", "action", "deviation", "residual");
    let mut ok = true;
    for v in &found {
        let pair = format!("{}>{}", v["from"].as_str().unwrap_or(""), v["to"].as_str().unwrap_or(""));
        match v.get("chord") {
            Some(c) => text.push_str(&format!(
                "{:<12}  {:<8}  {:>22.15}  {:>12.3e}  {:>10.2e}\n",
                v["word"].as_str().unwrap_or(""),
                pair,
                c["action"].as_f64().unwrap_or(f64::NAN),
                c["deviation"].as_f64().unwrap_or(f64::NAN),
                c["landing_residual"].as_f64().unwrap_or(f64::NAN)
            )),
            None => {
                ok = false;
                text.push_str(&format!("{:<12}  {:<8}  not found: {}\n", v["word"].as_str().unwrap_or(""), pair, v["error"].as_str().unwrap_or("")));
            }
        }
    }
    Ok(Outcome { text, input: input_of(&r, src), result: json!({"chords": found}), pass: ok })
}

fn cmd_find_orbits(common: &Common, a: &AtlasArgs) -> CliResult<Outcome> {
    let r = resolve(common)?;
    r.params.validate()?;
    let (atlas, src) = get_atlas(a, &r)?;
    let charts = Charts::new(&r.params, &r.solver.flow)?;
    let cyclic = enumerate_cyclic(&atlas);
    let found: Vec<Value> = cyclic
        .par_iter()
        .map(|w| match find_orbit_for_cyclic_word(&charts, &atlas, w, &r.solver) {
            Ok(o) => json!({"word": w.label(), "orbit": to_value(&o)}),
            Err(e) => json!({"word": w.label(), "error": e.to_string()}),
        })
        .collect();
    let mut text = format!("{:<12}  {:>22}  {:>12}  {:>11}\n", "word", "action", "deviation", "contraction");
    let mut ok = true;
    for v in &found {
        match v.get("orbit") {
            Some(o) => text.push_str(&format!(
                "{:<12}  {:>22.15}  {:>12.3e}  {:>11.4}\n",
                v["word"].as_str().unwrap_or(""),
                o["action"].as_f64().unwrap_or(f64::NAN),
                o["deviation"].as_f64().unwrap_or(f64::NAN),
                o["contraction"].as_f64().unwrap_or(f64::NAN)
            )),
            None => {
                ok = false;
                text.push_str(&format!("{:<12}  not found: {}\n", v["word"].as_str().unwrap_or(""), v["error"].as_str().unwrap_or("")));
            }
        }
    }
    Ok(Outcome { text, input: input_of(&r, src), result: json!({"orbits": found}), pass: ok })
}

fn cmd_verify(common: &Common, a: &AtlasArgs) -> CliResult<Outcome> {
    let r = resolve(common)?;
    r.params.validate()?;
    let (atlas, src) = get_atlas(a, &r)?;
    let rep = verify_bijection(&r.params, &atlas, &r.solver)?;
    let mut text = format!("epsilon {}  action gap {:e}\n", rep.epsilon, rep.action_gap);
    text.push_str(&format!("{:<6}  {:<6}  {:>6}  {:>6}\n", "from", "to", "words", "found"));
    for p in &rep.pairs {
        text.push_str(&format!("{:<6}  {:<6}  {:>6}  {:>6}\n", p.from, p.to, p.words, p.found));
    }
    let orbits_found = rep.orbits.iter().filter(|o| o.found).count();
    text.push_str(&format!("cyclic words {}  orbits found {}\n", rep.orbits.len(), orbits_found));
    for (name, list) in [("miss", &rep.misses), ("multiplicity", &rep.multiplicities), ("action mismatch", &rep.action_mismatches)] {
        for m in list {
            text.push_str(&format!("{name}: {m}\n"));
        }
    }
    text.push_str(if rep.pass { "PASS\n" } else { "FAIL\n" });
    Ok(Outcome { text, input: input_of(&r, src), result: to_value(&rep), pass: rep.pass })
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = s.split(':').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| Failure::Usage(format!("bad --grid {s:?}, expected lo:hi:step")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(Failure::Usage(format!("bad --grid {s:?}, expected lo:hi:step")));
    };
    if !(step > 0.0 && hi >= lo) {
        return Err(Failure::Usage(format!("bad --grid {s:?}")));
    }
    let k = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=k).map(|i| lo + step * i as f64).collect())
}

fn cmd_threshold(common: &Common, a: &AtlasArgs, grid: &str, width: f64) -> CliResult<Outcome> {
    let r = resolve(common)?;
    let (atlas, src) = get_atlas(a, &r)?;
    let g = parse_grid(grid)?;
    let rep = epsilon_threshold(&r.params, &atlas, &r.solver, &g, width)?;
    let mut text = String::new();
    for (e, p) in &rep.scan {
        text.push_str(&format!("{e:>8.4}  {}\n", if *p { "PASS" } else { "FAIL" }));
    }
    text.push_str(&format!("epsilon0 {:.6}  bracket [{:.6}, {:.6}]{}\n", rep.epsilon0, rep.bracket.0, rep.bracket.1, if rep.non_monotone { "  non-monotone" } else { "" }));
    let extra = match src {
        Value::Object(mut m) => {
            m.insert("grid".into(), to_value(&g));
            m.insert("width".into(), json!(width));
            Value::Object(m)
        }
        v => v,
    };
    Ok(Outcome { text, input: input_of(&r, extra), result: to_value(&rep), pass: true })
}

fn spectrum_text(s: &SpectrumResult) -> String {
    let mut text = format!("{:>5}  {:>22}  {:>4}\n", "level", "eigenvalue", "mult");
    for (k, l) in s.levels.iter().enumerate() {
        text.push_str(&format!("{:>5}  {:>22.15}  {:>4}\n", k + 1, l.eigenvalue, l.multiplicity));
    }
    text.push_str(&format!("refinement error {:e}\n", s.refinement_error));
    text
}

fn cmd_spectrum(common: &Common, op: &OperatorArgs, count: usize, rotation: Option<f64>) -> CliResult<Outcome> {
    let r = resolve(common)?;
    let spec = operator(op)?;
    let s = spectrum(&spec, count)?;
    let mut text = spectrum_text(&s);
    let mut result = json!({"spectrum": to_value(&s)});
    if let Some(theta) = rotation {
        let g = cz_grading(&rotation_path(spec.dim, theta, 400), r.params.n)?;
        text.push_str(&format!("rotation {theta}: cz {}  grading {}\n", g.cz, g.grading));
        result["rotation"] = json!({"theta": theta, "grading": to_value(&g)});
    }
    Ok(Outcome { text, input: input_of(&r, json!({"operator": to_value(&OperatorDoc::from(&spec))})), result, pass: true })
}

fn parse_planted(s: &str) -> CliResult<Vec<(usize, f64)>> {
    s.split(',')
        .map(|item| {
            let (k, c) = item.split_once(':').ok_or_else(|| Failure::Usage(format!("bad planted term {item:?}, expected level:coefficient")))?;
            let k = k.trim().parse::<usize>().map_err(|_| Failure::Usage(format!("bad level in {item:?}")))?;
            let c = c.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad coefficient in {item:?}")))?;
            if k == 0 {
                return Err(Failure::Usage("levels are numbered from 1".into()));
            }
            Ok((k, c))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit_tail(
    common: &Common,
    op: &OperatorArgs,
    tails: &[PathBuf],
    planted: Option<&str>,
    noise: f64,
    count: usize,
    floors: Option<&[f64]>,
) -> CliResult<Outcome> {
    let r = resolve(common)?;
    let spec = spectrum(&operator(op)?, count)?;
    let mut samples: Vec<(String, TailSample)> = Vec::new();
    for p in tails {
        let t: TailSample = serde_json::from_str(&read(p)?).map_err(Error::from)?;
        samples.push((p.display().to_string(), t));
    }
    if let Some(pl) = planted {
        let seed = r.seed.ok_or_else(|| Failure::Usage("--planted requires --seed".into()))?;
        let terms = parse_planted(pl)?;
        if let Some((k, _)) = terms.iter().find(|(k, _)| *k > spec.levels.len()) {
            return Err(Failure::Usage(format!("planted level {k} exceeds --count {}", spec.levels.len())));
        }
        let s_grid: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
        samples.push((format!("planted {pl}"), synth_tail(&spec, &terms, &s_grid, 64, noise, seed)));
    }
    if samples.is_empty() {
        return Err(Failure::Usage("give --tail <path> or --planted <terms>".into()));
    }
    let fits: Vec<(String, crate::Result<TailFit>)> = samples.par_iter().map(|(name, t)| (name.clone(), fit_tail(t, &spec))).collect();
    let mut text = format!("{:<28}  {:>5}  {:>10}  {:>10}\n", "tail", "index", "delta", "residual");
    let mut docs = Vec::new();
    let mut ok_fits = Vec::new();
    for (name, f) in &fits {
        match f {
            Ok(fit) => {
                text.push_str(&format!("{:<28}  {:>5}  {:>10.4}  {:>10.2e}\n", name, fit.leading_index, fit.delta, fit.residual));
                docs.push(json!({"tail": name, "fit": to_value(fit)}));
                ok_fits.push(fit.clone());
            }
            Err(e) => {
                text.push_str(&format!("{:<28}  error[{}]: {e}\n", name, e.kind()));
                docs.push(json!({"tail": name, "error": e.to_string(), "kind": e.kind()}));
            }
        }
    }
    let mut result = json!({"levels": spec.eigenvalues(), "fits": docs});
    let mut pass = ok_fits.len() == fits.len();
    if let Some(fl) = floors {
        match select_radii(&ok_fits, &spec, fl) {
            Ok(radii) => {
                text.push_str(&format!("radii (r_m first): {}\n", radii.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")));
                result["radii"] = to_value(&radii);
            }
            Err(e) => {
                pass = false;
                text.push_str(&format!("radii: error[{}]: {e}\n", e.kind()));
                result["radii_error"] = json!(e.to_string());
            }
        }
    }
    Ok(Outcome { text, input: input_of(&r, json!({"count": count, "noise": noise})), result, pass })
}

fn cmd_strip(common: &Common, variant: VariantArg, nx: usize, nt: usize, export: bool) -> CliResult<Outcome> {
    let r = resolve(common)?;
    r.params.validate()?;
    let v = match variant {
        VariantArg::TwoCorner => StripVariant::TwoCorner,
        VariantArg::OneCorner => StripVariant::OneCorner,
    };
    let strip = build_strip_with(&r.params, v, nx, nt);
    let holo = holomorphicity_residual(&strip);
    let energy = strip_energy(&strip)?;
    let text = format!(
        "variant {:?}  corners {}  x_max {:.6}\nholomorphicity residual {:e}\narea {:.15e} (unscaled {:.6e})\naction gap {:.15e}\ntruncation {:.15e}\ncorner terms {:e}\nstokes defect {:e}\n",
        v,
        strip.corners.len(),
        strip.x_max,
        holo.residual,
        energy.area,
        energy.area_unscaled,
        energy.action_gap,
        energy.truncation,
        energy.corners,
        energy.stokes_defect
    );
    let mut result = json!({"variant": to_value(&v), "corners": strip.corners.len(), "x_max": strip.x_max,
        "holomorphicity": to_value(&holo), "energy": to_value(&energy)});
    if export {
        result["strip"] = to_value(&strip);
    }
    let pass = holo.holomorphic && energy.stokes_defect <= 1e-8;
    Ok(Outcome { text, input: input_of(&r, json!({"nx": nx, "ntheta": nt})), result, pass })
}

fn cmd_probe(common: &Common, q_escape: Option<f64>, t0: f64, delta: f64, matching: bool) -> CliResult<Outcome> {
    let r = resolve(common)?;
    let mono = match q_escape {
        Some(q) => {
            r.params.validate()?;
            monotonicity_probe_raw(&r.params, q)?
        }
        None => monotonicity_probe(&r.params)?,
    };
    let bc = if matching { BoundaryPair::Matching } else { BoundaryPair::RealImaginary };
    let kernel = linearized_kernel_dim(&r.params, t0, delta, bc)?;
    let text = format!(
        "monotonicity: A_strip {:.6e}  A_escape {:.6e}  ratio {:.6e}  constant {:.6}  {}\nkernel: dim {} ({} per component, n = {})  lambda_min {:.6}{}  {}\n",
        mono.a_strip,
        mono.a_escape,
        mono.ratio,
        mono.empirical_constant,
        if mono.pass { "PASS" } else { "FAIL" },
        kernel.dim,
        kernel.per_component,
        kernel.n,
        kernel.lambda_min,
        if kernel.borderline { "  borderline weight" } else { "" },
        if kernel.dim == 0 { "PASS" } else { "FAIL" }
    );
    let pass = mono.pass && kernel.dim == 0;
    let result = json!({"monotonicity": to_value(&mono), "kernel": to_value(&kernel), "pass": pass});
    Ok(Outcome { text, input: input_of(&r, json!({"t0": t0, "delta": delta, "matching": matching})), result, pass })
}

fn name_of(c: &Command) -> &'static str {
    match c {
        Command::Enumerate { .. } => "enumerate",
        Command::FindChords { .. } => "find-chords",
        Command::FindOrbits { .. } => "find-orbits",
        Command::Verify { .. } => "verify",
        Command::Threshold { .. } => "threshold",
        Command::Spectrum { .. } => "spectrum",
        Command::FitTail { .. } => "fit-tail",
        Command::Strip { .. } => "strip",
        Command::Probe { .. } => "probe",
    }
}

fn common_of(c: &Command) -> &Common {
    match c {
        Command::Enumerate { common, .. }
        | Command::FindChords { common, .. }
        | Command::FindOrbits { common, .. }
        | Command::Verify { common, .. }
        | Command::Threshold { common, .. }
        | Command::Spectrum { common, .. }
        | Command::FitTail { common, .. }
        | Command::Strip { common, .. }
        | Command::Probe { common, .. } => common,
    }
}

fn dispatch(c: &Command) -> CliResult<Outcome> {
    match c {
        Command::Enumerate { common, atlas } => cmd_enumerate(common, atlas),
        Command::FindChords { common, atlas } => cmd_find_chords(common, atlas),
        Command::FindOrbits { common, atlas } => cmd_find_orbits(common, atlas),
        Command::Verify { common, atlas } => cmd_verify(common, atlas),
        Command::Threshold { common, atlas, grid, width } => cmd_threshold(common, atlas, grid, *width),
        Command::Spectrum { common, op, count, rotation } => cmd_spectrum(common, op, *count, *rotation),
        Command::FitTail { common, op, tail, planted, noise, count, floors } => {
            cmd_fit_tail(common, op, tail, planted.as_deref(), *noise, *count, floors.as_deref())
        }
        Command::Strip { common, variant, nx, ntheta, export } => cmd_strip(common, *variant, *nx, *ntheta, *export),
        Command::Probe { common, q_escape, t0, delta, matching } => cmd_probe(common, *q_escape, *t0, *delta, *matching),
    }
}

fn execute(cli: &Cli) -> CliResult<bool> {
    let common = common_of(&cli.command);
    let jobs = match &common.config {
        Some(_) => resolve(common)?.jobs,
        None => common.jobs,
    };
    let outcome = match jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Failure::Core(Error::Numerical(e.to_string())))?;
            pool.install(|| dispatch(&cli.command))?
        }
        None => dispatch(&cli.command)?,
    };
    print!("{}", outcome.text);
    if let Some(path) = &common.out {
        let mut doc = json!({"command": name_of(&cli.command), "input": outcome.input, "result": outcome.result, "pass": outcome.pass});
        if !common.no_meta {
            let ts = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            doc["meta"] = json!({"version": env!("CARGO_PKG_VERSION"), "timestamp": ts});
        }
        let body = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
        fs::write(path, body + "\n").map_err(|e| Failure::Core(Error::Io(format!("{}: {e}", path.display()))))?;
    }
    Ok(outcome.pass)
}

/// Parses `args` (including the program name) and runs the subcommand; returns the exit code.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            eprintln!("{}", rendered.lines().skip(1).collect::<Vec<_>>().join("\n"));
            return 1;
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(Failure::Usage(m)) => {
            eprintln!("error[usage]: {m}");
            1
        }
        Err(Failure::Core(e)) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}
