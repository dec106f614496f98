use std::path::PathBuf;
use std::process::{Command, Output};

use reeb_surgery::ambient::{synth_atlas, AmbientChord, ChordAtlas};
use reeb_surgery::surgery::BijectionReport;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reeb-surgery"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("reeb-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn two_chord_atlas() -> PathBuf {
    let chord = |id: &str, a: f64| AmbientChord {
        id: id.into(),
        start: "L1".into(),
        end: "L1".into(),
        action: a,
        linear: nalgebra::DMatrix::identity(2, 2) * 0.5,
        offset: nalgebra::DVector::zeros(2),
    };
    let atlas = ChordAtlas { components: vec!["L1".into()], chords: vec![chord("a", 1.0), chord("b", 1.2)], action_cap: 2.5, dimension: 3 };
    let p = tmp("two.json");
    std::fs::write(&p, atlas.to_json()).unwrap();
    p
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (status.code().unwrap_or(-1), String::from_utf8_lossy(&stdout).into(), String::from_utf8_lossy(&stderr).into())
}

fn json(p: &PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn enumerate_two_chord_example() {
    let out = tmp("enum.json");
    let (code, text, _) = run(bin().args(["enumerate", "--atlas"]).arg(two_chord_atlas()).arg("--out").arg(&out));
    assert_eq!(code, 0);
    assert!(text.contains("L1 -> L1: 6 words"), "{text}");
    let doc = json(&out);
    assert_eq!(doc["result"]["total_words"], 6);
    assert!(doc["meta"]["version"].is_string());
}

#[test]
fn verify_passes_and_reparses() {
    let out = tmp("verify.json");
    let (code, text, _) = run(bin().args(["verify", "--epsilon", "0.5", "--no-meta", "--atlas"]).arg(two_chord_atlas()).arg("--out").arg(&out));
    assert_eq!(code, 0, "{text}");
    let doc = json(&out);
    assert_eq!(doc["result"]["pass"], true);
    assert!(doc.get("meta").is_none());
    let rep: BijectionReport = serde_json::from_value(doc["result"].clone()).unwrap();
    assert_eq!(rep.chords.len(), 6);
}

#[test]
fn output_independent_of_jobs() {
    let atlas = tmp("synth.json");
    std::fs::write(&atlas, synth_atlas(7, 2, 4, 3, true).to_json()).unwrap();
    let mut docs = Vec::new();
    for jobs in ["1", "4"] {
        let out = tmp(&format!("jobs{jobs}.json"));
        let (code, _, err) = run(bin().args(["verify", "--no-meta", "--jobs", jobs, "--atlas"]).arg(&atlas).arg("--out").arg(&out));
        assert!(code == 0 || code == 2, "{err}");
        docs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn synth_requires_seed_and_is_reproducible() {
    let (code, _, err) = run(bin().args(["enumerate", "--synth"]));
    assert_eq!(code, 1);
    assert!(err.starts_with("error[usage]:"));
    let a = run(bin().args(["enumerate", "--synth", "--seed", "3"])).1;
    let b = run(bin().args(["enumerate", "--synth", "--seed", "3"])).1;
    assert_eq!(a, b);
}

#[test]
fn unknown_flag_is_usage_error() {
    let (code, _, err) = run(bin().args(["verify", "--frobnicate"]));
    assert_eq!(code, 1);
    assert!(err.starts_with("error[usage]:"), "{err}");
    assert!(err.contains("Usage"));
}

#[test]
fn runtime_errors_carry_kind_prefix() {
    let bad = tmp("bad.json");
    std::fs::write(&bad, "{\"components\": 3}").unwrap();
    let (code, _, err) = run(bin().args(["enumerate", "--atlas"]).arg(&bad));
    assert_eq!(code, 1);
    assert!(err.starts_with("error[schema]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    let (code, _, err) = run(bin().args(["strip", "--epsilon", "1.5"]));
    assert_eq!(code, 1);
    assert!(err.starts_with("error[params]:"), "{err}");
}

#[test]
fn flags_override_config() {
    let cfg = tmp("cfg.json");
    std::fs::write(&cfg, r#"{"epsilon": 0.6, "seed": 2}"#).unwrap();
    let out = tmp("cfg_out.json");
    run(bin().args(["strip", "--no-meta", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert_eq!(json(&out)["input"]["params"]["epsilon"], 0.6);
    run(bin().args(["strip", "--no-meta", "--epsilon", "0.45", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let doc = json(&out);
    assert_eq!(doc["input"]["params"]["epsilon"], 0.45);
    assert_eq!(doc["input"]["seed"], 2);
    let bad = tmp("cfg_bad.json");
    std::fs::write(&bad, r#"{"epsilonn": 0.6}"#).unwrap();
    assert_eq!(run(bin().args(["strip", "--config"]).arg(&bad)).0, 1);
}

#[test]
fn probe_exit_codes() {
    assert_eq!(run(bin().args(["probe"])).0, 0);
    let (code, text, _) = run(bin().args(["probe", "--q-escape", "22"]));
    assert_eq!(code, 2);
    assert!(text.contains("FAIL"));
    assert_eq!(run(bin().args(["probe", "--matching"])).0, 2);
}

#[test]
fn analysis_commands_emit_json() {
    let out = tmp("spec.json");
    let (code, text, _) = run(bin().args(["spectrum", "--rotation", "1.0", "--no-meta", "--out"]).arg(&out));
    assert_eq!(code, 0);
    assert!(text.contains("cz 1"));
    let lv = &json(&out)["result"]["spectrum"]["levels"];
    assert!((lv[0]["eigenvalue"].as_f64().unwrap() + std::f64::consts::TAU).abs() < 1e-8);

    let (code, text, _) = run(bin().args(["fit-tail", "--planted", "2:1.0,3:0.5", "--seed", "1", "--floors", "0.5,0.5"]));
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("radii"));

    let out = tmp("strip.json");
    let (code, _, _) = run(bin().args(["strip", "--variant", "one-corner", "--export", "--nx", "5", "--ntheta", "4", "--out"]).arg(&out));
    assert_eq!(code, 0);
    let doc = json(&out);
    assert_eq!(doc["result"]["corners"], 1);
    let strip: reeb_surgery::strips::StripRegion = serde_json::from_value(doc["result"]["strip"].clone()).unwrap();
    assert_eq!(strip.arms.len(), 1);
}

#[test]
fn threshold_runs() {
    let out = tmp("thr.json");
    let (code, text, err) = run(bin().args(["threshold", "--grid", "0.4:0.9:0.1", "--width", "0.05", "--no-meta", "--atlas"]).arg(two_chord_atlas()).arg("--out").arg(&out));
    assert_eq!(code, 0, "{text}{err}");
    let e0 = json(&out)["result"]["epsilon0"].as_f64().unwrap();
    assert!(e0 >= 0.4);
}
