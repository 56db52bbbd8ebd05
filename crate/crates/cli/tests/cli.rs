use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gridtom_core::annotator::read_qa_jsonl;
use gridtom_core::evalharness::{write_answers_jsonl, RawAnswer, ScoreReport};
use gridtom_core::pipeline::DatasetManifest;

fn gridtom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridtom")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gridtom(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = gridtom(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> DatasetManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("dataset_manifest.json")).unwrap()).unwrap()
}

#[test]
fn gen_one_map_and_rerun_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen", "--maps", "1", "--seed", "3", "--out", s(&a)]);
    ok(&["gen", "--maps", "1", "--seed", "3", "--jobs", "2", "--out", s(&b)]);
    let m = manifest(&a);
    assert_eq!((m.n_samples, m.n_pairs, m.n_maps), (48, 24, 1));
    for name in ["dataset_manifest.json", "qa.jsonl", "narrations.jsonl", "splits.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let mut names: Vec<_> = fs::read_dir(a.join("frames")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 48 * 7 * 3);
    for n in names.iter().step_by(37) {
        assert_eq!(fs::read(a.join("frames").join(n)).unwrap(), fs::read(b.join("frames").join(n)).unwrap());
    }
    let rc: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(rc["subcommand"], "gen");
    assert_eq!(rc["seed"], 3);
    assert_eq!(rc["maps"], 1);
}

#[test]
fn gen_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["gen", "--maps", "0", "--out", s(&out)]).0, 2);
    assert_eq!(code(&["gen", "--maps", "28", "--out", s(&out)]).0, 2);
    assert_eq!(code(&["gen", "--frame-count", "12", "--out", s(&out)]).0, 2);
    assert_eq!(code(&["gen", "--maps", "1"]).0, 2);
    assert_eq!(code(&["gen", "--order", "third", "--out", s(&out)]).0, 2);
}

#[test]
fn config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5, "maps": 1, "frames": "none", "orders": ["second"]}"#).unwrap();
    let a = tmp.path().join("a");
    ok(&["gen", "--config", s(&cfg), "--out", s(&a)]);
    let rc: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run_config.json")).unwrap()).unwrap();
    assert_eq!((rc["seed"].as_u64(), rc["orders"][0].as_str()), (Some(5), Some("second")));
    assert_eq!(manifest(&a).samples[0].spec.order, gridtom_core::scenario::BeliefOrder::Second);

    let b = tmp.path().join("b");
    ok(&["gen", "--config", s(&cfg), "--seed", "9", "--order", "first", "--out", s(&b)]);
    let rc: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("run_config.json")).unwrap()).unwrap();
    assert_eq!((rc["seed"].as_u64(), rc["orders"][0].as_str(), rc["maps"].as_u64()), (Some(9), Some("first"), Some(1)));

    fs::write(&cfg, r#"{"sed": 5}"#).unwrap();
    assert_eq!(code(&["gen", "--config", s(&cfg), "--out", s(&b)]).0, 2);
}

#[test]
fn probe_planted_shuffled_and_missing() {
    let tmp = tempfile::tempdir().unwrap();
    let (acts, probes) = (tmp.path().join("acts"), tmp.path().join("probes"));
    ok(&["synth-acts", "--seed", "2", "--planted", "1:3,3:6", "--out", s(&acts)]);
    let stdout = ok(&["probe", "--acts", s(&acts.join("activations.gtomact")), "--out", s(&probes)]);
    let top: Vec<&str> = stdout.lines().skip(1).take(2).collect();
    assert!(top.iter().any(|l| l.contains("layer 1 head 3")) && top.iter().any(|l| l.contains("layer 3 head 6")), "{stdout}");
    for f in ["atlas.json", "probes.gtomp", "accuracy.csv", "geometry.csv", "run_config.json"] {
        assert!(probes.join(f).exists(), "{f}");
    }

    let (sh, shp) = (tmp.path().join("sh"), tmp.path().join("shp"));
    ok(&["synth-acts", "--seed", "2", "--shuffle-labels", "--out", s(&sh)]);
    ok(&["probe", "--acts", s(&sh.join("activations.gtomact")), "--out", s(&shp)]);
    let atlas: serde_json::Value = serde_json::from_str(&fs::read_to_string(shp.join("atlas.json")).unwrap()).unwrap();
    let max = atlas["grid"].as_array().unwrap().iter().map(|g| g["val_accuracy"].as_f64().unwrap()).fold(0.0, f64::max);
    assert!(max < 0.75, "shuffled max accuracy {max}");

    let (c, err) = code(&["probe", "--acts", s(&tmp.path().join("nope.gtomact")), "--out", s(&probes)]);
    assert_eq!(c, 3, "{err}");
    let bad = tmp.path().join("bad.gtomact");
    fs::write(&bad, b"NOPE0000").unwrap();
    assert_eq!(code(&["probe", "--acts", s(&bad), "--out", s(&probes)]).0, 3);
}

#[test]
fn fixture_probe_intervene() {
    let tmp = tempfile::tempdir().unwrap();
    let (fx, pr, iv) = (tmp.path().join("fx"), tmp.path().join("pr"), tmp.path().join("iv"));
    ok(&["fixture", "--out", s(&fx)]);
    let acts = fx.join("activations.gtomact");
    ok(&["probe", "--acts", s(&acts), "--out", s(&pr)]);
    let (weights, eval) = (fx.join("model.gtmw"), fx.join("eval.jsonl"));
    let common = ["--weights", s(&weights), "--probes", s(&pr), "--acts", s(&acts), "--eval", s(&eval)];

    let mut args = vec!["intervene", "--out", s(&iv), "--k-grid", "0", "--alpha-grid", "0"];
    args.extend(common);
    ok(&args);
    let csv = fs::read_to_string(iv.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().collect::<Vec<_>>(), ["k,alpha,tb,fb,both,invalid_count", "0,0,0.0000,100.0000,0.0000,0"]);

    let mut args = vec!["intervene", "--out", s(&iv), "--k-grid", "0,3", "--alpha-grid=-2,0,1,1.5,2,8"];
    args.extend(common);
    ok(&args);
    let csv = fs::read_to_string(iv.join("sweep.csv")).unwrap();
    let both: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert_eq!(both.len(), 12);
    assert!(both[6..].iter().cloned().fold(0.0, f64::max) >= both[0] + 10.0, "{csv}");
    let spec: serde_json::Value = serde_json::from_str(&fs::read_to_string(iv.join("intervention_spec.json")).unwrap()).unwrap();
    assert_eq!(spec["entries"].as_array().unwrap().len(), 3);

    let mut args = vec!["intervene", "--out", s(&iv), "--k-grid", "1", "--alpha-grid=1e6"];
    args.extend(common);
    assert_eq!(code(&args).0, 2);

    let spec_dir = tmp.path().join("spec");
    ok(&["build-spec", "--probes", s(&pr), "--acts", s(&acts), "--k", "2", "--alpha", "-1.5", "--out", s(&spec_dir)]);
    let spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(spec_dir.join("intervention_spec.json")).unwrap()).unwrap();
    assert_eq!(spec["alpha"], -1.5);
    assert_eq!(spec["entries"].as_array().unwrap().len(), 2);
    assert_eq!(code(&["build-spec", "--probes", s(&pr), "--acts", s(&acts), "--k", "99", "--out", s(&spec_dir)]).0, 2);
}

#[test]
fn score_oracle_and_missing() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, rep) = (tmp.path().join("ds"), tmp.path().join("rep"));
    ok(&["gen", "--maps", "2", "--frames", "none", "--out", s(&ds)]);
    let items = read_qa_jsonl(&ds.join("qa.jsonl")).unwrap();
    let answers: Vec<RawAnswer> =
        items.iter().map(|i| RawAnswer { qa_id: i.id.clone(), raw_text: format!("{:?}.", i.correct) }).collect();
    let path = tmp.path().join("answers.jsonl");
    write_answers_jsonl(&path, &answers).unwrap();
    ok(&["score", "--dataset", s(&ds), "--answers", s(&path), "--split", "all", "--out", s(&rep)]);
    let r: ScoreReport = serde_json::from_str(&fs::read_to_string(rep.join("score_report.json")).unwrap()).unwrap();
    assert!(r.categories.iter().all(|c| c.accuracy == 100.0 && c.both_acc.unwrap_or(100.0) == 100.0));
    assert!(rep.join("score_report.csv").exists());

    write_answers_jsonl(&path, &answers[1..]).unwrap();
    let (c, err) = code(&["score", "--dataset", s(&ds), "--answers", s(&path), "--split", "all", "--out", s(&rep)]);
    assert_eq!(c, 3);
    assert!(err.contains(&answers[0].qa_id), "{err}");
}
