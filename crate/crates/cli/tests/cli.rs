use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn decompl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decompl"))
        .args(args)
        .env("DECOMPL_OUT_DIR", dir.join("out"))
        .env("RUST_LOG", "info")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = [
    "--set",
    "synth.frames=2",
    "--set",
    "synth.feature_dim=6",
    "--set",
    "synth.clips_per_class=3",
];

fn small_dataset(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["gen", "--seed", seed, "--out", path.to_str().unwrap()];
    args.extend(SMALL);
    let o = decompl(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn clip_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_is_deterministic_and_creates_the_output_dir() {
    let tmp = TempDir::new().unwrap();
    let args = ["gen", "--seed", "7", "--clips-per-class", "50", "--set", "synth.frames=1", "--set", "synth.feature_dim=4"];
    let first = decompl(tmp.path(), &args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stderr(&first).contains("created output directory"));
    let file = tmp.path().join("out/synthetic.jsonl");
    let bytes = std::fs::read(&file).unwrap();
    assert_eq!(clip_lines(&file).len(), 400);
    assert!(stdout(&first).contains("wrote 400 clips"));

    let second = decompl(tmp.path(), &args);
    assert!(second.status.success());
    assert_eq!(std::fs::read(&file).unwrap(), bytes);

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/synthetic.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["synth"]["clips_per_class"], 50);
    assert_eq!(manifest["formats"]["dataset"], "decompl-clips/1");
}

#[test]
fn profile_prints_the_cost_table() {
    let tmp = TempDir::new().unwrap();
    let o = decompl(tmp.path(), &["profile", "--config", "default"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("#Params") && text.contains("FLOPs"), "{text}");
    assert!(text.contains("DECOMPL"));
    assert!(tmp.path().join("out/profile.manifest.json").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let o = decompl(tmp.path(), &["profile", "--set", "model.width=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"));
    let o = decompl(tmp.path(), &["profile", "--config", "nowhere.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = decompl(tmp.path(), &["profile", "--set", "train.epochs=0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let data = small_dataset(tmp.path(), "d.jsonl", "1");
    let o = decompl(tmp.path(), &["eval", "--checkpoint", "missing.ckpt", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("missing.ckpt"));
}

#[test]
fn train_eval_and_ablate_run_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let train = small_dataset(tmp.path(), "train.jsonl", "1");
    let test = small_dataset(tmp.path(), "test.jsonl", "2");
    let model = [
        "--set", "model.feature_dim=6", "--set", "model.dim=4", "--set", "model.hidden=5",
        "--set", "model.coordinate.channels=2", "--set", "train.epochs=2", "--set", "train.val_every=1",
    ];

    let mut args = vec!["train", "--seed", "3", "--data", train.to_str().unwrap()];
    args.extend(model);
    let o = decompl(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = tmp.path().join("out/model.ckpt");
    let first = std::fs::read(&ckpt).unwrap();
    assert_eq!(std::fs::read_to_string(tmp.path().join("out/model.log.jsonl")).unwrap().lines().count(), 2);
    let o = decompl(tmp.path(), &args);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&ckpt).unwrap(), first, "same seed, different checkpoint");

    let o = decompl(tmp.path(), &["eval", "--json", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["clips"], 24);
    assert!(tmp.path().join("out/eval.manifest.json").exists());

    let mut args = vec![
        "ablate", "--train", train.to_str().unwrap(), "--test", test.to_str().unwrap(),
        "--variants", "full,only-coordinate,mean-pool", "--seeds", "0",
    ];
    args.extend(model);
    let o = decompl(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for row in ["DECOMPL", "only coordinate module", "mean pooling"] {
        assert!(text.contains(row), "{text}");
    }
}

#[test]
fn feature_width_mismatch_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let data = small_dataset(tmp.path(), "d.jsonl", "1");
    let o = decompl(tmp.path(), &["train", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.feature_dim=6"));
}

#[test]
fn annotation_workflow() {
    let tmp = TempDir::new().unwrap();
    let data = small_dataset(tmp.path(), "d.jsonl", "4");
    let original = tmp.path().join("original.jsonl");
    std::fs::copy(&data, &original).unwrap();

    let o = decompl(tmp.path(), &["annotate", "validate", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 violations"));

    let clips = clip_lines(&data);
    let field = |i: usize, k: &str| clips[i][k].as_str().unwrap().to_string();
    let new_label = if field(0, "group_label") == "left pass" { "left set" } else { "left pass" };
    let diff = format!(
        "video_id,clip_id,op,old_label,new_label\n{},{},relabel,{},{new_label}\n{},{},remove,{},\n",
        field(0, "video_id"), field(0, "clip_id"), field(0, "group_label"),
        field(1, "video_id"), field(1, "clip_id"), field(1, "group_label"),
    );
    let diff_path = tmp.path().join("diff.csv");
    std::fs::write(&diff_path, diff).unwrap();

    let o = decompl(tmp.path(), &["annotate", "apply-diff", data.to_str().unwrap(), diff_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("relabeled: 1") && stdout(&o).contains("removed:   1"));
    assert_eq!(clip_lines(&data).len(), clips.len() - 1);

    let o = decompl(tmp.path(), &["annotate", "apply-diff", data.to_str().unwrap(), diff_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stale"));

    let o = decompl(tmp.path(), &["annotate", "stats", original.to_str().unwrap(), data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("Group Activity Class") && header.contains("Before") && header.contains("After"));
    assert!(table.lines().last().unwrap().ends_with(&format!("{}", clips.len() - 1)));

    let o = decompl(tmp.path(), &["annotate", "stats", "--json", data.to_str().unwrap()]);
    let json: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["total"], clips.len() - 1);

    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("{\"clip_id\": \"broken\"}\n");
    std::fs::write(&data, text).unwrap();
    let o = decompl(tmp.path(), &["annotate", "validate", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("1 violations"), "{}", stdout(&o));
}
