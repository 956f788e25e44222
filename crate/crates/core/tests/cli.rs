use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn posg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posg")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const PPO_SMALL: &str = r#"
env = "kdt-small"
algorithm = "ppo"
iterations = 50
seeds = [0, 1]
output_dir = "run"

[ppo]
episodes_per_iteration = 2
epochs = 1
hidden = [8]
"#;

#[test]
fn train_writes_one_row_per_iteration_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", PPO_SMALL);
    let out = posg(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let text = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("iteration,seed,success_rate,mean_return,mean_mmd_to_demos"));
    assert_eq!(lines.count(), 100);
    for seed in ["0", "1"] {
        assert!(run.join("seeds").join(seed).join("checkpoint").join("meta.json").is_file());
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    assert!(run.join("config.toml").is_file());
    assert_eq!(fs::read_to_string(run.join("timing.csv")).unwrap().lines().count(), 101);
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
env = "kdt-small"
algorithm = "posg"
iterations = 5
seeds = [3]
output_dir = "OUT"

[demos]
count = 1

[ppo]
episodes_per_iteration = 4
"#;
    let a = write_config(dir.path(), "a.toml", &body.replace("OUT", "a"));
    let b = write_config(dir.path(), "b.toml", &body.replace("OUT", "b").replace("seeds = [3]", "seeds = [3]\nparallel_seeds = true"));
    assert_eq!(posg(&["train", "--config", &a]).status.code(), Some(0));
    assert_eq!(posg(&["train", "--config", &b]).status.code(), Some(0));
    let ma = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let mb = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(ma, mb);

    // the copied config reproduces the run
    let copy = dir.path().join("a/config.toml");
    let text = fs::read_to_string(&copy).unwrap();
    let c = write_config(dir.path(), "c.toml", &text.replace(dir.path().join("a").to_str().unwrap(), dir.path().join("c").to_str().unwrap()));
    assert_eq!(posg(&["train", "--config", &c]).status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("c/metrics.csv")).unwrap(), ma);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(posg(&["train", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    let bad = write_config(dir.path(), "bad.toml", &PPO_SMALL.replace("seeds = [0, 1]", "seeds = []"));
    assert_eq!(posg(&["train", "--config", &bad]).status.code(), Some(1));
    let typo = write_config(dir.path(), "typo.toml", &format!("{PPO_SMALL}\nlearning_rat = 1.0\n"));
    assert_eq!(posg(&["train", "--config", &typo]).status.code(), Some(1));
    let table = write_config(
        dir.path(),
        "table.toml",
        &PPO_SMALL.replace("kdt-small", "point-mass").replace("[ppo]", "[guidance.params]\nmode = \"discrete_table\"\n\n[ppo]"),
    );
    assert_eq!(posg(&["train", "--config", &table]).status.code(), Some(1));
    assert_eq!(posg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(posg(&["gen-demos", "--env", "mars", "--out", "x.jsonl"]).status.code(), Some(1));
    let ok = write_config(dir.path(), "ok.toml", PPO_SMALL);
    assert_eq!(posg(&["ablate", "--config", &ok, "--axis", "demo_count", "--values", ""]).status.code(), Some(1));
    assert_eq!(posg(&["ablate", "--config", &ok, "--axis", "colour", "--values", "1"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("missing");
    assert_eq!(posg(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--episodes", "2"]).status.code(), Some(2));
}

#[test]
fn gen_demos_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let demos = dir.path().join("d.jsonl");
    let out = posg(&["gen-demos", "--env", "kdt-small", "--quality", "expert", "--count", "6", "--seed", "0", "--out", demos.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean return 200"));
    assert_eq!(fs::read_to_string(&demos).unwrap().lines().count(), 6);

    let cfg = write_config(dir.path(), "c.toml", &PPO_SMALL.replace("iterations = 50", "iterations = 2").replace("seeds = [0, 1]", "seeds = [0]"));
    assert_eq!(posg(&["train", "--config", &cfg]).status.code(), Some(0));
    let ckpt = dir.path().join("run/seeds/0/checkpoint");
    let run = |extra: &[&str]| {
        let mut args = vec!["eval", "--ckpt", ckpt.to_str().unwrap(), "--episodes", "3", "--seed", "4"];
        args.extend_from_slice(extra);
        let out = posg(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let a = run(&["--demos", demos.to_str().unwrap()]);
    assert_eq!(a, run(&["--demos", demos.to_str().unwrap()]));
    assert!(a["mean_mmd_to_demos"].as_f64().unwrap() > 0.0);
    assert_eq!(run(&["--sample"])["episodes"], 3);
}

#[test]
fn ablation_merges_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
env = "kdt-small"
algorithm = "posg"
iterations = 2
seeds = [0, 1]
output_dir = "abl"

[demos]
quality = "expert"

[ppo]
episodes_per_iteration = 2
hidden = [8]
"#;
    let cfg = write_config(dir.path(), "c.toml", body);
    let out = posg(&["ablate", "--config", &cfg, "--axis", "demo_count", "--values", "1,3,6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("axis,value,iteration,seed"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 2 * 2);
    for v in ["1", "3", "6"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("demo_count,{v},"))).count(), 4);
        assert!(dir.path().join(format!("abl/demo_count={v}/manifest.json")).is_file());
    }
    let out = posg(&["ablate", "--config", &cfg, "--axis", "demo_quality", "--values", "expert,medium"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
