use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stagecause"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn stagecause")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, algo: &str, out: &Path) -> String {
    let text = format!(
        r#"seeds = [3]

[env]
name = "mobile_reach_2d"
preset = "coupled"

[discovery]
training_count = 150
epochs = 1
hidden = [8]
stages = [1]

[train]
algo = "{algo}"
total_steps = 1000
eval_every = 500
eval_episodes = 2

[train.ppo]
hidden = [8]
n_step = 250
batch = 50
opt_epochs = 1

[io]
out_dir = "{}"
"#,
        out.display()
    );
    let path = dir.join(format!("{}.toml", out.file_name().unwrap().to_str().unwrap()));
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn help_and_version_exit_cleanly() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("discover"));
    assert!(run(&["--version"]).status.success());
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn missing_config_is_an_error() {
    let o = run(&["discover"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn discover_dry_run_lists_jobs_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("disc");
    let cfg = write_config(tmp.path(), "cmppo", &out);
    let o = run(&["discover", "--config", &cfg, "--dry-run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().starts_with("stage"));
    assert_eq!(text.lines().count(), 2);
    assert!(!out.exists());
}

#[test]
fn discover_writes_matrices_graph_and_models() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("disc");
    let cfg = write_config(tmp.path(), "cmppo", &out);
    let o = run(&["discover", "--config", &cfg]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "causal_matrices.json", "kld_tables.json", "graph.dot"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(fs::read_dir(out.join("models/stage1")).unwrap().count() > 0);
    assert!(!out.join(".lock").exists());

    let dot = run(&["export-graph", "--matrices", out.join("causal_matrices.json").to_str().unwrap()]);
    assert!(dot.status.success());
    assert!(stdout(&dot).starts_with("digraph"));
    assert_eq!(fs::read_to_string(out.join("graph.dot")).unwrap(), stdout(&dot));
}

#[test]
fn same_seed_gives_identical_discovery_output() {
    let tmp = TempDir::new().unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let cfg = write_config(tmp.path(), "mppo", &out);
        run(&["discover", "--config", &cfg]);
        outs.push(fs::read_to_string(out.join("kld_tables.json")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn train_eval_compare_and_resume() {
    let tmp = TempDir::new().unwrap();
    let mut dirs = Vec::new();
    for algo in ["mppo", "cmppo"] {
        let out = tmp.path().join(algo);
        let cfg = write_config(tmp.path(), algo, &out);
        let mut args = vec!["train", "--config", &cfg];
        let m = tmp.path().join("matrices.json");
        if algo == "cmppo" {
            let text = fs::read_to_string(&cfg).unwrap().replace("stages = [1]", "stages = []");
            fs::write(&cfg, text).unwrap();
            let o = run(&["discover", "--config", &cfg, "--out", tmp.path().join("d").to_str().unwrap()]);
            assert!(matches!(o.status.code(), Some(0) | Some(2)));
            fs::copy(tmp.path().join("d/causal_matrices.json"), &m).unwrap();
            args.extend(["--matrices", m.to_str().unwrap()]);
        }
        let o = run(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("final success"));
        let lines = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
        assert!(out.join("report.json").exists());
        dirs.push(out);
    }

    let o = run(&["eval", dirs[0].to_str().unwrap(), "--episodes", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("episodes            3"));
    let zero = run(&["eval", dirs[0].to_str().unwrap(), "--episodes", "0", "--out", tmp.path().join("e0").to_str().unwrap()]);
    assert!(zero.status.success());

    let cmp_out = tmp.path().join("cmp");
    let o = run(&[
        "compare",
        dirs[0].to_str().unwrap(),
        dirs[1].to_str().unwrap(),
        "--out",
        cmp_out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(cmp_out.join("comparison.csv").exists());
    assert!(cmp_out.join("summary.json").exists());

    let cfg = tmp.path().join("mppo.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("total_steps = 1000", "total_steps = 1500");
    fs::write(&cfg, text).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--resume"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(dirs[0].join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn cm_training_without_matrices_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "cmppo", &out);
    let o = run(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "1").unwrap();
    let cfg = write_config(tmp.path(), "mppo", &out);
    let o = run(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("in use"));
}
