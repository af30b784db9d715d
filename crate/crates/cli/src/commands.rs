use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use stagecause::agents::{evaluate, AgentSet, Algo, EvalReport, MetricsRecord, Trainer};
use stagecause::config::RunConfig;
use stagecause::discovery::{discover as run_discovery, job_counts};
use stagecause::matrix::{load_matrices, save_matrices, to_dot};
use stagecause::nn::Checkpoint;
use stagecause::report::{compare as compare_runs, read_metrics, RunMetrics};
use stagecause::{CausalMatrix, Error, Result};

pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dry_run: bool,
    pub resume: bool,
}

pub enum Outcome {
    Clean,
    /// finished, but something needs attention
    Flagged,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
const TRAINER_FILE: &str = "checkpoints/trainer.json";
const POLICY_DIR: &str = "checkpoints/policies";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Exclusive hold on an output directory, released on drop.
struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Loads the config, fixes the root seed and output directory.
fn effective_config(g: &Global) -> Result<RunConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let root = g.seed.unwrap_or(cfg.seeds[0]);
    let mut eff = cfg.resolved(root);
    if let Some(out) = &g.out {
        eff.io.out_dir = out.clone();
    }
    Ok(eff)
}

pub fn discover(g: &Global, save_datasets: bool) -> Result<Outcome> {
    let mut cfg = effective_config(g)?;
    cfg.io.save_datasets |= save_datasets;
    let env = cfg.make_env()?;
    let d = &cfg.discovery;
    if g.dry_run {
        println!("stage  actions  rewards  pairs  random  do_zero  inference");
        for (stage, k, j) in job_counts(env.as_ref(), d)? {
            println!(
                "{stage:>5}  {k:>7}  {j:>7}  {:>5}  {:>6}  {:>7}  {:>9}",
                k * j,
                d.training_count,
                k * d.training_count,
                d.inference_rows()
            );
        }
        return Ok(Outcome::Clean);
    }
    let out = cfg.io.out_dir.clone();
    let _lock = Lock::acquire(&out)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_toml()?)?;
    log::info!("discovering on {} (seed {})", env.name(), cfg.seeds[0]);
    let result = run_discovery(env.as_ref(), d)?;

    write_file(&out.join("kld_tables.json"), &pretty(&result.tables)?)?;
    save_matrices(&out.join("causal_matrices.json"), &result.matrices)?;
    write_file(&out.join("graph.dot"), &to_dot(&result.matrices))?;
    let spec = env.spec();
    for (table, per_reward) in result.tables.iter().zip(&result.models) {
        for (row, models) in table.rows.iter().zip(per_reward) {
            for (k, model) in models.iter().enumerate() {
                let path = out.join(format!(
                    "models/stage{}/{}__{}.json",
                    table.stage, spec.action_names[k], row.reward
                ));
                if let Some(p) = path.parent() {
                    fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
                }
                Checkpoint::from_net(&model.net).save(&path)?;
            }
        }
    }
    if cfg.io.save_datasets {
        for (table, data) in result.tables.iter().zip(&result.data) {
            let dir = out.join(format!("datasets/stage{}", table.stage));
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            data.random.save(&dir.join("random.jsonl"))?;
            data.inference.save(&dir.join("inference.jsonl"))?;
            for (k, ds) in data.intervened.iter().enumerate() {
                ds.save(&dir.join(format!("do_{}.jsonl", spec.action_names[k])))?;
            }
        }
    }
    for m in &result.matrices {
        let sel: Vec<String> = (0..m.n_rewards())
            .map(|j| {
                let acts: Vec<&str> = (0..m.n_actions())
                    .filter(|&k| m.get(k, j) == 1)
                    .map(|k| m.action_names[k].as_str())
                    .collect();
                format!("{}<-{{{}}}", m.reward_names[j], acts.join(","))
            })
            .collect();
        println!("stage {}: {}", m.stage, sel.join("  "));
    }
    let empty = result.empty_columns();
    if empty.is_empty() {
        Ok(Outcome::Clean)
    } else {
        for (stage, r) in &empty {
            log::warn!("stage {stage}: reward {r} has no causal action");
        }
        Ok(Outcome::Flagged)
    }
}

fn truncate_metrics(path: &Path, up_to: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<MetricsRecord> = read_metrics(path)?
        .into_iter()
        .filter(|m| m.step <= up_to)
        .collect();
    let mut text = String::new();
    for m in &kept {
        text.push_str(&serde_json::to_string(m)?);
        text.push('\n');
    }
    write_file(path, &text)
}

pub fn train(g: &Global, algo: Option<&str>, matrices: Option<PathBuf>) -> Result<Outcome> {
    let mut cfg = effective_config(g)?;
    if let Some(a) = algo {
        cfg.train.algo = a.parse()?;
    }
    let algo = cfg.train.algo;
    let out = cfg.io.out_dir.clone();
    let matrix_path = if algo.uses_matrices() {
        matrices
            .or_else(|| cfg.io.matrix_path.clone())
            .or_else(|| Some(out.join("causal_matrices.json")).filter(|p| p.exists()))
    } else {
        if matrices.is_some() || cfg.io.matrix_path.is_some() {
            log::warn!("algo {algo} ignores causal matrices; all-ones matrices are used");
        }
        None
    };
    cfg.io.matrix_path = matrix_path.clone();
    cfg.check_training_inputs(algo, matrix_path.is_some())?;
    let ms: Option<Vec<CausalMatrix>> = matrix_path.as_deref().map(load_matrices).transpose()?;
    let env = cfg.make_env()?;
    if g.dry_run {
        let spaces = stagecause::agents::build_spaces(env.as_ref(), algo, ms.as_deref())?;
        for s in &spaces {
            let names: Vec<&str> = s.selected.iter().map(|&k| env.spec().action_names[k].as_str()).collect();
            println!("stage {}: actions {:?}, {} critic heads", s.stage, names, s.n_columns());
        }
        return Ok(Outcome::Clean);
    }

    let _lock = Lock::acquire(&out)?;
    let metrics_path = out.join(METRICS_FILE);
    let trainer_path = out.join(TRAINER_FILE);
    let mut trainer = if g.resume {
        let mut t = Trainer::resume(env.as_ref(), &trainer_path)?;
        if t.config.algo != algo {
            return Err(Error::Config(format!(
                "checkpoint is a {} run, not {algo}",
                t.config.algo
            )));
        }
        t.config.total_steps = cfg.train.total_steps;
        truncate_metrics(&metrics_path, t.step())?;
        log::info!("resuming {algo} at step {}", t.step());
        t
    } else {
        write_file(&out.join(CONFIG_FILE), &cfg.to_toml()?)?;
        write_file(&metrics_path, "")?;
        Trainer::new(env.as_ref(), ms.as_deref(), cfg.train.clone())?
    };
    let mut metrics = BufWriter::new(
        OpenOptions::new()
            .append(true)
            .create(true)
            .open(&metrics_path)
            .map_err(|e| io_err(&metrics_path, e))?,
    );
    let policy_dir = out.join(POLICY_DIR);
    let records = trainer.run(|rec, t| {
        writeln!(metrics, "{}", serde_json::to_string(rec)?).map_err(|e| io_err(&metrics_path, e))?;
        metrics.flush().map_err(|e| io_err(&metrics_path, e))?;
        fs::create_dir_all(&policy_dir).map_err(|e| io_err(&policy_dir, e))?;
        t.save(&trainer_path)?;
        AgentSet::save_dir(&t.policies(), &policy_dir)?;
        log::info!(
            "step {:>8}  success {:.2}  stages {:?}  reversals {:.2}",
            rec.step,
            rec.overall_success,
            rec.per_stage_success,
            rec.reversals_per_episode
        );
        Ok(())
    })?;
    drop(metrics);
    if let Some(last) = records.last() {
        let report = EvalReport {
            episodes: trainer.config.eval_episodes,
            per_stage_success: last.per_stage_success.clone(),
            overall_success: last.overall_success,
            mean_return: last.mean_return,
            reversals_per_episode: last.reversals_per_episode,
            grad_variance: last.grad_variance.clone(),
        };
        write_file(&out.join(REPORT_FILE), &pretty(&report)?)?;
        println!("{algo}: final success {:.3} at step {}", last.overall_success, last.step);
    }
    Ok(Outcome::Clean)
}

pub fn eval(g: &Global, run_dir: &Path, episodes: usize) -> Result<Outcome> {
    let cfg = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let env = cfg.make_env()?;
    let n = env.spec().n_stages;
    let report = if episodes == 0 {
        EvalReport::empty(n)
    } else {
        let policies = AgentSet::load_dir(&run_dir.join(POLICY_DIR), n)
            .map_err(|e| Error::Config(format!("{} has no usable checkpoints: {e}", run_dir.display())))?;
        let mut set = AgentSet::new(policies, env.obs_scale())?;
        let seed = g.seed.unwrap_or(cfg.seeds[0]);
        evaluate(env.as_ref(), &mut set, episodes, seed)?
    };
    let out = g.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    write_file(&out.join(REPORT_FILE), &pretty(&report)?)?;
    println!("episodes            {}", report.episodes);
    println!("overall success     {:.3}", report.overall_success);
    for (i, s) in report.per_stage_success.iter().enumerate() {
        println!("stage {} completed   {:.3}", i + 1, s);
    }
    println!("mean return         {:.3}", report.mean_return);
    println!("reversals/episode   {:.3}", report.reversals_per_episode);
    Ok(Outcome::Clean)
}

pub fn compare(g: &Global, dirs: &[PathBuf]) -> Result<Outcome> {
    let runs = dirs
        .iter()
        .map(|d| {
            let cfg = RunConfig::load(&d.join(CONFIG_FILE))?;
            let records = read_metrics(&d.join(METRICS_FILE))?;
            let algo: Algo = records.first().map_or(cfg.train.algo, |r| r.algo);
            Ok(RunMetrics {
                label: d.display().to_string(),
                env: format!("{}/{}", cfg.env.name, serde_json::to_string(&cfg.env.preset)?.trim_matches('"')),
                algo,
                records,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let c = compare_runs(&runs)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("comparison"));
    write_file(&out.join("comparison.csv"), &c.to_csv())?;
    let summary = c.summary();
    write_file(&out.join("summary.json"), &pretty(&summary)?)?;
    for (algo, s) in &summary {
        println!(
            "{algo:>7}: runs {}  final success {:.3} ± {:.3}  steps to 0.5 {}",
            s.runs,
            s.final_success,
            s.final_success_std,
            s.steps_to_threshold.map_or("never".to_string(), |n| n.to_string())
        );
    }
    Ok(Outcome::Clean)
}

pub fn export_graph(matrices: &Path, dot: Option<&Path>) -> Result<Outcome> {
    let ms = load_matrices(matrices)?;
    let text = to_dot(&ms);
    let flagged = ms.iter().any(|m| !m.empty_columns().is_empty());
    if flagged {
        log::warn!("some reward terms have no causal action");
    }
    match dot {
        Some(p) => write_file(p, &text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?;
        }
    }
    Ok(Outcome::Clean)
}
