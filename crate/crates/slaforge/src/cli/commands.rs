//! Subcommand implementations and artifact plumbing. Every artifact is
//! written atomically (temp file + rename) and each run leaves a resolved
//! config plus a manifest next to its outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::agent::{
    build_episodes, evaluate_policy, load_agent, save_agent, train_dqn, Environment, TrainLog,
};
use crate::forecaster::{
    evaluate, gru_baseline, load_forecaster, persistence_baseline, save_forecaster, train,
    EvalReport, ForecastModel, TrainConfig, TrainHistory,
};
use crate::sla::{label_dataset, SloRuleSet};
use crate::telemetry::{
    chronological_split, ingest_csv, make_windows, synthesize, IngestOptions, QuantileTransform,
    SynthConfig, TelemetryTable, WindowSet, METRIC_COUNT,
};
use crate::topology::ServiceGraph;

use super::{Cli, CliError, Command, RunConfig, TelemetrySource};

/// Rolling-mean window for the agent training log.
const REWARD_MA_WINDOW: usize = 100;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out_dir.display())))?;

    match &cli.command {
        Command::Synth { steps } => cmd_synth(&cfg, *steps),
        Command::Ingest { paths } => cmd_ingest(&cfg, paths),
        Command::TrainForecaster { arch } => cmd_train_forecaster(&cfg, arch.as_deref()),
        Command::EvalForecaster { baseline } => cmd_eval_forecaster(&cfg, baseline),
        Command::TrainAgent => cmd_train_agent(&cfg),
        Command::EvalAgent { episodes } => cmd_eval_agent(&cfg, *episodes),
        Command::Pipeline => cmd_pipeline(&cfg),
    }
}

// ---------------------------------------------------------------------------
// commands

fn cmd_synth(cfg: &RunConfig, steps_override: Option<usize>) -> Result<(), CliError> {
    let run = RunContext::start(cfg, "synth")?;
    let graph = cfg.graph()?;
    let mut synth_cfg = synth_config(cfg);
    if let Some(steps) = steps_override {
        synth_cfg.steps = steps;
    }
    let (table, bursts) = synthesize(&graph, &synth_cfg)?;
    let rules = cfg.rules()?;
    let violation_rate = write_telemetry_artifacts(&run, &table, &rules)?;
    info!("synthesized {} rows with {} bursts", table.rows(), bursts.len());
    run.finish(serde_json::json!({
        "rows": table.rows(),
        "bursts": bursts.len(),
        "violation_rate": violation_rate,
    }))
}

fn cmd_ingest(cfg: &RunConfig, path_args: &[PathBuf]) -> Result<(), CliError> {
    let run = RunContext::start(cfg, "ingest")?;
    let graph = cfg.graph()?;
    let paths: Vec<PathBuf> = if path_args.is_empty() {
        cfg.telemetry.csv_paths.clone()
    } else {
        path_args.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::Config("ingest needs input CSV paths".into()));
    }
    let options = IngestOptions { strict_metrics: cfg.telemetry.strict_metrics };
    let (table, report) = ingest_csv(&paths, &graph, &options)?;
    if report.unknown_metric_rows > 0 {
        warn!("skipped {} rows with uncatalogued metrics", report.unknown_metric_rows);
    }
    let rules = cfg.rules()?;
    let violation_rate = write_telemetry_artifacts(&run, &table, &rules)?;
    info!(
        "ingested {} rows ({} forward-filled cells, {} dropped rows)",
        table.rows(),
        report.forward_filled_cells,
        report.dropped_rows
    );
    run.finish(serde_json::json!({
        "rows": table.rows(),
        "violation_rate": violation_rate,
        "unknown_metric_rows": report.unknown_metric_rows,
        "duplicate_cells": report.duplicate_cells,
        "dropped_rows": report.dropped_rows,
        "forward_filled_cells": report.forward_filled_cells,
    }))
}

fn cmd_train_forecaster(cfg: &RunConfig, arch: Option<&str>) -> Result<(), CliError> {
    let run = RunContext::start(cfg, "train-forecaster")?;
    let mut fc = cfg.forecaster.clone();
    match arch {
        None => {}
        Some("table2-large") => {
            fc.d_h = 2048;
            fc.k = 3;
            fc.history = 4;
        }
        Some(other) => {
            return Err(CliError::Config(format!("unknown --arch preset '{other}'")));
        }
    }
    let graph = cfg.graph()?;
    let table = load_table(cfg, &graph)?;
    let data = SplitData::prepare(cfg, &fc, &table)?;

    let mut model = ForecastModel::new(
        &graph,
        fc.k,
        fc.d_h,
        fc.history,
        fc.horizon,
        METRIC_COUNT,
        fc.mode,
        cfg.seed,
    )?;
    let train_cfg = TrainConfig {
        lr: fc.lr,
        batch_size: fc.batch_size,
        max_epochs: fc.max_epochs,
        patience: fc.patience,
        seed: cfg.seed,
    };
    let history = train(&mut model, &data.train, &data.val, &train_cfg)?;
    let report = evaluate(&model, &data.test, fc.batch_size)?;

    save_forecaster(&run.path("forecaster.ckpt"), &model, Some(&data.transform))?;
    run.write_text("forecaster_history.csv", &history_csv(&history))?;
    run.write_text("report.csv", &report_csv(&[("model", &report)], fc.horizon))?;
    println!(
        "test mse={:.6} mae={:.6} rmse={:.6} (best epoch {})",
        report.mse, report.mae, report.rmse, history.best_epoch
    );
    run.finish(serde_json::json!({
        "test_mse": report.mse,
        "test_mae": report.mae,
        "test_rmse": report.rmse,
        "best_epoch": history.best_epoch,
        "best_val_mse": history.best_val_mse,
        "epochs": history.epochs.len(),
    }))
}

fn cmd_eval_forecaster(cfg: &RunConfig, baselines: &[String]) -> Result<(), CliError> {
    let run = RunContext::start(cfg, "eval-forecaster")?;
    let (model, transform) = load_forecaster(&run.path("forecaster.ckpt"))?;
    let transform = transform
        .ok_or_else(|| CliError::Data("checkpoint is missing the fitted transform".into()))?;
    let graph = cfg.graph()?;
    let table = load_table(cfg, &graph)?;
    let data = SplitData::with_transform(&table, transform, model.history, model.horizon)?;

    let report = evaluate(&model, &data.test, cfg.forecaster.batch_size)?;
    let mut rows: Vec<(&str, EvalReport)> = vec![("model", report.clone())];
    for b in baselines {
        match b.as_str() {
            "persistence" => {
                rows.push(("persistence", persistence_baseline(&data.test)?));
            }
            "k1" => {
                let train_cfg = TrainConfig {
                    lr: cfg.forecaster.lr,
                    batch_size: cfg.forecaster.batch_size,
                    max_epochs: cfg.forecaster.max_epochs,
                    patience: cfg.forecaster.patience,
                    seed: cfg.seed,
                };
                let (_, r) = gru_baseline(&model, &data.train, &data.val, &data.test, &train_cfg)?;
                rows.push(("k1", r));
            }
            other => return Err(CliError::Config(format!("unknown baseline '{other}'"))),
        }
    }
    let row_refs: Vec<(&str, &EvalReport)> = rows.iter().map(|(l, r)| (*l, r)).collect();
    run.write_text("report.csv", &report_csv(&row_refs, model.horizon))?;
    println!("test mse={:.6} mae={:.6} rmse={:.6}", report.mse, report.mae, report.rmse);
    run.finish(serde_json::json!({
        "test_mse": report.mse,
        "test_mae": report.mae,
        "test_rmse": report.rmse,
        "baselines": baselines,
    }))
}

fn cmd_train_agent(cfg: &RunConfig) -> Result<(), CliError> {
    let run = RunContext::start(cfg, "train-agent")?;
    let (model, transform) = load_forecaster(&run.path("forecaster.ckpt"))?;
    let transform = transform
        .ok_or_else(|| CliError::Data("checkpoint is missing the fitted transform".into()))?;
    let graph = cfg.graph()?;
    let table = load_table(cfg, &graph)?;
    let rules = cfg.rules()?;
    let (train_table, _, _) = chronological_split(&table)?;

    let episodes = build_episodes(&model, &transform, &train_table, &rules, cfg.agent.obs)?;
    info!(
        "training on {} episodes, violation rate {:.3}",
        episodes.len(),
        episodes.violation_rate()
    );
    let mut env = Environment::new(episodes, cfg.seed)?;
    let dqn_cfg = cfg.agent.dqn(cfg.seed);
    let (q, log) = train_dqn(&mut env, &dqn_cfg)?;

    save_agent(&run.path("agent.ckpt"), &q, cfg.agent.obs)?;
    run.write_text("agent_train_log.csv", &train_log_csv(&log))?;
    let tail = &log[log.len().saturating_sub(REWARD_MA_WINDOW)..];
    let tail_mean = tail.iter().map(|r| r.episode_reward).sum::<f64>() / tail.len() as f64;
    println!("trained {} steps, final mean reward {tail_mean:.3}", log.len());
    run.finish(serde_json::json!({
        "steps": log.len(),
        "final_mean_reward": tail_mean,
    }))
}

fn cmd_eval_agent(cfg: &RunConfig, episodes: usize) -> Result<(), CliError> {
    let run = RunContext::start(cfg, "eval-agent")?;
    let (q, obs_spec) = load_agent(&run.path("agent.ckpt"))?;
    let (model, transform) = load_forecaster(&run.path("forecaster.ckpt"))?;
    let transform = transform
        .ok_or_else(|| CliError::Data("checkpoint is missing the fitted transform".into()))?;
    let graph = cfg.graph()?;
    let table = load_table(cfg, &graph)?;
    let rules = cfg.rules()?;
    let (_, _, test_table) = chronological_split(&table)?;

    let set = build_episodes(&model, &transform, &test_table, &rules, obs_spec)?;
    // Distinct stream from the training sampler.
    let mut env = Environment::new(set, cfg.seed.wrapping_add(1))?;
    let eval = evaluate_policy(&q, &mut env, episodes)?;

    let mut csv = String::from("episode,reward\n");
    for (i, r) in eval.rewards.iter().enumerate() {
        let _ = writeln!(csv, "{i},{r}");
    }
    run.write_text("agent_eval.csv", &csv)?;
    println!(
        "mean_reward={:.3} positive_fraction={:.4}",
        eval.mean_reward, eval.positive_fraction
    );
    run.finish(serde_json::json!({
        "episodes": episodes,
        "mean_reward": eval.mean_reward,
        "positive_fraction": eval.positive_fraction,
    }))
}

fn cmd_pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.telemetry.source {
        TelemetrySource::Synth => cmd_synth(cfg, None)?,
        TelemetrySource::Csv => cmd_ingest(cfg, &[])?,
    }
    cmd_train_forecaster(cfg, None)?;
    cmd_eval_forecaster(cfg, &["persistence".into()])?;
    cmd_train_agent(cfg)?;
    cmd_eval_agent(cfg, cfg.agent.episodes)
}

// ---------------------------------------------------------------------------
// shared plumbing

fn synth_config(cfg: &RunConfig) -> SynthConfig {
    SynthConfig {
        seed: cfg.seed,
        steps: cfg.telemetry.steps,
        burst_rate: cfg.telemetry.burst_rate,
        burst_magnitude: cfg.telemetry.burst_magnitude,
    }
}

/// Telemetry for a training/eval command, per the configured source.
fn load_table(cfg: &RunConfig, graph: &ServiceGraph) -> Result<TelemetryTable, CliError> {
    match cfg.telemetry.source {
        TelemetrySource::Synth => {
            let (table, _) = synthesize(graph, &synth_config(cfg))?;
            Ok(table)
        }
        TelemetrySource::Csv => {
            let options = IngestOptions { strict_metrics: cfg.telemetry.strict_metrics };
            let (table, _) = ingest_csv(&cfg.telemetry.csv_paths, graph, &options)?;
            Ok(table)
        }
    }
}

/// Chronological splits in transformed space, windowed.
struct SplitData {
    train: WindowSet,
    val: WindowSet,
    test: WindowSet,
    transform: QuantileTransform,
}

impl SplitData {
    fn prepare(
        cfg: &RunConfig,
        fc: &super::ForecasterConfig,
        table: &TelemetryTable,
    ) -> Result<Self, CliError> {
        let (train_t, _, _) = chronological_split(table)?;
        let transform =
            QuantileTransform::fit_with(train_t.values().view(), cfg.transform.n_quantiles);
        Self::with_transform(table, transform, fc.history, fc.horizon)
    }

    fn with_transform(
        table: &TelemetryTable,
        transform: QuantileTransform,
        history: usize,
        horizon: usize,
    ) -> Result<Self, CliError> {
        let (train_t, val_t, test_t) = chronological_split(table)?;
        let windows = |t: &TelemetryTable| -> Result<WindowSet, CliError> {
            Ok(make_windows(&transform.transform_table(t)?, history, horizon)?)
        };
        Ok(SplitData {
            train: windows(&train_t)?,
            val: windows(&val_t)?,
            test: windows(&test_t)?,
            transform,
        })
    }
}

/// Writes telemetry.csv, labels.csv and splits.json; returns the violation
/// rate.
fn write_telemetry_artifacts(
    run: &RunContext<'_>,
    table: &TelemetryTable,
    rules: &SloRuleSet,
) -> Result<f64, CliError> {
    let mut wide = Vec::new();
    table.write_wide_csv(&mut wide)?;
    run.write_bytes("telemetry.csv", &wide)?;

    let labels = label_dataset(table, rules)?;
    let mut csv = String::from("timestamp");
    for rule in &rules.rules {
        let _ = write!(csv, ",{}", rule.id);
    }
    csv.push_str(",sla\n");
    for (ts, state) in table.timestamps().iter().zip(&labels) {
        let _ = write!(csv, "{}", crate::telemetry::format_timestamp(*ts));
        for slo in &state.slo_states {
            let _ = write!(csv, ",{}", u8::from(*slo));
        }
        let _ = writeln!(csv, ",{}", u8::from(state.sla));
    }
    run.write_text("labels.csv", &csv)?;

    let (train, val, test) = crate::telemetry::split_counts(table.rows());
    run.write_text(
        "splits.json",
        &serde_json::to_string_pretty(&serde_json::json!({
            "rows": table.rows(),
            "train": train,
            "val": val,
            "test": test,
        }))
        .expect("splits serialize"),
    )?;
    Ok(labels.iter().filter(|s| s.sla).count() as f64 / labels.len().max(1) as f64)
}

fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for e in &history.epochs {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.val_mse);
    }
    out
}

fn report_csv(rows: &[(&str, &EvalReport)], horizon: usize) -> String {
    let mut out = String::from("label,mse,mae,rmse");
    for f in 1..=horizon {
        let _ = write!(out, ",mae_step{f}");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label},{},{},{}", r.mse, r.mae, r.rmse);
        for v in &r.per_step_mae {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn train_log_csv(log: &TrainLog) -> String {
    let rewards: Vec<f64> = log.iter().map(|r| r.episode_reward).collect();
    let ma = rolling_mean(&rewards, REWARD_MA_WINDOW);
    let mut out = String::from("step,epsilon,loss,episode_reward,reward_ma100\n");
    for (row, m) in log.iter().zip(ma) {
        let loss = row.loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{loss},{},{m}", row.step, row.epsilon, row.episode_reward);
    }
    out
}

/// Trailing mean over up to `window` values ending at each position.
fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i.min(window - 1) + 1) as f64);
    }
    out
}

/// Per-run artifact bookkeeping: resolved config, manifest, atomic writes.
struct RunContext<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    config_sha256: String,
    started: Instant,
    artifacts: std::cell::RefCell<Vec<String>>,
}

impl<'a> RunContext<'a> {
    fn start(cfg: &'a RunConfig, command: &'static str) -> Result<Self, CliError> {
        let resolved = cfg.to_resolved_toml();
        let config_sha256 = sha256_hex(resolved.as_bytes());
        let run = RunContext {
            cfg,
            command,
            config_sha256,
            started: Instant::now(),
            artifacts: std::cell::RefCell::new(Vec::new()),
        };
        run.write_text("config.resolved.toml", &resolved)?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.path(name), bytes)?;
        self.artifacts.borrow_mut().push(name.to_string());
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(name, text.as_bytes())
    }

    fn finish(self, summary: serde_json::Value) -> Result<(), CliError> {
        let mut artifacts = self.artifacts.borrow().clone();
        artifacts.retain(|a| a != "config.resolved.toml");
        let manifest = serde_json::json!({
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.cfg.seed,
            "wall_clock_secs": self.started.elapsed().as_secs_f64(),
            "artifacts": artifacts,
            "summary": summary,
        });
        write_atomic(
            &self.path(&format!("manifest_{}.json", self.command)),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
        )
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rolling_mean_matches_naive_oracle() {
        let values: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let window = 4;
        let got = rolling_mean(&values, window);
        for i in 0..values.len() {
            let lo = i.saturating_sub(window - 1);
            let naive: f64 = values[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64;
            assert_abs_diff_eq!(got[i], naive, epsilon = 1e-12);
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn report_csv_shape() {
        let r = EvalReport { mse: 0.04, mae: 0.1, rmse: 0.2, per_step_mae: vec![0.1, 0.2] };
        let csv = report_csv(&[("model", &r), ("persistence", &r)], 2);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "label,mse,mae,rmse,mae_step1,mae_step2");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("model,"));
        assert!(lines[2].starts_with("persistence,"));
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.csv");
        write_atomic(&path, b"a,b\n1,2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["artifact.csv".to_string()]);
    }
}
