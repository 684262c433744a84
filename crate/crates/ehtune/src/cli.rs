//! Command-line entry point: pretrain, run, sweep, report.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime/training failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::checkpoint::{load_backbone, save_backbone, write_json_atomic};
use crate::error::{EhError, Result};
use crate::report::render_report;
use crate::tasks::{generate_corpus, make_task, Task};
use crate::trainer::pretrain::{pretrain, PretrainConfig};
use crate::trainer::strategy::{
    run_suite, PetHyper, RunRecord, Strategy, TrainPlan, FT_LR,
};
use crate::trainer::{split_budget, OptimConfig};

fn default_tasks() -> Vec<String> {
    vec!["topic-pair".to_string()]
}

fn default_strategies() -> Vec<String> {
    Strategy::ALL.iter().map(|s| s.name().to_string()).collect()
}

fn default_total_steps() -> usize {
    175
}

fn default_stage1_fraction() -> f32 {
    0.10
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

fn default_eval_every() -> usize {
    50
}

fn default_probe_size() -> usize {
    256
}

fn default_out_dir() -> String {
    "runs".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub steps: usize,
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub grammar: String,
    pub mask_fraction: f32,
    pub holdout: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            steps: 1200,
            corpus_size: 2000,
            corpus_seed: 0,
            grammar: "sticky-topic".to_string(),
            mask_fraction: 0.15,
            holdout: 64,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// One config file drives every command; unknown keys are rejected and the
/// effective values are echoed into each RunRecord via its TrainPlan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub backbone: BackboneConfig,
    pub tasks: Vec<String>,
    pub strategies: Vec<String>,
    pub total_steps: usize,
    /// Per-task overrides of total_steps.
    pub total_steps_per_task: BTreeMap<String, usize>,
    pub stage1_fraction: f32,
    pub pet: PetHyper,
    /// None = per-strategy default (PET_LR / PREFIX_LR).
    pub stage1_lr: Option<f32>,
    pub stage2_lr: Option<f32>,
    pub seeds: Vec<u64>,
    pub task_seed: u64,
    pub eval_every: usize,
    pub probe_size: usize,
    pub out_dir: String,
    pub pretrain: PretrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            backbone: BackboneConfig::desk(),
            tasks: default_tasks(),
            strategies: default_strategies(),
            total_steps: default_total_steps(),
            // parity converges much more slowly than the other tasks; the
            // larger corpora tolerate a slightly longer budget
            total_steps_per_task: BTreeMap::from([
                ("parity".to_string(), 600),
                ("similarity".to_string(), 200),
                ("topic-pair-large".to_string(), 300),
            ]),
            stage1_fraction: default_stage1_fraction(),
            pet: PetHyper::default(),
            stage1_lr: None,
            stage2_lr: None,
            seeds: default_seeds(),
            task_seed: 0,
            eval_every: default_eval_every(),
            probe_size: default_probe_size(),
            out_dir: default_out_dir(),
            pretrain: PretrainSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EhError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| EhError::Config(format!("config {}: {e}", path.display())))?;
        cfg.backbone.validate()?;
        if cfg.seeds.is_empty() {
            return Err(EhError::Config("seeds must be non-empty".into()));
        }
        for s in &cfg.strategies {
            Strategy::from_name(s)?;
        }
        Ok(cfg)
    }

    pub fn steps_for(&self, task: &str) -> usize {
        self.total_steps_per_task.get(task).copied().unwrap_or(self.total_steps)
    }

    /// Plan for one (strategy, task, seed) cell under this config.
    pub fn plan(&self, strategy: Strategy, task: &str, seed: u64) -> TrainPlan {
        let mut plan = TrainPlan::new(strategy, task, seed);
        plan.task_seed = self.task_seed;
        plan.total_steps = self.steps_for(task);
        if strategy.two_stage() {
            plan.stage1_fraction = self.stage1_fraction;
        }
        plan.pet = self.pet;
        if let Some(lr) = self.stage1_lr {
            plan.stage1_optim = OptimConfig::with_lr(lr);
        }
        plan.stage2_optim = OptimConfig::with_lr(self.stage2_lr.unwrap_or(FT_LR));
        plan.eval_every = self.eval_every;
        plan.probe_size = self.probe_size;
        plan
    }
}

#[derive(Parser)]
#[command(name = "ehtune", version, about = "Two-stage head-first finetuning experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain a backbone on the synthetic corpus and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one strategy on one task over the configured seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        task: String,
        /// Use seeds 0..N instead of the config's seed list.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output directory (default: config out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ablation sweep over one axis; one aggregate CSV row per value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        /// stage1_fraction or lora_rank
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 0.1,0.5,0.9
        #[arg(long)]
        values: String,
        /// stage1_fraction only: fixed-total (stage 2 shrinks) or
        /// fixed-stage2 (total grows).
        #[arg(long, default_value = "fixed-total")]
        mode: String,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render CSV/SVG reports from a directory of run records.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Timing and provenance live here, not in the byte-stable record files.
#[derive(Serialize)]
struct RunMeta {
    record: String,
    wall_clock_secs: f32,
}

fn cmd_pretrain(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let p = &cfg.pretrain;
    let corpus = generate_corpus(&p.grammar, p.corpus_seed, p.corpus_size)?;
    let mut bb = Backbone::build(cfg.backbone.clone(), p.seed)?;
    let pcfg = PretrainConfig {
        steps: p.steps,
        mask_fraction: p.mask_fraction,
        holdout: p.holdout,
        optim: OptimConfig::with_lr(p.lr),
    };
    let report = pretrain(&mut bb, &corpus, &pcfg, p.seed)?;
    save_backbone(out, &bb)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let curve_path = out.with_extension("loss.csv");
    std::fs::write(&curve_path, csv)?;
    eprintln!(
        "pretrained {} steps; holdout loss {:.4}; checkpoint {}",
        p.steps,
        report.holdout_loss,
        out.display()
    );
    Ok(())
}

fn check_backbone_matches(bb: &Backbone, cfg: &ExperimentConfig) -> Result<()> {
    let expect = Backbone::build(cfg.backbone.clone(), 0)?;
    for (name, t) in expect.params.iter() {
        match bb.params.get(name) {
            Ok(got) if got.shape() == t.shape() => {}
            Ok(got) => {
                return Err(EhError::Config(format!(
                    "checkpoint/config mismatch at {name:?}: {:?} vs {:?}",
                    got.shape(),
                    t.shape()
                )))
            }
            Err(_) => {
                return Err(EhError::Config(format!("checkpoint is missing tensor {name:?}")))
            }
        }
    }
    Ok(())
}

fn load_task(name: &str, task_seed: u64) -> Result<Task> {
    make_task(name, task_seed)
}

fn write_records(records: &[RunRecord], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for r in records {
        let stem = crate::report::record_stem(r);
        write_json_atomic(&out_dir.join(format!("{stem}.json")), r)?;
        write_json_atomic(
            &out_dir.join(format!("{stem}.meta.json")),
            &RunMeta { record: format!("{stem}.json"), wall_clock_secs: r.wall_clock_secs },
        )?;
    }
    Ok(())
}

fn cmd_run(
    config: &Path,
    backbone: &Path,
    strategy: &str,
    task_name: &str,
    seeds: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let strategy = Strategy::from_name(strategy)?;
    let bb = load_backbone(backbone)?;
    check_backbone_matches(&bb, &cfg)?;
    let task = load_task(task_name, cfg.task_seed)?;
    let seeds: Vec<u64> = match seeds {
        Some(n) => (0..n as u64).collect(),
        None => cfg.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(EhError::Config("no seeds requested".into()));
    }
    let plans: Vec<TrainPlan> =
        seeds.iter().map(|&s| cfg.plan(strategy, task_name, s)).collect();
    let records = run_suite(&plans, &bb, &task)?;
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    write_records(&records, &out_dir)?;
    let agg = crate::trainer::strategy::aggregate(&records)?;
    let agg_path = out_dir.join(format!("{}_{}_aggregate.csv", strategy.name(), task_name));
    let mut csv = String::from("strategy,task,n_seeds,mean_metric,sd_metric\n");
    csv.push_str(&format!(
        "{},{},{},{},{}\n",
        agg.strategy, agg.task, agg.n_seeds, agg.mean_metric, agg.sd_metric
    ));
    std::fs::write(&agg_path, csv)?;
    eprintln!(
        "{} on {}: mean {} = {:.4} (sd {:.4}) over {} seeds -> {}",
        strategy.name(),
        task_name,
        records[0].metric_name,
        agg.mean_metric,
        agg.sd_metric,
        agg.n_seeds,
        out_dir.display()
    );
    Ok(())
}

fn parse_values(values: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = values
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| EhError::Config(format!("bad sweep value {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(EhError::Config("sweep needs at least one value".into()));
    }
    Ok(vals)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    backbone: &Path,
    axis: &str,
    values: &str,
    mode: &str,
    task_name: Option<String>,
    strategy: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let bb = load_backbone(backbone)?;
    check_backbone_matches(&bb, &cfg)?;
    let vals = parse_values(values)?;
    if !matches!(mode, "fixed-total" | "fixed-stage2") {
        return Err(EhError::Config(format!(
            "unknown sweep mode {mode:?}; use fixed-total or fixed-stage2"
        )));
    }
    let task_name = task_name
        .or_else(|| cfg.tasks.first().cloned())
        .ok_or_else(|| EhError::Config("no task given".into()))?;
    let task = load_task(&task_name, cfg.task_seed)?;
    let strategy = match (&strategy, axis) {
        (Some(s), _) => Strategy::from_name(s)?,
        (None, "stage1_fraction") => Strategy::EhFtBitfit,
        (None, "lora_rank") => Strategy::EhFtLora,
        (None, other) => {
            return Err(EhError::Config(format!(
                "unknown sweep axis {other:?}; use stage1_fraction or lora_rank"
            )))
        }
    };
    let base_total = cfg.steps_for(&task_name);

    let mut rows = String::from(
        "axis,value,mode,strategy,task,total_steps,stage1_steps,n_seeds,\
mean_metric,sd_metric,mean_trainable_fraction\n",
    );
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    std::fs::create_dir_all(&out_dir)?;
    for &v in &vals {
        let mut plans = Vec::new();
        for &seed in &cfg.seeds {
            let mut plan = cfg.plan(strategy, &task_name, seed);
            match axis {
                "stage1_fraction" => {
                    let f = v as f32;
                    if !(0.0..=1.0).contains(&f) {
                        return Err(EhError::Config(format!("stage1_fraction {f} outside [0,1]")));
                    }
                    plan.stage1_fraction = f;
                    if mode == "fixed-stage2" {
                        // stage-2 budget held at the base plan's stage-2 size
                        let (_, s2) = split_budget(base_total, cfg.stage1_fraction)?;
                        let total = (s2 as f64 / (1.0 - v).max(1e-9)).round() as usize;
                        plan.total_steps = total.max(s2);
                    }
                }
                "lora_rank" => {
                    if v.fract() != 0.0 || v < 1.0 {
                        return Err(EhError::Config(format!("lora_rank must be a positive integer, got {v}")));
                    }
                    plan.pet.lora_rank = v as usize;
                    plan.pet.lora_alpha = None;
                }
                _ => unreachable!(),
            }
            plans.push(plan);
        }
        let records = run_suite(&plans, &bb, &task)?;
        write_records(&records, &out_dir)?;
        let agg = crate::trainer::strategy::aggregate(&records)?;
        let mean_frac = records
            .iter()
            .map(|r| r.trainable_fraction_stage1 as f64)
            .sum::<f64>()
            / records.len() as f64;
        let s1 = records[0].stage1.as_ref().map(|s| s.steps).unwrap_or(0);
        rows.push_str(&format!(
            "{axis},{v},{mode},{},{},{},{},{},{},{},{}\n",
            agg.strategy,
            agg.task,
            records[0].plan.total_steps,
            s1,
            agg.n_seeds,
            agg.mean_metric,
            agg.sd_metric,
            mean_frac as f32,
        ));
    }
    let sweep_path = out_dir.join(format!("sweep_{axis}_{mode}_{}.csv", task_name));
    std::fs::write(&sweep_path, rows)?;
    eprintln!("sweep written to {}", sweep_path.display());
    Ok(())
}

fn cmd_report(runs: &Path, out: &Path) -> Result<()> {
    let entries = std::fs::read_dir(runs)
        .map_err(|e| EhError::Config(format!("cannot read runs dir {}: {e}", runs.display())))?;
    let mut records: Vec<RunRecord> = Vec::new();
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && !p.to_string_lossy().ends_with(".meta.json")
        })
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        match serde_json::from_str::<RunRecord>(&text) {
            Ok(r) => records.push(r),
            Err(_) => continue, // checkpoints/aggregates share the dir
        }
    }
    if records.is_empty() {
        return Err(EhError::Config(format!(
            "no run records found in {}",
            runs.display()
        )));
    }
    render_report(&records, out)?;
    eprintln!("report over {} records -> {}", records.len(), out.display());
    Ok(())
}

fn exit_code(err: &EhError) -> i32 {
    match err {
        EhError::Config(_) | EhError::Json(_) => 1,
        EhError::Training { .. }
        | EhError::Contract(_)
        | EhError::Checkpoint(_)
        | EhError::Shape(_)
        | EhError::Index(_)
        | EhError::Io(_) => 2,
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Pretrain { config, out } => cmd_pretrain(&config, &out),
        Cmd::Run { config, backbone, strategy, task, seeds, out } => {
            cmd_run(&config, &backbone, &strategy, &task, seeds, out)
        }
        Cmd::Sweep { config, backbone, axis, values, mode, task, strategy, out } => {
            cmd_sweep(&config, &backbone, &axis, &values, &mode, task, strategy, out)
        }
        Cmd::Report { runs, out } => cmd_report(&runs, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
