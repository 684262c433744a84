//! Strategy orchestration: FT, LP, LP-FT, the EH-FT family, and Top-K
//! tuning, all under one total step budget with the 10%/90% stage split.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{forward_features, Backbone, ForwardAttach, NodeMap};
use crate::error::{EhError, Result};
use crate::head::{forward_logits, Head};
use crate::metrics::{feature_change, param_distance, pca_project_2d, FeatureSnapshot};
use crate::numcore::{Graph, ParamStore};
use crate::pet::{
    apply_bitfit, apply_ft, apply_lp, apply_topk, attach_lora, attach_prefix, restore_backbone,
    trainable_fraction, ParamPartition,
};
use crate::tasks::{Task, TaskKind};
use crate::trainer::{lr_at, split_budget, AdamState, BatchSampler, OptimConfig};

pub const HEAD_MID_FACTOR: usize = 4;

/// Stage-1 (head + PET) peak learning rate.
pub const PET_LR: f32 = 5e-4;
/// Prefix parameters need a hotter rate to move at all.
pub const PREFIX_LR: f32 = 5e-3;
/// Full-finetuning peak learning rate (desk-scale search; see README).
pub const FT_LR: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Ft,
    Lp,
    LpFt,
    EhFtBitfit,
    EhFtLora,
    EhFtPrefix,
    EhFtReserveBitfit,
    EhFtReserveLora,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PetKind {
    Bitfit,
    Lora,
    Prefix,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::Ft,
        Strategy::Lp,
        Strategy::LpFt,
        Strategy::EhFtBitfit,
        Strategy::EhFtLora,
        Strategy::EhFtPrefix,
        Strategy::EhFtReserveBitfit,
        Strategy::EhFtReserveLora,
        Strategy::Topk,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ft => "ft",
            Strategy::Lp => "lp",
            Strategy::LpFt => "lp-ft",
            Strategy::EhFtBitfit => "eh-ft-bitfit",
            Strategy::EhFtLora => "eh-ft-lora",
            Strategy::EhFtPrefix => "eh-ft-prefix",
            Strategy::EhFtReserveBitfit => "eh-ft-reserve-bitfit",
            Strategy::EhFtReserveLora => "eh-ft-reserve-lora",
            Strategy::Topk => "topk",
        }
    }

    pub fn from_name(s: &str) -> Result<Strategy> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
                EhError::Config(format!("unknown strategy {s:?}; valid: {valid:?}"))
            })
    }

    /// LP-FT and the EH-FT family split the budget across two stages.
    pub fn two_stage(&self) -> bool {
        !matches!(self, Strategy::Ft | Strategy::Lp | Strategy::Topk)
    }

    pub fn pet(&self) -> Option<PetKind> {
        match self {
            Strategy::EhFtBitfit | Strategy::EhFtReserveBitfit => Some(PetKind::Bitfit),
            Strategy::EhFtLora | Strategy::EhFtReserveLora => Some(PetKind::Lora),
            Strategy::EhFtPrefix => Some(PetKind::Prefix),
            _ => None,
        }
    }

    /// Reserve variants keep stage-1 PET values trainable through stage 2
    /// instead of restoring/dropping them.
    pub fn reserve(&self) -> bool {
        matches!(self, Strategy::EhFtReserveBitfit | Strategy::EhFtReserveLora)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PetHyper {
    pub lora_rank: usize,
    /// None means α = r (so α/r = 1).
    pub lora_alpha: Option<f32>,
    pub prefix_len: usize,
    pub topk: usize,
}

impl Default for PetHyper {
    fn default() -> Self {
        PetHyper { lora_rank: 8, lora_alpha: None, prefix_len: 8, topk: 1 }
    }
}

impl PetHyper {
    pub fn alpha(&self) -> f32 {
        self.lora_alpha.unwrap_or(self.lora_rank as f32)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainPlan {
    pub strategy: Strategy,
    pub task: String,
    pub seed: u64,
    /// Seed for the task data itself: shared across strategies and run
    /// seeds so every run sees identical splits.
    pub task_seed: u64,
    pub total_steps: usize,
    pub stage1_fraction: f32,
    pub stage1_optim: OptimConfig,
    pub stage2_optim: OptimConfig,
    pub pet: PetHyper,
    pub eval_every: usize,
    pub probe_size: usize,
    pub grad_log_window: usize,
}

impl TrainPlan {
    pub fn new(strategy: Strategy, task: &str, seed: u64) -> TrainPlan {
        let stage1_lr = match strategy.pet() {
            Some(PetKind::Prefix) => PREFIX_LR,
            _ => PET_LR,
        };
        TrainPlan {
            strategy,
            task: task.to_string(),
            seed,
            task_seed: 0,
            total_steps: 175,
            stage1_fraction: if strategy.two_stage() { 0.10 } else { 0.0 },
            stage1_optim: OptimConfig::with_lr(stage1_lr),
            stage2_optim: OptimConfig::with_lr(FT_LR),
            pet: PetHyper::default(),
            eval_every: 50,
            probe_size: 256,
            grad_log_window: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy.two_stage() {
            if !(0.0..=1.0).contains(&self.stage1_fraction) {
                return Err(EhError::Config(format!(
                    "stage1_fraction {} outside [0, 1]",
                    self.stage1_fraction
                )));
            }
        } else if self.stage1_fraction != 0.0 {
            return Err(EhError::Config(format!(
                "strategy {:?} is single-stage; stage1_fraction must be 0",
                self.strategy.name()
            )));
        }
        if self.probe_size == 0 {
            return Err(EhError::Config("probe_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Backbone + head + optional adapters: everything a forward pass needs.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub bb: Backbone,
    pub head: Head,
    pub adapters: Option<ParamStore>,
    pub attach: ForwardAttach,
}

impl ModelState {
    fn register(&self, g: &mut Graph, partition: &ParamPartition) -> NodeMap {
        let mut nodes = NodeMap::new();
        let stores =
            [Some(&self.bb.params), Some(&self.head.params), self.adapters.as_ref()];
        for store in stores.into_iter().flatten() {
            for (name, t) in store.iter() {
                nodes.insert(name.to_string(), g.leaf(t, partition.is_trainable(name)));
            }
        }
        nodes
    }

    fn tensor_mut(&mut self, name: &str) -> Result<&mut crate::numcore::Tensor> {
        if name.starts_with("head.") {
            self.head.params.get_mut(name)
        } else if name.starts_with("adapter.") {
            self.adapters
                .as_mut()
                .ok_or_else(|| EhError::Contract(format!("no adapters attached, wanted {name:?}")))?
                .get_mut(name)
        } else {
            self.bb.params.get_mut(name)
        }
    }

    fn tensor(&self, name: &str) -> Result<&crate::numcore::Tensor> {
        if name.starts_with("head.") {
            self.head.params.get(name)
        } else if name.starts_with("adapter.") {
            self.adapters
                .as_ref()
                .ok_or_else(|| EhError::Contract(format!("no adapters attached, wanted {name:?}")))?
                .get(name)
        } else {
            self.bb.params.get(name)
        }
    }

    /// SHA-256 over the named tensors across all stores, sorted by name.
    pub fn digest<'a>(&self, names: impl Iterator<Item = &'a str>) -> Result<[u8; 32]> {
        let mut sorted: Vec<&str> = names.collect();
        sorted.sort_unstable();
        let mut h = Sha256::new();
        for name in sorted {
            let t = self.tensor(name)?;
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        Ok(h.finalize().into())
    }

    /// Pooled backbone features over a token batch, via a throwaway graph.
    pub fn features(&self, tokens: &[Vec<usize>]) -> Result<crate::numcore::Tensor> {
        self.bb.features(tokens, self.adapters.as_ref(), self.attach)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct StageLog {
    pub steps: usize,
    pub losses: Vec<f32>,
    /// (head grad norm, trainable body+adapter grad norm), first
    /// `grad_log_window` steps of the stage.
    pub grad_norms: Vec<(f32, f32)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub value: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub plan: TrainPlan,
    pub metric_name: String,
    pub trainable_fraction_stage1: f32,
    pub stage1: Option<StageLog>,
    pub stage2: StageLog,
    pub evals: Vec<EvalPoint>,
    pub final_metric: f32,
    /// Keys: pretrained_to_final, and for two-stage runs also
    /// pretrained_to_stage1_end, stage1_end_to_final, pretrained_to_restored.
    pub feature_changes: BTreeMap<String, f32>,
    pub param_distance_curve: Vec<(usize, f32)>,
    pub param_distance_final: f32,
    /// Mean trainable-body grad norm over mean head grad norm, first
    /// `grad_log_window` steps of the full-finetune (or only) stage.
    pub grad_ratio_window: Option<f32>,
    /// 2-D PCA of probe features per snapshot tag; components fitted on
    /// all snapshots jointly so the panels share axes.
    pub projections: BTreeMap<String, Vec<[f32; 2]>>,
    pub probe_labels: Vec<f32>,
    /// Not serialized: keeps record files byte-identical across reruns;
    /// the CLI writes timing into a metadata sidecar instead.
    #[serde(skip)]
    pub wall_clock_secs: f32,
}

pub struct StageOpts<'a> {
    pub optim: &'a OptimConfig,
    pub steps: usize,
    pub seed: u64,
    pub grad_log_window: usize,
    /// 0 disables mid-stage callbacks.
    pub eval_every: usize,
}

fn batch_loss(
    g: &mut Graph,
    nodes: &NodeMap,
    model: &ModelState,
    task: &Task,
    idx: &[usize],
) -> Result<crate::numcore::NodeId> {
    let tokens: Vec<Vec<usize>> = idx.iter().map(|&i| task.train[i].tokens.clone()).collect();
    let feats = forward_features(g, nodes, &model.bb.cfg, &tokens, model.attach)?;
    let logits = forward_logits(g, nodes, feats)?;
    match task.kind {
        TaskKind::Classification { .. } => {
            let labels: Vec<usize> = idx.iter().map(|&i| task.train[i].label as usize).collect();
            g.cross_entropy(logits, &labels)
        }
        TaskKind::Regression => {
            let targets: Vec<f32> = idx.iter().map(|&i| task.train[i].label).collect();
            g.mse(logits, &targets)
        }
    }
}

/// Train `steps` optimizer steps of one stage. Verifies the frozen set is
/// bitwise unchanged over the stage; calls `on_eval(local_step, model)`
/// every `eval_every` steps.
pub fn train_steps(
    model: &mut ModelState,
    partition: &ParamPartition,
    task: &Task,
    opts: &StageOpts,
    mut on_eval: impl FnMut(usize, &ModelState) -> Result<()>,
) -> Result<StageLog> {
    let mut log = StageLog { steps: opts.steps, ..Default::default() };
    if opts.steps == 0 {
        return Ok(log);
    }
    let frozen_before = model.digest(partition.frozen_names())?;
    let mut sampler = BatchSampler::new(task.train.len(), opts.optim.batch_size, opts.seed)?;
    let mut adam = AdamState::new();
    for step in 0..opts.steps {
        let lr = lr_at(step, opts.steps, opts.optim)?;
        let idx = sampler.next_batch();
        let mut g = Graph::new();
        let nodes = model.register(&mut g, partition);
        let loss = batch_loss(&mut g, &nodes, model, task, &idx)?;
        let loss_val = g.value(loss).data()[0];
        if !loss_val.is_finite() {
            return Err(EhError::Training { step, msg: "non-finite training loss".into() });
        }
        log.losses.push(loss_val);
        g.backward(loss)?;

        if step < opts.grad_log_window {
            let mut head_sq = 0.0f64;
            let mut body_sq = 0.0f64;
            for name in partition.trainable_names() {
                if let Some(gr) = g.grad(nodes[name]) {
                    let sq: f64 = gr.iter().map(|v| (*v as f64).powi(2)).sum();
                    if name.starts_with("head.") {
                        head_sq += sq;
                    } else {
                        body_sq += sq;
                    }
                }
            }
            log.grad_norms.push((head_sq.sqrt() as f32, body_sq.sqrt() as f32));
        }

        adam.begin_step();
        for name in partition.trainable_names() {
            let grad = match g.grad(nodes[name]) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; g.value(nodes[name]).numel()],
            };
            let w = model.tensor_mut(name)?;
            adam.update(opts.optim, lr, name, w, &grad)?;
        }

        if opts.eval_every > 0 && (step + 1) % opts.eval_every == 0 {
            on_eval(step + 1, model)?;
        }
    }
    let frozen_after = model.digest(partition.frozen_names())?;
    if frozen_before != frozen_after {
        return Err(EhError::Training {
            step: opts.steps,
            msg: "frozen parameters moved during the stage".into(),
        });
    }
    Ok(log)
}

/// Dev-set score under the task's own metric.
pub fn evaluate(model: &ModelState, task: &Task) -> Result<f32> {
    let mut preds_class = Vec::with_capacity(task.dev.len());
    let mut preds_value = Vec::with_capacity(task.dev.len());
    for chunk in task.dev.chunks(64) {
        let tokens: Vec<Vec<usize>> = chunk.iter().map(|e| e.tokens.clone()).collect();
        let feats = model.features(&tokens)?;
        let logits = model.head.logits(&feats)?;
        let (b, c) = logits.expect_2d("dev logits")?;
        for i in 0..b {
            let row: Vec<f32> = (0..c).map(|j| logits.at(i, j)).collect();
            let argmax = (0..c).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            preds_class.push(argmax);
            preds_value.push(row[0]);
        }
    }
    task.score(&preds_class, &preds_value)
}

/// First `probe_size` training examples, fixed order.
pub fn probe_tokens(task: &Task, probe_size: usize) -> Vec<Vec<usize>> {
    task.train.iter().take(probe_size).map(|e| e.tokens.clone()).collect()
}

fn snapshot(model: &ModelState, probe: &[Vec<usize>], tag: &str) -> Result<FeatureSnapshot> {
    Ok(FeatureSnapshot::new(tag, model.features(probe)?))
}

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt)
}

/// Execute a plan end to end against a pretrained backbone.
pub fn run_strategy(plan: &TrainPlan, pretrained: &Backbone, task: &Task) -> Result<RunRecord> {
    plan.validate()?;
    if task.name != plan.task {
        return Err(EhError::Config(format!(
            "plan task {:?} but data is {:?}",
            plan.task, task.name
        )));
    }
    let started = Instant::now();
    let theta0 = pretrained.params.clone();
    let d_model = pretrained.cfg.d_model;
    let head = Head::build(
        d_model,
        HEAD_MID_FACTOR * d_model,
        task.n_classes(),
        derived_seed(plan.seed, 1),
    )?;
    let mut model = ModelState {
        bb: pretrained.clone(),
        head,
        adapters: None,
        attach: ForwardAttach::none(),
    };

    let (s1_steps, s2_steps) = if plan.strategy.two_stage() {
        split_budget(plan.total_steps, plan.stage1_fraction)?
    } else {
        (0, plan.total_steps)
    };

    // stage-1 partition and attachments
    let stage1_partition: Option<ParamPartition> = if plan.strategy.two_stage() {
        Some(match plan.strategy {
            Strategy::LpFt => apply_lp(&model.bb, &model.head),
            _ => match plan.strategy.pet().expect("two-stage EH-FT has a PET") {
                PetKind::Bitfit => apply_bitfit(&model.bb, &model.head),
                PetKind::Lora => {
                    let (adapter, part) = attach_lora(
                        &model.bb,
                        &model.head,
                        plan.pet.lora_rank,
                        plan.pet.alpha(),
                        derived_seed(plan.seed, 2),
                    )?;
                    model.attach = adapter.attach_spec();
                    model.adapters = Some(adapter.params);
                    part
                }
                PetKind::Prefix => {
                    let (state, part) = attach_prefix(
                        &model.bb,
                        &model.head,
                        plan.pet.prefix_len,
                        derived_seed(plan.seed, 2),
                    )?;
                    model.attach = state.attach_spec();
                    model.adapters = Some(state.params);
                    part
                }
            },
        })
    } else {
        None
    };
    let trainable_fraction_stage1 = match &stage1_partition {
        Some(p) => trainable_fraction(p, &model.bb, model.adapters.as_ref()),
        None => {
            let p = match plan.strategy {
                Strategy::Ft => apply_ft(&model.bb, &model.head),
                Strategy::Lp => apply_lp(&model.bb, &model.head),
                Strategy::Topk => apply_topk(&model.bb, &model.head, plan.pet.topk)?,
                _ => unreachable!(),
            };
            trainable_fraction(&p, &model.bb, None)
        }
    };

    let probe = probe_tokens(task, plan.probe_size);
    let pretrained_snap = {
        let plain = ModelState {
            bb: pretrained.clone(),
            head: model.head.clone(),
            adapters: None,
            attach: ForwardAttach::none(),
        };
        snapshot(&plain, &probe, "pretrained")?
    };

    let mut evals: Vec<EvalPoint> = Vec::new();
    let mut pd_curve: Vec<(usize, f32)> = Vec::new();

    // stage 1
    let mut stage1_log: Option<StageLog> = None;
    let mut stage1_snap: Option<FeatureSnapshot> = None;
    if let Some(part) = &stage1_partition {
        let opts = StageOpts {
            optim: &plan.stage1_optim,
            steps: s1_steps,
            seed: derived_seed(plan.seed, 3),
            grad_log_window: plan.grad_log_window,
            eval_every: plan.eval_every,
        };
        let log = train_steps(&mut model, part, task, &opts, |step, m| {
            evals.push(EvalPoint { step, value: evaluate(m, task)? });
            pd_curve.push((step, param_distance(&m.bb.params, &theta0)?));
            Ok(())
        })?;
        stage1_log = Some(log);
        stage1_snap = Some(snapshot(&model, &probe, "stage1_end")?);
        if !plan.strategy.reserve() {
            if plan.strategy != Strategy::LpFt {
                restore_backbone(&mut model.bb, &theta0)?;
            }
            model.adapters = None;
            model.attach = ForwardAttach::none();
        }
    }
    let restored_snap = if stage1_partition.is_some() && !plan.strategy.reserve() {
        Some(snapshot(&model, &probe, "restored")?)
    } else {
        None
    };

    // stage 2 (or the only stage)
    let stage2_partition = match plan.strategy {
        Strategy::Lp => apply_lp(&model.bb, &model.head),
        Strategy::Topk => apply_topk(&model.bb, &model.head, plan.pet.topk)?,
        _ if plan.strategy.reserve() => ParamPartition::from_predicate(
            model
                .bb
                .params
                .names()
                .chain(model.head.params.names())
                .chain(model.adapters.iter().flat_map(|a| a.names())),
            |n| {
                n.starts_with("head.")
                    || n.starts_with("adapter.")
                    || crate::pet::is_body_param(n)
            },
        ),
        _ => apply_ft(&model.bb, &model.head),
    };
    let stage2_optim = if plan.strategy == Strategy::Lp {
        &plan.stage1_optim
    } else {
        &plan.stage2_optim
    };
    let opts = StageOpts {
        optim: stage2_optim,
        steps: s2_steps,
        seed: derived_seed(plan.seed, 4),
        grad_log_window: plan.grad_log_window,
        eval_every: plan.eval_every,
    };
    let stage2_log = train_steps(&mut model, &stage2_partition, task, &opts, |step, m| {
        evals.push(EvalPoint { step: s1_steps + step, value: evaluate(m, task)? });
        pd_curve.push((s1_steps + step, param_distance(&m.bb.params, &theta0)?));
        Ok(())
    })?;

    // endpoint measurements
    let final_metric = evaluate(&model, task)?;
    if evals.last().map(|e| e.step) != Some(plan.total_steps) {
        evals.push(EvalPoint { step: plan.total_steps, value: final_metric });
    }
    let param_distance_final = param_distance(&model.bb.params, &theta0)?;
    if pd_curve.last().map(|p| p.0) != Some(plan.total_steps) {
        pd_curve.push((plan.total_steps, param_distance_final));
    }
    let final_snap = snapshot(&model, &probe, "final")?;

    let mut feature_changes = BTreeMap::new();
    feature_changes
        .insert("pretrained_to_final".to_string(), feature_change(&pretrained_snap, &final_snap)?);
    if let Some(s1) = &stage1_snap {
        feature_changes
            .insert("pretrained_to_stage1_end".to_string(), feature_change(&pretrained_snap, s1)?);
        feature_changes
            .insert("stage1_end_to_final".to_string(), feature_change(s1, &final_snap)?);
    }
    if let Some(r) = &restored_snap {
        feature_changes
            .insert("pretrained_to_restored".to_string(), feature_change(&pretrained_snap, r)?);
    }

    // joint PCA over every snapshot so the panels share axes
    let mut projections = BTreeMap::new();
    {
        let mut tagged: Vec<(&str, &FeatureSnapshot)> =
            vec![("pretrained", &pretrained_snap), ("final", &final_snap)];
        if let Some(s1) = &stage1_snap {
            tagged.push(("stage1_end", s1));
        }
        let n = probe.len();
        let mut stacked = Vec::with_capacity(tagged.len() * n * d_model);
        for (_, s) in &tagged {
            stacked.extend_from_slice(s.features.data());
        }
        let all = crate::numcore::Tensor::new(vec![tagged.len() * n, d_model], stacked)?;
        if let Ok(proj) = pca_project_2d(&all) {
            for (i, (tag, _)) in tagged.iter().enumerate() {
                projections.insert(tag.to_string(), proj.points[i * n..(i + 1) * n].to_vec());
            }
        }
    }
    let probe_labels: Vec<f32> =
        task.train.iter().take(plan.probe_size).map(|e| e.label).collect();

    let grad_ratio_window = crate::metrics::grad_norm_summary(
        &stage2_log.grad_norms,
        plan.grad_log_window,
    )
    .ok()
    .and_then(|s| s.ratio);

    Ok(RunRecord {
        plan: plan.clone(),
        metric_name: task.metric.name().to_string(),
        trainable_fraction_stage1,
        stage1: stage1_log,
        stage2: stage2_log,
        evals,
        final_metric,
        feature_changes,
        param_distance_curve: pd_curve,
        param_distance_final,
        grad_ratio_window,
        projections,
        probe_labels,
        wall_clock_secs: started.elapsed().as_secs_f32(),
    })
}

/// Optional cap on run-level parallelism from EHTUNE_THREADS.
pub fn thread_cap() -> Option<usize> {
    std::env::var("EHTUNE_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

/// Run many plans in parallel (each plan owns its model and RNG); records
/// come back in plan order.
pub fn run_suite(plans: &[TrainPlan], pretrained: &Backbone, task: &Task) -> Result<Vec<RunRecord>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| EhError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        plans
            .par_iter()
            .map(|plan| run_strategy(plan, pretrained, task))
            .collect::<Result<Vec<_>>>()
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: String,
    pub task: String,
    pub n_seeds: usize,
    pub mean_metric: f32,
    pub sd_metric: f32,
    pub mean_param_distance_final: f32,
    pub mean_feature_changes: BTreeMap<String, f32>,
}

fn mean(xs: &[f32]) -> f32 {
    (xs.iter().map(|v| *v as f64).sum::<f64>() / xs.len() as f64) as f32
}

fn sample_sd(xs: &[f32]) -> f32 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs) as f64;
    let var =
        xs.iter().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt() as f32
}

/// Mean/sd over seed records of one (strategy, task) cell.
pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    let first = records
        .first()
        .ok_or_else(|| EhError::Contract("aggregate over zero records".into()))?;
    for r in records {
        if r.plan.strategy != first.plan.strategy || r.plan.task != first.plan.task {
            return Err(EhError::Contract(
                "aggregate mixes (strategy, task) cells".into(),
            ));
        }
    }
    let metrics: Vec<f32> = records.iter().map(|r| r.final_metric).collect();
    let dists: Vec<f32> = records.iter().map(|r| r.param_distance_final).collect();
    let mut mean_feature_changes = BTreeMap::new();
    for key in first.feature_changes.keys() {
        let vals: Vec<f32> =
            records.iter().filter_map(|r| r.feature_changes.get(key).copied()).collect();
        if vals.len() == records.len() {
            mean_feature_changes.insert(key.clone(), mean(&vals));
        }
    }
    Ok(Aggregate {
        strategy: first.plan.strategy.name().to_string(),
        task: first.plan.task.clone(),
        n_seeds: records.len(),
        mean_metric: mean(&metrics),
        sd_metric: sample_sd(&metrics),
        mean_param_distance_final: mean(&dists),
        mean_feature_changes,
    })
}
