//! Acceptance suite. Two parts:
//!
//! * property criteria (1–7): exact contracts with pinned tolerances;
//! * trend criteria (8–15): directional claims at desk scale, means over
//!   4 seeds on the built-in tasks.
//!
//! Every criterion is one test named `criterion_NN_*` and additionally
//! prints one `criterion NN (...): PASS|FAIL` line (visible with
//! `--nocapture`). Expensive fixtures — the pretrained backbone and the
//! per-(strategy, task) run cells — are shared through `Lazy` statics, so
//! the whole suite performs each training run exactly once.
//!
//! [DERIVED] trend thresholds: metric "points" are read on the 0–100
//! scale, so 0.5 points = 0.005 and 2 points = 0.02 in raw metric units.

use once_cell::sync::Lazy;

use ehtune::backbone::{forward_features, Backbone, BackboneConfig, ForwardAttach};
use ehtune::head::{forward_logits, Head};
use ehtune::metrics::steps_to_threshold;
use ehtune::numcore::{grad_check, ParamStore, Tensor};
use ehtune::pet::{
    apply_bitfit, apply_lp, apply_topk, attach_lora, attach_prefix, merge_lora,
    restore_backbone, ParamPartition,
};
use ehtune::tasks::{generate_corpus, make_task, Task};
use ehtune::trainer::pretrain::{pretrain, PretrainConfig};
use ehtune::trainer::strategy::{
    probe_tokens, run_suite, train_steps, ModelState, RunRecord, StageOpts, Strategy, TrainPlan,
    HEAD_MID_FACTOR, PET_LR,
};
use ehtune::trainer::{split_budget, OptimConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N_SEEDS: u64 = 4;
const TP_STEPS: usize = 175; // topic-pair budget
const SIDE_STEPS: usize = 200; // budget on the non-primary tasks
const TPL_STEPS: usize = 300; // the large corpus supports a longer budget
const PARITY_STEPS: usize = 600; // parity converges far more slowly
const SMOOTH: usize = 20;

// ---------- shared fixtures ----------

static PRETRAINED: Lazy<Backbone> = Lazy::new(|| {
    let corpus = generate_corpus("sticky-topic", 0, 2000).unwrap();
    let mut bb = Backbone::build(BackboneConfig::desk(), 0).unwrap();
    pretrain(&mut bb, &corpus, &PretrainConfig::desk(1200), 0).unwrap();
    bb
});

static TOPIC: Lazy<Task> = Lazy::new(|| make_task("topic-pair", 0).unwrap());
static TOPIC_LARGE: Lazy<Task> = Lazy::new(|| make_task("topic-pair-large", 0).unwrap());
static PARITY: Lazy<Task> = Lazy::new(|| make_task("parity", 0).unwrap());
static SIMILARITY: Lazy<Task> = Lazy::new(|| make_task("similarity", 0).unwrap());

fn run_cell(
    strategy: Strategy,
    task: &Task,
    steps: usize,
    tweak: impl Fn(&mut TrainPlan),
) -> Vec<RunRecord> {
    let plans: Vec<TrainPlan> = (0..N_SEEDS)
        .map(|seed| {
            let mut p = TrainPlan::new(strategy, &task.name, seed);
            p.total_steps = steps;
            p.eval_every = 0;
            tweak(&mut p);
            p
        })
        .collect();
    run_suite(&plans, &PRETRAINED, task).unwrap()
}

macro_rules! cell {
    ($name:ident, $strategy:expr, $task:expr, $steps:expr) => {
        cell!($name, $strategy, $task, $steps, |_p| {});
    };
    ($name:ident, $strategy:expr, $task:expr, $steps:expr, $tweak:expr) => {
        static $name: Lazy<Vec<RunRecord>> =
            Lazy::new(|| run_cell($strategy, &$task, $steps, $tweak));
    };
}

cell!(FT_TP, Strategy::Ft, TOPIC, TP_STEPS);
cell!(EHB_TP, Strategy::EhFtBitfit, TOPIC, TP_STEPS);
cell!(EHL8_TP, Strategy::EhFtLora, TOPIC, TP_STEPS);
cell!(EHP_TP, Strategy::EhFtPrefix, TOPIC, TP_STEPS);
cell!(LPFT_TP, Strategy::LpFt, TOPIC, TP_STEPS);
cell!(RES_TP, Strategy::EhFtReserveBitfit, TOPIC, TP_STEPS);
cell!(EHB_TP_F9, Strategy::EhFtBitfit, TOPIC, TP_STEPS, |p| p.stage1_fraction = 0.9);
cell!(EHL2_TP, Strategy::EhFtLora, TOPIC, TP_STEPS, |p| p.pet.lora_rank = 2);
cell!(EHL4_TP, Strategy::EhFtLora, TOPIC, TP_STEPS, |p| p.pet.lora_rank = 4);
// fixed-stage-2 sweep companions of EHB_TP: stage 2 pinned at 157 steps
cell!(EHB_TP_S2F3, Strategy::EhFtBitfit, TOPIC, 225, |p| p.stage1_fraction = 0.3);
cell!(EHB_TP_S2F5, Strategy::EhFtBitfit, TOPIC, 315, |p| p.stage1_fraction = 0.5);

cell!(FT_TPL, Strategy::Ft, TOPIC_LARGE, TPL_STEPS);
cell!(EHB_TPL, Strategy::EhFtBitfit, TOPIC_LARGE, TPL_STEPS);
cell!(FT_PAR, Strategy::Ft, PARITY, PARITY_STEPS);
cell!(EHB_PAR, Strategy::EhFtBitfit, PARITY, PARITY_STEPS);
cell!(FT_SIM, Strategy::Ft, SIMILARITY, SIDE_STEPS);
cell!(EHB_SIM, Strategy::EhFtBitfit, SIMILARITY, SIDE_STEPS);

// ---------- helpers ----------

fn mean(xs: &[f32]) -> f64 {
    xs.iter().map(|v| *v as f64).sum::<f64>() / xs.len() as f64
}

fn metrics(recs: &[RunRecord]) -> Vec<f32> {
    recs.iter().map(|r| r.final_metric).collect()
}

fn mean_metric(recs: &[RunRecord]) -> f64 {
    mean(&metrics(recs))
}

fn feature_change_of(recs: &[RunRecord], key: &str) -> Vec<f32> {
    recs.iter().map(|r| r.feature_changes[key]).collect()
}

/// Stage-2 loss drop: first-window mean minus last-window mean.
fn stage2_loss_decrease(r: &RunRecord) -> f64 {
    let l = &r.stage2.losses;
    let w = SMOOTH.min(l.len());
    let head = mean(&l[..w]);
    let tail = mean(&l[l.len() - w..]);
    head - tail
}

fn verdict(n: usize, desc: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("criterion {n:02} ({desc}): PASS");
    } else {
        println!("criterion {n:02} ({desc}): FAIL — {}", failures.join("; "));
        panic!("criterion {n:02} ({desc}) failed: {}", failures.join("; "));
    }
}

fn fresh_model(seed: u64) -> ModelState {
    let bb = PRETRAINED.clone();
    let head = Head::build(
        bb.cfg.d_model,
        HEAD_MID_FACTOR * bb.cfg.d_model,
        TOPIC.n_classes(),
        seed,
    )
    .unwrap();
    ModelState { bb, head, adapters: None, attach: ForwardAttach::none() }
}

fn train_partition(model: &mut ModelState, part: &ParamPartition, steps: usize, lr: f32) {
    let optim = OptimConfig::with_lr(lr);
    let opts = StageOpts { optim: &optim, steps, seed: 7, grad_log_window: 0, eval_every: 0 };
    train_steps(model, part, &TOPIC, &opts, |_, _| Ok(())).unwrap();
}

// ---------- property criteria ----------

#[test]
fn criterion_01_gradient_correctness() {
    let cfg = BackboneConfig {
        vocab_size: 12,
        max_seq_len: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        dropout: 0.0,
    };
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bb = Backbone::build(cfg.clone(), seed).unwrap();
        let head = Head::build(cfg.d_model, 2 * cfg.d_model, 2, seed ^ 0xead).unwrap();
        let mut params = ParamStore::new();
        for (name, t) in bb.params.iter().chain(head.params.iter()) {
            params.insert(name, t.clone());
        }
        let tokens: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..8).map(|_| rng.gen_range(3..cfg.vocab_size)).collect())
            .collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..2)).collect();
        let report = grad_check(
            &params,
            |g, nodes| {
                let feats =
                    forward_features(g, nodes, &cfg, &tokens, ForwardAttach::none()).unwrap();
                let logits = forward_logits(g, nodes, feats).unwrap();
                g.cross_entropy(logits, &labels).unwrap()
            },
            1e-3,
        );
        if report.max_rel_err >= 1e-3 {
            failures.push(format!("seed {seed}: max rel err {}", report.max_rel_err));
        }
    }
    verdict(1, "gradient correctness vs finite differences", &failures);
}

#[test]
fn criterion_02_lora_identity_and_merge() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = BackboneConfig::desk();
    let bb = Backbone::build(cfg.clone(), 3).unwrap();
    let head = Head::build(cfg.d_model, 4 * cfg.d_model, 2, 4).unwrap();
    let (mut adapter, _part) = attach_lora(&bb, &head, 4, 4.0, 5).unwrap();
    for batch in 0..4 {
        let tokens: Vec<Vec<usize>> = (0..8)
            .map(|_| (0..16).map(|_| rng.gen_range(3..cfg.vocab_size)).collect())
            .collect();
        let plain = bb.features(&tokens, None, ForwardAttach::none()).unwrap();
        let attached = bb.features(&tokens, Some(&adapter.params), adapter.attach_spec()).unwrap();
        let max_diff = plain
            .data()
            .iter()
            .zip(attached.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        if max_diff >= 1e-6 {
            failures.push(format!("identity batch {batch}: max diff {max_diff}"));
        }
    }
    // randomize A and B so the adapter actually contributes, then merge
    for (_, t) in adapter.params.iter_mut() {
        let noise = Tensor::randn(t.shape().to_vec(), 0.05, &mut rng);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    let mut merged = bb.clone();
    merge_lora(&mut merged, &adapter).unwrap();
    for batch in 0..4 {
        let tokens: Vec<Vec<usize>> = (0..8)
            .map(|_| (0..16).map(|_| rng.gen_range(3..cfg.vocab_size)).collect())
            .collect();
        let attached = bb.features(&tokens, Some(&adapter.params), adapter.attach_spec()).unwrap();
        let folded = merged.features(&tokens, None, ForwardAttach::none()).unwrap();
        let max_diff = attached
            .data()
            .iter()
            .zip(folded.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        if max_diff >= 1e-5 {
            failures.push(format!("merge batch {batch}: max diff {max_diff}"));
        }
    }
    verdict(2, "LoRA identity at init and merge equivalence", &failures);
}

#[test]
fn criterion_03_partition_exactness_over_200_steps() {
    let mut failures = Vec::new();
    let cases: Vec<(&str, ModelState, ParamPartition)> = {
        let mut v = Vec::new();
        let m = fresh_model(20);
        let part = apply_bitfit(&m.bb, &m.head);
        v.push(("bitfit", m, part));

        let mut m = fresh_model(21);
        let (adapter, part) = attach_lora(&m.bb, &m.head, 8, 8.0, 21).unwrap();
        m.attach = adapter.attach_spec();
        m.adapters = Some(adapter.params);
        v.push(("lora", m, part));

        let mut m = fresh_model(22);
        let (state, part) = attach_prefix(&m.bb, &m.head, 8, 22).unwrap();
        m.attach = state.attach_spec();
        m.adapters = Some(state.params);
        v.push(("prefix", m, part));

        let m = fresh_model(23);
        let part = apply_topk(&m.bb, &m.head, 1).unwrap();
        v.push(("topk", m, part));

        let m = fresh_model(24);
        let part = apply_lp(&m.bb, &m.head);
        v.push(("lp", m, part));
        v
    };
    for (name, mut model, part) in cases {
        let before = model.digest(part.frozen_names()).unwrap();
        train_partition(&mut model, &part, 200, PET_LR);
        let after = model.digest(part.frozen_names()).unwrap();
        if before != after {
            failures.push(format!("{name}: frozen tensors changed"));
        }
    }
    verdict(3, "frozen partitions bitwise stable over 200 steps", &failures);
}

#[test]
fn criterion_04_restore_exactness() {
    let mut failures = Vec::new();
    let mut model = fresh_model(30);
    let theta0 = PRETRAINED.params.clone();
    let probe = probe_tokens(&TOPIC, 128);
    let before = model.features(&probe).unwrap();

    let part = apply_bitfit(&model.bb, &model.head);
    train_partition(&mut model, &part, 30, PET_LR);
    let moved = model.features(&probe).unwrap();
    if before.data() == moved.data() {
        failures.push("stage 1 did not move the features at all".to_string());
    }
    restore_backbone(&mut model.bb, &theta0).unwrap();
    let restored = model.features(&probe).unwrap();
    if before.data() != restored.data() {
        failures.push("restored features are not bitwise equal".to_string());
    }
    let fc = ehtune::metrics::feature_change(
        &ehtune::metrics::FeatureSnapshot::new("pretrained", before),
        &ehtune::metrics::FeatureSnapshot::new("restored", restored),
    )
    .unwrap();
    if fc != 0.0 {
        failures.push(format!("feature_change(pretrained, restored) = {fc}, want exactly 0"));
    }
    verdict(4, "restore returns the pretrained backbone bitwise", &failures);
}

#[test]
fn criterion_05_budget_parity() {
    let mut failures = Vec::new();
    if split_budget(1000, 0.1).unwrap() != (100, 900) {
        failures.push(format!("split_budget(1000, 0.1) = {:?}", split_budget(1000, 0.1)));
    }
    for strategy in Strategy::ALL {
        let mut plan = TrainPlan::new(strategy, "topic-pair", 0);
        plan.total_steps = 40;
        plan.eval_every = 0;
        let rec = ehtune::trainer::strategy::run_strategy(&plan, &PRETRAINED, &TOPIC).unwrap();
        let s1 = rec.stage1.as_ref().map_or(0, |s| s.steps);
        let logged = rec.stage1.as_ref().map_or(0, |s| s.losses.len()) + rec.stage2.losses.len();
        if s1 + rec.stage2.steps != 40 || logged != 40 {
            failures.push(format!(
                "{}: steps {}+{}, logged {}",
                strategy.name(),
                s1,
                rec.stage2.steps,
                logged
            ));
        }
    }
    verdict(5, "every strategy consumes exactly the step budget", &failures);
}

#[test]
fn criterion_06_metric_oracles() {
    use ehtune::tasks::{f1, mcc, pearson, spearman};
    let mut failures = Vec::new();

    // hand case: TP=2 TN=1 FP=1 FN=1 -> 1/6
    let hand = mcc(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap();
    if hand != (1.0f64 / 6.0) as f32 {
        failures.push(format!("MCC hand case: {hand} != 1/6"));
    }

    let pearson_oracle = |x: &[f64], y: &[f64]| -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        sxy / (sxx * syy).sqrt()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for case in 0..1000 {
        let n = rng.gen_range(4..48);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();

        // MCC oracle: Pearson correlation of the two indicator vectors,
        // which equals MCC for binary data; 0 in the degenerate cases.
        let pf: Vec<f64> = preds.iter().map(|&v| v as f64).collect();
        let lf: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let degenerate = preds.iter().all(|&v| v == preds[0]) || labels.iter().all(|&v| v == labels[0]);
        let mcc_oracle = if degenerate { 0.0 } else { pearson_oracle(&pf, &lf) };
        let got = mcc(&preds, &labels).unwrap() as f64;
        if (got - mcc_oracle).abs() > 1e-6 {
            failures.push(format!("case {case}: mcc {got} vs oracle {mcc_oracle}"));
        }

        // F1 oracle from raw counts
        let count = |p: usize, l: usize| {
            preds.iter().zip(&labels).filter(|(&a, &b)| a == p && b == l).count() as f64
        };
        let (tp, fp, fn_) = (count(1, 1), count(1, 0), count(0, 1));
        let f1_oracle = if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        let got = f1(&preds, &labels).unwrap();
        if got != f1_oracle as f32 {
            failures.push(format!("case {case}: f1 {got} vs oracle {f1_oracle}"));
        }

        let xs: Vec<f32> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ys: Vec<f32> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let xd: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        let yd: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
        let got = pearson(&xs, &ys).unwrap() as f64;
        if (got - pearson_oracle(&xd, &yd)).abs() > 1e-6 {
            failures.push(format!("case {case}: pearson off by {}", got - pearson_oracle(&xd, &yd)));
        }

        // Spearman oracle: counting ranks, then f64 Pearson
        let rank = |v: &[f32]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let below = v.iter().filter(|s| *s < x).count() as f64;
                    let equal = v.iter().filter(|s| *s == x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let got = spearman(&xs, &ys).unwrap() as f64;
        let oracle = pearson_oracle(&rank(&xs), &rank(&ys));
        if (got - oracle).abs() > 1e-6 {
            failures.push(format!("case {case}: spearman off by {}", got - oracle));
        }
        if failures.len() > 5 {
            break;
        }
    }
    verdict(6, "metrics match brute-force oracles", &failures);
}

#[test]
fn criterion_07_linear_probe_moves_nothing() {
    let mut failures = Vec::new();
    let mut plan = TrainPlan::new(Strategy::Lp, "topic-pair", 0);
    plan.total_steps = 60;
    plan.eval_every = 0;
    let rec = ehtune::trainer::strategy::run_strategy(&plan, &PRETRAINED, &TOPIC).unwrap();
    if rec.param_distance_final != 0.0 {
        failures.push(format!("param_distance_final = {}", rec.param_distance_final));
    }
    let fc = rec.feature_changes["pretrained_to_final"];
    if fc != 0.0 {
        failures.push(format!("feature_change = {fc}"));
    }
    verdict(7, "LP has zero parameter distance and feature change", &failures);
}

// ---------- trend criteria ----------

#[test]
fn criterion_08_feature_drift_ordering() {
    let mut failures = Vec::new();
    let ft = feature_change_of(&FT_TP, "pretrained_to_final");
    // PET drift is the stage-1 drift of the matching EH-FT run: the PET
    // stage is where that attachment trains with the body frozen.
    for (name, cell) in
        [("bitfit", &*EHB_TP), ("lora", &*EHL8_TP), ("prefix", &*EHP_TP)]
    {
        let pet = feature_change_of(cell, "pretrained_to_stage1_end");
        let ratio = mean(&ft) / mean(&pet);
        if !(ratio > 1.1) {
            failures.push(format!("{name}: mean ratio {ratio:.3} <= 1.1"));
        }
        let wins = ft.iter().zip(&pet).filter(|(f, p)| f > p).count();
        if wins < 3 {
            failures.push(format!("{name}: FT larger in only {wins}/4 seeds"));
        }
    }
    verdict(8, "FT feature drift exceeds every PET drift", &failures);
}

#[test]
fn criterion_09_stage1_to_final_proximity() {
    let mut failures = Vec::new();
    let ehb = mean(&feature_change_of(&EHB_TP, "stage1_end_to_final"));
    let lpft = mean(&feature_change_of(&LPFT_TP, "stage1_end_to_final"));
    if !(ehb < lpft) {
        failures.push(format!("EH-FT-bitfit {ehb:.3} !< LP-FT {lpft:.3}"));
    }
    verdict(9, "EH-FT final stays closer to its stage-1 features than LP-FT", &failures);
}

#[test]
fn criterion_10_parameter_distance_endpoint() {
    let mut failures = Vec::new();
    let ehb = mean(&EHB_TP.iter().map(|r| r.param_distance_final).collect::<Vec<_>>());
    let ft = mean(&FT_TP.iter().map(|r| r.param_distance_final).collect::<Vec<_>>());
    if !(ehb < ft) {
        failures.push(format!("EH-FT-bitfit {ehb:.4} !< FT {ft:.4}"));
    }
    verdict(10, "EH-FT converges to a smaller parameter distance", &failures);
}

#[test]
fn criterion_11_stage2_convergence() {
    let mut failures = Vec::new();
    let steps = |recs: &[RunRecord]| -> f64 {
        let xs: Vec<f32> = recs
            .iter()
            .map(|r| {
                let tau = 0.5 * r.stage2.losses[0];
                steps_to_threshold(&r.stage2.losses, tau, SMOOTH)
                    .unwrap_or(r.stage2.losses.len()) as f32
            })
            .collect();
        mean(&xs)
    };
    let ehb = steps(&EHB_TP);
    let ft = steps(&FT_TP);
    if !(ehb < ft) {
        failures.push(format!("EH-FT-bitfit {ehb:.1} steps !< FT {ft:.1}"));
    }
    verdict(11, "EH-FT stage 2 halves its loss in fewer steps than FT", &failures);
}

#[test]
fn criterion_12_accuracy_non_regression() {
    let mut failures = Vec::new();
    let cells: [(&str, &[RunRecord], &[RunRecord]); 4] = [
        ("topic-pair", &EHB_TP, &FT_TP),
        ("topic-pair-large", &EHB_TPL, &FT_TPL),
        ("parity", &EHB_PAR, &FT_PAR),
        ("similarity", &EHB_SIM, &FT_SIM),
    ];
    for (task, ehb, ft) in cells {
        let (e, f) = (mean_metric(ehb), mean_metric(ft));
        if e < f - 0.005 {
            failures.push(format!("{task}: EH-FT {e:.4} < FT {f:.4} - 0.005"));
        }
    }
    let (e, f) = (mean_metric(&EHB_TP), mean_metric(&FT_TP));
    if !(e > f) {
        failures.push(format!("low-resource topic-pair: EH-FT {e:.4} !> FT {f:.4}"));
    }
    verdict(12, "EH-FT never regresses and wins on the low-resource task", &failures);
}

#[test]
fn criterion_13_epoch_proportion_ablation() {
    let mut failures = Vec::new();
    // fixed total budget: a 90% stage 1 leaves too little full finetuning
    let f1 = mean_metric(&EHB_TP);
    let f9 = mean_metric(&EHB_TP_F9);
    if !(f9 < f1) {
        failures.push(format!("fixed-total: fraction 0.9 {f9:.4} !< fraction 0.1 {f1:.4}"));
    }
    // fixed stage-2 budget (270 steps): fraction should barely matter
    let vals = [mean_metric(&EHB_TP), mean_metric(&EHB_TP_S2F3), mean_metric(&EHB_TP_S2F5)];
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max)
        - vals.iter().cloned().fold(f64::MAX, f64::min);
    if spread >= 0.02 {
        failures.push(format!("fixed-stage-2 spread {spread:.4} >= 0.02 ({vals:?})"));
    }
    verdict(13, "stage-1 proportion ablation", &failures);
}

#[test]
fn criterion_14_reserve_variant() {
    let mut failures = Vec::new();
    // run_suite already errored out if any reserve run failed
    let res = mean(&RES_TP.iter().map(|r| stage2_loss_decrease(r) as f32).collect::<Vec<_>>());
    let ehb = mean(&EHB_TP.iter().map(|r| stage2_loss_decrease(r) as f32).collect::<Vec<_>>());
    if !(res < ehb) {
        failures.push(format!("reserve stage-2 loss decrease {res:.4} !< standard {ehb:.4}"));
    }
    verdict(14, "reserve variant completes and changes less in stage 2", &failures);
}

#[test]
fn criterion_15_lora_rank_sweep() {
    let mut failures = Vec::new();
    let vals = [mean_metric(&EHL2_TP), mean_metric(&EHL4_TP), mean_metric(&EHL8_TP)];
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max)
        - vals.iter().cloned().fold(f64::MAX, f64::min);
    if spread >= 0.03 {
        failures.push(format!("rank spread {spread:.4} >= 0.03 ({vals:?})"));
    }
    verdict(15, "LoRA rank choice is not load-bearing", &failures);
}
