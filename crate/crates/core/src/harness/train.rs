use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::synergy::{synergy_from_losses, SynergySummary};
use super::tasks::TaskSuite;
use crate::adapter::{ForwardOutput, ILoRAConfig, ILoRALayer, RoutingTrace, TokenBatch};
use crate::analysis::{activation_stats, ActivationReport};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

const INIT_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 1000;

/// Which adapter a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Base projection only; nothing is trained.
    Frozen,
    /// One head at the configured rank.
    Lora,
    /// One head with rank inflated to match the routed layer's parameter count.
    LoraMatchedBudget,
    /// Shared `A`, one head per task, gate fixed by task id.
    MultiLora,
    /// Shared `A`, `n` heads, learned token-level soft routing.
    Ilora,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Frozen,
        ModelKind::Lora,
        ModelKind::LoraMatchedBudget,
        ModelKind::MultiLora,
        ModelKind::Ilora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Frozen => "frozen",
            ModelKind::Lora => "lora",
            ModelKind::LoraMatchedBudget => "lora_matched_budget",
            ModelKind::MultiLora => "multi_lora",
            ModelKind::Ilora => "ilora",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per optimizer step; each draws its task uniformly.
    pub batch: usize,
    /// Tokens per sequence.
    pub seq_len: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    /// Evaluation interval for the loss curve.
    pub eval_every: usize,
    /// Held-out sequences per task for evaluation.
    pub eval_sequences: usize,
    /// Also train one single-task run per task with the same budget.
    pub single_baselines: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 32,
            seq_len: 8,
            adam: AdamConfig::default(),
            eval_every: 100,
            eval_sequences: 64,
            single_baselines: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.seq_len == 0 {
            return Err(Error::config("seq_len", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.eval_sequences == 0 {
            return Err(Error::config("eval_sequences", "must be at least 1"));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.adam.lr)));
        }
        for (field, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.adam.eps.is_nan() || self.adam.eps <= 0.0 {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// Rank for the one-head arm whose trainable count matches a routed layer:
/// `round((r·h + n·d·r + n·r − r) / (h + d))`, clamped to `1..=min(h, d)`.
pub fn matched_rank(cfg: &ILoRAConfig) -> usize {
    let budget = cfg.param_count() - cfg.r;
    let r = (budget as f64 / (cfg.h + cfg.d) as f64).round() as usize;
    r.clamp(1, cfg.h.min(cfg.d))
}

/// Layer configuration an arm actually trains. The one-head arms keep `α/r`.
pub fn arm_config(kind: ModelKind, adapter: &ILoRAConfig, n_tasks: usize) -> ILoRAConfig {
    match kind {
        ModelKind::Frozen | ModelKind::Ilora => *adapter,
        ModelKind::Lora => ILoRAConfig { n: 1, ..*adapter },
        ModelKind::LoraMatchedBudget => {
            let r = matched_rank(adapter);
            ILoRAConfig {
                n: 1,
                r,
                alpha: adapter.scaling() * r as f64,
                ..*adapter
            }
        }
        ModelKind::MultiLora => ILoRAConfig {
            n: n_tasks,
            ..*adapter
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub task_id: usize,
    pub loss: f64,
}

/// Everything one training run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub kind: ModelKind,
    pub tasks: Vec<usize>,
    pub layer: ILoRALayer,
    /// Held-out MSE per task after the last step.
    pub final_loss: BTreeMap<usize, f64>,
    pub curve: Vec<LossPoint>,
    /// Routing traces of the held-out sequences, in task order.
    pub traces: Vec<RoutingTrace>,
}

impl RunResult {
    pub fn total_loss(&self) -> f64 {
        self.final_loss.values().sum()
    }

    pub fn mean_loss(&self) -> f64 {
        self.total_loss() / self.final_loss.len() as f64
    }
}

/// Held-out sequences of one task, fixed by `(seed, task)`.
pub fn eval_set(suite: &TaskSuite, task: usize, cfg: &TrainConfig, seed: u64) -> Vec<(TokenBatch, Matrix)> {
    let mut rng = Rng::with_stream(seed, EVAL_STREAM + task as u64);
    (0..cfg.eval_sequences)
        .map(|_| suite.sample_sequence(task, cfg.seq_len, &mut rng))
        .collect()
}

fn run_forward(
    layer: &ILoRALayer,
    kind: ModelKind,
    tasks: &[usize],
    batch: &TokenBatch,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<ForwardOutput> {
    match kind {
        ModelKind::MultiLora => {
            let head = tasks
                .iter()
                .position(|&t| t == batch.task_id())
                .ok_or_else(|| Error::TaskMismatch(format!("task {} not in run", batch.task_id())))?;
            layer.forward_pinned(batch, head, train_mode, rng)
        }
        _ => layer.forward(batch, train_mode, rng),
    }
}

fn squared_error(out: &Matrix, target: &Matrix) -> f64 {
    out.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Held-out MSE of `layer` on one task, plus the routing traces.
pub fn evaluate(
    layer: &ILoRALayer,
    kind: ModelKind,
    tasks: &[usize],
    data: &[(TokenBatch, Matrix)],
) -> Result<(f64, Vec<RoutingTrace>)> {
    let mut rng = Rng::new(0);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut traces = Vec::with_capacity(data.len());
    for (batch, target) in data {
        let out = run_forward(layer, kind, tasks, batch, false, &mut rng)?;
        total += squared_error(&out.output, target);
        count += target.as_slice().len();
        traces.push(out.trace);
    }
    Ok((total / count as f64, traces))
}

/// Trains one arm on `tasks` (a subset of the suite) from the frozen start.
pub fn train_run(
    kind: ModelKind,
    suite: &TaskSuite,
    tasks: &[usize],
    adapter: &ILoRAConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunResult> {
    cfg.validate()?;
    adapter.validate()?;
    if adapter.h != suite.config.h || adapter.d != suite.config.d {
        return Err(Error::config(
            "adapter",
            format!(
                "layer is {}→{} but tasks are {}→{}",
                adapter.h, adapter.d, suite.config.h, suite.config.d
            ),
        ));
    }
    if tasks.is_empty() || tasks.iter().any(|&t| t >= suite.n_tasks()) {
        return Err(Error::TaskMismatch(format!(
            "run tasks {tasks:?} must be a nonempty subset of 0..{}",
            suite.n_tasks()
        )));
    }

    let layer_cfg = arm_config(kind, adapter, tasks.len());
    let mut init_rng = Rng::with_stream(seed, INIT_STREAM);
    let mut layer = ILoRALayer::init_with_base(layer_cfg, suite.base.clone(), &mut init_rng)?;
    let mut data_rng = Rng::with_stream(seed, DATA_STREAM);
    let mut drop_rng = Rng::with_stream(seed, DROPOUT_STREAM);
    let mut adam = Adam::new(cfg.adam, &layer);
    let evals: Vec<_> = tasks.iter().map(|&t| eval_set(suite, t, cfg, seed)).collect();

    let mut curve = Vec::new();
    let log = |layer: &ILoRALayer, step: usize, curve: &mut Vec<LossPoint>| -> Result<()> {
        for (&task, data) in tasks.iter().zip(&evals) {
            let (loss, _) = evaluate(layer, kind, tasks, data)?;
            curve.push(LossPoint {
                step,
                task_id: task,
                loss,
            });
        }
        Ok(())
    };
    log(&layer, 0, &mut curve)?;

    let per_step = (cfg.batch * cfg.seq_len * layer_cfg.d) as f64;
    for step in 1..=cfg.steps {
        let mut grads = None;
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let task = tasks[data_rng.below(tasks.len())];
            let (batch, target) = suite.sample_sequence(task, cfg.seq_len, &mut data_rng);
            let out = run_forward(&layer, kind, tasks, &batch, true, &mut drop_rng)?;
            let diff = out.output.sub(&target)?;
            loss += diff.as_slice().iter().map(|v| v * v).sum::<f64>();
            if kind == ModelKind::Frozen {
                continue;
            }
            let g = layer.backward(&out.cache, &diff.scale(2.0 / per_step))?;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.accumulate(&g)?,
            }
        }
        loss /= per_step;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if let Some(g) = grads {
            adam.step(&mut layer, &g);
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            log(&layer, step, &mut curve)?;
        }
    }

    let mut final_loss = BTreeMap::new();
    let mut traces = Vec::new();
    for (&task, data) in tasks.iter().zip(&evals) {
        let (loss, tr) = evaluate(&layer, kind, tasks, data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: cfg.steps,
                loss,
            });
        }
        final_loss.insert(task, loss);
        traces.extend(tr);
    }
    Ok(RunResult {
        kind,
        tasks: tasks.to_vec(),
        layer,
        final_loss,
        curve,
        traces,
    })
}

/// Multi-task run plus optional single-task baselines, scored for synergy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub seed: u64,
    pub tasks: Vec<usize>,
    pub param_count: usize,
    /// Held-out MSE per task of the multi-task model.
    pub final_loss: BTreeMap<usize, f64>,
    /// Held-out MSE per task of the single-task baselines (empty if not run).
    pub single_loss: BTreeMap<usize, f64>,
    pub total_loss: f64,
    pub synergy: Option<SynergySummary>,
    pub activation: ActivationReport,
    #[serde(skip)]
    pub run: Option<RunResult>,
}

pub fn train(
    kind: ModelKind,
    suite: &TaskSuite,
    adapter: &ILoRAConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let all: Vec<usize> = (0..suite.n_tasks()).collect();
    let run = train_run(kind, suite, &all, adapter, cfg, seed)?;
    let mut single_loss = BTreeMap::new();
    if cfg.single_baselines {
        for &t in &all {
            let single = train_run(kind, suite, &[t], adapter, cfg, seed)?;
            single_loss.insert(t, single.final_loss[&t]);
        }
    }
    let synergy = if single_loss.is_empty() {
        None
    } else {
        Some(synergy_from_losses(&run.final_loss, &single_loss, super::DEFAULT_TIE_TOLERANCE)?)
    };
    Ok(TrainReport {
        kind,
        seed,
        tasks: all,
        param_count: run.layer.param_count(),
        total_loss: run.total_loss(),
        final_loss: run.final_loss.clone(),
        single_loss,
        synergy,
        activation: activation_stats(&run.traces)?,
        run: Some(run),
    })
}
