//! Finite-difference verification of [`ILoRALayer::backward`].

use serde::{Deserialize, Serialize};

use super::{ForwardCache, Gradients, ILoRAConfig, ILoRALayer, ParamId, TokenBatch};
use crate::error::Result;
use crate::numkit::{finite_diff_grad, relative_error, Matrix, Rng};

/// Signature of a backward pass; swappable so negative controls can be run.
pub type BackwardFn = fn(&ILoRALayer, &ForwardCache, &Matrix) -> Result<Gradients>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub seq_len: usize,
    pub h: usize,
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub alpha: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            instances: 20,
            seq_len: 4,
            h: 8,
            d: 6,
            r: 3,
            n: 3,
            alpha: 6.0,
            step: 1e-6,
            tolerance: 1e-6,
        }
    }
}

/// Worst disagreement for one tensor across all instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Instance and `(row, col)` of the largest absolute disagreement in the
    /// worst instance.
    pub worst_instance: usize,
    pub worst_index: (usize, usize),
    /// Gradient is identically zero by construction and was not compared.
    pub skipped_zero: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub instances: usize,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub notes: Vec<String>,
}

/// A random layer with nonzero heads and router, so every gradient path is live.
pub fn random_instance(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(ILoRALayer, TokenBatch, Matrix)> {
    let config = ILoRAConfig::new(cfg.h, cfg.d, cfg.r, cfg.n, cfg.alpha);
    let mut layer = ILoRALayer::init(config, rng)?;
    for i in 0..cfg.n {
        layer.set_param(ParamId::B(i), rng.gaussian_matrix(cfg.d, cfg.r, 0.5))?;
    }
    layer.set_param(ParamId::Wr, rng.gaussian_matrix(cfg.n, cfg.r, 1.0))?;
    let batch = TokenBatch::text(rng.gaussian_matrix(cfg.seq_len, cfg.h, 1.0), 0);
    let upstream = rng.gaussian_matrix(cfg.seq_len, cfg.d, 1.0);
    Ok((layer, batch, upstream))
}

fn weighted_loss(layer: &ILoRALayer, batch: &TokenBatch, upstream: &Matrix) -> f64 {
    let mut rng = Rng::new(0);
    match layer.forward(batch, false, &mut rng) {
        Ok(out) => out
            .output
            .as_slice()
            .iter()
            .zip(upstream.as_slice())
            .map(|(a, b)| a * b)
            .sum(),
        Err(_) => f64::NAN,
    }
}

fn worst_entry(a: &Matrix, b: &Matrix) -> (usize, usize) {
    let mut best = (0, 0);
    let mut worst = -1.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let e = (a[(i, j)] - b[(i, j)]).abs();
            if e > worst {
                worst = e;
                best = (i, j);
            }
        }
    }
    best
}

/// Runs the suite against the layer's own backward pass.
pub fn run_grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    run_grad_check_with(cfg, ILoRALayer::backward)
}

/// Runs the suite against an arbitrary backward implementation. The loss is
/// `Σ G ⊙ H'` with a random upstream `G`, evaluated in eval mode.
pub fn run_grad_check_with(cfg: &GradCheckConfig, backward: BackwardFn) -> Result<GradCheckReport> {
    ILoRAConfig::new(cfg.h, cfg.d, cfg.r, cfg.n, cfg.alpha).validate()?;
    let mut rng = Rng::new(cfg.seed);

    let mut names: Vec<String> = vec!["A".into()];
    names.extend((0..cfg.n).map(|i| format!("B.{i}")));
    names.push("Wr".into());
    names.push("H".into());
    let mut checks: Vec<TensorCheck> = names
        .into_iter()
        .map(|name| TensorCheck {
            name,
            max_rel_err: 0.0,
            worst_instance: 0,
            worst_index: (0, 0),
            skipped_zero: false,
            passed: true,
        })
        .collect();
    let mut notes = Vec::new();
    let router_constant = cfg.n == 1;
    if router_constant {
        notes.push("n = 1: the gate is a softmax of one logit, so dWr is identically zero; check skipped".into());
    }

    for inst in 0..cfg.instances {
        let (layer, batch, upstream) = random_instance(cfg, &mut rng)?;
        let fwd = layer.forward(&batch, false, &mut rng)?;
        let grads = backward(&layer, &fwd.cache, &upstream)?;

        let mut targets: Vec<(usize, Matrix, Matrix)> = Vec::new();
        for (slot, id) in layer.param_ids().into_iter().enumerate() {
            if id == ParamId::Wr && router_constant {
                checks[slot].skipped_zero = true;
                if grads.d_wr.max_abs() != 0.0 {
                    checks[slot].passed = false;
                    checks[slot].max_rel_err = f64::INFINITY;
                }
                continue;
            }
            let numeric = finite_diff_grad(
                |value| {
                    let mut probe = layer.clone();
                    match probe.set_param(id, value.clone()) {
                        Ok(()) => weighted_loss(&probe, &batch, &upstream),
                        Err(_) => f64::NAN,
                    }
                },
                layer.param(id),
                cfg.step,
            )?;
            targets.push((slot, grads.get(id).clone(), numeric));
        }
        let numeric_h = finite_diff_grad(
            |value| weighted_loss(&layer, &TokenBatch::text(value.clone(), 0), &upstream),
            batch.hidden(),
            cfg.step,
        )?;
        targets.push((checks.len() - 1, grads.d_h.clone(), numeric_h));

        for (slot, analytic, numeric) in targets {
            let err = relative_error(&analytic, &numeric);
            let check = &mut checks[slot];
            if err > check.max_rel_err || err.is_nan() {
                check.max_rel_err = err;
                check.worst_instance = inst;
                check.worst_index = worst_entry(&analytic, &numeric);
            }
        }
    }

    for check in &mut checks {
        if !check.skipped_zero {
            check.passed = check.max_rel_err <= cfg.tolerance;
        }
    }
    Ok(GradCheckReport {
        passed: checks.iter().all(|c| c.passed),
        instances: cfg.instances,
        tolerance: cfg.tolerance,
        tensors: checks,
        notes,
    })
}
