use serde::{Deserialize, Serialize};

use crate::adapter::TokenBatch;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

/// Parameters for [`generate_tasks`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskGenConfig {
    pub n_tasks: usize,
    pub h: usize,
    pub d: usize,
    pub r: usize,
    /// Label noise standard deviation.
    pub noise: f64,
    /// Norm of each task's input mean shift.
    pub shift: f64,
    /// Column norm of each residual factor `C_t`.
    pub residual_scale: f64,
    /// Standard deviation of the isotropic input noise around the task mean.
    pub input_std: f64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            n_tasks: 3,
            h: 16,
            d: 16,
            r: 4,
            noise: 0.1,
            shift: 8.0,
            residual_scale: 1.0,
            input_std: 2.0,
        }
    }
}

/// One synthetic task: inputs `x = μ_t + z`, labels
/// `y = x·W_sharedᵀ + x·(C_t·A*)ᵀ + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    /// Input mean `μ_t` (length `h`), inside the row space of `A*`.
    pub mean_shift: Vec<f64>,
    /// Output factor `C_t` (`d×r`).
    pub residual: Matrix,
    pub noise: f64,
}

/// Tasks sharing one base map and one ground-truth projection `A*`.
#[derive(Debug, Clone)]
pub struct TaskSuite {
    pub config: TaskGenConfig,
    /// `W_shared (d×h)`, used as the frozen base.
    pub base: Matrix,
    /// `A* (r×h)` with orthonormal rows.
    pub shared_projection: Matrix,
    pub tasks: Vec<TaskSpec>,
}

/// `count` orthonormal vectors in `R^dim` by Gram–Schmidt on Gaussian draws.
pub fn orthonormal_rows(count: usize, dim: usize, rng: &mut Rng) -> Matrix {
    assert!(count <= dim, "cannot fit {count} orthonormal vectors in R^{dim}");
    let mut out = Matrix::zeros(count, dim);
    let mut i = 0;
    while i < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        // two passes keep the basis orthogonal to rounding level
        for _ in 0..2 {
            for k in 0..i {
                let dot: f64 = v.iter().zip(out.row(k)).map(|(a, b)| a * b).sum();
                for (vj, bj) in v.iter_mut().zip(out.row(k)) {
                    *vj -= dot * bj;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for (slot, x) in out.row_mut(i).iter_mut().zip(&v) {
            *slot = x / norm;
        }
        i += 1;
    }
    out
}

/// Draws a shared `A*`, per-task residual factors and input mean shifts.
///
/// When `d ≥ n_tasks·r` the residual factors have mutually orthogonal column
/// spaces; otherwise each is an independent random orthonormal frame. Mean
/// shifts are orthogonal directions inside `A*`'s row space when
/// `n_tasks ≤ r`, random unit directions there otherwise.
pub fn generate_tasks(cfg: &TaskGenConfig, rng: &mut Rng) -> Result<TaskSuite> {
    if cfg.n_tasks == 0 {
        return Err(Error::config("n_tasks", "must be at least 1"));
    }
    if cfg.r == 0 || cfg.r > cfg.h.min(cfg.d) {
        return Err(Error::config(
            "r",
            format!("must lie in 1..={} for h={}, d={}", cfg.h.min(cfg.d), cfg.h, cfg.d),
        ));
    }
    for (field, v) in [
        ("noise", cfg.noise),
        ("shift", cfg.shift),
        ("residual_scale", cfg.residual_scale),
        ("input_std", cfg.input_std),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::config(field, format!("must be finite and non-negative, got {v}")));
        }
    }

    let base = rng.gaussian_matrix(cfg.d, cfg.h, 1.0 / (cfg.h as f64).sqrt());
    let a_star = orthonormal_rows(cfg.r, cfg.h, rng);

    let residual_frames: Vec<Matrix> = if cfg.d >= cfg.n_tasks * cfg.r {
        let all = orthonormal_rows(cfg.n_tasks * cfg.r, cfg.d, rng);
        (0..cfg.n_tasks)
            .map(|t| Matrix::from_fn(cfg.d, cfg.r, |i, j| all[(t * cfg.r + j, i)]))
            .collect()
    } else {
        (0..cfg.n_tasks)
            .map(|_| orthonormal_rows(cfg.r, cfg.d, rng).transpose())
            .collect()
    };

    let directions: Matrix = if cfg.n_tasks <= cfg.r {
        orthonormal_rows(cfg.n_tasks, cfg.r, rng)
    } else {
        let mut m = Matrix::zeros(cfg.n_tasks, cfg.r);
        for t in 0..cfg.n_tasks {
            m.row_mut(t).copy_from_slice(orthonormal_rows(1, cfg.r, rng).row(0));
        }
        m
    };

    let tasks = residual_frames
        .into_iter()
        .enumerate()
        .map(|(t, frame)| {
            let u = Matrix::from_vec(1, cfg.r, directions.row(t).to_vec())?;
            let mean = u.matmul(&a_star)?.scale(cfg.shift);
            Ok(TaskSpec {
                task_id: t,
                mean_shift: mean.into_vec(),
                residual: frame.scale(cfg.residual_scale),
                noise: cfg.noise,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TaskSuite {
        config: *cfg,
        base,
        shared_projection: a_star,
        tasks,
    })
}

impl TaskSuite {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Task-specific part of the label map, `C_t·A* (d×h)`.
    pub fn residual_map(&self, task: usize) -> Matrix {
        self.tasks[task]
            .residual
            .matmul(&self.shared_projection)
            .expect("shapes fixed at generation")
    }

    /// One sequence of `len` tokens from `task` and its labels. Tokens are split
    /// into visual, audio and text segments of roughly equal length.
    pub fn sample_sequence(&self, task: usize, len: usize, rng: &mut Rng) -> (TokenBatch, Matrix) {
        let spec = &self.tasks[task];
        let h = self.config.h;
        let x = Matrix::from_fn(len, h, |_, j| spec.mean_shift[j] + self.config.input_std * rng.gaussian());
        let clean = x
            .matmul_t(&self.base)
            .and_then(|m| m.add(&x.matmul_t(&self.residual_map(task))?))
            .expect("shapes fixed at generation");
        let y = clean
            .add(&rng.gaussian_matrix(len, self.config.d, spec.noise))
            .expect("same shape");

        let lv = len.div_ceil(3);
        let la = (len - lv).div_ceil(2);
        let visual = Matrix::from_fn(lv, h, |i, j| x[(i, j)]);
        let audio = Matrix::from_fn(la, h, |i, j| x[(lv + i, j)]);
        let text = Matrix::from_fn(len - lv - la, h, |i, j| x[(lv + la + i, j)]);
        let batch = TokenBatch::concat(&visual, &audio, &text, task).expect("widths agree");
        (batch, y)
    }

    /// Expected per-element MSE of the frozen base on `task`:
    /// `(‖μ·Kᵀ‖² + σ_x²·‖K‖_F²)/d + σ²` with `K = C_t·A*`.
    pub fn frozen_expected_loss(&self, task: usize) -> f64 {
        let k = self.residual_map(task);
        let mu = Matrix::from_vec(1, self.config.h, self.tasks[task].mean_shift.clone()).expect("length h");
        let mean_part = mu.matmul_t(&k).expect("shapes").as_slice().iter().map(|v| v * v).sum::<f64>();
        let fro = k.frobenius();
        let sx2 = self.config.input_std * self.config.input_std;
        (mean_part + sx2 * fro * fro) / self.config.d as f64 + self.tasks[task].noise.powi(2)
    }
}
