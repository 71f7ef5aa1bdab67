//! Routed low-rank adapter over a frozen linear projection.
//!
//! A layer holds a frozen base weight `W0 (d×h)`, one shared down-projection
//! `A (r×h)`, `n` up-projection heads `B_i (d×r)`, and a router `Wr (n×r)`.
//! For a token matrix `H (L×h)`:
//!
//! ```text
//! P  = H·Aᵀ                       (L×r)
//! S  = row_softmax(P·Wrᵀ)         (L×n)
//! ΔH = (α/r) · Σ_i diag(S[:,i]) · P·B_iᵀ
//! H' = H·W0ᵀ + ΔH                 (L×d)
//! ```
//!
//! With `n = 1` the gate is identically one and the layer is plain LoRA.
//! Because the effective update depends on the input through `S`, the adapter
//! cannot be folded into `W0`.

mod checkpoint;
pub mod gradcheck;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{row_softmax, Matrix, Rng};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Shape and hyperparameters of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ILoRAConfig {
    /// Input width.
    pub h: usize,
    /// Output width.
    pub d: usize,
    /// Rank of the shared down-projection.
    pub r: usize,
    /// Number of `B` heads.
    pub n: usize,
    pub alpha: f64,
    /// Inverted dropout on the adapter input; only active in train mode.
    #[serde(default)]
    pub dropout_p: f64,
}

impl ILoRAConfig {
    pub fn new(h: usize, d: usize, r: usize, n: usize, alpha: f64) -> Self {
        ILoRAConfig {
            h,
            d,
            r,
            n,
            alpha,
            dropout_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::config("h", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if self.r == 0 || self.r > self.h.min(self.d) {
            return Err(Error::config(
                "r",
                format!("must lie in 1..={} (min of h, d), got {}", self.h.min(self.d), self.r),
            ));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(
                "dropout_p",
                format!("must lie in [0, 1), got {}", self.dropout_p),
            ));
        }
        Ok(())
    }

    /// The `α/r` factor applied to the adapter update.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.r as f64
    }

    /// Trainable entries: `r·h + n·d·r + n·r`.
    pub fn param_count(&self) -> usize {
        self.r * self.h + self.n * self.d * self.r + self.n * self.r
    }
}

/// Modality of a token in the concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentTag {
    Visual,
    Audio,
    Text,
}

impl SegmentTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentTag::Visual => "visual",
            SegmentTag::Audio => "audio",
            SegmentTag::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "visual" => Some(SegmentTag::Visual),
            "audio" => Some(SegmentTag::Audio),
            "text" => Some(SegmentTag::Text),
            _ => None,
        }
    }
}

/// One token sequence `H (L×h)` with per-token modality tags.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    hidden: Matrix,
    tags: Vec<SegmentTag>,
    task_id: usize,
}

impl TokenBatch {
    pub fn new(hidden: Matrix, tags: Vec<SegmentTag>, task_id: usize) -> Result<Self> {
        if tags.len() != hidden.rows() {
            return Err(Error::TagCount {
                rows: hidden.rows(),
                tags: tags.len(),
            });
        }
        Ok(TokenBatch {
            hidden,
            tags,
            task_id,
        })
    }

    /// Concatenates visual, audio and text tokens along the sequence axis.
    pub fn concat(visual: &Matrix, audio: &Matrix, text: &Matrix, task_id: usize) -> Result<Self> {
        let hidden = Matrix::vstack(&[visual, audio, text])?;
        let tags = std::iter::repeat_n(SegmentTag::Visual, visual.rows())
            .chain(std::iter::repeat_n(SegmentTag::Audio, audio.rows()))
            .chain(std::iter::repeat_n(SegmentTag::Text, text.rows()))
            .collect();
        TokenBatch::new(hidden, tags, task_id)
    }

    /// All tokens tagged as text.
    pub fn text(hidden: Matrix, task_id: usize) -> Self {
        let tags = vec![SegmentTag::Text; hidden.rows()];
        TokenBatch {
            hidden,
            tags,
            task_id,
        }
    }

    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }

    pub fn tags(&self) -> &[SegmentTag] {
        &self.tags
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn len(&self) -> usize {
        self.hidden.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.rows() == 0
    }
}

/// Per-token routing weights of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    pub weights: Matrix,
    pub tags: Vec<SegmentTag>,
    pub task_id: usize,
}

impl RoutingTrace {
    pub fn heads(&self) -> usize {
        self.weights.cols()
    }
}

/// Names a trainable tensor of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    A,
    B(usize),
    Wr,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamId::A => write!(f, "A"),
            ParamId::B(i) => write!(f, "B.{i}"),
            ParamId::Wr => write!(f, "Wr"),
        }
    }
}

/// Gradients of a scalar loss with respect to every trainable tensor and the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_a: Matrix,
    pub d_b: Vec<Matrix>,
    pub d_wr: Matrix,
    pub d_h: Matrix,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        match id {
            ParamId::A => &self.d_a,
            ParamId::B(i) => &self.d_b[i],
            ParamId::Wr => &self.d_wr,
        }
    }

    /// Accumulates `other` into `self` (input gradients are not summed).
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        self.d_a.add_scaled(&other.d_a, 1.0)?;
        for (mine, theirs) in self.d_b.iter_mut().zip(&other.d_b) {
            mine.add_scaled(theirs, 1.0)?;
        }
        self.d_wr.add_scaled(&other.d_wr, 1.0)
    }
}

/// Intermediates retained by [`ILoRALayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    revision: u64,
    /// Adapter input after dropout.
    x: Matrix,
    /// Elementwise dropout multipliers, when dropout was applied.
    keep: Option<Matrix>,
    p: Matrix,
    s: Matrix,
    q: Vec<Matrix>,
    /// Routing was pinned to one head instead of learned.
    pinned: bool,
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub output: Matrix,
    pub trace: RoutingTrace,
    pub cache: ForwardCache,
}

/// Frozen base projection plus shared-`A` / routed-`B` low-rank update.
#[derive(Debug, Clone)]
pub struct ILoRALayer {
    config: ILoRAConfig,
    w0: Matrix,
    a: Matrix,
    b: Vec<Matrix>,
    wr: Matrix,
    revision: u64,
}

impl ILoRALayer {
    /// Random layer: `W0 ~ N(0, 1/h)`, `A` Kaiming-uniform with bound `sqrt(6/h)`,
    /// every `B_i = 0`, `Wr ~ N(0, 0.02²)`.
    pub fn init(config: ILoRAConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let w0 = rng.gaussian_matrix(config.d, config.h, 1.0 / (config.h as f64).sqrt());
        Self::init_with_base(config, w0, rng)
    }

    /// Like [`ILoRALayer::init`] but with a caller-supplied frozen base.
    pub fn init_with_base(config: ILoRAConfig, w0: Matrix, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let bound = (6.0 / config.h as f64).sqrt();
        let a = rng.uniform_matrix(config.r, config.h, bound);
        let wr = rng.gaussian_matrix(config.n, config.r, 0.02);
        let b = vec![Matrix::zeros(config.d, config.r); config.n];
        Self::from_parts(config, w0, a, b, wr)
    }

    /// Assembles a layer from explicit tensors, checking every shape.
    pub fn from_parts(
        config: ILoRAConfig,
        w0: Matrix,
        a: Matrix,
        b: Vec<Matrix>,
        wr: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        let check = |op: &'static str, m: &Matrix, want: (usize, usize)| {
            if m.shape() != want {
                Err(Error::DimensionMismatch {
                    op,
                    left: m.shape(),
                    right: want,
                })
            } else {
                Ok(())
            }
        };
        check("W0", &w0, (config.d, config.h))?;
        check("A", &a, (config.r, config.h))?;
        check("Wr", &wr, (config.n, config.r))?;
        if b.len() != config.n {
            return Err(Error::config("n", format!("{} B heads supplied", b.len())));
        }
        for head in &b {
            check("B", head, (config.d, config.r))?;
        }
        Ok(ILoRALayer {
            config,
            w0,
            a,
            b,
            wr,
            revision: next_revision(),
        })
    }

    pub fn config(&self) -> &ILoRAConfig {
        &self.config
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn heads(&self) -> &[Matrix] {
        &self.b
    }

    pub fn wr(&self) -> &Matrix {
        &self.wr
    }

    pub fn param(&self, id: ParamId) -> &Matrix {
        match id {
            ParamId::A => &self.a,
            ParamId::B(i) => &self.b[i],
            ParamId::Wr => &self.wr,
        }
    }

    /// Every trainable tensor id, in checkpoint order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::A];
        ids.extend((0..self.config.n).map(ParamId::B));
        ids.push(ParamId::Wr);
        ids
    }

    /// Replaces one trainable tensor; the shape must match.
    pub fn set_param(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        if let ParamId::B(i) = id {
            if i >= self.config.n {
                return Err(Error::HeadIndex {
                    index: i,
                    heads: self.config.n,
                });
            }
        }
        let slot = match id {
            ParamId::A => &mut self.a,
            ParamId::B(i) => &mut self.b[i],
            ParamId::Wr => &mut self.wr,
        };
        if slot.shape() != value.shape() {
            return Err(Error::DimensionMismatch {
                op: "set_param",
                left: value.shape(),
                right: slot.shape(),
            });
        }
        *slot = value;
        self.revision = next_revision();
        Ok(())
    }

    /// Mutates trainable tensors in place. `W0` is not reachable from here.
    pub fn update_params(&mut self, mut f: impl FnMut(ParamId, &mut [f64])) {
        f(ParamId::A, self.a.as_mut_slice());
        for (i, head) in self.b.iter_mut().enumerate() {
            f(ParamId::B(i), head.as_mut_slice());
        }
        f(ParamId::Wr, self.wr.as_mut_slice());
        self.revision = next_revision();
    }

    /// Trainable entries (`W0` excluded).
    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// The frozen path `H·W0ᵀ` alone.
    pub fn frozen_forward(&self, hidden: &Matrix) -> Result<Matrix> {
        self.check_width(hidden)?;
        hidden.matmul_t(&self.w0)
    }

    fn check_width(&self, hidden: &Matrix) -> Result<()> {
        if hidden.cols() != self.config.h {
            return Err(Error::WidthMismatch {
                expected: self.config.h,
                actual: hidden.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass with learned soft routing. `rng` is only drawn from when
    /// `train_mode` is set and `dropout_p > 0`.
    pub fn forward(&self, batch: &TokenBatch, train_mode: bool, rng: &mut Rng) -> Result<ForwardOutput> {
        self.forward_impl(batch, train_mode, rng, None)
    }

    /// Forward pass with every token routed to `head` (gate one-hot). Used by the
    /// hard task-routed baseline; the router receives no gradient.
    pub(crate) fn forward_pinned(
        &self,
        batch: &TokenBatch,
        head: usize,
        train_mode: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        if head >= self.config.n {
            return Err(Error::HeadIndex {
                index: head,
                heads: self.config.n,
            });
        }
        self.forward_impl(batch, train_mode, rng, Some(head))
    }

    fn forward_impl(
        &self,
        batch: &TokenBatch,
        train_mode: bool,
        rng: &mut Rng,
        pinned: Option<usize>,
    ) -> Result<ForwardOutput> {
        let hidden = batch.hidden();
        self.check_width(hidden)?;
        let len = hidden.rows();
        let p_drop = self.config.dropout_p;

        let (x, keep) = if train_mode && p_drop > 0.0 {
            let keep_scale = 1.0 / (1.0 - p_drop);
            let keep = Matrix::from_fn(len, self.config.h, |_, _| {
                if rng.bernoulli(p_drop) {
                    0.0
                } else {
                    keep_scale
                }
            });
            (hidden.hadamard(&keep)?, Some(keep))
        } else {
            (hidden.clone(), None)
        };

        let p = x.matmul_t(&self.a)?;
        let s = match pinned {
            None => row_softmax(&p.matmul_t(&self.wr)?),
            Some(k) => Matrix::from_fn(len, self.config.n, |_, j| if j == k { 1.0 } else { 0.0 }),
        };
        let q = self
            .b
            .iter()
            .map(|head| p.matmul_t(head))
            .collect::<Result<Vec<_>>>()?;

        let mut delta = Matrix::zeros(len, self.config.d);
        for (i, qi) in q.iter().enumerate() {
            delta.add_scaled(&qi.scale_rows(&s.column(i)), 1.0)?;
        }
        let output = hidden
            .matmul_t(&self.w0)?
            .add(&delta.scale(self.config.scaling()))?;

        let trace = RoutingTrace {
            weights: s.clone(),
            tags: batch.tags().to_vec(),
            task_id: batch.task_id(),
        };
        let cache = ForwardCache {
            revision: self.revision,
            x,
            keep,
            p,
            s,
            q,
            pinned: pinned.is_some(),
        };
        Ok(ForwardOutput {
            output,
            trace,
            cache,
        })
    }

    /// Exact gradients of a scalar loss whose gradient with respect to the
    /// layer output is `d_out`. Differentiates both paths through `A`: the value
    /// path `P·B_iᵀ` and the routing path `S(P)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<Gradients> {
        if cache.revision != self.revision {
            return Err(Error::StaleCache);
        }
        let len = cache.p.rows();
        if d_out.shape() != (len, self.config.d) {
            return Err(Error::DimensionMismatch {
                op: "backward",
                left: d_out.shape(),
                right: (len, self.config.d),
            });
        }
        let scale = self.config.scaling();
        let n = self.config.n;

        let mut dp = Matrix::zeros(len, self.config.r);
        let mut ds = Matrix::zeros(len, n);
        let mut d_b = Vec::with_capacity(n);
        for (i, (head, qi)) in self.b.iter().zip(&cache.q).enumerate() {
            let gate = cache.s.column(i);
            let dq = d_out.scale_rows(&gate).scale(scale);
            d_b.push(dq.t_matmul(&cache.p)?);
            dp.add_scaled(&dq.matmul(head)?, 1.0)?;
            for t in 0..len {
                let dot: f64 = d_out.row(t).iter().zip(qi.row(t)).map(|(g, v)| g * v).sum();
                ds[(t, i)] = scale * dot;
            }
        }

        let d_wr = if cache.pinned {
            Matrix::zeros(n, self.config.r)
        } else {
            let mut dz = Matrix::zeros(len, n);
            for t in 0..len {
                let srow = cache.s.row(t);
                let inner: f64 = srow.iter().zip(ds.row(t)).map(|(s, g)| s * g).sum();
                for i in 0..n {
                    dz[(t, i)] = srow[i] * (ds[(t, i)] - inner);
                }
            }
            dp.add_scaled(&dz.matmul(&self.wr)?, 1.0)?;
            dz.t_matmul(&cache.p)?
        };

        let d_a = dp.t_matmul(&cache.x)?;
        let mut dx = dp.matmul(&self.a)?;
        if let Some(keep) = &cache.keep {
            dx = dx.hadamard(keep)?;
        }
        let d_h = d_out.matmul(&self.w0)?.add(&dx)?;
        Ok(Gradients { d_a, d_b, d_wr, d_h })
    }

    /// Copy with head `index` zeroed. The router is left untouched, so gate mass
    /// still flows to the zeroed head.
    pub fn drop_head(&self, index: usize) -> Result<ILoRALayer> {
        if index >= self.config.n {
            return Err(Error::HeadIndex {
                index,
                heads: self.config.n,
            });
        }
        let mut out = self.clone();
        out.b[index] = Matrix::zeros(self.config.d, self.config.r);
        out.revision = next_revision();
        Ok(out)
    }
}

/// Single-head layer; the router is degenerate and the gate is constant one.
pub fn plain_lora(config: ILoRAConfig, rng: &mut Rng) -> Result<ILoRALayer> {
    ILoRALayer::init(ILoRAConfig { n: 1, ..config }, rng)
}
