//! Diagnostics over trained layers and routing traces: cosine similarity
//! between flattened heads, per-task gate statistics, and CSV export of
//! per-token routing weights for external plotting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{ILoRALayer, RoutingTrace, SegmentTag};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Pairwise head similarities for one layer. `None` marks pairs involving a
/// zero-norm head, where the cosine is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSimilarity {
    pub pairwise: Vec<Vec<Option<f64>>>,
    pub mean_offdiag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Entrywise mean of the per-layer matrices over layers where defined.
    pub pairwise: Vec<Vec<Option<f64>>>,
    pub mean_offdiag: Option<f64>,
    pub per_layer: Vec<LayerSimilarity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub heads: usize,
    pub tokens: usize,
    pub per_head_mean: Vec<f64>,
    pub per_task: BTreeMap<usize, Vec<f64>>,
    /// Shannon entropy (nats) of each per-task mean gate vector.
    pub entropy_per_task: BTreeMap<usize, f64>,
    pub tokens_per_task: BTreeMap<usize, usize>,
}

impl ActivationReport {
    /// Largest mean gate weight for `task`.
    pub fn dominant_activation(&self, task: usize) -> Option<f64> {
        self.per_task
            .get(&task)
            .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}

fn mean_offdiag(m: &[Vec<Option<f64>>]) -> Option<f64> {
    let vals: Vec<f64> = m
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().skip(i + 1).filter_map(|v| *v))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn layer_similarity(heads: &[Matrix]) -> LayerSimilarity {
    let n = heads.len();
    let pairwise: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cosine(heads[i].as_slice(), heads[j].as_slice()))
                .collect()
        })
        .collect();
    let mean = mean_offdiag(&pairwise);
    LayerSimilarity {
        pairwise,
        mean_offdiag: mean,
    }
}

/// Cosine similarity between flattened `B` heads, per layer and averaged.
pub fn head_similarity(layers: &[ILoRALayer]) -> Result<SimilarityReport> {
    let first = layers
        .first()
        .ok_or_else(|| Error::config("layers", "at least one layer is required"))?;
    let n = first.config().n;
    let mut per_layer = Vec::with_capacity(layers.len());
    for layer in layers {
        if layer.config().n != n {
            return Err(Error::HeadCountMismatch(n, layer.config().n));
        }
        per_layer.push(layer_similarity(layer.heads()));
    }
    let pairwise: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let vals: Vec<f64> = per_layer.iter().filter_map(|l| l.pairwise[i][j]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect();
    Ok(SimilarityReport {
        mean_offdiag: mean_offdiag(&pairwise),
        pairwise,
        per_layer,
    })
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Mean gate weight per head, overall and per task.
pub fn activation_stats(traces: &[RoutingTrace]) -> Result<ActivationReport> {
    let first = traces.first().ok_or(Error::EmptyTraces)?;
    let n = first.heads();
    let mut total = vec![0.0; n];
    let mut tokens = 0usize;
    let mut task_sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for trace in traces {
        if trace.heads() != n {
            return Err(Error::HeadCountMismatch(n, trace.heads()));
        }
        let entry = task_sums.entry(trace.task_id).or_insert_with(|| (vec![0.0; n], 0));
        for t in 0..trace.weights.rows() {
            for (i, &s) in trace.weights.row(t).iter().enumerate() {
                total[i] += s;
                entry.0[i] += s;
            }
        }
        tokens += trace.weights.rows();
        entry.1 += trace.weights.rows();
    }
    if tokens == 0 {
        return Err(Error::EmptyTraces);
    }
    let per_head_mean = total.iter().map(|s| s / tokens as f64).collect();
    let mut per_task = BTreeMap::new();
    let mut entropy_per_task = BTreeMap::new();
    let mut tokens_per_task = BTreeMap::new();
    for (task, (sums, count)) in task_sums {
        if count == 0 {
            continue;
        }
        let mean: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        entropy_per_task.insert(task, entropy(&mean));
        per_task.insert(task, mean);
        tokens_per_task.insert(task, count);
    }
    Ok(ActivationReport {
        heads: n,
        tokens,
        per_head_mean,
        per_task,
        entropy_per_task,
        tokens_per_task,
    })
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `token_index,task_id,segment_tag,s_0..s_{n-1}`, one row per token.
pub fn export_traces(traces: &[RoutingTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = traces.first().map_or(0, RoutingTrace::heads);
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        other => Error::TraceCsv(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["token_index".to_string(), "task_id".into(), "segment_tag".into()];
    header.extend((0..n).map(|i| format!("s_{i}")));
    w.write_record(&header).map_err(io)?;
    for trace in traces {
        if trace.heads() != n {
            return Err(Error::HeadCountMismatch(n, trace.heads()));
        }
        for t in 0..trace.weights.rows() {
            let mut rec = vec![
                t.to_string(),
                trace.task_id.to_string(),
                trace.tags[t].as_str().to_string(),
            ];
            rec.extend(trace.weights.row(t).iter().map(|&v| fmt17(v)));
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV back. A `token_index` of 0 starts a new trace.
pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<RoutingTrace>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        other => Error::TraceCsv(format!("{other:?}")),
    })?;
    let header = rdr
        .headers()
        .map_err(|e| Error::TraceCsv(e.to_string()))?
        .clone();
    let fixed = ["token_index", "task_id", "segment_tag"];
    if header.len() < 4 || header.iter().take(3).ne(fixed) {
        return Err(Error::TraceCsv(format!("unexpected header {header:?}")));
    }
    let n = header.len() - 3;
    for (i, name) in header.iter().skip(3).enumerate() {
        if name != format!("s_{i}") {
            return Err(Error::TraceCsv(format!("unexpected column {name:?}")));
        }
    }

    struct Pending {
        task: usize,
        tags: Vec<SegmentTag>,
        rows: Vec<f64>,
    }
    let finish = |p: Pending, n: usize| -> Result<RoutingTrace> {
        let len = p.tags.len();
        Ok(RoutingTrace {
            weights: Matrix::from_vec(len, n, p.rows)?,
            tags: p.tags,
            task_id: p.task,
        })
    };

    let mut traces = Vec::new();
    let mut current: Option<Pending> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::TraceCsv(e.to_string()))?;
        let bad = |what: &str| Error::TraceCsv(format!("row {}: bad {what}", line + 1));
        let idx: usize = rec[0].parse().map_err(|_| bad("token_index"))?;
        let task: usize = rec[1].parse().map_err(|_| bad("task_id"))?;
        let tag = SegmentTag::parse(&rec[2]).ok_or_else(|| bad("segment_tag"))?;
        let weights = (3..3 + n)
            .map(|j| rec[j].parse::<f64>().map_err(|_| bad("weight")))
            .collect::<Result<Vec<_>>>()?;
        if idx == 0 {
            if let Some(p) = current.take() {
                traces.push(finish(p, n)?);
            }
            current = Some(Pending {
                task,
                tags: Vec::new(),
                rows: Vec::new(),
            });
        }
        let p = current.as_mut().ok_or_else(|| bad("token_index (trace must start at 0)"))?;
        if idx != p.tags.len() || task != p.task {
            return Err(bad("token ordering or task_id within trace"));
        }
        p.tags.push(tag);
        p.rows.extend(weights);
    }
    if let Some(p) = current {
        traces.push(finish(p, n)?);
    }
    Ok(traces)
}
