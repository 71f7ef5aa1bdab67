use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use ilora::adapter::gradcheck::{run_grad_check, GradCheckConfig, GradCheckReport};
use ilora::adapter::{load_checkpoint, save_checkpoint};
use ilora::analysis::{activation_stats, export_traces, head_similarity, read_traces};
use ilora::harness::{
    eval_set, evaluate, generate_tasks, synergy_from_losses, synergy_report, train, TrainReport,
};
use ilora::maskgeom::{read_pgm_mask, sample_points};
use ilora::numkit::Rng;
use ilora::{Error, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes to `path` when given, otherwise to stdout.
pub fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn grad_check(config: Option<&Path>, seed: Option<u64>) -> Result<(GradCheckReport, String)> {
    let mut cfg: GradCheckConfig = match config {
        Some(p) => read_json(p)?,
        None => GradCheckConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = run_grad_check(&cfg)?;
    let text = to_json(&report);
    Ok((report, text))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let suite = generate_tasks(&cfg.tasks, &mut Rng::with_stream(cfg.seed, 0))?;
    let report = train(cfg.arm, &suite, &cfg.adapter, &cfg.train, cfg.seed)?;
    let run = report.run.as_ref().expect("train keeps its run");

    fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(&out.join("report.json"), &to_json(&report))?;
    write_text(&out.join("config.json"), &to_json(cfg))?;

    let losses = out.join("losses.csv");
    let mut f = File::create(&losses).map_err(io_err(&losses))?;
    let mut body = String::from("step,task_id,loss\n");
    for p in &run.curve {
        body.push_str(&format!("{},{},{}\n", p.step, p.task_id, fmt17(p.loss)));
    }
    f.write_all(body.as_bytes()).map_err(io_err(&losses))?;

    export_traces(&run.traces, out.join("traces.csv"))?;
    save_checkpoint(&run.layer, out.join("checkpoint.json"))?;
    Ok(report)
}

#[derive(Serialize)]
struct EvalReport {
    arm: ilora::harness::ModelKind,
    seed: u64,
    loss: BTreeMap<usize, f64>,
    mean_loss: f64,
}

pub fn eval_cmd(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<String> {
    cfg.validate()?;
    let layer = load_checkpoint(checkpoint)?;
    let suite = generate_tasks(&cfg.tasks, &mut Rng::with_stream(cfg.seed, 0))?;
    let tasks: Vec<usize> = (0..suite.n_tasks()).collect();
    let mut loss = BTreeMap::new();
    for &t in &tasks {
        let data = eval_set(&suite, t, &cfg.train, cfg.seed);
        loss.insert(t, evaluate(&layer, cfg.arm, &tasks, &data)?.0);
    }
    let mean_loss = loss.values().sum::<f64>() / loss.len() as f64;
    Ok(to_json(&EvalReport {
        arm: cfg.arm,
        seed: cfg.seed,
        loss,
        mean_loss,
    }))
}

pub fn analyze(checkpoints: &[PathBuf], traces: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    fs::create_dir_all(out).map_err(io_err(out))?;
    if !checkpoints.is_empty() {
        let layers = checkpoints.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
        let path = out.join("similarity.json");
        write_text(&path, &to_json(&head_similarity(&layers)?))?;
        written.push(path);
    }
    if let Some(t) = traces {
        let path = out.join("activations.json");
        write_text(&path, &to_json(&activation_stats(&read_traces(t)?)?))?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::InvalidConfig {
            field: "analyze",
            reason: "give at least one --checkpoint or --traces".into(),
        });
    }
    Ok(written)
}

pub fn maskprompt(mask: &Path, k: usize, iou_cap: f64) -> Result<String> {
    let m = read_pgm_mask(mask)?;
    let target = sample_points(&m, k, iou_cap)?;
    Ok(to_json(&target))
}

pub fn report(multi: &Path, singles: &[PathBuf], tie_tolerance: f64) -> Result<String> {
    let multi: TrainReport = read_json(multi)?;
    let summary = if singles.is_empty() {
        synergy_from_losses(&multi.final_loss, &multi.single_loss, tie_tolerance)?
    } else {
        let singles = singles.iter().map(|p| read_json(p)).collect::<Result<Vec<TrainReport>>>()?;
        synergy_report(&multi, &singles, tie_tolerance)?
    };
    Ok(to_json(&summary))
}
