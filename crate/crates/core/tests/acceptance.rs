//! End-to-end acceptance checks, one line per criterion.
//!
//! Criteria listed in `DOCUMENTED_GAPS` are known not to hold; they still
//! print `[FAIL]` but do not fail the run. Any other failure exits nonzero.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ilora::adapter::gradcheck::{run_grad_check, GradCheckConfig};
use ilora::adapter::{load_checkpoint, save_checkpoint, ILoRAConfig, ILoRALayer, TokenBatch};
use ilora::analysis::head_similarity;
use ilora::harness::{
    eval_set, evaluate, generate_tasks, train, train_run, ModelKind, TaskGenConfig, TaskSuite, TrainConfig,
};
use ilora::maskgeom::{bounding_box, circle_iou, distance_transform, sample_points, Circle};
use ilora::numkit::{Matrix, Rng};

const DOCUMENTED_GAPS: &[u32] = &[5];
const SEEDS: u64 = 10;
const REQUIRED_SEEDS: usize = 8;

struct Outcome {
    id: u32,
    passed: bool,
    summary: String,
    details: Vec<String>,
}

fn outcome(id: u32, passed: bool, summary: String) -> Outcome {
    Outcome {
        id,
        passed,
        summary,
        details: Vec::new(),
    }
}

fn random_layer(cfg: ILoRAConfig, rng: &mut Rng, wr_std: f64) -> ILoRALayer {
    let w0 = rng.gaussian_matrix(cfg.d, cfg.h, 1.0);
    let a = rng.gaussian_matrix(cfg.r, cfg.h, 1.0);
    let b = (0..cfg.n).map(|_| rng.gaussian_matrix(cfg.d, cfg.r, 1.0)).collect();
    let wr = rng.gaussian_matrix(cfg.n, cfg.r, wr_std);
    ILoRALayer::from_parts(cfg, w0, a, b, wr).unwrap()
}

fn lora_reduction() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, d) = (1 + rng.below(12), 1 + rng.below(12));
        let r = 1 + rng.below(h.min(d));
        let alpha = rng.uniform_range(0.5, 32.0);
        let layer = random_layer(ILoRAConfig::new(h, d, r, 1, alpha), &mut rng, 1.0);
        let l = 1 + rng.below(8);
        let x = rng.gaussian_matrix(l, h, 1.0);
        let out = layer.forward(&TokenBatch::text(x.clone(), 0), false, &mut rng).unwrap();
        let oracle = common::lora_forward(&x, layer.w0(), layer.a(), &layer.heads()[0], alpha / r as f64);
        worst = worst.max(out.output.max_abs_diff(&oracle));
    }
    let t = start.elapsed();
    outcome(
        1,
        worst <= 1e-12 && t < Duration::from_secs(5),
        format!("LoRA reduction: 100 instances, max |Δ| = {worst:.2e} (≤ 1e-12), {t:.2?} (< 5 s)"),
    )
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let report = run_grad_check(&GradCheckConfig::default()).unwrap();
    let t = start.elapsed();
    let mut o = outcome(
        2,
        report.passed && t < Duration::from_secs(30),
        format!(
            "gradient exactness: {} instances, worst relative error {:.2e} (≤ 1e-6), {t:.2?} (< 30 s)",
            report.instances,
            report.tensors.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
        ),
    );
    o.details = report
        .tensors
        .iter()
        .map(|c| format!("{:>4}: {:.2e}", c.name, c.max_rel_err))
        .collect();
    o
}

fn gates_and_init() -> Outcome {
    let mut rng = Rng::new(3);
    let mut gate_err = 0.0f64;
    let mut init_exact = true;
    let mut drop_err = 0.0f64;
    for i in 0..50 {
        let n = 1 + rng.below(6);
        let cfg = ILoRAConfig::new(8, 6, 3, n, 6.0);
        let x = rng.gaussian_matrix(5, 8, 1.0);
        let batch = TokenBatch::text(x.clone(), 0);

        let wr_std = [0.0, 1.0, 1e3][i % 3];
        let layer = random_layer(cfg, &mut rng, wr_std);
        let out = layer.forward(&batch, false, &mut rng).unwrap();
        for t in 0..5 {
            gate_err = gate_err.max((out.trace.weights.row(t).iter().sum::<f64>() - 1.0).abs());
        }

        let fresh = ILoRALayer::init(cfg, &mut rng).unwrap();
        let y = fresh.forward(&batch, false, &mut rng).unwrap().output;
        let w0 = fresh.w0();
        let direct = Matrix::from_fn(5, 6, |t, o| (0..8).map(|k| x[(t, k)] * w0[(o, k)]).sum());
        init_exact &= y == direct;

        let mut dropped = layer.clone();
        for head in 0..n {
            dropped = dropped.drop_head(head).unwrap();
        }
        let y = dropped.forward(&batch, false, &mut rng).unwrap().output;
        drop_err = drop_err.max(y.max_abs_diff(&layer.frozen_forward(&x).unwrap()));
    }
    outcome(
        3,
        gate_err <= 1e-12 && init_exact && drop_err <= 1e-15,
        format!(
            "gate rows sum to 1 (max err {gate_err:.1e}); init forward exact: {init_exact}; all heads dropped vs frozen {drop_err:.1e}"
        ),
    )
}

fn geometry_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(4);
    let (mut edt_ok, mut bbox_ok, mut first_ok) = (0, 0, 0);
    for _ in 0..50 {
        let m = common::random_mask(&mut rng, 64);
        let field = distance_transform(&m);
        edt_ok += (field.squared_values() == &common::brute_edt_sq(&m)[..]) as usize;
        bbox_ok += (Some(<[usize; 4]>::from(bounding_box(&m).unwrap())) == common::scan_bbox(&m)) as usize;
        let [x, y] = sample_points(&m, 3, 0.3).unwrap().points[0];
        first_ok += (field.radius(x, y) == field.max_radius()) as usize;
    }
    let mut iou_err = 0.0f64;
    for _ in 0..50 {
        let mut c = || Circle::new(rng.uniform_range(0.0, 8.0), rng.uniform_range(0.0, 8.0), rng.uniform_range(0.5, 4.0));
        let (a, b) = (c(), c());
        iou_err = iou_err.max((circle_iou(&a, &b) - common::raster_iou(&a, &b, 1024)).abs());
    }
    let t = start.elapsed();
    outcome(
        4,
        edt_ok == 50 && bbox_ok == 50 && first_ok == 50 && iou_err < 1e-3 && t < Duration::from_secs(60),
        format!(
            "geometry: EDT exact {edt_ok}/50, bbox exact {bbox_ok}/50, first circle at EDT max {first_ok}/50, IoU vs raster {iou_err:.1e} (< 1e-3), {t:.2?} (< 60 s)"
        ),
    )
}

struct SeedRun {
    seed: u64,
    suite: TaskSuite,
    ilora: ilora::harness::TrainReport,
    lora_loss: f64,
    matched_loss: f64,
}

fn adapter(n: usize) -> ILoRAConfig {
    ILoRAConfig::new(16, 16, 4, n, 8.0)
}

fn synthetic_runs() -> (Vec<SeedRun>, Duration) {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let runs = (0..SEEDS)
        .map(|seed| {
            let suite = generate_tasks(&TaskGenConfig::default(), &mut Rng::with_stream(seed, 0)).unwrap();
            let ilora = train(ModelKind::Ilora, &suite, &adapter(3), &cfg, seed).unwrap();
            let lora = train_run(ModelKind::Lora, &suite, &[0, 1, 2], &adapter(3), &cfg, seed).unwrap();
            let matched = train_run(ModelKind::LoraMatchedBudget, &suite, &[0, 1, 2], &adapter(3), &cfg, seed).unwrap();
            SeedRun {
                seed,
                suite,
                ilora,
                lora_loss: lora.mean_loss(),
                matched_loss: matched.mean_loss(),
            }
        })
        .collect();
    (runs, start.elapsed())
}

fn mean_loss(report: &ilora::harness::TrainReport) -> f64 {
    report.total_loss / report.final_loss.len() as f64
}

fn synergy(runs: &[SeedRun], elapsed: Duration) -> Outcome {
    let mut details = Vec::new();
    let mut ratio_ok = 0;
    let mut net_ok = 0;
    for r in runs {
        let il = mean_loss(&r.ilora);
        let ratio = il / r.lora_loss;
        let net = r.ilora.synergy.as_ref().unwrap().net_score;
        ratio_ok += (ratio <= 0.1) as usize;
        net_ok += (net >= 0.0) as usize;
        details.push(format!(
            "seed {}: ilora {il:.4} lora {:.4} (ratio {ratio:.3}) matched-budget lora {:.4}; net score {net:+.2}",
            r.seed, r.lora_loss, r.matched_loss
        ));
    }
    let passed = ratio_ok >= REQUIRED_SEEDS && net_ok == runs.len() && elapsed < Duration::from_secs(300);
    let mut o = outcome(
        5,
        passed,
        format!(
            "synthetic synergy: ilora ≤ 0.1× lora in {ratio_ok}/{} seeds (need {REQUIRED_SEEDS}); net score ≥ 0 in {net_ok}/{}; {elapsed:.1?} (< 300 s)",
            runs.len(),
            runs.len()
        ),
    );
    o.details = details;
    o
}

fn head_drop(runs: &[SeedRun]) -> Outcome {
    let cfg = TrainConfig::default();
    let mut ok = 0;
    let mut details = Vec::new();
    for r in runs {
        let run = r.ilora.run.as_ref().unwrap();
        let data: Vec<_> = (0..3).map(|t| eval_set(&r.suite, t, &cfg, r.seed)).collect();
        let total = |layer: &ILoRALayer| -> f64 {
            (0..3)
                .map(|t| evaluate(layer, ModelKind::Ilora, &[0, 1, 2], &data[t]).unwrap().0)
                .sum()
        };
        let base = total(&run.layer);
        let rises: Vec<f64> = (0..3).map(|h| total(&run.layer.drop_head(h).unwrap()) / base - 1.0).collect();
        let min = rises.iter().copied().fold(f64::INFINITY, f64::min);
        ok += (min >= 0.05) as usize;
        details.push(format!("seed {}: smallest relative rise {:.1}%", r.seed, 100.0 * min));
    }
    let mut o = outcome(
        6,
        ok >= REQUIRED_SEEDS,
        format!("head drop: every single-head drop raises loss ≥ 5% in {ok}/{} seeds", runs.len()),
    );
    o.details = details;
    o
}

fn specialization(runs: &[SeedRun]) -> Outcome {
    let threshold = 1.0 / 3.0 + 0.15;
    let mut ok = 0;
    let mut details = Vec::new();
    for r in runs {
        let dom = (0..3)
            .map(|t| r.ilora.activation.dominant_activation(t).unwrap())
            .fold(f64::INFINITY, f64::min);
        let sim = head_similarity(std::slice::from_ref(&r.ilora.run.as_ref().unwrap().layer))
            .unwrap()
            .mean_offdiag
            .unwrap();
        ok += (dom >= threshold && sim < 0.99) as usize;
        details.push(format!(
            "seed {}: weakest dominant activation {dom:.3}, mean off-diagonal cosine {sim:+.3}",
            r.seed
        ));
    }
    let mut o = outcome(
        7,
        ok >= REQUIRED_SEEDS,
        format!(
            "routing specialization: dominant activation ≥ {threshold:.3} on every task and similarity < 0.99 in {ok}/{} seeds",
            runs.len()
        ),
    );
    o.details = details;
    o
}

fn head_count_stability(runs: &[SeedRun]) -> Outcome {
    let cfg = TrainConfig::default();
    let mut ok = 0;
    let mut details = Vec::new();
    for r in runs {
        let base = mean_loss(&r.ilora);
        let mut good = true;
        let mut line = format!("seed {}: n=3 {base:.4}", r.seed);
        for n in [4, 5] {
            let run = train_run(ModelKind::Ilora, &r.suite, &[0, 1, 2], &adapter(n), &cfg, r.seed).unwrap();
            let loss = run.mean_loss();
            let factor = (loss / base).max(base / loss);
            good &= factor < 5.0 && loss < r.lora_loss;
            line.push_str(&format!(", n={n} {loss:.4} ({factor:.2}×)"));
        }
        ok += good as usize;
        details.push(line);
    }
    let mut o = outcome(
        8,
        ok >= REQUIRED_SEEDS,
        format!(
            "head-count stability: n ∈ {{4, 5}} within 5× of n = 3 and below lora in {ok}/{} seeds",
            runs.len()
        ),
    );
    o.details = details;
    o
}

fn checkpoints() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(9);
    let mut exact = 0;
    for i in 0..10 {
        let cfg = ILoRAConfig::new(1 + rng.below(10), 1 + rng.below(10), 1, 1 + rng.below(4), 4.0);
        let layer = random_layer(cfg, &mut rng, 1.0);
        let path = dir.path().join(format!("layer{i}.json"));
        save_checkpoint(&layer, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let bits = |l: &ILoRALayer| -> Vec<u64> {
            let mut v: Vec<u64> = l.w0().as_slice().iter().map(|x| x.to_bits()).collect();
            v.extend(l.a().as_slice().iter().map(|x| x.to_bits()));
            for h in l.heads() {
                v.extend(h.as_slice().iter().map(|x| x.to_bits()));
            }
            v.extend(l.wr().as_slice().iter().map(|x| x.to_bits()));
            v
        };
        exact += (bits(&layer) == bits(&back) && layer.config() == back.config()) as usize;
    }
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/unit_layer.json");
    let unit = load_checkpoint(fixture).unwrap();
    let values = [unit.w0()[(0, 0)], unit.a()[(0, 0)], unit.heads()[0][(0, 0)], unit.wr()[(0, 0)]];
    let y = unit
        .forward(&TokenBatch::text(Matrix::filled(1, 1, 3.0), 0), false, &mut rng)
        .unwrap()
        .output[(0, 0)];
    let fixture_ok = values == [1.5, -2.0, 0.25, 0.0] && y == 1.5;
    outcome(
        9,
        exact == 10 && fixture_ok,
        format!("checkpoints: bit-exact round trip {exact}/10; 1×1 fixture values and forward exact: {fixture_ok}"),
    )
}

fn not_reproducible_documented() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).unwrap_or_default();
    let needed = ["84.41", "91.12", "0.630", "0.3", "94%", "88%"];
    let missing: Vec<&str> = needed.iter().copied().filter(|s| !text.contains(s)).collect();
    let flagged = text.to_lowercase().contains("not reproduc");
    outcome(
        10,
        missing.is_empty() && flagged,
        format!(
            "README lists real-benchmark figures as not reproducible (missing: {missing:?}, statement present: {flagged})"
        ),
    )
}

fn main() -> ExitCode {
    let mut results = vec![lora_reduction(), gradient_exactness(), gates_and_init(), geometry_oracles()];
    let (runs, elapsed) = synthetic_runs();
    results.push(synergy(&runs, elapsed));
    results.push(head_drop(&runs));
    results.push(specialization(&runs));
    results.push(head_count_stability(&runs));
    results.push(checkpoints());
    results.push(not_reproducible_documented());

    let mut unexpected = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        let note = if !r.passed && DOCUMENTED_GAPS.contains(&r.id) {
            " [documented gap]"
        } else {
            ""
        };
        println!("[{tag}] criterion {:>2}: {}{note}", r.id, r.summary);
        for d in &r.details {
            println!("         {d}");
        }
        if !r.passed && !DOCUMENTED_GAPS.contains(&r.id) {
            unexpected += 1;
        }
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria pass", results.len());
    if unexpected > 0 {
        println!("{unexpected} undocumented failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
