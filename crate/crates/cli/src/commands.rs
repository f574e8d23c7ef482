use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use boxfield::eval::report::{
    ablation_plot, curve_plot, pr_plot, read_ablation_csv, read_pr_csv, read_robustness_csv, robustness_plot, write_ablation_csv, write_pr_csv,
    write_robustness_csv, write_robustness_summary_csv,
};
use boxfield::eval::{
    average_precision_in_band, average_precision_multi, detection_nms, recall_multi, robustness_implicit, robustness_parametric, run_ablation_h,
    AblationConfig, ApMode, Detection, DistanceBand, IouKind, RobustnessConfig,
};
use boxfield::geometry::OrientedBox3;
use boxfield::implicit::GeneratorParams;
use boxfield::io::write_pointcloud_bin;
use boxfield::pipeline::{run_pipeline, Centers, PipelineConfig, Values};
use boxfield::refine::HeadParams;
use boxfield::rng::derive_seed;
use boxfield::scenegen::{generate_scene, Scene, SceneConfig};
use boxfield::train::{
    evaluate_implicit, implicit_examples, read_curve_csv, train_implicit_classifier, train_refine_head, train_shift_head, write_curve_csv,
    CurvePoint, ShiftHead,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{create, detections_file, read_json, read_scenes, write_json, write_scene};
use crate::{AblateArgs, EvalArgs, FitArgs, GenArgs, InputArgs, Part, Source, TrainArgs};

pub const GENERATOR_FILE: &str = "generator.json";
pub const SHIFT_FILE: &str = "shift.json";
pub const HEAD_FILE: &str = "head.json";

/// Scene `i` of a run uses seed `derive_seed(seed, i)`.
pub fn scene_config(cfg: &RunConfig, i: usize) -> SceneConfig {
    SceneConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.scene.clone() }
}

/// Scene `i` is fitted with pipeline seed `derive_seed(pipeline.seed, i)`.
pub fn scene_pipeline(cfg: &PipelineConfig, i: usize) -> PipelineConfig {
    PipelineConfig { seed: derive_seed(cfg.seed, i as u64), ..*cfg }
}

pub fn gen(cfg: &RunConfig, a: &GenArgs, out: &Path) -> Result<()> {
    let scenes: Vec<Scene> = (0..a.scenes)
        .into_par_iter()
        .map(|i| generate_scene(&scene_config(cfg, i)).with_context(|| format!("scene {i}")))
        .collect::<Result<_>>()?;
    for (i, scene) in scenes.iter().enumerate() {
        write_scene(out, i, scene)?;
        if a.bin {
            let path = out.join(format!("scene_{i:04}.bin"));
            fs::write(&path, write_pointcloud_bin(&scene.cloud)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let boxes: usize = scenes.iter().map(|s| s.boxes.len()).sum();
    let points: usize = scenes.iter().map(|s| s.cloud.len()).sum();
    println!("wrote {} scenes ({boxes} boxes, {points} points) to {}", scenes.len(), out.display());
    Ok(())
}

fn model_path(model: Option<&Path>, file: &str) -> Result<std::path::PathBuf> {
    match model {
        Some(dir) => Ok(dir.join(file)),
        None => bail!("--model DIR is required to load {file}"),
    }
}

pub fn fit(cfg: &RunConfig, a: &FitArgs, out: &Path) -> Result<()> {
    let scenes = read_scenes(&a.input)?;
    let model = a.model.as_deref();
    let shift: Option<ShiftHead> = match a.centers {
        Source::Learned => Some(read_json(&model_path(model, SHIFT_FILE)?)?),
        Source::Oracle => None,
    };
    let generator: Option<GeneratorParams> = match a.values {
        Source::Learned => Some(read_json(&model_path(model, GENERATOR_FILE)?)?),
        Source::Oracle => None,
    };
    let head: Option<HeadParams> = if a.refine { Some(read_json(&model_path(model, HEAD_FILE)?)?) } else { None };

    let per_scene: Vec<Vec<Detection>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let gt = scene.gt_boxes();
            let centers = shift.as_ref().map_or(Centers::Oracle(&gt), Centers::Learned);
            let values = generator.as_ref().map_or(Values::Oracle(&gt), Values::Learned);
            let props = run_pipeline(&scene.cloud, &scene_pipeline(&cfg.pipeline, i), centers, values, head.as_ref())
                .with_context(|| format!("scene {i}"))?;
            Ok(props.into_iter().map(|p| p.detection).collect())
        })
        .collect::<Result<_>>()?;
    for (i, dets) in per_scene.iter().enumerate() {
        write_json(&out.join(detections_file(i)), dets)?;
    }
    let total: usize = per_scene.iter().map(Vec::len).sum();
    println!("fitted {total} boxes in {} scenes ({} strategy) -> {}", scenes.len(), cfg.pipeline.boundary.strategy, out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierReport {
    scenes: usize,
    accuracy: f64,
    mean_bce: f64,
    initial_bce: f64,
    final_bce: f64,
}

fn write_curve(out: &Path, name: &str, curve: &[CurvePoint]) -> Result<()> {
    let path = out.join(format!("{name}_curve.csv"));
    write_curve_csv(curve, create(&path)?).with_context(|| format!("writing {}", path.display()))
}

pub fn train(cfg: &RunConfig, a: &TrainArgs, out: &Path) -> Result<()> {
    let scenes = read_scenes(&a.input)?;
    let all = a.part == Part::All;
    if all || a.part == Part::Implicit {
        let trained = train_implicit_classifier(&scenes, &cfg.train.implicit).context("implicit classifier")?;
        write_json(&out.join(GENERATOR_FILE), &trained.generator)?;
        write_curve(out, "implicit", &trained.curve)?;
        let (eval_scenes, label) = match &a.holdout {
            Some(dir) => (read_scenes(dir)?, "held-out"),
            None => (scenes.clone(), "training"),
        };
        let mut examples = Vec::new();
        for (s, scene) in eval_scenes.iter().enumerate() {
            let seed = derive_seed(derive_seed(cfg.train.implicit.seed, 2), s as u64);
            examples.extend(implicit_examples(scene, &cfg.train.implicit, seed)?);
        }
        let ev = evaluate_implicit(&trained.generator, &examples);
        let report = ClassifierReport {
            scenes: eval_scenes.len(),
            accuracy: ev.accuracy,
            mean_bce: ev.mean_bce,
            initial_bce: trained.curve.first().map_or(f64::NAN, |p| p.total),
            final_bce: trained.curve.last().map_or(f64::NAN, |p| p.total),
        };
        write_json(&out.join("implicit_eval.json"), &report)?;
        println!(
            "implicit classifier: training BCE {:.4} -> {:.4}; {label} accuracy {:.4}, BCE {:.4} over {} points",
            report.initial_bce, report.final_bce, ev.accuracy, ev.mean_bce, ev.points
        );
    }
    if all || a.part == Part::Shift {
        let trained = train_shift_head(&scenes, &cfg.train.shift).context("shift head")?;
        write_json(&out.join(SHIFT_FILE), &trained.head)?;
        write_curve(out, "shift", &trained.curve)?;
        let (first, last) = (trained.curve.first().map_or(f64::NAN, |p| p.total), trained.curve.last().map_or(f64::NAN, |p| p.total));
        println!("shift head: loss {first:.4} -> {last:.4}");
    }
    if all || a.part == Part::Head {
        let trained = train_refine_head(&scenes, &cfg.train.head).context("refinement head")?;
        write_json(&out.join(HEAD_FILE), &trained.head)?;
        write_curve(out, "head", &trained.curve)?;
        let (first, last) = (trained.curve.first().map_or(f64::NAN, |p| p.total), trained.curve.last().map_or(f64::NAN, |p| p.total));
        println!("refinement head: loss {first:.4} -> {last:.4}");
    }
    println!("models -> {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApEntry {
    pub mode: ApMode,
    pub ap: f64,
    pub near: f64,
    pub mid: f64,
    pub far: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub scenes: usize,
    pub gt_boxes: usize,
    pub detections: usize,
    pub iou_t: f64,
    pub top_k: usize,
    pub recall: f64,
    pub ap: Vec<ApEntry>,
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs, out: &Path) -> Result<()> {
    let scenes = read_scenes(&a.input)?;
    let e = &cfg.eval;
    let pairs: Vec<(Vec<Detection>, Vec<OrientedBox3>)> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| Ok((read_json(&a.detections.join(detections_file(i)))?, s.gt_boxes())))
        .collect::<Result<_>>()?;
    let recall = recall_multi(&pairs, e.iou_t, e.top_k)?;
    let kept: Vec<(Vec<Detection>, Vec<OrientedBox3>)> = pairs
        .iter()
        .map(|(d, g)| Ok((detection_nms(d, e.conf_t, e.nms_iou, IouKind::Bev)?, g.clone())))
        .collect::<Result<_>>()?;
    let mut curves = Vec::new();
    let mut ap = Vec::new();
    for &mode in &e.ap_modes {
        let curve = average_precision_multi(&kept, e.iou_t, mode)?;
        let band = |b| average_precision_in_band(&kept, b, e.iou_t, mode).map(|c| c.ap);
        ap.push(ApEntry { mode, ap: curve.ap, near: band(DistanceBand::Near)?, mid: band(DistanceBand::Mid)?, far: band(DistanceBand::Far)? });
        curves.push(("all".to_string(), curve));
    }
    let metrics = Metrics {
        scenes: scenes.len(),
        gt_boxes: pairs.iter().map(|p| p.1.len()).sum(),
        detections: pairs.iter().map(|p| p.0.len()).sum(),
        iou_t: e.iou_t,
        top_k: e.top_k,
        recall,
        ap,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_pr_csv(&curves, create(&out.join("pr.csv"))?)?;
    println!("scenes {}  boxes {}  detections {}", metrics.scenes, metrics.gt_boxes, metrics.detections);
    println!("recall@{} top-{}: {}", e.iou_t, e.top_k, metrics.recall);
    for entry in &metrics.ap {
        println!(
            "AP {:?}@{}: {:.4}  (near {:.4}, mid {:.4}, far {:.4})",
            entry.mode, e.iou_t, entry.ap, entry.near, entry.mid, entry.far
        );
    }
    Ok(())
}

pub fn robustness(cfg: &RunConfig, a: &InputArgs, out: &Path) -> Result<()> {
    let scenes = read_scenes(&a.input)?;
    let r = &cfg.robustness;
    let mut series = vec![robustness_parametric(&scenes, r.shifts, r.parametric_trials, cfg.seed)?];
    let rc = RobustnessConfig {
        parametric_trials: r.parametric_trials,
        mask_trials: r.mask_trials,
        seed: cfg.seed,
        sampling: cfg.pipeline.sampling,
        boundary: cfg.pipeline.boundary,
    };
    series.extend(robustness_implicit(&scenes, &r.fractions, &rc)?);
    write_robustness_csv(&series, create(&out.join("robustness.csv"))?)?;
    write_robustness_summary_csv(&series, create(&out.join("robustness_summary.csv"))?)?;
    println!("{:<34} {:>7} {:>7} {:>7} {:>7}", "setting", "count", "mean", "median", "<0.7");
    for s in &series {
        let m = &s.summary;
        println!("{:<34} {:>7} {:>7.4} {:>7.4} {:>7.4}", format!("{}: {}", s.kind, s.setting), m.count, m.mean, m.median, m.fraction_below_0_7);
    }
    Ok(())
}

pub fn ablate_h(cfg: &RunConfig, a: &AblateArgs, out: &Path) -> Result<()> {
    let scenes = read_scenes(&a.input)?;
    let ac = AblationConfig { h_values: cfg.ablation.h_values.clone(), pipeline: cfg.pipeline, iou_t: cfg.eval.iou_t, top_k: cfg.eval.top_k };
    let rows = run_ablation_h(&scenes, &ac)?;
    write_ablation_csv(&rows, create(&out.join("ablation.csv"))?)?;
    println!("{:>3} {:>9} {:>9} {:>6}", "h", "mean IoU", "recall", "boxes");
    for r in &rows {
        println!("{:>3} {:>9.4} {:>9.4} {:>6}", r.h, r.mean_iou, r.recall, r.boxes);
    }
    Ok(())
}

/// Renders every known table found in the input directory.
pub fn report(a: &InputArgs, out: &Path) -> Result<()> {
    let open = |name: &str| fs::File::open(a.input.join(name));
    let mut written = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<()> {
        let path = out.join(&name);
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        written.push(name);
        Ok(())
    };
    if let Ok(f) = open("pr.csv") {
        emit("pr.svg".into(), pr_plot(&read_pr_csv(f).context("pr.csv")?))?;
    }
    if let Ok(f) = open("robustness.csv") {
        emit("robustness.svg".into(), robustness_plot(&read_robustness_csv(f).context("robustness.csv")?))?;
    }
    if let Ok(f) = open("ablation.csv") {
        emit("ablation.svg".into(), ablation_plot(&read_ablation_csv(f).context("ablation.csv")?))?;
    }
    let mut curves: Vec<_> = fs::read_dir(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_curve.csv")))
        .collect();
    curves.sort();
    for path in curves {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("curve").to_string();
        let curve = read_curve_csv(fs::File::open(&path)?).with_context(|| format!("{}", path.display()))?;
        emit(format!("{stem}.svg"), curve_plot(&stem.replace('_', " "), &curve))?;
    }
    if written.is_empty() {
        bail!("no pr.csv, robustness.csv, ablation.csv or *_curve.csv in {}", a.input.display());
    }
    println!("wrote {} -> {}", written.join(", "), out.display());
    Ok(())
}
