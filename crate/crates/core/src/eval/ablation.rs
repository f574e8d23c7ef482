use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{recall_multi, Detection, EvalError};
use crate::geometry::OrientedBox3;
use crate::geometry::iou_3d;
use crate::pipeline::{run_pipeline, Centers, PipelineConfig, Values};
use crate::rng::derive_seed;
use crate::scenegen::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub h_values: Vec<usize>,
    pub pipeline: PipelineConfig,
    pub iou_t: f64,
    pub top_k: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { h_values: vec![3, 5, 7, 9], pipeline: PipelineConfig::default(), iou_t: 0.7, top_k: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub h: usize,
    /// Mean over ground-truth boxes of the best IoU among proposals.
    pub mean_iou: f64,
    pub recall: f64,
    pub boxes: usize,
}

/// Oracle centers and oracle values; only the number of angle partitions varies.
pub fn run_ablation_h(scenes: &[Scene], cfg: &AblationConfig) -> Result<Vec<AblationRow>, EvalError> {
    if let Some(h) = cfg.h_values.iter().find(|h| **h == 0) {
        return Err(EvalError::InvalidConfig(format!("angle count {h} must be >= 1")));
    }
    cfg.h_values
        .iter()
        .map(|&h| {
            let mut pipeline = cfg.pipeline;
            pipeline.boundary.angles = h;
            let per_scene: Result<Vec<(Vec<Detection>, Vec<OrientedBox3>)>, EvalError> = scenes
                .par_iter()
                .enumerate()
                .map(|(s, scene)| {
                    let gt = scene.gt_boxes();
                    let pc = PipelineConfig { seed: derive_seed(pipeline.seed, s as u64), ..pipeline };
                    let props = run_pipeline(&scene.cloud, &pc, Centers::Oracle(&gt), Values::Oracle(&gt), None)
                        .map_err(|e| EvalError::Scene { scene: s, reason: e.to_string() })?;
                    Ok((props.into_iter().map(|p| p.detection).collect(), gt))
                })
                .collect();
            let per_scene = per_scene?;
            let ious: Vec<f64> = per_scene
                .iter()
                .flat_map(|(dets, gt)| gt.iter().map(|g| dets.iter().map(|d| iou_3d(&d.bbox, g)).fold(0.0, f64::max)))
                .collect();
            let n = ious.len();
            Ok(AblationRow {
                h,
                mean_iou: if n == 0 { 0.0 } else { ious.iter().sum::<f64>() / n as f64 },
                recall: recall_multi(&per_scene, cfg.iou_t, cfg.top_k)?,
                boxes: n,
            })
        })
        .collect()
}
