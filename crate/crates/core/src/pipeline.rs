//! End-to-end detection on one point cloud: seeds, shifting, suppression,
//! local sampling, implicit assignment, boundary fitting and optional refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{generate_boundary, BoundaryConfig, BoundaryError, FitResult};
use crate::candidates::{
    cube_nms, make_seed_grid, shift_candidates, Candidate, CandidateError, FeatureProvider, LocalStatistics, OracleScorer,
    OracleShifter, DEFAULT_CELL_SIZE, DEFAULT_TOP_K,
};
use crate::eval::Detection;
use crate::geometry::{point_in_box, OrientedBox3, PointCloud};
use crate::implicit::{
    assign_values, build_local_sample, condition_kernels, oracle_assignment, GeneratorParams, ImplicitAssignment, ImplicitError,
    LocalSample, SamplingConfig,
};
use crate::refine::{aggregate, apply_refinement, refine_head, HeadParams, RefineError, Weighting, DEFAULT_AGGREGATION_RADIUS};
use crate::rng::derive_seed;
use crate::train::ShiftHead;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Implicit(#[from] ImplicitError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cell_size: f64,
    pub top_k: usize,
    pub sampling: SamplingConfig,
    pub boundary: BoundaryConfig,
    pub aggregation_radius: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            top_k: DEFAULT_TOP_K,
            sampling: SamplingConfig::default(),
            boundary: BoundaryConfig::default(),
            aggregation_radius: DEFAULT_AGGREGATION_RADIUS,
            weighting: Weighting::Implicit,
            seed: 0,
        }
    }
}

/// Where candidate centers come from.
#[derive(Debug, Clone, Copy)]
pub enum Centers<'a> {
    /// Seeds moved onto the centers of the ground-truth boxes containing them.
    Oracle(&'a [OrientedBox3]),
    Learned(&'a ShiftHead),
}

/// Where implicit values come from.
#[derive(Debug, Clone, Copy)]
pub enum Values<'a> {
    /// 1 inside the ground-truth box whose footprint holds the candidate, else 0.
    Oracle(&'a [OrientedBox3]),
    Learned(&'a GeneratorParams),
}

/// One fitted candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub candidate: Candidate,
    pub fit: FitResult,
    pub detection: Detection,
}

/// Candidate centers after shifting and cube suppression.
pub fn propose_centers(cloud: &PointCloud, cfg: &PipelineConfig, centers: Centers<'_>) -> Result<(Vec<Candidate>, Vec<Vec<f64>>), PipelineError> {
    let grid = make_seed_grid(cloud, cfg.cell_size, &LocalStatistics::default())?;
    let point_features = grid.point_features(cloud.len());
    let shifted = match centers {
        Centers::Oracle(boxes) => shift_candidates(&grid, &OracleShifter { boxes }, &OracleScorer { boxes }),
        Centers::Learned(head) => shift_candidates(&grid, head, head),
    };
    Ok((cube_nms(&shifted, cfg.top_k), point_features))
}

/// Builds the local sample for a candidate and replaces its feature with
/// statistics of the sampled neighborhood, which is what conditions the kernels.
pub fn candidate_sample(cloud: &PointCloud, point_features: &[Vec<f64>], cand: &Candidate, sampling: &SamplingConfig, seed: u64) -> LocalSample {
    let mut sample = build_local_sample(cloud, point_features, cand, sampling, seed);
    sample.candidate.feature = LocalStatistics::default().describe(cloud, &sample.raw_indices, cand.position);
    sample
}

fn assignment(sample: &LocalSample, values: Values<'_>) -> Result<Option<ImplicitAssignment>, PipelineError> {
    Ok(match values {
        Values::Oracle(boxes) => {
            let c = sample.candidate.position;
            let shifter = OracleShifter { boxes };
            let enclosing = shifter.enclosing(c).or_else(|| boxes.iter().find(|b| point_in_box(c, b)));
            enclosing.map(|b| oracle_assignment(sample, b))
        }
        Values::Learned(generator) => Some(assign_values(sample, &condition_kernels(&sample.candidate, generator)?)?),
    })
}

/// Runs the whole chain. Without a refinement head, a proposal's confidence is
/// its candidate centerness; with one, the head's confidence and correction apply.
/// Candidates with no inside points produce no proposal.
pub fn run_pipeline(
    cloud: &PointCloud,
    cfg: &PipelineConfig,
    centers: Centers<'_>,
    values: Values<'_>,
    head: Option<&HeadParams>,
) -> Result<Vec<Proposal>, PipelineError> {
    cfg.boundary.validate()?;
    let (cands, point_features) = propose_centers(cloud, cfg, centers)?;
    let results: Vec<Result<Option<Proposal>, PipelineError>> = cands
        .par_iter()
        .enumerate()
        .map(|(i, cand)| {
            let sample = candidate_sample(cloud, &point_features, cand, &cfg.sampling, derive_seed(cfg.seed, i as u64));
            let Some(assign) = assignment(&sample, values)? else { return Ok(None) };
            let fit = match generate_boundary(&sample, &assign, &cfg.boundary) {
                Ok(f) => f,
                Err(BoundaryError::NoInsidePoints) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let detection = match head {
                None => Detection::new(fit.bbox, cand.centerness),
                Some(h) => {
                    let occ = aggregate(&fit.bbox, &sample, &assign, cfg.aggregation_radius, cfg.weighting);
                    let out = refine_head(&occ.descriptor, h)?;
                    Detection::new(apply_refinement(&fit.bbox, &out.box_delta, out.direction), out.confidence)
                }
            };
            Ok(Some(Proposal { candidate: cand.clone(), fit, detection }))
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(p) = r? {
            out.push(p);
        }
    }
    Ok(out)
}
