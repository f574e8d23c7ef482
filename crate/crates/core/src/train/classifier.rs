//! Training the kernel generator on oracle-labeled candidate samples.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bce, bce_grad};
use super::{sgd_step, CurvePoint, LossTerms, TrainError};
use crate::candidates::{
    cube_nms, make_seed_grid, shift_candidates, LocalStatistics, OracleScorer, OracleShifter, DEFAULT_CELL_SIZE,
    DEFAULT_TOP_K,
};
use crate::geometry::point_in_box;
use crate::pipeline::candidate_sample;
use crate::implicit::{theta_activation, theta_activation_grad, kernel_layers, point_input, GeneratorParams, SamplingConfig};
use crate::nn::{relu_backward, relu_in_place, sigmoid};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scenegen::Scene;

/// One candidate's generator input with its point inputs and 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitExample {
    pub generator_input: Vec<f64>,
    pub point_inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Leading entries that are raw points; the rest are virtual.
    pub raw_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub cell_size: f64,
    pub top_k: usize,
    pub sampling: SamplingConfig,
}

impl Default for ImplicitTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.002,
            batch_size: 8,
            seed: 0,
            init_scale: 0.02,
            cell_size: DEFAULT_CELL_SIZE,
            top_k: DEFAULT_TOP_K,
            sampling: SamplingConfig::default(),
        }
    }
}

impl ImplicitTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.cell_size > 0.0) {
            return Err(TrainError::InvalidConfig(format!("cell size must be positive, got {}", self.cell_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub generator: GeneratorParams,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitEval {
    pub accuracy: f64,
    pub mean_bce: f64,
    pub points: usize,
    pub examples: usize,
}

/// Candidates from the oracle shifter that land inside a ground-truth box,
/// with raw and virtual points labeled by that box.
pub fn implicit_examples(scene: &Scene, cfg: &ImplicitTrainConfig, seed: u64) -> Result<Vec<ImplicitExample>, TrainError> {
    let provider = LocalStatistics::default();
    let grid = make_seed_grid(&scene.cloud, cfg.cell_size, &provider)
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let point_features = grid.point_features(scene.cloud.len());
    let boxes = scene.gt_boxes();
    let shifted = shift_candidates(&grid, &OracleShifter { boxes: &boxes }, &OracleScorer { boxes: &boxes });
    let kept = cube_nms(&shifted, cfg.top_k);
    let examples = kept
        .par_iter()
        .enumerate()
        .filter_map(|(i, cand)| {
            let gt = boxes.iter().find(|b| point_in_box(cand.position, b))?;
            let sample = candidate_sample(&scene.cloud, &point_features, cand, &cfg.sampling, derive_seed(seed, i as u64));
            if sample.is_empty() {
                return None;
            }
            let center = cand.position;
            let point_inputs = sample.points().zip(sample.features()).map(|(p, f)| point_input(f, *p, center)).collect();
            let labels = sample.points().map(|p| if point_in_box(*p, gt) { 1.0 } else { 0.0 }).collect();
            Some(ImplicitExample {
                generator_input: GeneratorParams::input(&sample.candidate),
                point_inputs,
                labels,
                raw_count: sample.raw_points.len(),
            })
        })
        .collect();
    Ok(examples)
}

fn conditioned_theta(generator: &GeneratorParams, input: &[f64]) -> Vec<f64> {
    GeneratorParams::layer(generator.feature_width).forward(&generator.params, input).into_iter().map(theta_activation).collect()
}

pub fn example_values(generator: &GeneratorParams, ex: &ImplicitExample) -> Vec<f64> {
    let theta = conditioned_theta(generator, &ex.generator_input);
    let (first, second) = kernel_layers(generator.feature_width);
    ex.point_inputs
        .iter()
        .map(|x| {
            let mut hidden = first.forward(&theta, x);
            relu_in_place(&mut hidden);
            sigmoid(second.forward(&theta, &hidden)[0])
        })
        .collect()
}

/// Mean BCE over one example's points and its gradient in the generator parameters.
pub fn implicit_loss_and_grad(generator: &GeneratorParams, ex: &ImplicitExample) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; generator.params.len()];
    let n = ex.point_inputs.len();
    if n == 0 {
        return (0.0, grad);
    }
    let theta = conditioned_theta(generator, &ex.generator_input);
    let (first, second) = kernel_layers(generator.feature_width);
    let mut d_theta = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (x, &y) in ex.point_inputs.iter().zip(&ex.labels) {
        let mut hidden = first.forward(&theta, x);
        relu_in_place(&mut hidden);
        let p = sigmoid(second.forward(&theta, &hidden)[0]);
        loss += bce(p, y);
        let d_logit = bce_grad(p, y) * p * (1.0 - p) / n as f64;
        let mut d_hidden = second.backward(&theta, &hidden, &[d_logit], &mut d_theta);
        relu_backward(&hidden, &mut d_hidden);
        first.backward(&theta, x, &d_hidden, &mut d_theta);
    }
    let d_pre: Vec<f64> = d_theta.iter().zip(&theta).map(|(g, t)| g * theta_activation_grad(*t)).collect();
    GeneratorParams::layer(generator.feature_width).backward(&generator.params, &ex.generator_input, &d_pre, &mut grad);
    (loss / n as f64, grad)
}

/// Mean of [`implicit_loss_and_grad`] over `batch`, reduced in index order.
pub fn implicit_batch_loss_and_grad(generator: &GeneratorParams, batch: &[&ImplicitExample]) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = batch.par_iter().map(|ex| implicit_loss_and_grad(generator, ex)).collect();
    let mut grad = vec![0.0; generator.params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let k = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    (loss / k, grad)
}

/// Pointwise accuracy at threshold 0.5 and mean per-example BCE.
pub fn evaluate_implicit(generator: &GeneratorParams, examples: &[ImplicitExample]) -> ImplicitEval {
    let stats: Vec<(usize, usize, f64)> = examples
        .par_iter()
        .map(|ex| {
            let values = example_values(generator, ex);
            let correct = values.iter().zip(&ex.labels).filter(|(v, y)| (**v > 0.5) == (**y > 0.5)).count();
            let loss = values.iter().zip(&ex.labels).map(|(v, y)| bce(*v, *y)).sum::<f64>() / values.len().max(1) as f64;
            (correct, values.len(), loss)
        })
        .collect();
    let (correct, points, loss) = stats.iter().fold((0, 0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
    ImplicitEval {
        accuracy: if points == 0 { 0.0 } else { correct as f64 / points as f64 },
        mean_bce: if examples.is_empty() { 0.0 } else { loss / examples.len() as f64 },
        points,
        examples: examples.len(),
    }
}

/// Minibatch SGD on the implicit BCE over oracle-labeled samples of `scenes`.
///
/// The curve has `epochs + 1` rows: row 0 is the initial loss and row `e` the
/// training loss after epoch `e`.
pub fn train_implicit_classifier(scenes: &[Scene], cfg: &ImplicitTrainConfig) -> Result<TrainedClassifier, TrainError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut examples = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        examples.extend(implicit_examples(scene, cfg, derive_seed(cfg.seed, s as u64))?);
    }
    let width = examples.first().map_or(LocalStatistics::default().width, |e| e.generator_input.len() - 3);
    let generator = GeneratorParams::random(width, cfg.init_scale, derive_seed(cfg.seed, u64::MAX));
    train_implicit_on_examples(generator, &examples, cfg)
}

/// SGD from a given starting point; zero epochs leave `generator` unchanged.
pub fn train_implicit_on_examples(
    mut generator: GeneratorParams,
    examples: &[ImplicitExample],
    cfg: &ImplicitTrainConfig,
) -> Result<TrainedClassifier, TrainError> {
    cfg.validate()?;
    let record = |epoch: usize, g: &GeneratorParams| {
        let loss = evaluate_implicit(g, examples).mean_bce;
        CurvePoint { epoch, terms: LossTerms { implicit: loss, ..Default::default() }, total: loss }
    };
    let mut curve = vec![record(0, &generator)];
    if examples.is_empty() {
        return Ok(TrainedClassifier { generator, curve });
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ImplicitExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = implicit_batch_loss_and_grad(&generator, &batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::DivergenceDetected { epoch });
            }
            sgd_step(&mut generator.params, &grad, cfg.lr);
        }
        let point = record(epoch, &generator);
        if !point.total.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        log::debug!("implicit epoch {epoch}: bce {:.5}", point.total);
        curve.push(point);
    }
    Ok(TrainedClassifier { generator, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::grad_check;

    fn toy_example(width: usize) -> ImplicitExample {
        let mut rng = rng_from_seed(3);
        use rand::Rng;
        let generator_input = (0..width + 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let point_inputs = (0..12).map(|_| (0..width + 3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        ImplicitExample { generator_input, point_inputs, labels, raw_count: 6 }
    }

    #[test]
    fn gradient_matches_differences() {
        let width = 4;
        let ex = toy_example(width);
        let g = GeneratorParams::random(width, 1.0, 11);
        let f = |p: &[f64]| implicit_loss_and_grad(&GeneratorParams { feature_width: width, params: p.to_vec() }, &ex);
        let r = grad_check(f, &g.params, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_epochs_leave_params() {
        let width = 4;
        let ex = vec![toy_example(width)];
        let g = GeneratorParams::random(width, 0.5, 2);
        let cfg = ImplicitTrainConfig { epochs: 0, ..Default::default() };
        let out = train_implicit_on_examples(g.clone(), &ex, &cfg).unwrap();
        assert_eq!(out.generator, g);
        assert_eq!(out.curve.len(), 1);
    }

    #[test]
    fn loss_decreases_on_toy() {
        let width = 4;
        let ex = vec![toy_example(width)];
        let g = GeneratorParams::random(width, 0.5, 2);
        let cfg = ImplicitTrainConfig { epochs: 40, lr: 0.02, batch_size: 1, ..Default::default() };
        let out = train_implicit_on_examples(g, &ex, &cfg).unwrap();
        assert!(out.curve.last().unwrap().total < out.curve[0].total);
    }
}
