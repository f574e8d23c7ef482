//! The run configuration: one TOML document merged over the built-in defaults,
//! then `--set key=value` overrides, then dedicated flags.

use std::fmt;
use std::path::Path;

use boxfield::eval::{ApMode, DEFAULT_MASK_FRACTIONS, DEFAULT_SHIFTS, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_NMS_IOU};
use boxfield::implicit::SamplingConfig;
use boxfield::pipeline::PipelineConfig;
use boxfield::scenegen::SceneConfig;
use boxfield::train::{HeadTrainConfig, ImplicitTrainConfig, ShiftTrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Detections below this confidence are dropped before AP.
    pub conf_t: f64,
    /// BEV IoU above which the lower-confidence detection is suppressed.
    pub nms_iou: f64,
    /// Match threshold for recall and AP.
    pub iou_t: f64,
    /// Proposals per scene considered by recall.
    pub top_k: usize,
    pub ap_modes: Vec<ApMode>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_t: DEFAULT_CONFIDENCE_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            iou_t: 0.7,
            top_k: 100,
            ap_modes: vec![ApMode::R11, ApMode::R40],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub implicit: ImplicitTrainConfig,
    pub shift: ShiftTrainConfig,
    pub head: HeadTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSettings {
    pub parametric_trials: usize,
    pub mask_trials: usize,
    /// Center shift ranges `±(x, y, z)` in meters.
    pub shifts: [f64; 3],
    /// Fractions of inside points removed.
    pub fractions: Vec<f64>,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self { parametric_trials: 100, mask_trials: 5, shifts: DEFAULT_SHIFTS, fractions: DEFAULT_MASK_FRACTIONS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub h_values: Vec<usize>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self { h_values: vec![3, 5, 7, 9] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// The only user-settable seed; [`RunConfig::apply_seed`] copies it everywhere.
    pub seed: u64,
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalSettings,
    pub train: TrainSettings,
    pub robustness: RobustnessSettings,
    pub ablation: AblationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            scene: SceneConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalSettings::default(),
            train: TrainSettings::default(),
            robustness: RobustnessSettings::default(),
            ablation: AblationSettings::default(),
        };
        cfg.apply_seed();
        cfg
    }
}

/// Recursively overlays `user` on `base`. Keys must already exist in `base`;
/// integers are widened where `base` holds floats.
/// Section-level `seed` keys are collected into `section_seeds` instead of merged.
fn merge(base: &mut toml::Table, user: toml::Table, path: &str, section_seeds: &mut Vec<(String, toml::Value)>) -> Result<(), ConfigError> {
    for (key, value) in user {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        if !path.is_empty() && key == "seed" && base.contains_key("seed") {
            section_seeds.push((full, value));
            continue;
        }
        let Some(slot) = base.get_mut(&key) else {
            return bad(format!("unknown key `{full}`"));
        };
        match (slot, value) {
            (toml::Value::Table(b), toml::Value::Table(u)) => merge(b, u, &full, section_seeds)?,
            (toml::Value::Table(_), _) => return bad(format!("`{full}` must be a table")),
            (slot @ toml::Value::Float(_), toml::Value::Integer(i)) => *slot = toml::Value::Float(i as f64),
            (toml::Value::Array(b), toml::Value::Array(u)) => {
                let floats = b.first().is_some_and(|v| v.is_float());
                *b = u
                    .into_iter()
                    .map(|v| match v {
                        toml::Value::Integer(i) if floats => toml::Value::Float(i as f64),
                        other => other,
                    })
                    .collect();
            }
            (slot, v) => *slot = v,
        }
    }
    Ok(())
}

/// `a.b.c=value` as a nested table. Values parse as TOML, falling back to a bare string.
pub fn parse_assignment(s: &str) -> Result<toml::Table, ConfigError> {
    let Some((key, raw)) = s.split_once('=') else {
        return bad(format!("override `{s}` is not of the form key=value"));
    };
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|p| p.trim().is_empty()) {
        return bad(format!("override `{s}` has an empty key"));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').map(str::trim).collect();
    let last = parts.pop().expect("nonempty key");
    let mut table = toml::Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = toml::Table::new();
        outer.insert(p.to_string(), toml::Value::Table(table));
        table = outer;
    }
    Ok(table)
}

impl RunConfig {
    /// Defaults, then the optional file, then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut base = match toml::Value::try_from(Self::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => return bad("default configuration is not representable as TOML"),
        };
        let mut section_seeds = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            let user: toml::Table = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            merge(&mut base, user, "", &mut section_seeds).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        }
        for o in overrides {
            merge(&mut base, parse_assignment(o)?, "", &mut section_seeds).map_err(|e| ConfigError(format!("--set {o}: {e}")))?;
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(base))
            .map_err(|e| ConfigError(format!("{}: {}", e.path(), e.inner())))?;
        for (key, v) in &section_seeds {
            if v.as_integer() != i64::try_from(cfg.seed).ok() {
                log::warn!("ignoring {key} = {v}; every section uses the top-level seed {}", cfg.seed);
            }
        }
        cfg.apply_seed();
        Ok(cfg)
    }

    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.scene.seed = s;
        self.pipeline.seed = s;
        self.train.implicit.seed = s;
        self.train.shift.seed = s;
        self.train.head.seed = s;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every section against the preconditions of the module that consumes it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        self.scene.validate().map_err(|e| ConfigError(format!("scene: {e}")))?;
        let p = &self.pipeline;
        if !(p.cell_size > 0.0 && p.cell_size.is_finite()) {
            return bad(format!("pipeline.cell_size must be positive, got {}", p.cell_size));
        }
        if p.top_k == 0 {
            return bad("pipeline.top_k must be >= 1");
        }
        if !(p.aggregation_radius > 0.0 && p.aggregation_radius.is_finite()) {
            return bad(format!("pipeline.aggregation_radius must be positive, got {}", p.aggregation_radius));
        }
        validate_sampling(&p.sampling, "pipeline.sampling")?;
        p.boundary.validate().map_err(|e| ConfigError(format!("pipeline.boundary: {e}")))?;

        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.conf_t) {
            return bad(format!("eval.conf_t must be in [0, 1], got {}", e.conf_t));
        }
        for (name, v) in [("nms_iou", e.nms_iou), ("iou_t", e.iou_t)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("eval.{name} must be in (0, 1], got {v}"));
            }
        }
        if e.top_k == 0 {
            return bad("eval.top_k must be >= 1");
        }
        if e.ap_modes.is_empty() {
            return bad("eval.ap_modes must name at least one mode");
        }

        let t = &self.train;
        t.implicit.validate().map_err(|e| ConfigError(format!("train.implicit: {e}")))?;
        validate_sampling(&t.implicit.sampling, "train.implicit.sampling")?;
        let s = &t.shift;
        if !(s.lr > 0.0 && s.lr.is_finite()) || s.batch_size == 0 || s.hidden == 0 || !(s.cell_size > 0.0) {
            return bad("train.shift needs lr > 0, batch_size >= 1, hidden >= 1, cell_size > 0");
        }
        s.weights.validate().map_err(|e| ConfigError(format!("train.shift.weights: {e}")))?;
        let h = &t.head;
        if !(h.lr > 0.0 && h.lr.is_finite()) || h.batch_size == 0 || h.width == 0 || !(h.cell_size > 0.0) || !(h.radius > 0.0) {
            return bad("train.head needs lr > 0, batch_size >= 1, width >= 1, cell_size > 0, radius > 0");
        }
        if !(h.jitter >= 0.0 && h.jitter.is_finite()) {
            return bad("train.head.jitter must be finite and >= 0");
        }
        validate_sampling(&h.sampling, "train.head.sampling")?;
        h.boundary.validate().map_err(|e| ConfigError(format!("train.head.boundary: {e}")))?;
        h.weights.validate().map_err(|e| ConfigError(format!("train.head.weights: {e}")))?;

        let r = &self.robustness;
        if r.parametric_trials == 0 || r.mask_trials == 0 {
            return bad("robustness trial counts must be >= 1");
        }
        if r.shifts.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad(format!("robustness.shifts must be finite and >= 0, got {:?}", r.shifts));
        }
        if let Some(f) = r.fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return bad(format!("robustness.fractions entries must be in [0, 1), got {f}"));
        }

        if self.ablation.h_values.is_empty() || self.ablation.h_values.contains(&0) {
            return bad("ablation.h_values must be nonempty and every entry >= 1");
        }
        Ok(())
    }
}

fn validate_sampling(s: &SamplingConfig, name: &str) -> Result<(), ConfigError> {
    if !(s.radius > 0.0 && s.radius.is_finite()) {
        return bad(format!("{name}.radius must be positive, got {}", s.radius));
    }
    if s.max_points == 0 || s.grid_size == 0 || s.knn_k == 0 {
        return bad(format!("{name}: max_points, grid_size and knn_k must be >= 1"));
    }
    if s.interval.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return bad(format!("{name}.interval entries must be positive, got {:?}", s.interval));
    }
    Ok(())
}
