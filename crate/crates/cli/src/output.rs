use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use boxfield::io::{read_scene_json, write_scene_json};
use boxfield::scenegen::Scene;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::Failure;

pub const OUTPUT_ROOT_ENV: &str = "BOXFIELD_OUTPUT_ROOT";
pub const CONFIG_ECHO: &str = "config.toml";

pub fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_VERSION"), env!("BOXFIELD_GIT_DESCRIBE"))
}

/// Creates the output directory and writes the effective configuration into it.
pub fn prepare(out: Option<&Path>, command: &str, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(std::env::var_os(OUTPUT_ROOT_ENV).unwrap_or_else(|| "runs".into())).join(command),
    };
    let echo = format!(
        "# boxfield {}\n# command: {}\n\n{}",
        build_id(),
        std::env::args().collect::<Vec<_>>().join(" "),
        cfg.to_toml()
    );
    fs::create_dir_all(&dir)
        .and_then(|_| fs::write(dir.join(CONFIG_ECHO), echo))
        .with_context(|| format!("writing {}", dir.display()))?;
    Ok(dir)
}

pub fn scene_file(i: usize) -> String {
    format!("scene_{i:04}.json")
}

pub fn detections_file(i: usize) -> String {
    format!("detections_{i:04}.json")
}

/// Scenes of a directory in file-name order.
pub fn read_scenes(dir: &Path) -> anyhow::Result<Vec<Scene>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("scene_") && n.ends_with(".json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no scene_*.json files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            read_scene_json(&text).with_context(|| format!("{}", p.display()))
        })
        .collect()
}

pub fn write_scene(dir: &Path, i: usize, scene: &Scene) -> anyhow::Result<()> {
    let path = dir.join(scene_file(i));
    fs::write(&path, write_scene_json(scene)).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn create(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}
