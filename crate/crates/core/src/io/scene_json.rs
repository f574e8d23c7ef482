use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{Dims, OrientedBox3, Point3, PointCloud};
use crate::scenegen::{LabeledBox, Scene, SceneConfig};

pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    version: u32,
    config: SceneConfig,
    boxes: Vec<BoxDoc>,
    /// `[x, y, z, intensity]`
    points: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDoc {
    center: [f64; 3],
    /// `[l, w, h]`
    dims: [f64; 3],
    yaw: f64,
    label: String,
}

/// Pretty-printed document; floats use shortest round-trip formatting.
pub fn write_scene_json(scene: &Scene) -> String {
    let doc = SceneDoc {
        version: SCENE_VERSION,
        config: scene.config.clone(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| BoxDoc {
                center: b.bbox.center.to_array(),
                dims: [b.bbox.dims.l, b.bbox.dims.w, b.bbox.dims.h],
                yaw: b.bbox.yaw,
                label: b.label.clone(),
            })
            .collect(),
        points: scene.cloud.points.iter().zip(&scene.cloud.intensity).map(|(p, r)| [p.x, p.y, p.z, *r]).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("scene documents always serialize")
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> IoError {
    IoError::Schema { path: path.into(), reason: reason.into() }
}

/// Missing fields are reported at the field's own path (`boxes[0].yaw`), not its parent.
fn path_error(err: serde_path_to_error::Error<serde_json::Error>) -> IoError {
    let mut path = err.path().to_string();
    let msg = err.inner().to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
    }
    let reason = msg.split(" at line ").next().unwrap_or(&msg).to_string();
    schema(if path.is_empty() { ".".to_string() } else { path }, reason)
}

pub fn read_scene_json(text: &str) -> Result<Scene, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: SceneDoc = serde_path_to_error::deserialize(de).map_err(path_error)?;
    if doc.version != SCENE_VERSION {
        return Err(schema("version", format!("unsupported version {} (expected {SCENE_VERSION})", doc.version)));
    }
    doc.config.validate().map_err(|e| schema("config", e.to_string()))?;
    let mut boxes = Vec::with_capacity(doc.boxes.len());
    for (i, b) in doc.boxes.into_iter().enumerate() {
        let bbox = OrientedBox3 { center: Point3::from(b.center), dims: Dims::new(b.dims[0], b.dims[1], b.dims[2]), yaw: b.yaw };
        if let Err(e) = bbox.validate() {
            let field = if !bbox.center.is_finite() {
                "center"
            } else if !(b.yaw.is_finite() && (0.0..std::f64::consts::TAU).contains(&b.yaw)) {
                "yaw"
            } else {
                "dims"
            };
            return Err(schema(format!("boxes[{i}].{field}"), e.to_string()));
        }
        boxes.push(LabeledBox { bbox, label: b.label });
    }
    let mut points = Vec::with_capacity(doc.points.len());
    let mut intensity = Vec::with_capacity(doc.points.len());
    for (i, p) in doc.points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(schema(format!("points[{i}]"), "non-finite coordinate"));
        }
        points.push(Point3::new(p[0], p[1], p[2]));
        intensity.push(p[3]);
    }
    Ok(Scene { boxes, cloud: PointCloud { points, intensity }, config: doc.config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::generate_scene;

    #[test]
    fn empty_scene_round_trips() {
        let scene = generate_scene(&SceneConfig { object_count: 0, clutter_fraction: 0.0, ..Default::default() }).unwrap();
        assert!(scene.cloud.is_empty());
        assert_eq!(read_scene_json(&write_scene_json(&scene)).unwrap(), scene);
    }

    #[test]
    fn generated_scene_round_trips() {
        let scene = generate_scene(&SceneConfig { seed: 12, ..Default::default() }).unwrap();
        let back = read_scene_json(&write_scene_json(&scene)).unwrap();
        assert_eq!(back, scene);
        for (a, b) in back.cloud.points.iter().zip(&scene.cloud.points) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
        }
    }

    #[test]
    fn missing_yaw_path() {
        let scene = generate_scene(&SceneConfig { seed: 1, object_count: 2, ..Default::default() }).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&write_scene_json(&scene)).unwrap();
        v["boxes"][1].as_object_mut().unwrap().remove("yaw");
        match read_scene_json(&v.to_string()) {
            Err(IoError::Schema { path, .. }) => assert_eq!(path, "boxes[1].yaw"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_types_and_versions() {
        let scene = generate_scene(&SceneConfig { seed: 1, object_count: 1, ..Default::default() }).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&write_scene_json(&scene)).unwrap();
        v["boxes"][0]["dims"][2] = serde_json::json!("tall");
        match read_scene_json(&v.to_string()) {
            Err(IoError::Schema { path, .. }) => assert_eq!(path, "boxes[0].dims[2]"),
            other => panic!("{other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(&write_scene_json(&scene)).unwrap();
        v["version"] = serde_json::json!(2);
        assert!(matches!(read_scene_json(&v.to_string()), Err(IoError::Schema { path, .. }) if path == "version"));
        let mut v: serde_json::Value = serde_json::from_str(&write_scene_json(&scene)).unwrap();
        v["boxes"][0]["dims"][0] = serde_json::json!(-1.0);
        assert!(matches!(read_scene_json(&v.to_string()), Err(IoError::Schema { path, .. }) if path == "boxes[0].dims"));
        assert!(matches!(read_scene_json("{"), Err(IoError::Schema { .. })));
        assert!(matches!(read_scene_json("[]"), Err(IoError::Schema { .. })));
    }
}
