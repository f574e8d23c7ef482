use super::IoError;
use crate::geometry::{Point3, PointCloud};

/// `x, y, z, intensity` as little-endian `f32`.
pub const BYTES_PER_POINT: usize = 16;

pub fn read_pointcloud_bin(bytes: &[u8]) -> Result<PointCloud, IoError> {
    if bytes.len() % BYTES_PER_POINT != 0 {
        return Err(IoError::TruncatedFile { len: bytes.len() });
    }
    let n = bytes.len() / BYTES_PER_POINT;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(BYTES_PER_POINT) {
        let v: Vec<f64> = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        points.push(Point3::new(v[0], v[1], v[2]));
        intensity.push(v[3]);
    }
    Ok(PointCloud { points, intensity })
}

/// Values are narrowed to `f32`; clouds whose values are already `f32`-exact round-trip bit for bit.
pub fn write_pointcloud_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * BYTES_PER_POINT);
    for (p, r) in cloud.points.iter().zip(&cloud.intensity) {
        for v in [p.x, p.y, p.z, *r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, -2.5, 0.25), Point3::new(3.0, 4.0, -1.0)], vec![0.5, 1.0]).unwrap();
        let bytes = write_pointcloud_bin(&cloud);
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(read_pointcloud_bin(&bytes).unwrap(), cloud);
    }

    #[test]
    fn truncated() {
        assert_eq!(read_pointcloud_bin(&[0u8; 17]), Err(IoError::TruncatedFile { len: 17 }));
        assert!(read_pointcloud_bin(&[]).unwrap().is_empty());
    }
}
