//! Splat PLY I/O (binary little-endian, float32 per field).
//!
//! Layout per vertex: `x y z nx ny nz f_dc_0 f_dc_1 f_dc_2 f_rest_*
//! opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3`, quaternion in
//! (w, x, y, z) order. Fields are stored raw (pre-activation); the quaternion
//! is normalized on load. Loading keeps the exact f32 values (f32 -> f64 is
//! lossless), so a load/save round trip is bit-identical on float fields.

use super::{GaussianPrimitive, GaussianScene, SceneError};
use crate::geometry::Rotation;
use nalgebra::Vector3;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

fn rest_len(sh_degree: usize) -> usize {
    3 * ((sh_degree + 1) * (sh_degree + 1) - 1)
}

fn degree_from_rest(rest: usize) -> Option<usize> {
    (0..=3).find(|&d| rest_len(d) == rest)
}

pub fn save_ply(scene: &GaussianScene, path: &Path) -> Result<(), SceneError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let rest = rest_len(scene.sh_degree());

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header.push_str(&format!("property float {name}\n"));
    }
    for i in 0..rest {
        header.push_str(&format!("property float f_rest_{i}\n"));
    }
    for name in [
        "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut row: Vec<f32> = Vec::with_capacity(17 + rest);
    for p in scene.primitives() {
        row.clear();
        row.extend([p.position.x as f32, p.position.y as f32, p.position.z as f32]);
        row.extend([0.0f32; 3]); // normals are unused
        row.extend(p.sh_dc.iter().map(|&v| v as f32));
        row.extend(p.sh_rest.iter().map(|&v| v as f32));
        row.push(p.opacity_logit as f32);
        row.extend([
            p.scale_log.x as f32,
            p.scale_log.y as f32,
            p.scale_log.z as f32,
        ]);
        row.extend(p.quaternion.iter().map(|&v| v as f32));
        for v in &row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<GaussianScene, SceneError> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);

    // Header is ASCII lines up to `end_header`.
    let mut line = String::new();
    let mut read_line = |r: &mut BufReader<std::fs::File>| -> Result<String, SceneError> {
        line.clear();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(SceneError::Format("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut r)? != "ply" {
        return Err(SceneError::Format("missing ply magic".into()));
    }
    let mut format_ok = false;
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    loop {
        let l = read_line(&mut r)?;
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("format") => {
                if l != "format binary_little_endian 1.0" {
                    return Err(SceneError::Format(format!("unsupported format: {l}")));
                }
                format_ok = true;
            }
            Some("comment") => {}
            Some("element") => {
                let kind = parts.next().unwrap_or("");
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| SceneError::Format("bad element line".into()))?;
                if kind == "vertex" {
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if count > 0 {
                        return Err(SceneError::Format(format!(
                            "unsupported element '{kind}' with {count} entries"
                        )));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = parts.next().unwrap_or("");
                let name = parts.next().unwrap_or("");
                if ty != "float" {
                    return Err(SceneError::Format(format!(
                        "property {name} has unsupported type {ty} (only float32 is supported)"
                    )));
                }
                properties.push(name.to_string());
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(SceneError::Format(format!("unexpected header line: {other}")));
            }
            None => {}
        }
    }
    if !format_ok {
        return Err(SceneError::Format("missing format line".into()));
    }
    let vertex_count = vertex_count.ok_or_else(|| SceneError::Format("no vertex element".into()))?;
    if vertex_count == 0 {
        return Err(SceneError::EmptyScene);
    }

    let col = |name: &str| -> Result<usize, SceneError> {
        properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| SceneError::Format(format!("missing property {name}")))
    };
    let xyz = [col("x")?, col("y")?, col("z")?];
    for name in ["nx", "ny", "nz"] {
        col(name)?;
    }
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let rest_count = properties
        .iter()
        .filter(|p| p.starts_with("f_rest_"))
        .count();
    let sh_degree = degree_from_rest(rest_count).ok_or_else(|| {
        SceneError::Format(format!(
            "f_rest count {rest_count} does not match any SH degree 0-3"
        ))
    })?;
    let mut rest_cols = Vec::with_capacity(rest_count);
    for i in 0..rest_count {
        rest_cols.push(col(&format!("f_rest_{i}"))?);
    }
    let opacity = col("opacity")?;
    let scales = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rots = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];

    let stride = properties.len();
    let mut raw = vec![0u8; vertex_count * stride * 4];
    r.read_exact(&mut raw)
        .map_err(|_| SceneError::Format("vertex data truncated".into()))?;

    let field = |vertex: usize, column: usize| -> f32 {
        let off = (vertex * stride + column) * 4;
        f32::from_le_bytes(raw[off..off + 4].try_into().unwrap())
    };

    let mut prims = Vec::with_capacity(vertex_count);
    for i in 0..vertex_count {
        let take = |columnn: usize, what: &str| -> Result<f64, SceneError> {
            let v = field(i, columnn);
            if !v.is_finite() {
                return Err(SceneError::Data {
                    index: i,
                    reason: format!("non-finite {what}"),
                });
            }
            Ok(v as f64)
        };
        let position = Vector3::new(
            take(xyz[0], "x")?,
            take(xyz[1], "y")?,
            take(xyz[2], "z")?,
        );
        let sh_dc = [
            take(dc[0], "f_dc_0")?,
            take(dc[1], "f_dc_1")?,
            take(dc[2], "f_dc_2")?,
        ];
        let mut sh_rest = Vec::with_capacity(rest_count);
        for (j, &c) in rest_cols.iter().enumerate() {
            sh_rest.push(take(c, &format!("f_rest_{j}"))?);
        }
        let opacity_logit = take(opacity, "opacity")?;
        let scale_log = Vector3::new(
            take(scales[0], "scale_0")?,
            take(scales[1], "scale_1")?,
            take(scales[2], "scale_2")?,
        );
        let quaternion = [
            take(rots[0], "rot_0")?,
            take(rots[1], "rot_1")?,
            take(rots[2], "rot_2")?,
            take(rots[3], "rot_3")?,
        ];
        // Kept raw for lossless re-save; normalization happens in
        // GaussianPrimitive::rotation(). Reject unnormalizable ones now.
        Rotation::from_wxyz(quaternion[0], quaternion[1], quaternion[2], quaternion[3]).map_err(
            |_| SceneError::Data {
                index: i,
                reason: "degenerate rotation quaternion".into(),
            },
        )?;
        prims.push(GaussianPrimitive {
            position,
            scale_log,
            quaternion,
            opacity_logit,
            sh_dc,
            sh_rest,
        });
    }
    GaussianScene::new(prims, sh_degree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synthesize_scene, SceneRecipe};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("splatloc_ply_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let (scene, _) = synthesize_scene(&SceneRecipe {
            primitive_count: 120,
            ..SceneRecipe::default()
        })
        .unwrap();
        let p1 = tmp("rt1.ply");
        let p2 = tmp("rt2.ply");
        save_ply(&scene, &p1).unwrap();
        let loaded = load_ply(&p1).unwrap();
        assert_eq!(loaded.len(), scene.len());
        assert_eq!(loaded.sh_degree(), 0);
        save_ply(&loaded, &p2).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2, "re-saved bytes differ");
    }

    #[test]
    fn quaternions_are_normalized_on_load() {
        let (scene, _) = synthesize_scene(&SceneRecipe {
            primitive_count: 10,
            ..SceneRecipe::default()
        })
        .unwrap();
        let path = tmp("unnorm.ply");
        save_ply(&scene, &path).unwrap();
        // Scale the first vertex's quaternion by 3 in the raw bytes.
        let mut bytes = std::fs::read(&path).unwrap();
        let header_end = bytes
            .windows(11)
            .position(|w| w == b"end_header\n")
            .unwrap()
            + 11;
        let stride = 17 * 4;
        for c in 13..17 {
            let off = header_end + c * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            bytes[off..off + 4].copy_from_slice(&(v * 3.0).to_le_bytes());
        }
        assert!(bytes.len() >= header_end + stride);
        std::fs::write(&path, &bytes).unwrap();
        let loaded = load_ply(&path).unwrap();
        let [w, x, y, z] = loaded.primitives()[0].rotation().wxyz();
        assert!(((w * w + x * x + y * y + z * z).sqrt() - 1.0).abs() < 1e-9);
        assert!(
            loaded.primitives()[0]
                .rotation()
                .angle_to(&scene.primitives()[0].rotation())
                < 1e-6
        );
    }

    #[test]
    fn missing_property_is_named_in_error() {
        let (scene, _) = synthesize_scene(&SceneRecipe {
            primitive_count: 5,
            ..SceneRecipe::default()
        })
        .unwrap();
        let path = tmp("missing.ply");
        save_ply(&scene, &path).unwrap();
        let text = std::fs::read(&path).unwrap();
        // Rename the opacity property; payload size is unchanged.
        let patched = String::from_utf8_lossy(&text[..400])
            .replace("property float opacity", "property float opacityx");
        let mut bytes = patched.into_bytes();
        bytes.extend_from_slice(&text[400..]);
        std::fs::write(&path, &bytes).unwrap();
        match load_ply(&path) {
            Err(SceneError::Format(msg)) => assert!(msg.contains("opacity"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn nan_field_reports_vertex_index() {
        let (scene, _) = synthesize_scene(&SceneRecipe {
            primitive_count: 8,
            ..SceneRecipe::default()
        })
        .unwrap();
        let path = tmp("nan.ply");
        save_ply(&scene, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let header_end = bytes
            .windows(11)
            .position(|w| w == b"end_header\n")
            .unwrap()
            + 11;
        // Vertex 3, column 0 (x).
        let off = header_end + 3 * 17 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_ply(&path) {
            Err(SceneError::Data { index, .. }) => assert_eq!(index, 3),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let (scene, _) = synthesize_scene(&SceneRecipe {
            primitive_count: 8,
            ..SceneRecipe::default()
        })
        .unwrap();
        let path = tmp("trunc.ply");
        save_ply(&scene, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_ply(&path), Err(SceneError::Format(_))));
    }
}
