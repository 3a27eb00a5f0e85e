//! Pose database over reference views: thumbnail global descriptors,
//! midpoint augmentation with rendered views, top-k cosine retrieval,
//! and a binary database file format.
//!
//! The descriptor is a 16x16 bilinear thumbnail, per-channel mean
//! subtracted and L2-normalized (768 values). It is deliberately simple:
//! the interface (image -> unit vector) matches what a learned extractor
//! would provide, so one can be slotted in without touching the database
//! or retrieval code.
//!
//! File format (`save`/`load`, all little-endian): header `b"SLDB"`,
//! version u32, entry count u32, descriptor dim u32; then per entry the
//! descriptor as f32s, a u32-length-prefixed pose JSON record, a source
//! byte (0 real, 1 synthetic), and the image id as u32. Descriptors are
//! renormalized on load to absorb the f32 quantization.

use crate::geometry::{CameraPose, Intrinsics};
use crate::image::Image;
use crate::render::{render, RenderConfig};
use crate::scene::GaussianScene;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Thumbnail side length; the descriptor has `THUMB * THUMB * 3` values.
pub const THUMB_SIZE: usize = 16;
pub const DESCRIPTOR_DIM: usize = THUMB_SIZE * THUMB_SIZE * 3;

const FILE_MAGIC: &[u8; 4] = b"SLDB";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("database needs {needed} reference views, got {got}")]
    InsufficientViews { needed: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed database file: {0}")]
    Format(String),
}

/// Whether a database view is a captured reference image or one rendered
/// from the scene during augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    Real,
    Synthetic,
}

/// L2-normalized thumbnail descriptor, tagged with the source of the view
/// it was computed from so retrieval can partition by domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    values: Vec<f64>,
    pub source: ViewSource,
}

impl GlobalDescriptor {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cosine similarity; equals the dot product because both sides are
    /// unit length.
    pub fn similarity(&self, other: &GlobalDescriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn from_raw(mut values: Vec<f64>, source: ViewSource) -> GlobalDescriptor {
        debug_assert_eq!(values.len(), DESCRIPTOR_DIM);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Constant image: zero after mean subtraction. Canonical unit
            // vector keeps the norm invariant and stays deterministic.
            values.fill(0.0);
            values[0] = 1.0;
        } else {
            for v in &mut values {
                *v /= norm;
            }
        }
        GlobalDescriptor { values, source }
    }
}

/// Thumbnail descriptor of an image: bilinear downsample to 16x16,
/// per-channel mean subtraction, flatten, L2-normalize. Tagged
/// [`ViewSource::Real`]; database augmentation retags its own renders.
pub fn compute_descriptor(image: &Image) -> GlobalDescriptor {
    let thumb = image.resize_bilinear(THUMB_SIZE, THUMB_SIZE);
    let mut mean = [0.0f64; 3];
    for v in 0..THUMB_SIZE {
        for u in 0..THUMB_SIZE {
            let px = thumb.pixel(u, v);
            for c in 0..3 {
                mean[c] += px[c];
            }
        }
    }
    let n = (THUMB_SIZE * THUMB_SIZE) as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut values = Vec::with_capacity(DESCRIPTOR_DIM);
    for v in 0..THUMB_SIZE {
        for u in 0..THUMB_SIZE {
            let px = thumb.pixel(u, v);
            for c in 0..3 {
                values.push(px[c] - mean[c]);
            }
        }
    }
    GlobalDescriptor::from_raw(values, ViewSource::Real)
}

#[derive(Debug, Clone)]
pub struct DatabaseEntry {
    pub descriptor: GlobalDescriptor,
    pub pose: CameraPose,
    pub image_id: u32,
}

impl DatabaseEntry {
    pub fn source(&self) -> ViewSource {
        self.descriptor.source
    }
}

/// Immutable descriptor/pose database. Lookup is a linear scan; at the
/// intended scale (hundreds of entries) an index would cost more than it
/// saves.
#[derive(Debug, Clone)]
pub struct PoseDatabase {
    entries: Vec<DatabaseEntry>,
    scene_ref: String,
}

impl PoseDatabase {
    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Identifier of the scene the database was built against. Not part
    /// of the persisted format; [`PoseDatabase::load`] fills it from the
    /// file stem.
    pub fn scene_ref(&self) -> &str {
        &self.scene_ref
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(FILE_MAGIC);
        buf.extend_from_slice(&FILE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(DESCRIPTOR_DIM as u32).to_le_bytes());
        for entry in &self.entries {
            for v in entry.descriptor.values() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            let pose_json = serde_json::to_vec(&entry.pose)
                .map_err(|e| RetrievalError::Format(format!("pose encode: {e}")))?;
            buf.extend_from_slice(&(pose_json.len() as u32).to_le_bytes());
            buf.extend_from_slice(&pose_json);
            buf.push(match entry.source() {
                ViewSource::Real => 0,
                ViewSource::Synthetic => 1,
            });
            buf.extend_from_slice(&entry.image_id.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PoseDatabase, RetrievalError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], RetrievalError> {
            let end = *cursor + n;
            if end > bytes.len() {
                return Err(RetrievalError::Format("truncated file".into()));
            }
            let slice = &bytes[*cursor..end];
            *cursor = end;
            Ok(slice)
        };
        let read_u32 = |cursor: &mut usize| -> Result<u32, RetrievalError> {
            let b = take(cursor, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };

        if take(&mut cursor, 4)? != FILE_MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let version = read_u32(&mut cursor)?;
        if version != FILE_VERSION {
            return Err(RetrievalError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u32(&mut cursor)? as usize;
        let dim = read_u32(&mut cursor)? as usize;
        if dim != DESCRIPTOR_DIM {
            return Err(RetrievalError::Format(format!(
                "descriptor dim {dim}, expected {DESCRIPTOR_DIM}"
            )));
        }

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let desc_bytes = take(&mut cursor, dim * 4)?;
            let values: Vec<f64> = desc_bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let json_len = read_u32(&mut cursor)? as usize;
            let pose: CameraPose = serde_json::from_slice(take(&mut cursor, json_len)?)
                .map_err(|e| RetrievalError::Format(format!("pose decode: {e}")))?;
            let source = match take(&mut cursor, 1)?[0] {
                0 => ViewSource::Real,
                1 => ViewSource::Synthetic,
                b => return Err(RetrievalError::Format(format!("bad source byte {b}"))),
            };
            let image_id = read_u32(&mut cursor)?;
            entries.push(DatabaseEntry {
                descriptor: GlobalDescriptor::from_raw(values, source),
                pose,
                image_id,
            });
        }
        if cursor != bytes.len() {
            return Err(RetrievalError::Format("trailing bytes".into()));
        }
        let scene_ref = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(PoseDatabase { entries, scene_ref })
    }
}

/// Rotation slerp at 0.5 plus the midpoint of the camera centers.
pub fn midpoint_pose(a: &CameraPose, b: &CameraPose) -> CameraPose {
    let rotation = a.rotation.slerp(&b.rotation, 0.5);
    let center = 0.5 * (a.camera_center() + b.camera_center());
    CameraPose::from_rotation_center(rotation, &center)
}

/// Builds the database from reference views, optionally augmented with a
/// rendered view at the pose midpoint of every consecutive pair (N views
/// become N + (N-1) entries). Real views keep their input order as ids
/// `0..N`; synthetic entries continue at `N`. A midpoint render the scene
/// does not cover at all is skipped with a warning rather than poisoning
/// retrieval with a blank image.
pub fn build_database(
    reference_views: &[(Image, CameraPose)],
    scene: &GaussianScene,
    k: &Intrinsics,
    render_cfg: &RenderConfig,
    augment: bool,
    scene_ref: &str,
) -> Result<PoseDatabase, RetrievalError> {
    let needed = if augment { 2 } else { 1 };
    if reference_views.len() < needed {
        return Err(RetrievalError::InsufficientViews {
            needed,
            got: reference_views.len(),
        });
    }

    let mut entries: Vec<DatabaseEntry> = reference_views
        .iter()
        .enumerate()
        .map(|(i, (image, pose))| DatabaseEntry {
            descriptor: compute_descriptor(image),
            pose: *pose,
            image_id: i as u32,
        })
        .collect();

    if augment {
        let n = reference_views.len();
        let synthetic: Vec<Option<DatabaseEntry>> = (0..n - 1)
            .into_par_iter()
            .map(|i| {
                let pose = midpoint_pose(&reference_views[i].1, &reference_views[i + 1].1);
                let view = render(scene, &pose, k, render_cfg);
                let covered = (0..view.alpha.height)
                    .any(|v| (0..view.alpha.width).any(|u| view.alpha.at(u, v) > 0.0));
                if !covered {
                    log::warn!("midpoint {i}: scene not visible, skipping synthetic entry");
                    return None;
                }
                let mut descriptor = compute_descriptor(&view.rgb);
                descriptor.source = ViewSource::Synthetic;
                Some(DatabaseEntry {
                    descriptor,
                    pose,
                    image_id: (n + i) as u32,
                })
            })
            .collect();
        entries.extend(synthetic.into_iter().flatten());
    }

    Ok(PoseDatabase {
        entries,
        scene_ref: scene_ref.to_string(),
    })
}

/// One retrieval hit.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub entry: &'a DatabaseEntry,
    pub similarity: f64,
}

/// Top-k retrieval results split by view source, so real and synthetic
/// candidates can be processed independently downstream (rendered and
/// captured imagery are not directly comparable in descriptor space).
#[derive(Debug, Clone)]
pub struct PartitionedRetrieval<'a> {
    pub real: Vec<Retrieved<'a>>,
    pub synthetic: Vec<Retrieved<'a>>,
}

fn rank<'a>(
    candidates: impl Iterator<Item = &'a DatabaseEntry>,
    query: &GlobalDescriptor,
    k: usize,
) -> Vec<Retrieved<'a>> {
    let mut scored: Vec<Retrieved<'a>> = candidates
        .map(|entry| Retrieved {
            entry,
            similarity: query.similarity(&entry.descriptor),
        })
        .collect();
    // Descending similarity; equal scores resolve by ascending image id
    // so ranking is deterministic.
    scored.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.entry.image_id.cmp(&b.entry.image_id))
    });
    scored.truncate(k);
    scored
}

/// Top-k entries by cosine similarity over the whole database. Returns
/// fewer than `k` only when the database is smaller than `k`.
pub fn retrieve_topk<'a>(
    db: &'a PoseDatabase,
    query: &GlobalDescriptor,
    k: usize,
) -> Vec<Retrieved<'a>> {
    assert!(k >= 1, "retrieval k must be >= 1");
    rank(db.entries.iter(), query, k)
}

/// Top-k per source partition (up to `k` real plus `k` synthetic hits).
pub fn retrieve_topk_by_source<'a>(
    db: &'a PoseDatabase,
    query: &GlobalDescriptor,
    k: usize,
) -> PartitionedRetrieval<'a> {
    assert!(k >= 1, "retrieval k must be >= 1");
    let by = |source: ViewSource| {
        rank(
            db.entries.iter().filter(move |e| e.source() == source),
            query,
            k,
        )
    };
    PartitionedRetrieval {
        real: by(ViewSource::Real),
        synthetic: by(ViewSource::Synthetic),
    }
}
