//! JSON annotation files: camera description plus per-frame face boxes,
//! subject masks and seed line segments.
//!
//! ```json
//! {
//!   "camera": { "width": 1024, "height": 768, "dfov_deg": 100.0,
//!               "per_frame": [ { "index": 5, "focal_px": 700.0 } ] },
//!   "frames": [
//!     { "index": 0,
//!       "faces": [ { "track_id": 1, "bbox": [100, 80, 60, 70], "mask": "masks/0000.png" } ],
//!       "lines": [ { "track_id": 3, "p0": [10, 300], "p1": [200, 310] } ] }
//!   ]
//! }
//! ```
//!
//! Mask paths are relative to the annotation file. A face without a mask is
//! treated as covering its whole (expanded) box.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::scene::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationsDoc {
    pub camera: CameraDoc,
    pub frames: Vec<FrameDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDoc {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfov_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_frame: Vec<FrameCameraDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameCameraDoc {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfov_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub index: usize,
    #[serde(default)]
    pub faces: Vec<FaceDoc>,
    #[serde(default)]
    pub lines: Vec<LineDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceDoc {
    pub track_id: u64,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub track_id: u64,
    pub p0: [f64; 2],
    pub p1: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub track_id: u64,
    pub bbox: BBox,
    /// Resolved mask path, if any.
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSeed {
    pub track_id: u64,
    pub p0: Point2<f64>,
    pub p1: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAnnotations {
    pub faces: Vec<FaceRecord>,
    pub lines: Vec<LineSeed>,
}

/// Validated annotations with one set of intrinsics per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotations {
    pub intrinsics: Vec<CameraIntrinsics>,
    pub frames: Vec<FrameAnnotations>,
}

impl VideoAnnotations {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Each line track's first appearance; later records of the same id are
    /// ignored because endpoints are tracked from the seed.
    pub fn line_seeds(&self) -> Vec<(usize, LineSeed)> {
        let mut seen = HashSet::new();
        let mut seeds = Vec::new();
        for (n, frame) in self.frames.iter().enumerate() {
            for line in &frame.lines {
                if seen.insert(line.track_id) {
                    seeds.push((n, line.clone()));
                }
            }
        }
        seeds
    }
}

fn focal_of(width: u32, height: u32, focal_px: Option<f64>, dfov_deg: Option<f64>) -> std::result::Result<CameraIntrinsics, String> {
    match (focal_px, dfov_deg) {
        (Some(f), None) => CameraIntrinsics::new(width, height, f).map_err(|e| e.to_string()),
        (None, Some(d)) => CameraIntrinsics::from_dfov(width, height, d).map_err(|e| e.to_string()),
        (Some(_), Some(_)) => Err("give either focal_px or dfov_deg, not both".into()),
        (None, None) => Err("camera needs focal_px or dfov_deg".into()),
    }
}

impl AnnotationsDoc {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Annotations(e.to_string()))
    }

    /// Validates the document; relative mask paths are resolved against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<VideoAnnotations> {
        let cam = &self.camera;
        let global = focal_of(cam.width, cam.height, cam.focal_px, cam.dfov_deg).map_err(Error::Annotations)?;
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::EmptyVideo);
        }

        let mut intrinsics = vec![global; n];
        let mut overridden = HashSet::new();
        for pf in &cam.per_frame {
            if pf.index >= n {
                return Err(Error::AnnotationsFrame {
                    frame: pf.index,
                    message: format!("camera override for a frame beyond the last ({})", n - 1),
                });
            }
            if !overridden.insert(pf.index) {
                return Err(Error::AnnotationsFrame {
                    frame: pf.index,
                    message: "duplicate camera override".into(),
                });
            }
            intrinsics[pf.index] = focal_of(cam.width, cam.height, pf.focal_px, pf.dfov_deg)
                .map_err(|message| Error::AnnotationsFrame { frame: pf.index, message })?;
        }

        let mut frames = Vec::with_capacity(n);
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::AnnotationsFrame {
                    frame: f.index,
                    message: format!("frame indices must be contiguous from 0; expected {i}"),
                });
            }
            let err = |message: String| Error::AnnotationsFrame { frame: i, message };

            let mut ids = HashSet::new();
            let mut faces = Vec::with_capacity(f.faces.len());
            for face in &f.faces {
                if !ids.insert(face.track_id) {
                    return Err(err(format!("duplicate face track_id {}", face.track_id)));
                }
                let [x, y, w, h] = face.bbox;
                if !(w > 0.0 && h > 0.0) || !face.bbox.iter().all(|v| v.is_finite()) {
                    return Err(err(format!("face {} has an invalid bbox", face.track_id)));
                }
                faces.push(FaceRecord {
                    track_id: face.track_id,
                    bbox: BBox::new(x, y, w, h),
                    mask: face.mask.as_ref().map(|m| base_dir.join(m)),
                });
            }

            let mut ids = HashSet::new();
            let mut lines = Vec::with_capacity(f.lines.len());
            for line in &f.lines {
                if !ids.insert(line.track_id) {
                    return Err(err(format!("duplicate line track_id {}", line.track_id)));
                }
                if !line.p0.iter().chain(&line.p1).all(|v| v.is_finite()) {
                    return Err(err(format!("line {} has non-finite endpoints", line.track_id)));
                }
                lines.push(LineSeed {
                    track_id: line.track_id,
                    p0: Point2::new(line.p0[0], line.p0[1]),
                    p1: Point2::new(line.p1[0], line.p1[1]),
                });
            }
            frames.push(FrameAnnotations { faces, lines });
        }
        Ok(VideoAnnotations { intrinsics, frames })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn load_annotations(path: &Path) -> Result<VideoAnnotations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = AnnotationsDoc::parse(&text).map_err(|e| match e {
        Error::Annotations(m) => Error::Annotations(format!("{}: {m}", path.display())),
        other => other,
    })?;
    doc.validate(path.parent().unwrap_or(Path::new(".")))
}
