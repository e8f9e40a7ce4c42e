//! The prepared optimization problem: everything the energy needs per frame,
//! as fixed data.

use image::GrayImage;
use nalgebra::Point2;

use crate::annotations::FaceRecord;
use crate::camera::{stereographic_mesh, uniform_mesh, CameraIntrinsics, Mesh};
use crate::error::{Error, Result};
use crate::scene::{face_vertex_set, face_weight, line_quad_crossings, FaceInstance, LineCrossing};
use crate::tracking::LineTrack;

/// Crossings of one tracked line in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLine {
    pub track_id: u64,
    pub endpoints: [Point2<f64>; 2],
    pub crossings: Vec<LineCrossing>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameProblem {
    pub intrinsics: CameraIntrinsics,
    /// Uniform source grid `p_i`.
    pub source: Mesh,
    /// Stereographic target `u_i` for this frame's focal length.
    pub stereo: Mesh,
    /// Faces with a non-empty vertex set, sorted by track id.
    pub faces: Vec<FaceInstance>,
    pub lines: Vec<FrameLine>,
}

impl FrameProblem {
    pub fn crossing_count(&self) -> usize {
        self.lines.iter().map(|l| l.crossings.len()).sum()
    }
}

/// A face annotation with its decoded mask.
#[derive(Debug, Clone)]
pub struct FaceInput<'a> {
    pub record: &'a FaceRecord,
    pub mask: Option<&'a GrayImage>,
}

/// Builds one frame: grids, face vertex sets and weights, line crossings.
/// Faces whose region covers no vertex are dropped.
pub fn prepare_frame(
    intrinsics: CameraIntrinsics,
    cols: usize,
    rows: usize,
    faces: &[FaceInput<'_>],
    lines: &[(u64, [Point2<f64>; 2])],
) -> Result<FrameProblem> {
    let source = uniform_mesh(&intrinsics, cols, rows)?;
    let stereo = stereographic_mesh(&intrinsics, cols, rows)?;

    let mut instances = Vec::with_capacity(faces.len());
    for f in faces {
        let vertex_set = face_vertex_set(&f.record.bbox, f.mask, &source)?;
        if vertex_set.is_empty() {
            log::debug!("face {} covers no mesh vertex; dropped for this frame", f.record.track_id);
            continue;
        }
        instances.push(FaceInstance {
            track_id: f.record.track_id,
            bbox: f.record.bbox,
            weight: face_weight(f.record.bbox.center(), intrinsics.width(), intrinsics.height()),
            vertex_set,
        });
    }
    instances.sort_by_key(|f| f.track_id);

    let sets: Vec<Vec<usize>> = instances.iter().map(|f| f.vertex_set.clone()).collect();
    let mut frame_lines: Vec<FrameLine> = lines
        .iter()
        .map(|&(track_id, [p0, p1])| FrameLine {
            track_id,
            endpoints: [p0, p1],
            crossings: line_quad_crossings(p0, p1, &source, &sets),
        })
        .filter(|l| !l.crossings.is_empty())
        .collect();
    frame_lines.sort_by_key(|l| l.track_id);

    Ok(FrameProblem {
        intrinsics,
        source,
        stereo,
        faces: instances,
        lines: frame_lines,
    })
}

/// All frames of a video; every frame shares the same grid and frame size.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    frames: Vec<FrameProblem>,
}

impl Problem {
    pub fn new(frames: Vec<FrameProblem>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyVideo)?;
        let (c, r) = (first.source.cols(), first.source.rows());
        let (w, h) = (first.intrinsics.width(), first.intrinsics.height());
        for (n, f) in frames.iter().enumerate() {
            if f.source.cols() != c || f.source.rows() != r {
                return Err(Error::InvalidArgument(format!("frame {n} uses a different grid")));
            }
            if f.intrinsics.width() != w || f.intrinsics.height() != h {
                return Err(Error::InvalidArgument(format!("frame {n} has a different frame size")));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[FrameProblem] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [FrameProblem] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.frames[0].source.cols(), self.frames[0].source.rows())
    }

    /// The same frame repeated `n` times.
    pub fn replicated(frame: FrameProblem, n: usize) -> Result<Self> {
        Self::new(vec![frame; n])
    }
}

/// Collects per-frame `(track_id, endpoints)` lists from tracked lines.
pub fn lines_per_frame(tracks: &[LineTrack], frames: usize) -> Vec<Vec<(u64, [Point2<f64>; 2])>> {
    let mut out = vec![Vec::new(); frames];
    for t in tracks {
        for n in t.alive_range() {
            if n < frames {
                out[n].push((t.track_id, t.endpoints_at(n).unwrap()));
            }
        }
    }
    out
}
