//! Per-frame scene data derived from annotations: face vertex sets and
//! weights, and the decomposition of background line segments into
//! per-quad crossings.

use image::GrayImage;
use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::camera::Mesh;
use crate::error::{Error, Result};

/// Mask values at or above this count as subject.
pub const MASK_THRESHOLD: u8 = 128;

/// Face boxes are grown by this factor about their center to cover hair and chin.
pub const FACE_BOX_EXPANSION: f64 = 2.0;

/// Per-quad crossings shorter than this (pixels) are dropped.
pub const MIN_CROSSING_LENGTH: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Scaled about the center and clipped to `[0, width] × [0, height]`.
    /// Returns `(min, max)` corners.
    pub fn expanded(&self, factor: f64, width: f64, height: f64) -> (Point2<f64>, Point2<f64>) {
        let c = self.center();
        let hw = self.w * factor / 2.0;
        let hh = self.h * factor / 2.0;
        (
            Point2::new((c.x - hw).max(0.0), (c.y - hh).max(0.0)),
            Point2::new((c.x + hw).min(width), (c.y + hh).min(height)),
        )
    }
}

/// A face present in one frame, ready for energy assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceInstance {
    pub track_id: u64,
    pub bbox: BBox,
    /// Mesh vertex indices covered by the face region, ascending.
    pub vertex_set: Vec<usize>,
    /// `tanh(2 r_k / r_max)`.
    pub weight: f64,
}

fn frame_extent(mesh: &Mesh) -> (f64, f64) {
    let br = mesh.vertex(mesh.cols() - 1, mesh.rows() - 1);
    (br.x, br.y)
}

/// Vertices of the source grid that fall inside the doubled face box and on
/// the subject mask. `None` treats the whole frame as subject.
pub fn face_vertex_set(bbox: &BBox, mask: Option<&GrayImage>, source: &Mesh) -> Result<Vec<usize>> {
    let (w, h) = frame_extent(source);
    if let Some(mask) = mask {
        let (mw, mh) = mask.dimensions();
        if f64::from(mw) != w.round() || f64::from(mh) != h.round() {
            return Err(Error::DimensionMismatch {
                expected_w: w.round() as u32,
                expected_h: h.round() as u32,
                got_w: mw,
                got_h: mh,
            });
        }
    }
    let (lo, hi) = bbox.expanded(FACE_BOX_EXPANSION, w, h);
    let set = source
        .vertices()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y)
        .filter(|(_, p)| match mask {
            None => true,
            Some(m) => {
                let px = (p.x.floor().max(0.0) as u32).min(m.width() - 1);
                let py = (p.y.floor().max(0.0) as u32).min(m.height() - 1);
                m.get_pixel(px, py).0[0] >= MASK_THRESHOLD
            }
        })
        .map(|(i, _)| i)
        .collect();
    Ok(set)
}

/// Face weight `tanh(2 r_k / r_max)`: zero at the image center, `tanh 2` at a corner.
pub fn face_weight(bbox_center: Point2<f64>, width: u32, height: u32) -> f64 {
    let c = Point2::new(f64::from(width) / 2.0, f64::from(height) / 2.0);
    let r_max = c.x.hypot(c.y);
    (2.0 * (bbox_center - c).norm() / r_max).tanh()
}

/// One piece of a line segment clipped to a single source quad.
#[derive(Debug, Clone, PartialEq)]
pub struct LineCrossing {
    /// `(column, row)` of the quad's top-left vertex.
    pub quad: (usize, usize),
    /// Corner vertex indices, ordered as [`Mesh::quad_corners`].
    pub corners: [usize; 4],
    /// Difference of the bilinear weights of the exit and entry points.
    pub weights: [f64; 4],
    /// Crossing vector in source coordinates.
    pub direction: Vector2<f64>,
    /// Unit normal to `direction`.
    pub normal: Vector2<f64>,
}

impl LineCrossing {
    /// `Q · w` for an arbitrary mesh, i.e. the crossing vector after warping.
    pub fn warped_direction(&self, mesh: &Mesh) -> Vector2<f64> {
        let v = mesh.vertices();
        self.corners
            .iter()
            .zip(&self.weights)
            .fold(Vector2::zeros(), |acc, (&i, &w)| acc + v[i].coords * w)
    }
}

/// Liang–Barsky clip of `p0 + t (p1 - p0)` against a rectangle.
fn clip_to_rect(p0: Point2<f64>, d: Vector2<f64>, lo: Point2<f64>, hi: Point2<f64>) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-d.x, p0.x - lo.x),
        (d.x, hi.x - p0.x),
        (-d.y, p0.y - lo.y),
        (d.y, hi.y - p0.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Index `i` of the grid interval `[lines[i], lines[i+1]]` containing `v`.
fn cell_of(lines: &[f64], v: f64) -> usize {
    let i = lines.partition_point(|&l| l <= v);
    i.saturating_sub(1).min(lines.len() - 2)
}

fn bilinear_weights(p: Point2<f64>, lo: Point2<f64>, hi: Point2<f64>) -> [f64; 4] {
    let s = ((p.x - lo.x) / (hi.x - lo.x)).clamp(0.0, 1.0);
    let t = ((p.y - lo.y) / (hi.y - lo.y)).clamp(0.0, 1.0);
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}

/// Splits a segment into per-quad crossings on an axis-aligned source grid.
/// Quads touching any face vertex are skipped, as are crossings shorter than
/// [`MIN_CROSSING_LENGTH`].
pub fn line_quad_crossings(
    p0: Point2<f64>,
    p1: Point2<f64>,
    source: &Mesh,
    face_vertex_sets: &[Vec<usize>],
) -> Vec<LineCrossing> {
    let d = p1 - p0;
    if !(d.norm() > 0.0) {
        return Vec::new();
    }
    let xs: Vec<f64> = (0..source.cols()).map(|c| source.vertex(c, 0).x).collect();
    let ys: Vec<f64> = (0..source.rows()).map(|r| source.vertex(0, r).y).collect();
    let lo = Point2::new(xs[0], ys[0]);
    let hi = Point2::new(xs[xs.len() - 1], ys[ys.len() - 1]);
    let Some((t_in, t_out)) = clip_to_rect(p0, d, lo, hi) else {
        return Vec::new();
    };

    let mut ts = vec![t_in, t_out];
    for (lines, comp0, dc) in [(&xs, p0.x, d.x), (&ys, p0.y, d.y)] {
        if dc != 0.0 {
            for &l in lines.iter() {
                let t = (l - comp0) / dc;
                if t > t_in && t < t_out {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let mut in_face = vec![false; source.len()];
    for &i in face_vertex_sets.iter().flatten() {
        in_face[i] = true;
    }

    let mut out = Vec::new();
    for pair in ts.windows(2) {
        let a = p0 + d * pair[0];
        let b = p0 + d * pair[1];
        let dir = b - a;
        let len = dir.norm();
        if len < MIN_CROSSING_LENGTH {
            continue;
        }
        let mid = p0 + d * (0.5 * (pair[0] + pair[1]));
        let qc = cell_of(&xs, mid.x);
        let qr = cell_of(&ys, mid.y);
        let corners = source.quad_corners(qc, qr);
        if corners.iter().any(|&i| in_face[i]) {
            continue;
        }
        let qlo = Point2::new(xs[qc], ys[qr]);
        let qhi = Point2::new(xs[qc + 1], ys[qr + 1]);
        let wa = bilinear_weights(a, qlo, qhi);
        let wb = bilinear_weights(b, qlo, qhi);
        let weights = [wb[0] - wa[0], wb[1] - wa[1], wb[2] - wa[2], wb[3] - wa[3]];
        out.push(LineCrossing {
            quad: (qc, qr),
            corners,
            weights,
            direction: dir,
            normal: Vector2::new(-dir.y, dir.x) / len,
        });
    }
    out
}
