//! Camera intrinsics, warping meshes and the perspective to stereographic
//! radial mapping used to build per-frame target meshes.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid size used when nothing else is configured (columns × rows).
pub const DEFAULT_GRID: (usize, usize) = (33, 25);

/// Pinhole intrinsics of one frame. The optical center is the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    width_px: u32,
    height_px: u32,
    focal_px: f64,
}

impl CameraIntrinsics {
    pub fn new(width_px: u32, height_px: u32, focal_px: f64) -> Result<Self> {
        if width_px < 2 || height_px < 2 {
            return Err(Error::InvalidArgument(format!(
                "image size must be at least 2x2, got {width_px}x{height_px}"
            )));
        }
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive and finite, got {focal_px}"
            )));
        }
        Ok(Self {
            width_px,
            height_px,
            focal_px,
        })
    }

    pub fn from_dfov(width_px: u32, height_px: u32, dfov_deg: f64) -> Result<Self> {
        let f = focal_from_dfov(dfov_deg, width_px, height_px)?;
        Self::new(width_px, height_px, f)
    }

    pub fn width(&self) -> u32 {
        self.width_px
    }

    pub fn height(&self) -> u32 {
        self.height_px
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }

    /// Same frame size, different focal length (digital zoom).
    pub fn with_focal(&self, focal_px: f64) -> Result<Self> {
        Self::new(self.width_px, self.height_px, focal_px)
    }

    /// `min(W, H)`; the stereographic map leaves radius `d / 2` fixed.
    pub fn min_dim(&self) -> f64 {
        f64::from(self.width_px.min(self.height_px))
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(
            f64::from(self.width_px) / 2.0,
            f64::from(self.height_px) / 2.0,
        )
    }

    /// Distance from the image center to a frame corner.
    pub fn corner_radius(&self) -> f64 {
        let c = self.center();
        c.x.hypot(c.y)
    }

    pub fn dfov_deg(&self) -> f64 {
        dfov_from_focal(self.focal_px, self.width_px, self.height_px)
    }
}

/// Focal length in pixels for a diagonal field of view, `f = diag / (2 tan(dfov / 2))`.
pub fn focal_from_dfov(dfov_deg: f64, width_px: u32, height_px: u32) -> Result<f64> {
    if !(dfov_deg > 0.0 && dfov_deg < 180.0) {
        return Err(Error::InvalidArgument(format!(
            "diagonal field of view must lie in (0, 180) degrees, got {dfov_deg}"
        )));
    }
    let diag = f64::from(width_px).hypot(f64::from(height_px));
    Ok(diag / (2.0 * (dfov_deg.to_radians() / 2.0).tan()))
}

/// Inverse of [`focal_from_dfov`].
pub fn dfov_from_focal(focal_px: f64, width_px: u32, height_px: u32) -> f64 {
    let diag = f64::from(width_px).hypot(f64::from(height_px));
    (2.0 * (diag / (2.0 * focal_px)).atan()).to_degrees()
}

/// A grid of 2-D vertices, row-major: vertex `(c, r)` lives at `r * cols + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    cols: usize,
    rows: usize,
    vertices: Vec<Point2<f64>>,
}

impl Mesh {
    pub fn from_vertices(cols: usize, rows: usize, vertices: Vec<Point2<f64>>) -> Result<Self> {
        check_grid(cols, rows)?;
        if vertices.len() != cols * rows {
            return Err(Error::InvalidArgument(format!(
                "{cols}x{rows} mesh needs {} vertices, got {}",
                cols * rows,
                vertices.len()
            )));
        }
        Ok(Self {
            cols,
            rows,
            vertices,
        })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn vertex(&self, col: usize, row: usize) -> Point2<f64> {
        self.vertices[self.index(col, row)]
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn vertices_mut(&mut self) -> &mut [Point2<f64>] {
        &mut self.vertices
    }

    /// Number of quads, `(cols - 1) * (rows - 1)`.
    pub fn quad_count(&self) -> usize {
        (self.cols - 1) * (self.rows - 1)
    }

    /// Corner indices of quad `(qc, qr)` ordered top-left, top-right,
    /// bottom-left, bottom-right.
    #[inline]
    pub fn quad_corners(&self, qc: usize, qr: usize) -> [usize; 4] {
        let i = self.index(qc, qr);
        [i, i + 1, i + self.cols, i + self.cols + 1]
    }

    /// Largest vertex displacement between two meshes of the same shape.
    pub fn max_distance(&self, other: &Mesh) -> f64 {
        assert_eq!(self.vertices.len(), other.vertices.len());
        self.vertices
            .iter()
            .zip(&other.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn translated(&self, offset: Vector2<f64>) -> Mesh {
        Mesh {
            cols: self.cols,
            rows: self.rows,
            vertices: self.vertices.iter().map(|p| p + offset).collect(),
        }
    }
}

fn check_grid(cols: usize, rows: usize) -> Result<()> {
    if cols < 2 || rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid must be at least 2x2, got {cols}x{rows}"
        )));
    }
    Ok(())
}

/// Axis-aligned grid spanning `[0, W] × [0, H]` inclusive.
pub fn uniform_mesh(intrinsics: &CameraIntrinsics, cols: usize, rows: usize) -> Result<Mesh> {
    check_grid(cols, rows)?;
    let w = f64::from(intrinsics.width());
    let h = f64::from(intrinsics.height());
    let mut vertices = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let y = r as f64 * h / (rows - 1) as f64;
        for c in 0..cols {
            vertices.push(Point2::new(c as f64 * w / (cols - 1) as f64, y));
        }
    }
    Mesh::from_vertices(cols, rows, vertices)
}

/// Radial map `r_u = r0 · tan(atan(r_p / f) / 2)` about the image center, with
/// `r0` chosen so that radius `d / 2` maps onto itself.
#[derive(Debug, Clone, Copy)]
pub struct StereographicMap {
    center: Point2<f64>,
    focal: f64,
    r0: f64,
}

impl StereographicMap {
    pub fn new(intrinsics: &CameraIntrinsics) -> Self {
        let f = intrinsics.focal_px();
        let half_d = intrinsics.min_dim() / 2.0;
        let r0 = half_d / (0.5 * (half_d / f).atan()).tan();
        Self {
            center: intrinsics.center(),
            focal: f,
            r0,
        }
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn radius(&self, r_p: f64) -> f64 {
        self.r0 * (0.5 * (r_p / self.focal).atan()).tan()
    }

    /// `r_u / r_p`, using the limit `r0 / (2 f)` at the center.
    fn ratio(&self, r_p: f64) -> f64 {
        if r_p <= self.focal * 1e-12 {
            self.r0 / (2.0 * self.focal)
        } else {
            self.radius(r_p) / r_p
        }
    }

    pub fn map(&self, p: Point2<f64>) -> Point2<f64> {
        let offset = p - self.center;
        self.center + offset * self.ratio(offset.norm())
    }
}

pub fn stereographic_point(p: Point2<f64>, intrinsics: &CameraIntrinsics) -> Point2<f64> {
    StereographicMap::new(intrinsics).map(p)
}

/// The uniform grid pushed through the stereographic map.
pub fn stereographic_mesh(intrinsics: &CameraIntrinsics, cols: usize, rows: usize) -> Result<Mesh> {
    let map = StereographicMap::new(intrinsics);
    let mut mesh = uniform_mesh(intrinsics, cols, rows)?;
    for v in mesh.vertices_mut() {
        *v = map.map(*v);
    }
    Ok(mesh)
}
