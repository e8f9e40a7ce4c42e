//! Pyramidal Lucas–Kanade tracking of line-segment endpoints with
//! forward-backward and orientation consistency checks.
//!
//! Points are in the same pixel-edge convention as meshes (pixel `i` covers
//! `[i, i + 1)`); internally sampling uses pixel centers at integer
//! coordinates, so a point `p` is tracked as `p - 0.5`.

use image::RgbImage;
use nalgebra::{Matrix2, Point2, Vector2};
use rayon::prelude::*;

use crate::annotations::LineSeed;
use crate::error::{Error, Result};

/// Single-channel float image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImageF {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GrayImageF {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let x = x.clamp(0, i64::from(self.width) - 1) as usize;
        let y = y.clamp(0, i64::from(self.height) - 1) as usize;
        self.data[y * self.width as usize + x]
    }

    /// Bilinear sample with replicate border; pixel centers at integers.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let top = a + (b - a) * fx;
        let bot = c + (d - c) * fx;
        top + (bot - top) * fy
    }
}

/// Rec.601 luma scaled to `[0, 1]`.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImageF {
    let data = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            ((0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0) as f32
        })
        .collect();
    GrayImageF::new(rgb.width(), rgb.height(), data)
}

const BLUR_TAPS: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// 5-tap binomial blur followed by 2× decimation; output size is `ceil(n / 2)`.
fn pyr_down(img: &GrayImageF) -> GrayImageF {
    let (w, h) = (img.width, img.height);
    let ow = w.div_ceil(2);
    let oh = h.div_ceil(2);
    // horizontal pass at the even columns only
    let mut tmp = vec![0f32; ow as usize * h as usize];
    for y in 0..h {
        for ox in 0..ow {
            let cx = i64::from(ox) * 2;
            let mut acc = 0.0;
            for (k, t) in BLUR_TAPS.iter().enumerate() {
                acc += t * img.get_clamped(cx + k as i64 - 2, i64::from(y));
            }
            tmp[y as usize * ow as usize + ox as usize] = acc;
        }
    }
    let tmp = GrayImageF::new(ow, h, tmp);
    GrayImageF::from_fn(ow, oh, |ox, oy| {
        let cy = i64::from(oy) * 2;
        BLUR_TAPS
            .iter()
            .enumerate()
            .map(|(k, t)| t * tmp.get_clamped(i64::from(ox), cy + k as i64 - 2))
            .sum()
    })
}

#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImageF>,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[GrayImageF] {
        &self.levels
    }

    pub fn base(&self) -> &GrayImageF {
        &self.levels[0]
    }
}

pub fn build_pyramid(image: GrayImageF, levels: usize) -> Result<ImagePyramid> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    let min_side = 1u64 << (levels - 1);
    if u64::from(image.width) < min_side || u64::from(image.height) < min_side {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            levels,
        });
    }
    let mut out = Vec::with_capacity(levels);
    out.push(image);
    for _ in 1..levels {
        let next = pyr_down(out.last().unwrap());
        out.push(next);
    }
    Ok(ImagePyramid { levels: out })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkParams {
    pub levels: usize,
    /// Odd window side length.
    pub window: usize,
    pub max_iterations: usize,
    /// Stop iterating when an update is shorter than this (level pixels).
    pub epsilon: f64,
    /// Minimum smaller eigenvalue of the window-averaged structure tensor,
    /// with gradients in 8-bit gray levels per pixel.
    pub min_eigenvalue: f64,
    /// Maximum forward-backward round-trip error in pixels.
    pub max_fb_error: f64,
    /// Maximum orientation change between adjacent frames, degrees.
    pub max_orientation_change_deg: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 21,
            max_iterations: 30,
            epsilon: 0.01,
            min_eigenvalue: 1e-4,
            max_fb_error: 2.0,
            max_orientation_change_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LkFailure {
    /// Structure tensor too close to singular (textureless or edge-only window).
    Degenerate,
    /// The point left the frame.
    OutOfFrame,
}

fn inside(p: Point2<f64>, img: &GrayImageF) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= f64::from(img.width) && p.y <= f64::from(img.height)
}

/// Tracks `p` from `prev` into `next`.
pub fn lk_track_point(
    prev: &ImagePyramid,
    next: &ImagePyramid,
    p: Point2<f64>,
    params: &LkParams,
) -> std::result::Result<Point2<f64>, LkFailure> {
    if !inside(p, prev.base()) {
        return Err(LkFailure::OutOfFrame);
    }
    let levels = prev.levels.len().min(next.levels.len()).min(params.levels.max(1));
    let half = (params.window / 2) as i64;
    let area = ((2 * half + 1) * (2 * half + 1)) as f64;
    let q = Point2::new(p.x - 0.5, p.y - 0.5);

    let mut guess = Vector2::zeros();
    let mut ix = Vec::with_capacity(area as usize);
    let mut iy = Vec::with_capacity(area as usize);
    let mut iv = Vec::with_capacity(area as usize);
    for level in (0..levels).rev() {
        let scale = f64::from(1u32 << level);
        let img_i = &prev.levels[level];
        let img_j = &next.levels[level];
        let ql = Point2::new(q.x / scale, q.y / scale);

        ix.clear();
        iy.clear();
        iv.clear();
        let mut g = Matrix2::<f64>::zeros();
        for dy in -half..=half {
            for dx in -half..=half {
                let x = ql.x + dx as f64;
                let y = ql.y + dy as f64;
                let gx = 0.5 * f64::from(img_i.sample(x + 1.0, y) - img_i.sample(x - 1.0, y));
                let gy = 0.5 * f64::from(img_i.sample(x, y + 1.0) - img_i.sample(x, y - 1.0));
                g[(0, 0)] += gx * gx;
                g[(0, 1)] += gx * gy;
                g[(1, 1)] += gy * gy;
                ix.push(gx);
                iy.push(gy);
                iv.push(img_i.sample(x, y));
            }
        }
        g[(1, 0)] = g[(0, 1)];
        let tr = g[(0, 0)] + g[(1, 1)];
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(0, 1)];
        let min_eig = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
        // threshold is expressed in 8-bit gray levels
        if min_eig * 255.0 * 255.0 / area < params.min_eigenvalue {
            return Err(LkFailure::Degenerate);
        }
        let g_inv = g.try_inverse().ok_or(LkFailure::Degenerate)?;

        let mut nu = Vector2::zeros();
        for _ in 0..params.max_iterations {
            let off = guess + nu;
            let mut b = Vector2::zeros();
            let mut k = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let x = ql.x + dx as f64;
                    let y = ql.y + dy as f64;
                    let diff = f64::from(iv[k] - img_j.sample(x + off.x, y + off.y));
                    b.x += diff * ix[k];
                    b.y += diff * iy[k];
                    k += 1;
                }
            }
            let eta = g_inv * b;
            nu += eta;
            let pos = ql + guess + nu;
            let (lw, lh) = (f64::from(img_j.width), f64::from(img_j.height));
            if !(pos.x > -1.0 && pos.y > -1.0 && pos.x < lw && pos.y < lh) {
                return Err(LkFailure::OutOfFrame);
            }
            if eta.norm() < params.epsilon {
                break;
            }
        }
        guess = if level > 0 { (guess + nu) * 2.0 } else { guess + nu };
    }
    let out = p + guess;
    if !inside(out, next.base()) {
        return Err(LkFailure::OutOfFrame);
    }
    Ok(out)
}

/// Why a line track stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackEnd {
    /// Alive through the last frame.
    Completed,
    /// An endpoint could not be tracked.
    Lost(LkFailure),
    /// Round-trip error of an endpoint exceeded the threshold.
    ForwardBackward { error_px: f64 },
    /// Segment orientation jumped by more than the threshold.
    Orientation { change_deg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineTrack {
    pub track_id: u64,
    /// First frame of the track (the seed frame).
    pub start: usize,
    /// Endpoints for frames `start .. start + endpoints.len()`.
    pub endpoints: Vec<[Point2<f64>; 2]>,
    pub end: TrackEnd,
}

impl LineTrack {
    pub fn alive_range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.endpoints.len()
    }

    pub fn endpoints_at(&self, frame: usize) -> Option<[Point2<f64>; 2]> {
        frame
            .checked_sub(self.start)
            .and_then(|i| self.endpoints.get(i))
            .copied()
    }
}

/// Undirected orientation in `[0, 180)` degrees.
pub fn orientation_deg(p0: Point2<f64>, p1: Point2<f64>) -> f64 {
    let d = p1 - p0;
    d.y.atan2(d.x).to_degrees().rem_euclid(180.0)
}

fn orientation_change(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(180.0 - d)
}

fn track_one(pyramids: &[ImagePyramid], start: usize, seed: &LineSeed, params: &LkParams) -> LineTrack {
    let mut track = LineTrack {
        track_id: seed.track_id,
        start,
        endpoints: Vec::new(),
        end: TrackEnd::Completed,
    };
    let base = pyramids[start].base();
    if !inside(seed.p0, base) || !inside(seed.p1, base) {
        track.end = TrackEnd::Lost(LkFailure::OutOfFrame);
        return track;
    }
    track.endpoints.push([seed.p0, seed.p1]);
    for n in start..pyramids.len() - 1 {
        let cur = *track.endpoints.last().unwrap();
        let mut next = [Point2::origin(); 2];
        for (k, p) in cur.iter().enumerate() {
            let fwd = match lk_track_point(&pyramids[n], &pyramids[n + 1], *p, params) {
                Ok(q) => q,
                Err(e) => {
                    track.end = TrackEnd::Lost(e);
                    return track;
                }
            };
            let back = match lk_track_point(&pyramids[n + 1], &pyramids[n], fwd, params) {
                Ok(q) => q,
                Err(e) => {
                    track.end = TrackEnd::Lost(e);
                    return track;
                }
            };
            let error_px = (back - p).norm();
            if !(error_px <= params.max_fb_error) {
                track.end = TrackEnd::ForwardBackward { error_px };
                return track;
            }
            next[k] = fwd;
        }
        let change_deg = orientation_change(orientation_deg(cur[0], cur[1]), orientation_deg(next[0], next[1]));
        if change_deg > params.max_orientation_change_deg {
            track.end = TrackEnd::Orientation { change_deg };
            return track;
        }
        track.endpoints.push(next);
    }
    track
}

/// Tracks every seed forward from its seed frame until it fails a check or
/// the video ends. Terminated tracks are not re-acquired.
pub fn track_lines(pyramids: &[ImagePyramid], seeds: &[(usize, LineSeed)], params: &LkParams) -> Vec<LineTrack> {
    seeds
        .par_iter()
        .filter(|(start, _)| *start < pyramids.len())
        .map(|(start, seed)| track_one(pyramids, *start, seed, params))
        .collect()
}
