//! Forward mesh warping of frames by piecewise-affine inverse mapping.

use std::collections::VecDeque;

use image::{Rgb, RgbImage};
use nalgebra::Point2;
use rayon::prelude::*;

use crate::camera::Mesh;
use crate::error::{Error, Result};

/// Source grid and its optimized destination for one frame.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub source: Mesh,
    pub destination: Mesh,
}

impl WarpField {
    pub fn new(source: Mesh, destination: Mesh) -> Result<Self> {
        if source.cols() != destination.cols() || source.rows() != destination.rows() {
            return Err(Error::InvalidArgument(format!(
                "source grid {}x{} and destination grid {}x{} differ",
                source.cols(),
                source.rows(),
                destination.cols(),
                destination.rows()
            )));
        }
        if !destination.vertices().iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::InvalidArgument("destination mesh has non-finite vertices".into()));
        }
        Ok(Self { source, destination })
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: RgbImage,
    /// Destination triangles whose orientation is flipped relative to the source.
    pub foldovers: usize,
}

#[derive(Debug, Clone, Copy)]
struct Triangle {
    dst: [Point2<f64>; 3],
    src: [Point2<f64>; 3],
    y_min: i64,
    y_max: i64,
}

fn signed_area(p: &[Point2<f64>; 3]) -> f64 {
    (p[1] - p[0]).perp(&(p[2] - p[0]))
}

impl Triangle {
    /// Source coordinate of destination point `q`, if `q` is inside.
    #[inline]
    fn map(&self, q: Point2<f64>, inv_area: f64) -> Option<Point2<f64>> {
        let [a, b, c] = self.dst;
        let l0 = (b - q).perp(&(c - q)) * inv_area;
        let l1 = (c - q).perp(&(a - q)) * inv_area;
        let l2 = 1.0 - l0 - l1;
        const EPS: f64 = -1e-9;
        if l0 >= EPS && l1 >= EPS && l2 >= EPS {
            let [sa, sb, sc] = self.src;
            Some(Point2::new(
                l0 * sa.x + l1 * sb.x + l2 * sc.x,
                l0 * sa.y + l1 * sb.y + l2 * sc.y,
            ))
        } else {
            None
        }
    }
}

/// Bilinear RGB sample at a pixel-edge coordinate with edge clamping.
fn sample_rgb(img: &RgbImage, p: Point2<f64>) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = p.x - 0.5;
    let y = p.y - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let px = |xi: i64, yi: i64| img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32).0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (px(xi, yi), px(xi + 1, yi), px(xi, yi + 1), px(xi + 1, yi + 1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = f64::from(a[k]) + (f64::from(b[k]) - f64::from(a[k])) * fx;
        let bot = f64::from(c[k]) + (f64::from(d[k]) - f64::from(c[k])) * fx;
        out[k] = (top + (bot - top) * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Source coordinate for every output pixel, `None` where no triangle covers it.
fn rasterize(field: &WarpField, width: u32, height: u32) -> (Vec<Option<Point2<f64>>>, usize) {
    let (src, dst) = (&field.source, &field.destination);
    let mut tris = Vec::with_capacity(2 * src.quad_count());
    let mut foldovers = 0;
    for qr in 0..src.rows() - 1 {
        for qc in 0..src.cols() - 1 {
            let [tl, tr, bl, br] = src.quad_corners(qc, qr);
            for idx in [[tl, tr, br], [tl, br, bl]] {
                let s = idx.map(|i| src.vertices()[i]);
                let d = idx.map(|i| dst.vertices()[i]);
                let (sa, da) = (signed_area(&s), signed_area(&d));
                if da == 0.0 {
                    continue;
                }
                if sa * da < 0.0 {
                    foldovers += 1;
                }
                let ys = d.map(|p| p.y);
                let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                tris.push(Triangle {
                    dst: d,
                    src: s,
                    y_min: (lo - 0.5).floor().max(0.0) as i64,
                    y_max: ((hi - 0.5).ceil() as i64).min(i64::from(height) - 1),
                });
            }
        }
    }

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); height as usize];
    for (t, tri) in tris.iter().enumerate() {
        for y in tri.y_min..=tri.y_max {
            buckets[y as usize].push(t);
        }
    }

    let mut coords = vec![None; width as usize * height as usize];
    coords
        .par_chunks_mut(width as usize)
        .zip(buckets.par_iter())
        .enumerate()
        .for_each(|(y, (row, bucket))| {
            let yc = y as f64 + 0.5;
            for &t in bucket {
                let tri = &tris[t];
                let inv_area = 1.0 / signed_area(&tri.dst);
                let xs = tri.dst.map(|p| p.x);
                let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let x0 = (lo - 0.5).floor().max(0.0) as usize;
                let x1 = ((hi - 0.5).ceil().max(-1.0) as i64).min(i64::from(width) - 1);
                if x1 < 0 {
                    continue;
                }
                for x in x0..=x1 as usize {
                    if let Some(s) = tri.map(Point2::new(x as f64 + 0.5, yc), inv_area) {
                        row[x] = Some(s);
                    }
                }
            }
        });
    (coords, foldovers)
}

/// Gives uncovered pixels the source coordinate of the nearest covered pixel
/// (breadth-first, 4-connected).
fn fill_uncovered(coords: &mut [Option<Point2<f64>>], width: usize, height: usize) {
    let mut queue: VecDeque<usize> = coords
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_some())
        .map(|(i, _)| i)
        .collect();
    if queue.len() == coords.len() || queue.is_empty() {
        return;
    }
    while let Some(i) = queue.pop_front() {
        let v = coords[i];
        let (x, y) = (i % width, i / width);
        let mut visit = |j: usize| {
            if coords[j].is_none() {
                coords[j] = v;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < width {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    }
}

/// Warps `src` so that each source grid vertex lands on its destination.
/// Output pixels not covered by the warped mesh repeat the nearest covered
/// pixel's source sample; folded triangles are drawn in grid order, last one wins.
pub fn render_frame(src: &RgbImage, field: &WarpField) -> Result<RenderOutput> {
    let br = field.source.vertex(field.source.cols() - 1, field.source.rows() - 1);
    let (w, h) = src.dimensions();
    if (f64::from(w), f64::from(h)) != (br.x, br.y) {
        return Err(Error::DimensionMismatch {
            expected_w: br.x.round() as u32,
            expected_h: br.y.round() as u32,
            got_w: w,
            got_h: h,
        });
    }
    let (mut coords, foldovers) = rasterize(field, w, h);
    fill_uncovered(&mut coords, w as usize, h as usize);

    let mut out = RgbImage::new(w, h);
    out.par_chunks_mut(3 * w as usize)
        .zip(coords.par_chunks(w as usize))
        .for_each(|(row, cs)| {
            for (px, c) in row.chunks_mut(3).zip(cs) {
                // every pixel is covered unless the whole mesh left the frame
                let p = c.unwrap_or(Point2::new(0.5, 0.5));
                px.copy_from_slice(&sample_rgb(src, p).0);
            }
        });
    Ok(RenderOutput { image: out, foldovers })
}
