//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use facewarp::annotations::{AnnotationsDoc, CameraDoc, FaceDoc, FaceRecord, FrameDoc, LineDoc};
use facewarp::camera::{CameraIntrinsics, Mesh};
use facewarp::energy::{EnergyWeights, FaceLatent, SparseLsqSystem};
use facewarp::problem::{prepare_frame, FaceInput, FrameProblem, Problem};
use facewarp::scene::BBox;
use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Line = (u64, [Point2<f64>; 2]);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn frame(cam: CameraIntrinsics, grid: (usize, usize), faces: &[(u64, BBox)], lines: &[Line]) -> FrameProblem {
    let records: Vec<FaceRecord> = faces
        .iter()
        .map(|&(track_id, bbox)| FaceRecord { track_id, bbox, mask: None })
        .collect();
    let inputs: Vec<FaceInput<'_>> = records.iter().map(|r| FaceInput { record: r, mask: None }).collect();
    prepare_frame(cam, grid.0, grid.1, &inputs, lines).unwrap()
}

/// A short clip: face 1 drifts right, face 2 is missing in frame 1 and
/// reappears, a line runs along the top, the focal length zooms slightly.
pub fn small_video(frames: usize, grid: (usize, usize)) -> Problem {
    let (w, h) = (320, 240);
    let list = (0..frames)
        .map(|n| {
            let cam = CameraIntrinsics::new(w, h, 190.0 + 4.0 * n as f64).unwrap();
            let mut faces = vec![(1, BBox::new(30.0 + 6.0 * n as f64, 120.0, 40.0, 50.0))];
            if n != 1 {
                faces.push((2, BBox::new(240.0, 20.0, 36.0, 40.0)));
            }
            let lines = [(7, [Point2::new(12.0, 96.0), Point2::new(300.0, 84.0 + n as f64)])];
            frame(cam, grid, &faces, &lines)
        })
        .collect();
    Problem::new(list).unwrap()
}

/// Random meshes near the source grid and random latents.
pub fn random_state(problem: &Problem, rng: &mut ChaCha8Rng, amplitude: f64) -> (Vec<Mesh>, Vec<Vec<FaceLatent>>) {
    let meshes = problem
        .frames()
        .iter()
        .map(|f| {
            let mut m = f.source.clone();
            for v in m.vertices_mut() {
                v.x += rng.gen_range(-amplitude..amplitude);
                v.y += rng.gen_range(-amplitude..amplitude);
            }
            m
        })
        .collect();
    let latents = problem
        .frames()
        .iter()
        .map(|f| {
            f.faces
                .iter()
                .map(|k| FaceLatent {
                    track_id: k.track_id,
                    a: rng.gen_range(0.5..1.5),
                    b: rng.gen_range(-0.3..0.3),
                    tx: rng.gen_range(-20.0..20.0),
                    ty: rng.gen_range(-20.0..20.0),
                })
                .collect()
        })
        .collect();
    (meshes, latents)
}

fn neighbours(c: usize, r: usize, cols: usize, rows: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if c > 0 {
        out.push((c - 1, r));
    }
    if c + 1 < cols {
        out.push((c + 1, r));
    }
    if r > 0 {
        out.push((c, r - 1));
    }
    if r + 1 < rows {
        out.push((c, r + 1));
    }
    out
}

/// Stereographic target of a perspective point, written out from the radial law.
pub fn stereo_target(p: Point2<f64>, w: f64, h: f64, f: f64) -> Point2<f64> {
    let d = w.min(h);
    let r0 = (d / 2.0) / (0.5 * (d / (2.0 * f)).atan()).tan();
    let (cx, cy) = (w / 2.0, h / 2.0);
    let rp = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt();
    if rp == 0.0 {
        return p;
    }
    let ru = r0 * (0.5 * (rp / f).atan()).tan();
    Point2::new(cx + (p.x - cx) * ru / rp, cy + (p.y - cy) * ru / rp)
}

/// The full video objective evaluated term by term with plain loops, using
/// the double-counted neighbour sums and the explicit optimal line scale.
pub fn brute_energy(problem: &Problem, wts: &EnergyWeights, meshes: &[Mesh], latents: &[Vec<FaceLatent>]) -> f64 {
    let mut total = 0.0;
    for (n, fr) in problem.frames().iter().enumerate() {
        let (cols, rows) = (fr.source.cols(), fr.source.rows());
        let w = f64::from(fr.intrinsics.width());
        let h = f64::from(fr.intrinsics.height());
        let f = fr.intrinsics.focal_px();
        let p = |c: usize, r: usize| Point2::new(w * c as f64 / (cols - 1) as f64, h * r as f64 / (rows - 1) as f64);
        let v = |c: usize, r: usize| meshes[n].vertices()[r * cols + c];

        // face
        let mut e_f = 0.0;
        for face in &fr.faces {
            let lat = latents[n].iter().find(|l| l.track_id == face.track_id).unwrap();
            let center = Point2::new(face.bbox.x + face.bbox.w / 2.0, face.bbox.y + face.bbox.h / 2.0);
            let rk = ((center.x - w / 2.0).powi(2) + (center.y - h / 2.0).powi(2)).sqrt();
            let rmax = ((w / 2.0).powi(2) + (h / 2.0).powi(2)).sqrt();
            let wk = (2.0 * rk / rmax).tanh();
            let mut sum = 0.0;
            for &i in &face.vertex_set {
                let (c, r) = (i % cols, i / cols);
                let u = stereo_target(p(c, r), w, h, f);
                let tx = lat.a * u.x + lat.b * u.y + lat.tx;
                let ty = -lat.b * u.x + lat.a * u.y + lat.ty;
                let vi = v(c, r);
                sum += (vi.x - tx).powi(2) + (vi.y - ty).powi(2);
            }
            e_f += wk * sum + wts.scale_weight * (lat.a - wts.target_scale).powi(2);
        }

        // smoothness and edge bending
        let (mut e_s, mut e_e) = (0.0, 0.0);
        for r in 0..rows {
            for c in 0..cols {
                for (nc, nr) in neighbours(c, r, cols, rows) {
                    let dv = v(c, r) - v(nc, nr);
                    let de = p(c, r) - p(nc, nr);
                    let e = de / de.norm();
                    e_s += dv.x * dv.x + dv.y * dv.y;
                    e_e += (dv.x * e.y - dv.y * e.x).powi(2);
                }
            }
        }

        // boundary
        let mut e_b = 0.0;
        for r in 0..rows {
            e_b += v(0, r).x.powi(2) + (v(cols - 1, r).x - w).powi(2);
        }
        for c in 0..cols {
            e_b += v(c, 0).y.powi(2) + (v(c, rows - 1).y - h).powi(2);
        }

        // lines
        let mut e_l = 0.0;
        for line in &fr.lines {
            for x in &line.crossings {
                let (mut d, mut dh) = ([0.0; 2], [0.0; 2]);
                for (&i, &wq) in x.corners.iter().zip(&x.weights) {
                    let (c, r) = (i % cols, i / cols);
                    d[0] += wq * v(c, r).x;
                    d[1] += wq * v(c, r).y;
                    dh[0] += wq * p(c, r).x;
                    dh[1] += wq * p(c, r).y;
                }
                let s = (dh[0] * d[0] + dh[1] * d[1]) / (dh[0] * dh[0] + dh[1] * dh[1]);
                e_l += (d[0] - s * dh[0]).powi(2) + (d[1] - s * dh[1]).powi(2);
            }
        }

        total += wts.face * e_f + wts.smoothness * e_s + wts.edge * e_e + wts.boundary * e_b + wts.line * e_l;
    }

    for n in 1..problem.len() {
        let mut e_t = 0.0;
        for (a, b) in meshes[n].vertices().iter().zip(meshes[n - 1].vertices()) {
            e_t += (a - b).norm_squared();
        }
        let mut e_c = 0.0;
        for cur in &latents[n] {
            if let Some(prev) = latents[n - 1].iter().find(|l| l.track_id == cur.track_id) {
                let ds = DMatrix::from_row_slice(2, 2, &[cur.a - prev.a, cur.b - prev.b, -(cur.b - prev.b), cur.a - prev.a]);
                e_c += ds.norm_squared() + (cur.tx - prev.tx).powi(2) + (cur.ty - prev.ty).powi(2);
            }
        }
        total += wts.temporal * e_t + wts.coherence * e_c;
    }
    total
}

/// Exact minimizer from the column-equilibrated normal equations, factored densely.
pub fn dense_minimizer(system: &SparseLsqSystem) -> Vec<f64> {
    let n = system.ncols();
    let a = system.matrix();
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DVector::<f64>::zeros(n);
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        let b = system.rhs()[i];
        for (&j, &vj) in cols.iter().zip(vals) {
            atb[j] += vj * b;
            for (&k, &vk) in cols.iter().zip(vals) {
                ata[(j, k)] += vj * vk;
            }
        }
    }
    let d: Vec<f64> = (0..n).map(|j| 1.0 / ata[(j, j)].sqrt()).collect();
    for j in 0..n {
        for k in 0..n {
            ata[(j, k)] *= d[j] * d[k];
        }
        atb[j] *= d[j];
    }
    let y = ata.cholesky().expect("normal matrix is positive definite").solve(&atb);
    y.iter().zip(&d).map(|(y, d)| y * d).collect()
}

pub fn rel_diff(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Smooth, non-periodic texture in [0, 1] with structure in every direction.
pub fn texture(x: f64, y: f64) -> f64 {
    0.5 + 0.12 * (x / 6.3 + 0.7 * y / 9.1).sin()
        + 0.1 * (y / 5.2 - x / 13.7).cos()
        + 0.08 * ((x + 2.0 * y) / 17.0).sin()
        + 0.06 * (x * y / 900.0).cos()
}

pub fn rgb_from(w: u32, h: u32, f: impl Fn(f64, f64) -> f64) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = (255.0 * f(f64::from(x), f64::from(y))).round().clamp(0.0, 255.0) as u8;
        Rgb([v, v, v])
    })
}

/// Writes `frames` PNGs (`frame_0000.png`, …) and an annotations file with one
/// moving off-center face and one static line; returns the frame pattern.
pub fn write_clip(dir: &Path, frames: usize, w: u32, h: u32) -> String {
    let img = rgb_from(w, h, |x, y| {
        let line = if (y - f64::from(h) * 0.2).abs() < 1.5 { -0.4 } else { 0.0 };
        texture(x, y) + line
    });
    for n in 0..frames {
        img.save(dir.join(format!("frame_{n:04}.png"))).unwrap();
    }
    let (wf, hf) = (f64::from(w), f64::from(h));
    let docs = (0..frames)
        .map(|n| FrameDoc {
            index: n,
            faces: vec![FaceDoc {
                track_id: 1,
                bbox: [wf * 0.1 + 4.0 * n as f64, hf * 0.45, wf * 0.12, hf * 0.18],
                mask: None,
            }],
            lines: if n == 0 {
                vec![LineDoc { track_id: 3, p0: [wf * 0.05, hf * 0.2], p1: [wf * 0.95, hf * 0.2] }]
            } else {
                vec![]
            },
        })
        .collect();
    let doc = AnnotationsDoc {
        camera: CameraDoc { width: w, height: h, focal_px: None, dfov_deg: Some(100.0), per_frame: vec![] },
        frames: docs,
    };
    doc.save(&dir.join("annotations.json")).unwrap();
    dir.join("frame_%04d.png").to_string_lossy().into_owned()
}
