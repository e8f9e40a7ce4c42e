//! Acceptance suite. Runs each criterion in turn, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use facewarp::camera::{uniform_mesh, CameraIntrinsics, Mesh, StereographicMap};
use facewarp::energy::{build_system, EnergyWeights, UnknownLayout};
use facewarp::pipeline::{run, RunConfig};
use facewarp::problem::{lines_per_frame, Problem};
use facewarp::render::{render_frame, WarpField};
use facewarp::scene::BBox;
use facewarp::solver::{optimize_full, optimize_sequential, solve_lsq, LsqOptions, OptimizeOptions};
use facewarp::tracking::{build_pyramid, lk_track_point, track_lines, GrayImageF, ImagePyramid, LkParams, TrackEnd};
use facewarp::annotations::LineSeed;
use nalgebra::{Point2, Vector2};
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1
fn stereographic_fixed_points() -> Outcome {
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = rng.gen_range(64..4000);
        let h = rng.gen_range(64..4000);
        let d = f64::from(w.min(h));
        let f = rng.gen_range(0.2..5.0) * d;
        let map = StereographicMap::new(&CameraIntrinsics::new(w, h, f).unwrap());
        let at_zero = map.radius(0.0).abs() / d;
        let at_edge = (map.radius(d / 2.0) - d / 2.0).abs() / (d / 2.0);
        worst = worst.max(at_zero).max(at_edge);
    }
    check(worst <= 1e-9, format!("max relative error {worst:.2e} (limit 1e-9)"))
}

// 2
fn energy_and_gradient() -> Outcome {
    let problem = small_video(5, (9, 7));
    let wts = EnergyWeights::default();
    let (layout, system) = build_system(&problem, &wts, None).unwrap();
    let mut rng = rng(2);
    let mut worst_e = 0.0f64;
    for _ in 0..100 {
        let (meshes, latents) = random_state(&problem, &mut rng, 15.0);
        let refs: Vec<&Mesh> = meshes.iter().collect();
        let x = layout.pack(&refs, &latents);
        let brute = brute_energy(&problem, &wts, &meshes, &latents);
        let sparse = system.objective(&x);
        worst_e = worst_e.max((sparse - brute).abs() / (1.0 + brute));
    }

    let (meshes, latents) = random_state(&problem, &mut rng, 15.0);
    let refs: Vec<&Mesh> = meshes.iter().collect();
    let x = layout.pack(&refs, &latents);
    let g = system.gradient(&x);
    let mut worst_g = 0.0f64;
    for _ in 0..50 {
        let j = rng.gen_range(0..x.len());
        let h = 1e-3;
        let eval = |xj: f64| {
            let mut y = x.clone();
            y[j] = xj;
            let (m, l) = layout.unpack(&y, 9, 7).unwrap();
            brute_energy(&problem, &wts, &m, &l)
        };
        let fd = (eval(x[j] + h) - eval(x[j] - h)) / (2.0 * h);
        worst_g = worst_g.max((fd - g[j]).abs() / (1.0 + g[j].abs()));
    }
    check(
        worst_e <= 1e-8 && worst_g <= 1e-4,
        format!("energy rel err {worst_e:.2e} (limit 1e-8), gradient rel err {worst_g:.2e} (limit 1e-4)"),
    )
}

// 3
fn dense_oracle_equivalence() -> Outcome {
    let cases = [small_video(1, (9, 7)), small_video(3, (17, 13)), small_video(4, (17, 14))];
    let mut worst = 0.0f64;
    let mut biggest = 0;
    for problem in &cases {
        let (layout, system) = build_system(problem, &EnergyWeights::default(), None).unwrap();
        biggest = biggest.max(layout.len());
        let x0 = layout.initial_guess(problem.frames());
        let sol = solve_lsq(&system, &x0, &LsqOptions::default()).unwrap();
        let exact = dense_minimizer(&system);
        worst = worst.max(rel_diff(&sol.x, &exact));
    }
    check(
        worst <= 1e-6 && biggest <= 2000,
        format!("max relative difference {worst:.2e} (limit 1e-6), largest problem {biggest} unknowns"),
    )
}

// 4
fn temporal_constancy() -> Outcome {
    let cam = CameraIntrinsics::from_dfov(640, 480, 100.0).unwrap();
    let single = frame(cam, (33, 25), &[(4, BBox::new(430.0, 80.0, 90.0, 110.0))], &[]);
    let opts = OptimizeOptions::default();
    let one = optimize_full(&Problem::new(vec![single.clone()]).unwrap(), &opts).unwrap();
    let video = Problem::replicated(single, 20).unwrap();
    let full = optimize_full(&video, &opts).unwrap();
    let seq = optimize_sequential(&video, &opts).unwrap();
    let full_vs_single = full.meshes.iter().map(|m| m.max_distance(&one.meshes[0])).fold(0.0, f64::max);
    let seq_vs_full = seq
        .meshes
        .iter()
        .zip(&full.meshes)
        .map(|(a, b)| a.max_distance(b))
        .fold(0.0, f64::max);
    check(
        full_vs_single <= 1e-5 && seq_vs_full <= 1e-5,
        format!("full vs single-frame {full_vs_single:.2e} px, sequential vs full {seq_vs_full:.2e} px (limit 1e-5)"),
    )
}

fn max_line_deviation_deg(problem: &Problem, meshes: &[Mesh]) -> f64 {
    let mut worst = 0.0f64;
    for (fr, mesh) in problem.frames().iter().zip(meshes) {
        for line in &fr.lines {
            for c in &line.crossings {
                let d = c.warped_direction(mesh);
                let s = c.direction;
                let ang = (s.x * d.y - s.y * d.x).atan2(s.dot(&d)).to_degrees().abs();
                worst = worst.max(ang);
            }
        }
    }
    worst
}

// 5
fn line_preservation() -> Outcome {
    let (w, h) = (640u32, 480u32);
    let frames = 12;
    let img = GrayImageF::from_fn(w, h, |x, y| {
        let (x, y) = (f64::from(x), f64::from(y));
        let line = if (y - 180.0).abs() < 1.5 { -0.35 } else { 0.0 };
        (texture(x, y) + line) as f32
    });
    let pyr = build_pyramid(img, 3).unwrap();
    let pyramids: Vec<ImagePyramid> = vec![pyr; frames];
    // the face's doubled box starts at y = 200; the line runs 20 px above it
    let seed = LineSeed { track_id: 9, p0: Point2::new(40.0, 180.0), p1: Point2::new(600.0, 180.0) };
    let tracks = track_lines(&pyramids, &[(0, seed)], &LkParams::default());
    if tracks[0].end != TrackEnd::Completed {
        return Err(format!("line track ended early: {:?}", tracks[0].end));
    }
    let lines = lines_per_frame(&tracks, frames);
    let cam = CameraIntrinsics::from_dfov(w, h, 100.0).unwrap();
    let list = (0..frames)
        .map(|n| frame(cam, (33, 25), &[(1, BBox::new(90.0 + 25.0 * n as f64, 250.0, 80.0, 100.0))], &lines[n]))
        .collect();
    let problem = Problem::new(list).unwrap();
    let with = optimize_full(&problem, &OptimizeOptions::default()).unwrap();
    let mut off = OptimizeOptions::default();
    off.weights.line = 0.0;
    let without = optimize_full(&problem, &off).unwrap();
    let dev_on = max_line_deviation_deg(&problem, &with.meshes);
    let dev_off = max_line_deviation_deg(&problem, &without.meshes);
    check(
        dev_on < 0.1 && dev_off > dev_on,
        format!("max deviation {dev_on:.4} deg with lines (limit 0.1), {dev_off:.4} deg without"),
    )
}

// 6
fn tracker() -> Outcome {
    let params = LkParams::default();
    let shifted = |dx: f64, dy: f64| GrayImageF::from_fn(200, 160, |x, y| texture(f64::from(x) - dx, f64::from(y) - dy) as f32);

    let a = build_pyramid(shifted(0.0, 0.0), 3).unwrap();
    let b = build_pyramid(shifted(3.0, 2.0), 3).unwrap();
    let mut worst = 0.0f64;
    for p in [Point2::new(60.0, 60.0), Point2::new(100.5, 80.25), Point2::new(140.0, 50.0)] {
        match lk_track_point(&a, &b, p, &params) {
            Ok(q) => worst = worst.max((q - (p + Vector2::new(3.0, 2.0))).norm()),
            Err(e) => return Err(format!("translation lost: {e:?}")),
        }
    }

    // a 90 px jump is far outside the pyramid's capture range; 20 px is inside
    let smooth = |dx: f64| GrayImageF::from_fn(400, 300, |x, y| texture(f64::from(x) - dx, f64::from(y)) as f32);
    let seed = LineSeed { track_id: 1, p0: Point2::new(150.0, 120.0), p1: Point2::new(260.0, 180.0) };
    let jump = |dx: f64| {
        let pyrs = [build_pyramid(smooth(0.0), 3).unwrap(), build_pyramid(smooth(dx), 3).unwrap()];
        track_lines(&pyrs, &[(0, seed.clone())], &params).remove(0)
    };
    let fb = jump(90.0);
    let near = jump(20.0);
    let fb_fired = matches!(fb.end, TrackEnd::ForwardBackward { error_px } if error_px > 2.0)
        && near.end == TrackEnd::Completed;

    // 2 degrees per frame about the image center
    let rotated = |deg: f64| {
        let (s, c) = deg.to_radians().sin_cos();
        GrayImageF::from_fn(240, 240, |x, y| {
            let (u, v) = (f64::from(x) - 119.5, f64::from(y) - 119.5);
            texture(c * u + s * v + 119.5, -s * u + c * v + 119.5) as f32
        })
    };
    let pyrs: Vec<_> = (0..4).map(|n| build_pyramid(rotated(2.0 * n as f64), 3).unwrap()).collect();
    let seed = LineSeed { track_id: 2, p0: Point2::new(60.0, 120.0), p1: Point2::new(180.0, 120.0) };
    let rot = track_lines(&pyrs, &[(0, seed)], &params);
    let orient_fired = matches!(rot[0].end, TrackEnd::Orientation { change_deg } if change_deg > 1.0)
        && rot[0].endpoints.len() == 1;

    check(
        worst <= 0.2 && fb_fired && orient_fired,
        format!(
            "translation error {worst:.3} px (limit 0.2), 90 px jump {:?}, 20 px shift {:?}, 2 deg/frame rotation {:?} after {} frame(s)",
            fb.end,
            near.end,
            rot[0].end,
            rot[0].endpoints.len()
        ),
    )
}

// 7
fn identity_and_no_face() -> Outcome {
    let mut r = rng(7);
    let img = image::RgbImage::from_fn(641, 479, |_, _| image::Rgb([r.gen(), r.gen(), r.gen()]));
    let cam = CameraIntrinsics::from_dfov(641, 479, 100.0).unwrap();
    let m = uniform_mesh(&cam, 33, 25).unwrap();
    let out = render_frame(&img, &WarpField::new(m.clone(), m).unwrap()).unwrap();
    let lossless = out.image == img && out.foldovers == 0;

    let cam = CameraIntrinsics::from_dfov(640, 480, 100.0).unwrap();
    let single = frame(cam, (33, 25), &[], &[]);
    let (_, system) = build_system(&Problem::new(vec![single.clone()]).unwrap(), &EnergyWeights::default(), None).unwrap();
    let exact = dense_minimizer(&system);
    let video = Problem::replicated(single, 5).unwrap();
    let sol = optimize_full(&video, &OptimizeOptions::default()).unwrap();
    let cell = (640.0f64 / 32.0).min(480.0 / 24.0);
    let layout = UnknownLayout::new(&video.frames()[..1]);
    let uniform = layout.pack(&[&video.frames()[0].source], &[vec![]]);
    let (mut disp, mut corner, mut oracle_rel, mut oracle_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for m in &sol.meshes {
        let x = layout.pack(&[m], &[vec![]]);
        // largest coordinate shift of any vertex
        disp = disp.max(max_abs_diff(&x, &uniform));
        corner = corner.max(m.max_distance(&video.frames()[0].source));
        oracle_rel = oracle_rel.max(rel_diff(&x, &exact));
        oracle_abs = oracle_abs.max(max_abs_diff(&x, &exact));
    }
    check(
        lossless && disp < 0.5 * cell && oracle_rel <= 1e-6,
        format!(
            "identity lossless {lossless}; max vertex coordinate shift {disp:.4} px (limit {:.1}, euclidean {corner:.4}); \
             dense-oracle relative gap {oracle_rel:.2e} (limit 1e-6, max abs {oracle_abs:.2e} px)",
            0.5 * cell
        ),
    )
}

fn moving_face_video(frames: usize) -> Problem {
    let cam = CameraIntrinsics::from_dfov(1024, 768, 100.0).unwrap();
    let span = 700.0 / frames.max(1) as f64;
    let list = (0..frames)
        .map(|n| {
            let faces = [
                (1, BBox::new(100.0 + span * n as f64, 380.0, 120.0, 150.0)),
                (2, BBox::new(820.0, 90.0, 110.0, 130.0)),
            ];
            let lines = [(5, [Point2::new(40.0, 60.0), Point2::new(700.0, 70.0)])];
            frame(cam, (33, 25), &faces, &lines)
        })
        .collect();
    Problem::new(list).unwrap()
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

// 8
fn runtime_shape() -> Outcome {
    let ns = [10usize, 20, 40, 80];
    let mut times = Vec::new();
    for &n in &ns {
        let problem = moving_face_video(n);
        let mut best = f64::INFINITY;
        for _ in 0..2 {
            let t = Instant::now();
            optimize_full(&problem, &OptimizeOptions::default()).unwrap();
            best = best.min(t.elapsed().as_secs_f64());
        }
        times.push(best);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let r2 = r_squared(&xs, &times);

    let dir = tempfile::tempdir().unwrap();
    let pattern = write_clip(dir.path(), 1, 1024, 768);
    let config = RunConfig::new(pattern, dir.path().join("annotations.json"), dir.path().join("out"));
    let summary = run(&config).map_err(|e| e.to_string())?;
    let single = summary.metrics.timings_ms.total / 1e3;

    let listed: Vec<String> = ns.iter().zip(&times).map(|(n, t)| format!("N={n}: {t:.3}s")).collect();
    check(
        r2 >= 0.95 && single <= 2.0,
        format!("{}; R^2 {r2:.4} (limit 0.95); single frame end-to-end {single:.3}s (limit 2.0)", listed.join(", ")),
    )
}

// 9
fn argmin_invariance() -> Outcome {
    let problem = small_video(5, (9, 7));
    // solved well past the default tolerance so both sides approximate the exact minimizer
    let lsq = LsqOptions { tol: 1e-13, ..Default::default() };
    let base = optimize_full(&problem, &OptimizeOptions { lsq, ..Default::default() }).unwrap();
    let (layout, _) = build_system(&problem, &EnergyWeights::default(), None).unwrap();
    let flat = |s: &facewarp::Solution| {
        let refs: Vec<&Mesh> = s.meshes.iter().collect();
        layout.pack(&refs, &s.latents)
    };
    let x = flat(&base);
    let mut worst = 0.0f64;
    for c in [0.5, 2.0, 8.0] {
        let opts = OptimizeOptions { weights: EnergyWeights::default().scaled(c), lsq };
        let s = optimize_full(&problem, &opts).unwrap();
        worst = worst.max(max_abs_diff(&flat(&s), &x));
    }
    check(worst <= 1e-8, format!("max coordinate difference {worst:.2e} (limit 1e-8)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("stereographic fixed points", stereographic_fixed_points, Duration::from_secs(1)),
        ("energy and gradient identity", energy_and_gradient, Duration::from_secs(30)),
        ("iterative vs dense solve", dense_oracle_equivalence, Duration::from_secs(30)),
        ("temporal constancy", temporal_constancy, Duration::from_secs(60)),
        ("line preservation", line_preservation, Duration::from_secs(60)),
        ("line tracker", tracker, Duration::from_secs(30)),
        ("identity warp and face-free video", identity_and_no_face, Duration::from_secs(600)),
        ("runtime shape", runtime_shape, Duration::from_secs(600)),
        ("argmin invariance", argmin_invariance, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let took = t.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= *limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {detail} [{:.2}s / {:.0}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            limit.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
