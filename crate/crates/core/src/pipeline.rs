//! End-to-end run: ingest, track, assemble, solve, render, report.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use serde::Serialize;

use crate::annotations::{load_annotations, VideoAnnotations};
use crate::camera::{Mesh, DEFAULT_GRID};
use crate::energy::{build_system, energy_value, EnergyWeights, FaceLatent, TermEnergies};
use crate::error::{Error, Result};
use crate::problem::{lines_per_frame, prepare_frame, FaceInput, Problem};
use crate::render::{render_frame, WarpField};
use crate::solver::{optimize, LsqOptions, Mode, OptimizeOptions, Solution};
use crate::tracking::{build_pyramid, to_grayscale, track_lines, LineTrack, LkParams, TrackEnd};

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// printf-style numbered pattern, e.g. `frames/%04d.png`.
    pub frames: String,
    /// File number of frame 0.
    pub first_frame: usize,
    pub annotations: PathBuf,
    pub out_dir: PathBuf,
    pub mode: Mode,
    /// Columns × rows.
    pub grid: (usize, usize),
    pub weights: EnergyWeights,
    pub lsq: LsqOptions,
    pub lk: LkParams,
    pub render: bool,
    pub export_mesh: bool,
    /// Metrics JSON path; defaults to `<out_dir>/metrics.json`.
    pub export_metrics: Option<PathBuf>,
    pub dump_system: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(frames: impl Into<String>, annotations: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            frames: frames.into(),
            first_frame: 0,
            annotations: annotations.into(),
            out_dir: out_dir.into(),
            mode: Mode::Full,
            grid: DEFAULT_GRID,
            weights: EnergyWeights::default(),
            lsq: LsqOptions::default(),
            lk: LkParams::default(),
            render: true,
            export_mesh: false,
            export_metrics: None,
            dump_system: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.0 < 2 || self.grid.1 < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 2x2, got {}x{}",
                self.grid.0, self.grid.1
            )));
        }
        self.weights.validate()?;
        frame_path(&self.frames, 0)?;
        Ok(())
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.export_metrics
            .clone()
            .unwrap_or_else(|| self.out_dir.join("metrics.json"))
    }
}

/// Substitutes `number` into the first `%d` / `%0Nd` placeholder.
pub fn frame_path(pattern: &str, number: usize) -> Result<PathBuf> {
    let bad = || Error::InvalidArgument(format!("frame pattern '{pattern}' needs a %d or %0Nd placeholder"));
    let start = pattern.find('%').ok_or_else(bad)?;
    let rest = &pattern[start + 1..];
    let end = rest.find('d').ok_or_else(bad)?;
    let spec = &rest[..end];
    let width = if spec.is_empty() {
        0
    } else if spec.starts_with('0') && spec.chars().all(|c| c.is_ascii_digit()) {
        spec.parse::<usize>().map_err(|_| bad())?
    } else {
        return Err(bad());
    };
    Ok(PathBuf::from(format!(
        "{}{:0width$}{}",
        &pattern[..start],
        number,
        &rest[end + 1..],
        width = width
    )))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub annotation_ingest: f64,
    pub line_tracking: f64,
    pub assembly: f64,
    pub solve: f64,
    pub image_warping: f64,
    pub diagnostics: f64,
    /// Wall clock of the whole run.
    pub total: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.annotation_ingest + self.line_tracking + self.assembly + self.solve + self.image_warping + self.diagnostics
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TrackStats {
    pub seeded: usize,
    pub completed: usize,
    pub lost: usize,
    pub forward_backward_rejected: usize,
    pub orientation_rejected: usize,
    pub mean_frames_alive: f64,
}

impl TrackStats {
    pub fn from_tracks(tracks: &[LineTrack]) -> Self {
        let mut s = TrackStats {
            seeded: tracks.len(),
            ..Default::default()
        };
        for t in tracks {
            match t.end {
                TrackEnd::Completed => s.completed += 1,
                TrackEnd::Lost(_) => s.lost += 1,
                TrackEnd::ForwardBackward { .. } => s.forward_backward_rejected += 1,
                TrackEnd::Orientation { .. } => s.orientation_rejected += 1,
            }
        }
        if !tracks.is_empty() {
            s.mean_frames_alive = tracks.iter().map(|t| t.endpoints.len() as f64).sum::<f64>() / tracks.len() as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub rel_gradient: f64,
    pub converged: bool,
    pub unknowns: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub mode: Mode,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub grid: [usize; 2],
    pub weights: EnergyWeights,
    pub solver: SolverStats,
    pub timings_ms: StageTimings,
    /// Full-volume energy terms at the initialization (uniform meshes).
    pub initial_energies: TermEnergies,
    /// Full-volume energy terms at the solution.
    pub energies: TermEnergies,
    /// The objective actually minimized (differs from `energies` in sequential mode).
    pub objective: TermEnergies,
    pub foldovers: Vec<usize>,
    pub faces_per_frame: Vec<usize>,
    pub line_crossings_per_frame: Vec<usize>,
    pub tracks: TrackStats,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: Metrics,
    pub meshes: Vec<Mesh>,
    pub latents: Vec<Vec<FaceLatent>>,
    pub tracks: Vec<LineTrack>,
    pub written_frames: Vec<PathBuf>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.into_rgb8())
        .map_err(|source| Error::Image { path: path.to_owned(), source })
}

fn load_mask(path: &Path) -> Result<GrayImage> {
    image::open(path)
        .map(|i| i.into_luma8())
        .map_err(|source| Error::Image { path: path.to_owned(), source })
}

fn load_frames(config: &RunConfig, ann: &VideoAnnotations) -> Result<Vec<RgbImage>> {
    let (w, h) = (ann.intrinsics[0].width(), ann.intrinsics[0].height());
    (0..ann.frame_count())
        .into_par_iter()
        .map(|n| {
            let path = frame_path(&config.frames, config.first_frame + n)?;
            let img = load_rgb(&path)?;
            if img.dimensions() != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected_w: w,
                    expected_h: h,
                    got_w: img.width(),
                    got_h: img.height(),
                });
            }
            Ok(img)
        })
        .collect()
}

fn load_masks(ann: &VideoAnnotations) -> Result<HashMap<PathBuf, GrayImage>> {
    let mut paths: Vec<&PathBuf> = ann
        .frames
        .iter()
        .flat_map(|f| f.faces.iter().filter_map(|r| r.mask.as_ref()))
        .collect();
    paths.sort();
    paths.dedup();
    paths
        .into_par_iter()
        .map(|p| load_mask(p).map(|m| (p.clone(), m)))
        .collect()
}

pub fn write_mesh_csv(path: &Path, meshes: &[Mesh]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "frame,vertex_row,vertex_col,x,y").map_err(io)?;
    for (n, m) in meshes.iter().enumerate() {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.vertex(c, r);
                writeln!(out, "{n},{r},{c},{},{}", v.x, v.y).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

pub fn write_latent_csv(path: &Path, latents: &[Vec<FaceLatent>]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "frame,track_id,a,b,tx,ty").map_err(io)?;
    for (n, frame) in latents.iter().enumerate() {
        for l in frame {
            writeln!(out, "{n},{},{},{},{},{}", l.track_id, l.a, l.b, l.tx, l.ty).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Writes the metrics JSON.
pub fn export_metrics(metrics: &Metrics, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(metrics).map_err(|source| Error::Json { path: path.to_owned(), source })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let wall = Instant::now();
    let mut timings = StageTimings::default();

    // annotation ingest
    let t = Instant::now();
    let ann = load_annotations(&config.annotations)?;
    let seeds = ann.line_seeds();
    let frames = if config.render || !seeds.is_empty() {
        Some(load_frames(config, &ann)?)
    } else {
        None
    };
    let masks = load_masks(&ann)?;
    timings.annotation_ingest = ms(t);

    // line tracking
    let t = Instant::now();
    let tracks = match &frames {
        Some(frames) if !seeds.is_empty() => {
            let pyramids = frames
                .par_iter()
                .map(|f| build_pyramid(to_grayscale(f), config.lk.levels))
                .collect::<Result<Vec<_>>>()?;
            track_lines(&pyramids, &seeds, &config.lk)
        }
        _ => Vec::new(),
    };
    timings.line_tracking = ms(t);

    // assembly of per-frame data
    let t = Instant::now();
    let (cols, rows) = config.grid;
    let lines = lines_per_frame(&tracks, ann.frame_count());
    let frame_problems = (0..ann.frame_count())
        .into_par_iter()
        .map(|n| {
            let inputs: Vec<FaceInput<'_>> = ann.frames[n]
                .faces
                .iter()
                .map(|r| FaceInput { record: r, mask: r.mask.as_ref().map(|p| &masks[p]) })
                .collect();
            prepare_frame(ann.intrinsics[n], cols, rows, &inputs, &lines[n])
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem::new(frame_problems)?;
    let prep_ms = ms(t);

    let opts = OptimizeOptions { weights: config.weights, lsq: config.lsq };
    let t = Instant::now();
    let Solution { meshes, latents, report } = optimize(&problem, config.mode, &opts)?;
    let opt_ms = ms(t);
    timings.assembly = prep_ms + report.assembly_ms;
    timings.solve = opt_ms - report.assembly_ms;
    if !report.converged {
        log::warn!("solver did not reach tolerance {:e}", config.lsq.tol);
    }

    // full-volume energy at the solution, optional system dump
    let t = Instant::now();
    let (layout, system) = build_system(&problem, &config.weights, None)?;
    let x = layout.pack(&meshes.iter().collect::<Vec<_>>(), &latents);
    let energies = energy_value(&system, &x)?;
    let initial_energies = energy_value(&system, &layout.initial_guess(problem.frames()))?;
    if let Some(path) = &config.dump_system {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        system.write_triplets(&mut out).map_err(io)?;
        out.flush().map_err(io)?;
    }
    drop(system);
    timings.diagnostics = ms(t);

    // image warping
    let t = Instant::now();
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut foldovers = vec![0; problem.len()];
    let mut written = Vec::new();
    if let (true, Some(frames)) = (config.render, &frames) {
        let results = frames
            .par_iter()
            .zip(&meshes)
            .enumerate()
            .map(|(n, (img, mesh))| {
                let field = WarpField::new(problem.frames()[n].source.clone(), mesh.clone())?;
                let out = render_frame(img, &field)?;
                let input = frame_path(&config.frames, config.first_frame + n)?;
                let name = input.file_name().ok_or_else(|| {
                    Error::InvalidArgument(format!("frame path {} has no file name", input.display()))
                })?;
                let path = config.out_dir.join(name);
                out.image
                    .save(&path)
                    .map_err(|source| Error::Image { path: path.clone(), source })?;
                Ok((out.foldovers, path))
            })
            .collect::<Result<Vec<_>>>()?;
        for (n, (f, p)) in results.into_iter().enumerate() {
            foldovers[n] = f;
            written.push(p);
        }
    }
    if config.export_mesh {
        write_mesh_csv(&config.out_dir.join("meshes.csv"), &meshes)?;
        write_latent_csv(&config.out_dir.join("latents.csv"), &latents)?;
    }
    timings.image_warping = ms(t);
    timings.total = ms(wall);

    let first = &problem.frames()[0];
    let metrics = Metrics {
        mode: config.mode,
        frames: problem.len(),
        width: first.intrinsics.width(),
        height: first.intrinsics.height(),
        grid: [cols, rows],
        weights: config.weights,
        solver: SolverStats {
            iterations: report.iterations,
            rel_gradient: report.rel_gradient,
            converged: report.converged,
            unknowns: report.unknowns,
            rows: report.rows,
        },
        timings_ms: timings,
        initial_energies,
        energies,
        objective: report.final_energy,
        foldovers,
        faces_per_frame: problem.frames().iter().map(|f| f.faces.len()).collect(),
        line_crossings_per_frame: problem.frames().iter().map(|f| f.crossing_count()).collect(),
        tracks: TrackStats::from_tracks(&tracks),
    };
    export_metrics(&metrics, &config.metrics_path())?;

    Ok(RunSummary {
        metrics,
        meshes,
        latents,
        tracks,
        written_frames: written,
    })
}
