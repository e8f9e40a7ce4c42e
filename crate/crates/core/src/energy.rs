//! The spatio-temporal mesh energy as weighted linear residual rows.
//!
//! Every term is quadratic in the unknowns (mesh vertices and per-face
//! similarity latents), so each contributes rows `sqrt(weight) * (a·x - b)`
//! and the total energy is `‖Ax − b‖²`.
//!
//! Undirected grid edges are enumerated once with weight `2λ`, which equals
//! the double-counted sums over `i` and `j ∈ N(i)`. Likewise the Frobenius
//! norm of a similarity-matrix difference counts `Δa` and `Δb` twice.

use std::collections::HashMap;
use std::io::Write;
use std::ops::{Index, IndexMut};

use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Mesh;
use crate::error::{Error, Result};
use crate::problem::{FrameProblem, Problem};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    /// λ_f
    pub face: f64,
    /// λ_s
    pub smoothness: f64,
    /// λ_e
    pub edge: f64,
    /// λ_b
    pub boundary: f64,
    /// λ_l
    pub line: f64,
    /// λ_c
    pub coherence: f64,
    /// λ_t
    pub temporal: f64,
    /// w_s, weight of the face scale regularizer inside the face term.
    pub scale_weight: f64,
    /// s_f, target face scale.
    pub target_scale: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            face: 4.0,
            smoothness: 1.0,
            edge: 2.0,
            boundary: 4.0,
            line: 64.0,
            coherence: 4.0,
            temporal: 16.0,
            scale_weight: 1.0,
            target_scale: 1.0,
        }
    }
}

impl EnergyWeights {
    /// Every λ multiplied by `c`; `w_s` and `s_f` are left alone.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            face: self.face * c,
            smoothness: self.smoothness * c,
            edge: self.edge * c,
            boundary: self.boundary * c,
            line: self.line * c,
            coherence: self.coherence * c,
            temporal: self.temporal * c,
            ..*self
        }
    }

    /// Sets a weight by name: `lambda_f` / `face`, `lambda_s` / `smoothness`,
    /// `lambda_e` / `edge`, `lambda_b` / `boundary`, `lambda_l` / `line`,
    /// `lambda_c` / `coherence`, `lambda_t` / `temporal`, `w_s` / `scale_weight`,
    /// `s_f` / `target_scale`.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "lambda_f" | "face" => &mut self.face,
            "lambda_s" | "smoothness" => &mut self.smoothness,
            "lambda_e" | "edge" => &mut self.edge,
            "lambda_b" | "boundary" => &mut self.boundary,
            "lambda_l" | "line" => &mut self.line,
            "lambda_c" | "coherence" => &mut self.coherence,
            "lambda_t" | "temporal" => &mut self.temporal,
            "w_s" | "scale_weight" => &mut self.scale_weight,
            "s_f" | "target_scale" => &mut self.target_scale,
            _ => return Err(Error::InvalidArgument(format!("unknown weight '{name}'"))),
        };
        if !(value.is_finite() && (value >= 0.0 || name == "s_f" || name == "target_scale")) {
            return Err(Error::InvalidArgument(format!("weight {name} must be a nonnegative number, got {value}")));
        }
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.face,
            self.smoothness,
            self.edge,
            self.boundary,
            self.line,
            self.coherence,
            self.temporal,
            self.scale_weight,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) && self.target_scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("weights must be finite and nonnegative: {self:?}")))
        }
    }
}

/// Per-face similarity latents `S = [[a, b], [-b, a]]`, `t = (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceLatent {
    pub track_id: u64,
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Slot assignment of the unknown vector. Frame `n` owns a contiguous block:
/// `2V` interleaved vertex coordinates followed by `4` latents per face.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownLayout {
    vertices: usize,
    frame_offsets: Vec<usize>,
    face_ids: Vec<Vec<u64>>,
    len: usize,
}

impl UnknownLayout {
    pub fn new(frames: &[FrameProblem]) -> Self {
        let vertices = frames.first().map_or(0, |f| f.source.len());
        let mut frame_offsets = Vec::with_capacity(frames.len());
        let mut face_ids = Vec::with_capacity(frames.len());
        let mut len = 0;
        for f in frames {
            frame_offsets.push(len);
            face_ids.push(f.faces.iter().map(|k| k.track_id).collect::<Vec<_>>());
            len += 2 * vertices + 4 * f.faces.len();
        }
        Self {
            vertices,
            frame_offsets,
            face_ids,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frames(&self) -> usize {
        self.frame_offsets.len()
    }

    pub fn vertices_per_frame(&self) -> usize {
        self.vertices
    }

    pub fn faces_in(&self, frame: usize) -> &[u64] {
        &self.face_ids[frame]
    }

    #[inline]
    pub fn vx(&self, frame: usize, vertex: usize) -> usize {
        self.frame_offsets[frame] + 2 * vertex
    }

    #[inline]
    pub fn vy(&self, frame: usize, vertex: usize) -> usize {
        self.vx(frame, vertex) + 1
    }

    /// Index of `a` for face slot `k`; `b`, `tx`, `ty` follow.
    #[inline]
    pub fn latent(&self, frame: usize, k: usize) -> usize {
        self.frame_offsets[frame] + 2 * self.vertices + 4 * k
    }

    pub fn face_slot(&self, frame: usize, track_id: u64) -> Option<usize> {
        self.face_ids[frame].binary_search(&track_id).ok()
    }

    /// Uniform meshes with identity latents `(1, 0, 0, 0)`.
    pub fn initial_guess(&self, frames: &[FrameProblem]) -> Vec<f64> {
        let meshes: Vec<&Mesh> = frames.iter().map(|f| &f.source).collect();
        let latents: Vec<Vec<FaceLatent>> = self
            .face_ids
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|&track_id| FaceLatent { track_id, a: 1.0, b: 0.0, tx: 0.0, ty: 0.0 })
                    .collect()
            })
            .collect();
        self.pack(&meshes, &latents)
    }

    pub fn pack(&self, meshes: &[&Mesh], latents: &[Vec<FaceLatent>]) -> Vec<f64> {
        let mut x = vec![0.0; self.len];
        for (n, mesh) in meshes.iter().enumerate() {
            for (i, v) in mesh.vertices().iter().enumerate() {
                x[self.vx(n, i)] = v.x;
                x[self.vy(n, i)] = v.y;
            }
            for l in &latents[n] {
                if let Some(k) = self.face_slot(n, l.track_id) {
                    let j = self.latent(n, k);
                    x[j..j + 4].copy_from_slice(&[l.a, l.b, l.tx, l.ty]);
                }
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64], cols: usize, rows: usize) -> Result<(Vec<Mesh>, Vec<Vec<FaceLatent>>)> {
        self.check(x)?;
        let mut meshes = Vec::with_capacity(self.frames());
        let mut latents = Vec::with_capacity(self.frames());
        for n in 0..self.frames() {
            let verts = (0..self.vertices)
                .map(|i| Point2::new(x[self.vx(n, i)], x[self.vy(n, i)]))
                .collect();
            meshes.push(Mesh::from_vertices(cols, rows, verts)?);
            latents.push(
                self.face_ids[n]
                    .iter()
                    .enumerate()
                    .map(|(k, &track_id)| {
                        let j = self.latent(n, k);
                        FaceLatent { track_id, a: x[j], b: x[j + 1], tx: x[j + 2], ty: x[j + 3] }
                    })
                    .collect(),
            );
        }
        Ok((meshes, latents))
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len {
            return Err(Error::LayoutMismatch { expected: self.len, got: x.len() });
        }
        Ok(())
    }
}

/// Energy term a residual row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Face,
    Smoothness,
    EdgeBending,
    Boundary,
    Line,
    Temporal,
    Coherence,
    Tikhonov,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::Face,
        Term::Smoothness,
        Term::EdgeBending,
        Term::Boundary,
        Term::Line,
        Term::Temporal,
        Term::Coherence,
        Term::Tikhonov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Face => "face",
            Term::Smoothness => "smoothness",
            Term::EdgeBending => "edge_bending",
            Term::Boundary => "boundary",
            Term::Line => "line",
            Term::Temporal => "temporal",
            Term::Coherence => "coherence",
            Term::Tikhonov => "tikhonov",
        }
    }
}

/// Weighted energy per term. `total` excludes the Tikhonov anchor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermEnergies {
    pub face: f64,
    pub smoothness: f64,
    pub edge_bending: f64,
    pub boundary: f64,
    pub line: f64,
    pub temporal: f64,
    pub coherence: f64,
    pub tikhonov: f64,
    pub total: f64,
}

impl Index<Term> for TermEnergies {
    type Output = f64;
    fn index(&self, t: Term) -> &f64 {
        match t {
            Term::Face => &self.face,
            Term::Smoothness => &self.smoothness,
            Term::EdgeBending => &self.edge_bending,
            Term::Boundary => &self.boundary,
            Term::Line => &self.line,
            Term::Temporal => &self.temporal,
            Term::Coherence => &self.coherence,
            Term::Tikhonov => &self.tikhonov,
        }
    }
}

impl IndexMut<Term> for TermEnergies {
    fn index_mut(&mut self, t: Term) -> &mut f64 {
        match t {
            Term::Face => &mut self.face,
            Term::Smoothness => &mut self.smoothness,
            Term::EdgeBending => &mut self.edge_bending,
            Term::Boundary => &mut self.boundary,
            Term::Line => &mut self.line,
            Term::Temporal => &mut self.temporal,
            Term::Coherence => &mut self.coherence,
            Term::Tikhonov => &mut self.tikhonov,
        }
    }
}

impl TermEnergies {
    fn finish_total(&mut self) {
        self.total = Term::ALL
            .iter()
            .filter(|&&t| t != Term::Tikhonov)
            .map(|&t| self[t])
            .sum();
    }

    pub fn add(&mut self, other: &TermEnergies) {
        for t in Term::ALL {
            self[t] += other[t];
        }
        self.finish_total();
    }
}

/// Row accumulator. Rows are stored already multiplied by the square root of
/// their weight.
#[derive(Debug, Clone, Default)]
pub struct SystemBuilder {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
    terms: Vec<Term>,
}

impl SystemBuilder {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            row_ptr: vec![0],
            ..Default::default()
        }
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Appends `scale * (Σ coef·x[col] − rhs)`.
    pub fn push(&mut self, term: Term, scale: f64, entries: &[(usize, f64)], rhs: f64) {
        for &(c, v) in entries {
            debug_assert!(c < self.ncols);
            if v != 0.0 {
                self.cols.push(c);
                self.vals.push(scale * v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.rhs.push(scale * rhs);
        self.terms.push(term);
    }

    pub fn append(&mut self, other: SystemBuilder) {
        assert_eq!(self.ncols, other.ncols);
        let base = self.cols.len();
        self.row_ptr.extend(other.row_ptr[1..].iter().map(|p| p + base));
        self.cols.extend(other.cols);
        self.vals.extend(other.vals);
        self.rhs.extend(other.rhs);
        self.terms.extend(other.terms);
    }

    pub fn finish(self) -> SparseLsqSystem {
        let matrix = CsrMatrix::from_raw(self.ncols, self.row_ptr, self.cols, self.vals);
        let transpose = matrix.transpose();
        SparseLsqSystem {
            matrix,
            transpose,
            rhs: self.rhs,
            terms: self.terms,
        }
    }
}

/// Stacked residual rows `A`, right-hand side `b` and the term of every row.
#[derive(Debug, Clone)]
pub struct SparseLsqSystem {
    matrix: CsrMatrix,
    transpose: CsrMatrix,
    rhs: Vec<f64>,
    terms: Vec<Term>,
}

impl SparseLsqSystem {
    /// A system without term labels (every row counted as [`Term::Face`]).
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)], rhs: Vec<f64>) -> Self {
        assert_eq!(rhs.len(), nrows);
        let matrix = CsrMatrix::from_triplets(nrows, ncols, triplets);
        let transpose = matrix.transpose();
        Self {
            matrix,
            transpose,
            rhs,
            terms: vec![Term::Face; nrows],
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn transpose(&self) -> &CsrMatrix {
        &self.transpose
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn row_count(&self, term: Term) -> usize {
        self.terms.iter().filter(|&&t| t == term).count()
    }

    /// `Ax − b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.matrix.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri -= bi;
        }
        r
    }

    /// `‖Ax − b‖²`, including any Tikhonov rows.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.residual(x).iter().map(|r| r * r).sum()
    }

    /// Gradient of the objective, `2Aᵀ(Ax − b)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residual(x);
        self.transpose.mul_vec(&r).into_iter().map(|g| 2.0 * g).collect()
    }

    /// Writes `row col value` triplets, then `rhs row value` lines.
    pub fn write_triplets(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# rows {} cols {} nnz {}", self.nrows(), self.ncols(), self.nnz())?;
        for (r, c, v) in self.matrix.triplets() {
            writeln!(out, "{r} {c} {v:e}")?;
        }
        for (r, b) in self.rhs.iter().enumerate() {
            writeln!(out, "rhs {r} {b:e}")?;
        }
        Ok(())
    }
}

/// Per-term and total energy of `x`.
pub fn energy_value(system: &SparseLsqSystem, x: &[f64]) -> Result<TermEnergies> {
    if x.len() != system.ncols() {
        return Err(Error::LayoutMismatch { expected: system.ncols(), got: x.len() });
    }
    let r = system.residual(x);
    let mut e = TermEnergies::default();
    for (ri, &t) in r.iter().zip(&system.terms) {
        e[t] += ri * ri;
    }
    e.finish_total();
    Ok(e)
}

/// Face similarity rows for frame `n`. Returns the number of faces skipped
/// because their vertex set is empty.
pub fn assemble_face_term(
    out: &mut SystemBuilder,
    layout: &UnknownLayout,
    n: usize,
    frame: &FrameProblem,
    weights: &EnergyWeights,
) -> usize {
    let mut flagged = 0;
    for (k, face) in frame.faces.iter().enumerate() {
        if face.vertex_set.is_empty() {
            flagged += 1;
            continue;
        }
        let l = layout.latent(n, k);
        let (a, b, tx, ty) = (l, l + 1, l + 2, l + 3);
        let s = (weights.face * face.weight).sqrt();
        if s > 0.0 {
            for &i in &face.vertex_set {
                let u = frame.stereo.vertices()[i];
                // v_x − (a u_x + b u_y + t_x)
                out.push(
                    Term::Face,
                    s,
                    &[(layout.vx(n, i), 1.0), (a, -u.x), (b, -u.y), (tx, -1.0)],
                    0.0,
                );
                // v_y − (−b u_x + a u_y + t_y)
                out.push(
                    Term::Face,
                    s,
                    &[(layout.vy(n, i), 1.0), (a, -u.y), (b, u.x), (ty, -1.0)],
                    0.0,
                );
            }
        }
        let s = (weights.face * weights.scale_weight).sqrt();
        if s > 0.0 {
            out.push(Term::Face, s, &[(a, 1.0)], weights.target_scale);
        }
    }
    flagged
}

fn grid_edges(cols: usize, rows: usize) -> impl Iterator<Item = (usize, usize)> {
    let horizontal = (0..rows).flat_map(move |r| (0..cols - 1).map(move |c| (r * cols + c, r * cols + c + 1)));
    let vertical = (0..rows - 1).flat_map(move |r| (0..cols).map(move |c| (r * cols + c, (r + 1) * cols + c)));
    horizontal.chain(vertical)
}

pub fn assemble_spatial_smoothness(
    out: &mut SystemBuilder,
    layout: &UnknownLayout,
    n: usize,
    source: &Mesh,
    weights: &EnergyWeights,
) {
    let s = (2.0 * weights.smoothness).sqrt();
    if s == 0.0 {
        return;
    }
    for (i, j) in grid_edges(source.cols(), source.rows()) {
        out.push(Term::Smoothness, s, &[(layout.vx(n, i), 1.0), (layout.vx(n, j), -1.0)], 0.0);
        out.push(Term::Smoothness, s, &[(layout.vy(n, i), 1.0), (layout.vy(n, j), -1.0)], 0.0);
    }
}

/// Cross product of each warped edge with its unit source direction.
pub fn assemble_edge_bending(
    out: &mut SystemBuilder,
    layout: &UnknownLayout,
    n: usize,
    source: &Mesh,
    weights: &EnergyWeights,
) {
    let s = (2.0 * weights.edge).sqrt();
    if s == 0.0 {
        return;
    }
    let p = source.vertices();
    for (i, j) in grid_edges(source.cols(), source.rows()) {
        let e = (p[i] - p[j]).normalize();
        // (v_i − v_j) × e = Δx e_y − Δy e_x
        out.push(
            Term::EdgeBending,
            s,
            &[
                (layout.vx(n, i), e.y),
                (layout.vx(n, j), -e.y),
                (layout.vy(n, i), -e.x),
                (layout.vy(n, j), e.x),
            ],
            0.0,
        );
    }
}

pub fn assemble_boundary(
    out: &mut SystemBuilder,
    layout: &UnknownLayout,
    n: usize,
    frame: &FrameProblem,
    weights: &EnergyWeights,
) {
    let s = weights.boundary.sqrt();
    if s == 0.0 {
        return;
    }
    let (cols, rows) = (frame.source.cols(), frame.source.rows());
    let w = f64::from(frame.intrinsics.width());
    let h = f64::from(frame.intrinsics.height());
    for r in 0..rows {
        out.push(Term::Boundary, s, &[(layout.vx(n, r * cols), 1.0)], 0.0);
        out.push(Term::Boundary, s, &[(layout.vx(n, r * cols + cols - 1), 1.0)], w);
    }
    for c in 0..cols {
        out.push(Term::Boundary, s, &[(layout.vy(n, c), 1.0)], 0.0);
        out.push(Term::Boundary, s, &[(layout.vy(n, (rows - 1) * cols + c), 1.0)], h);
    }
}

/// One row `n̂ᵀ(Q w)` per crossing: the line residual with the per-quad scale
/// eliminated at its optimum.
pub fn assemble_line_preservation(
    out: &mut SystemBuilder,
    layout: &UnknownLayout,
    n: usize,
    frame: &FrameProblem,
    weights: &EnergyWeights,
) {
    let s = weights.line.sqrt();
    if s == 0.0 {
        return;
    }
    let mut entries = Vec::with_capacity(8);
    for line in &frame.lines {
        for c in &line.crossings {
            entries.clear();
            for (&v, &w) in c.corners.iter().zip(&c.weights) {
                entries.push((layout.vx(n, v), c.normal.x * w));
                entries.push((layout.vy(n, v), c.normal.y * w));
            }
            out.push(Term::Line, s, &entries, 0.0);
        }
    }
}

pub fn assemble_temporal(out: &mut SystemBuilder, layout: &UnknownLayout, weights: &EnergyWeights) {
    let s = weights.temporal.sqrt();
    if s == 0.0 {
        return;
    }
    for n in 1..layout.frames() {
        for i in 0..layout.vertices_per_frame() {
            out.push(Term::Temporal, s, &[(layout.vx(n, i), 1.0), (layout.vx(n - 1, i), -1.0)], 0.0);
            out.push(Term::Temporal, s, &[(layout.vy(n, i), 1.0), (layout.vy(n - 1, i), -1.0)], 0.0);
        }
    }
}

/// Latent smoothness for faces present in both frames of a transition.
pub fn assemble_coherent_embedding(out: &mut SystemBuilder, layout: &UnknownLayout, weights: &EnergyWeights) {
    if weights.coherence == 0.0 {
        return;
    }
    let s_rot = (2.0 * weights.coherence).sqrt();
    let s_t = weights.coherence.sqrt();
    for n in 1..layout.frames() {
        for (k, &id) in layout.faces_in(n).iter().enumerate() {
            let Some(kp) = layout.face_slot(n - 1, id) else { continue };
            let cur = layout.latent(n, k);
            let prev = layout.latent(n - 1, kp);
            for d in 0..4 {
                let s = if d < 2 { s_rot } else { s_t };
                out.push(Term::Coherence, s, &[(cur + d, 1.0), (prev + d, -1.0)], 0.0);
            }
        }
    }
}

/// Rows of one frame's spatial and line terms.
fn assemble_frame(layout: &UnknownLayout, n: usize, frame: &FrameProblem, weights: &EnergyWeights) -> SystemBuilder {
    let mut b = SystemBuilder::new(layout.len());
    let flagged = assemble_face_term(&mut b, layout, n, frame, weights);
    if flagged > 0 {
        log::warn!("frame {n}: {flagged} face(s) with an empty vertex set");
    }
    assemble_spatial_smoothness(&mut b, layout, n, &frame.source, weights);
    assemble_edge_bending(&mut b, layout, n, &frame.source, weights);
    assemble_boundary(&mut b, layout, n, frame, weights);
    assemble_line_preservation(&mut b, layout, n, frame, weights);
    b
}

/// Rows of every term over `frames`, before finishing. Used directly when
/// extra rows need appending.
pub fn assemble(frames: &[FrameProblem], layout: &UnknownLayout, weights: &EnergyWeights) -> SystemBuilder {
    let parts: Vec<SystemBuilder> = frames
        .par_iter()
        .enumerate()
        .map(|(n, f)| assemble_frame(layout, n, f, weights))
        .collect();
    let mut b = SystemBuilder::new(layout.len());
    for p in parts {
        b.append(p);
    }
    assemble_temporal(&mut b, layout, weights);
    assemble_coherent_embedding(&mut b, layout, weights);
    b
}

/// Appends `sqrt(mu) · (x − anchor)` for every unknown.
pub fn append_tikhonov(out: &mut SystemBuilder, mu: f64, anchor: &[f64]) {
    assert_eq!(anchor.len(), out.ncols());
    let s = mu.sqrt();
    for (j, &a) in anchor.iter().enumerate() {
        out.push(Term::Tikhonov, s, &[(j, 1.0)], a);
    }
}

/// Optional Tikhonov anchor toward an initial guess.
#[derive(Debug, Clone, Copy)]
pub struct Tikhonov<'a> {
    pub mu: f64,
    pub anchor: &'a [f64],
}

/// Full-volume system over all frames.
pub fn build_system(
    problem: &Problem,
    weights: &EnergyWeights,
    tikhonov: Option<Tikhonov<'_>>,
) -> Result<(UnknownLayout, SparseLsqSystem)> {
    if problem.is_empty() {
        return Err(Error::EmptyVideo);
    }
    weights.validate()?;
    let layout = UnknownLayout::new(problem.frames());
    let mut b = assemble(problem.frames(), &layout, weights);
    if let Some(t) = tikhonov {
        layout.check(t.anchor)?;
        append_tikhonov(&mut b, t.mu, t.anchor);
    }
    Ok((layout, b.finish()))
}

/// Rows anchoring a single-frame system to the previous frame's solved mesh
/// and latents, which are constants here.
pub fn append_sequential_anchor(
    out: &mut SystemBuilder,
    layout: &UnknownLayout,
    prev_mesh: &Mesh,
    prev_latents: &[FaceLatent],
    weights: &EnergyWeights,
) {
    assert_eq!(layout.frames(), 1);
    let s = weights.temporal.sqrt();
    if s > 0.0 {
        for (i, v) in prev_mesh.vertices().iter().enumerate() {
            out.push(Term::Temporal, s, &[(layout.vx(0, i), 1.0)], v.x);
            out.push(Term::Temporal, s, &[(layout.vy(0, i), 1.0)], v.y);
        }
    }
    if weights.coherence > 0.0 {
        let prev: HashMap<u64, &FaceLatent> = prev_latents.iter().map(|l| (l.track_id, l)).collect();
        let s_rot = (2.0 * weights.coherence).sqrt();
        let s_t = weights.coherence.sqrt();
        for (k, id) in layout.faces_in(0).iter().enumerate() {
            if let Some(p) = prev.get(id) {
                let j = layout.latent(0, k);
                out.push(Term::Coherence, s_rot, &[(j, 1.0)], p.a);
                out.push(Term::Coherence, s_rot, &[(j + 1, 1.0)], p.b);
                out.push(Term::Coherence, s_t, &[(j + 2, 1.0)], p.tx);
                out.push(Term::Coherence, s_t, &[(j + 3, 1.0)], p.ty);
            }
        }
    }
}
