//! Sparse least-squares solve (LSMR on a column-scaled operator) and the
//! full-volume and sequential optimization schedules.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::Mesh;
use crate::energy::{
    append_sequential_anchor, assemble, build_system, energy_value, EnergyWeights, FaceLatent, SparseLsqSystem,
    TermEnergies, UnknownLayout,
};
use crate::error::{Error, Result};
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    /// Stop once `‖Aᵀ(Ax − b)‖ ≤ tol · ‖Aᵀb‖`.
    pub tol: f64,
    /// Defaults to ten times the number of unknowns.
    pub max_iter: Option<usize>,
    /// Iterations between exact gradient evaluations.
    pub check_every: usize,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖Aᵀ(Ax − b)‖ / ‖Aᵀb‖` at `x`.
    pub rel_gradient: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale_in_place(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

/// Stable Givens rotation: `(c, s, r)` with `c·a + s·b = r`.
fn sym_ortho(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        (a.signum(), 0.0, a.abs())
    } else if a == 0.0 {
        (0.0, b.signum(), b.abs())
    } else if b.abs() > a.abs() {
        let tau = a / b;
        let s = b.signum() / (1.0 + tau * tau).sqrt();
        (s * tau, s, b / s)
    } else {
        let tau = b / a;
        let c = a.signum() / (1.0 + tau * tau).sqrt();
        (c, c * tau, a / c)
    }
}

struct Gradient<'a> {
    system: &'a SparseLsqSystem,
    r: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Gradient<'a> {
    fn new(system: &'a SparseLsqSystem) -> Self {
        Self {
            system,
            r: vec![0.0; system.nrows()],
            g: vec![0.0; system.ncols()],
        }
    }

    /// `‖Aᵀ(b − Ax)‖`
    fn norm_at(&mut self, x: &[f64]) -> f64 {
        self.system.matrix().mul_vec_into(x, &mut self.r);
        for (ri, bi) in self.r.iter_mut().zip(self.system.rhs()) {
            *ri = bi - *ri;
        }
        self.system.transpose().mul_vec_into(&self.r, &mut self.g);
        norm(&self.g)
    }
}

/// Minimizes `‖Ax − b‖` starting from `x_init`.
///
/// LSMR runs on `A D` with `D` the inverse column norms, solving for the
/// correction to `x_init`; rank-deficient directions therefore keep their
/// initial values. The stopping test uses the exact unscaled gradient.
/// Reaching `max_iter` returns the best checked iterate with
/// `converged = false`.
pub fn solve_lsq(system: &SparseLsqSystem, x_init: &[f64], opts: &LsqOptions) -> Result<LsqSolution> {
    let (m, n) = (system.nrows(), system.ncols());
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("least-squares system is empty".into()));
    }
    if x_init.len() != n {
        return Err(Error::LayoutMismatch { expected: n, got: x_init.len() });
    }
    let a = system.matrix();
    let at = system.transpose();
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    let check_every = opts.check_every.max(1);

    let mut grad = Gradient::new(system);
    let atb = norm(&at.mul_vec(system.rhs()));
    let g0 = grad.norm_at(x_init);
    let reference = if atb > 0.0 { atb } else { g0 };
    if g0 <= opts.tol * reference || reference == 0.0 {
        return Ok(LsqSolution {
            x: x_init.to_vec(),
            iterations: 0,
            rel_gradient: if reference > 0.0 { g0 / reference } else { 0.0 },
            converged: true,
        });
    }

    let d: Vec<f64> = a
        .column_norms()
        .into_iter()
        .map(|c| if c > 0.0 { 1.0 / c } else { 0.0 })
        .collect();

    // scaled products: A D v and D Aᵀ u
    let mut tmp_n = vec![0.0; n];
    let mut av = vec![0.0; m];
    let mut atu = vec![0.0; n];

    // u = b − A x0
    let mut u: Vec<f64> = grad.r.clone();
    let mut beta = norm(&u);
    if beta > 0.0 {
        scale_in_place(&mut u, 1.0 / beta);
    }
    let mut v = vec![0.0; n];
    at.mul_vec_into(&u, &mut v);
    v.iter_mut().zip(&d).for_each(|(vi, di)| *vi *= di);
    let mut alpha = norm(&v);
    if alpha > 0.0 {
        scale_in_place(&mut v, 1.0 / alpha);
    }

    let mut zetabar = alpha * beta;
    let mut alphabar = alpha;
    let mut rho = 1.0;
    let mut rhobar = 1.0;
    let mut cbar = 1.0;
    let mut sbar = 0.0;
    let mut h = v.clone();
    let mut hbar = vec![0.0; n];
    let mut y = vec![0.0; n];

    let mut x = x_init.to_vec();
    let mut best = (g0, x.clone(), 0usize);
    let mut iterations = 0;

    let current = |y: &[f64], x: &mut Vec<f64>| {
        for j in 0..n {
            x[j] = x_init[j] + d[j] * y[j];
        }
    };

    while iterations < max_iter {
        iterations += 1;

        // u = A D v − α u
        tmp_n.iter_mut().zip(&v).zip(&d).for_each(|((t, vi), di)| *t = vi * di);
        a.mul_vec_into(&tmp_n, &mut av);
        u.iter_mut().zip(&av).for_each(|(ui, ai)| *ui = ai - alpha * *ui);
        beta = norm(&u);
        if beta > 0.0 {
            scale_in_place(&mut u, 1.0 / beta);
            // v = D Aᵀ u − β v
            at.mul_vec_into(&u, &mut atu);
            v.iter_mut()
                .zip(&atu)
                .zip(&d)
                .for_each(|((vi, ai), di)| *vi = di * ai - beta * *vi);
            alpha = norm(&v);
            if alpha > 0.0 {
                scale_in_place(&mut v, 1.0 / alpha);
            }
        }

        let rhoold = rho;
        let (c, s, r) = sym_ortho(alphabar, beta);
        rho = r;
        let thetanew = s * alpha;
        alphabar = c * alpha;

        let rhobarold = rhobar;
        let thetabar = sbar * rho;
        let (cb, sb, rb) = sym_ortho(cbar * rho, thetanew);
        cbar = cb;
        sbar = sb;
        rhobar = rb;
        let zeta = cbar * zetabar;
        zetabar = -sbar * zetabar;

        let hb = thetabar * rho / (rhoold * rhobarold);
        hbar.iter_mut().zip(&h).for_each(|(hb_i, h_i)| *hb_i = h_i - hb * *hb_i);
        let step = zeta / (rho * rhobar);
        y.iter_mut().zip(&hbar).for_each(|(yi, hi)| *yi += step * hi);
        let hs = thetanew / rho;
        h.iter_mut().zip(&v).for_each(|(hi, vi)| *hi = vi - hs * *hi);

        let breakdown = !(rho * rhobar).is_finite() || beta == 0.0 || alpha == 0.0 || zetabar == 0.0;
        if iterations % check_every == 0 || breakdown || iterations == max_iter {
            current(&y, &mut x);
            let g = grad.norm_at(&x);
            if g < best.0 {
                best = (g, x.clone(), iterations);
            }
            if g <= opts.tol * reference {
                return Ok(LsqSolution {
                    x,
                    iterations,
                    rel_gradient: g / reference,
                    converged: true,
                });
            }
            if breakdown {
                break;
            }
        }
    }

    log::warn!(
        "least-squares solve stopped after {iterations} iterations at relative gradient {:.3e}",
        best.0 / reference
    );
    Ok(LsqSolution {
        x: best.1,
        iterations,
        rel_gradient: best.0 / reference,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Sequential,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "sequential" => Ok(Mode::Sequential),
            _ => Err(Error::InvalidArgument(format!("mode must be 'full' or 'sequential', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub weights: EnergyWeights,
    pub lsq: LsqOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            lsq: LsqOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: Mode,
    /// Summed over all solves.
    pub iterations: usize,
    /// Worst relative normal-equation residual over all solves.
    pub rel_gradient: f64,
    pub converged: bool,
    pub unknowns: usize,
    pub rows: usize,
    pub assembly_ms: f64,
    pub solve_ms: f64,
    /// Objective being minimized at the initialization. In sequential mode
    /// this sums the per-frame objectives (with their anchor rows).
    pub initial_energy: TermEnergies,
    pub final_energy: TermEnergies,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub meshes: Vec<Mesh>,
    /// Latents per frame, ordered by track id.
    pub latents: Vec<Vec<FaceLatent>>,
    pub report: SolveReport,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One joint solve over every frame.
pub fn optimize_full(problem: &Problem, opts: &OptimizeOptions) -> Result<Solution> {
    let t = Instant::now();
    let (layout, system) = build_system(problem, &opts.weights, None)?;
    let assembly_ms = ms(t);

    let x0 = layout.initial_guess(problem.frames());
    let initial_energy = energy_value(&system, &x0)?;
    let t = Instant::now();
    let sol = solve_lsq(&system, &x0, &opts.lsq)?;
    let solve_ms = ms(t);
    let final_energy = energy_value(&system, &sol.x)?;

    let (cols, rows) = problem.grid();
    let (meshes, latents) = layout.unpack(&sol.x, cols, rows)?;
    Ok(Solution {
        meshes,
        latents,
        report: SolveReport {
            mode: Mode::Full,
            iterations: sol.iterations,
            rel_gradient: sol.rel_gradient,
            converged: sol.converged,
            unknowns: layout.len(),
            rows: system.nrows(),
            assembly_ms,
            solve_ms,
            initial_energy,
            final_energy,
        },
    })
}

/// Frame-by-frame solve; each frame is anchored to the previous frame's
/// solution, which is held fixed.
pub fn optimize_sequential(problem: &Problem, opts: &OptimizeOptions) -> Result<Solution> {
    if problem.is_empty() {
        return Err(Error::EmptyVideo);
    }
    opts.weights.validate()?;
    let (cols, rows) = problem.grid();
    let mut meshes: Vec<Mesh> = Vec::with_capacity(problem.len());
    let mut latents: Vec<Vec<FaceLatent>> = Vec::with_capacity(problem.len());
    let mut report = SolveReport {
        mode: Mode::Sequential,
        iterations: 0,
        rel_gradient: 0.0,
        converged: true,
        unknowns: 0,
        rows: 0,
        assembly_ms: 0.0,
        solve_ms: 0.0,
        initial_energy: TermEnergies::default(),
        final_energy: TermEnergies::default(),
    };

    for n in 0..problem.len() {
        let frames = &problem.frames()[n..=n];
        let t = Instant::now();
        let layout = UnknownLayout::new(frames);
        let mut b = assemble(frames, &layout, &opts.weights);
        if n > 0 {
            append_sequential_anchor(&mut b, &layout, &meshes[n - 1], &latents[n - 1], &opts.weights);
        }
        let system = b.finish();
        report.assembly_ms += ms(t);

        let x0 = layout.initial_guess(frames);
        report.initial_energy.add(&energy_value(&system, &x0)?);
        let t = Instant::now();
        let sol = solve_lsq(&system, &x0, &opts.lsq)?;
        report.solve_ms += ms(t);
        report.final_energy.add(&energy_value(&system, &sol.x)?);

        report.iterations += sol.iterations;
        report.rel_gradient = report.rel_gradient.max(sol.rel_gradient);
        report.converged &= sol.converged;
        report.unknowns += layout.len();
        report.rows += system.nrows();

        let (mut m, mut l) = layout.unpack(&sol.x, cols, rows)?;
        meshes.push(m.pop().unwrap());
        latents.push(l.pop().unwrap());
    }
    Ok(Solution { meshes, latents, report })
}

pub fn optimize(problem: &Problem, mode: Mode, opts: &OptimizeOptions) -> Result<Solution> {
    match mode {
        Mode::Full => optimize_full(problem, opts),
        Mode::Sequential => optimize_sequential(problem, opts),
    }
}
