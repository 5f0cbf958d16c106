//! Symmetric doubly stochastic mixing matrices: the spectral statistic
//! `δ(W) = ‖W − J‖₂²` (with `J = 𝟙𝟙ᵀ/M`), standard initializers, exact
//! projections onto each constraint piece, and the projected-gradient
//! solver for the mixing step of the alternating optimization.

use alloc::vec::Vec;

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::Rng;

use crate::beamopt::BeamformerSet;
use crate::channel::ChannelSet;
use crate::convergence::{g_factor, p6_objective, ConvergenceParams, ErrorStats, ErrorWeightMode, ErrorWeights};
use crate::error::{Error, Result};
use crate::linalg::{cdot, is_symmetric, sqrt, sym_eig_sorted, RMatrix, RVector};
use crate::rng::SimRng;
use crate::topology::TopologyGraph;

/// Tolerance used for every feasibility check on mixing matrices.
pub const FEASIBILITY_TOL: f64 = 1e-9;

fn averaging(m: usize) -> RMatrix {
    RMatrix::from_element(m, m, 1.0 / m as f64)
}

/// Eigenvalues of `W − J`, descending.
fn deviation_spectrum(w: &RMatrix) -> (Vec<f64>, RMatrix) {
    let m = w.nrows();
    sym_eig_sorted(&(w - averaging(m)))
}

/// Square of the largest eigenvalue magnitude of `W` other than the unit
/// eigenvalue, i.e. `‖W − J‖₂²`.
pub fn delta(w: &RMatrix) -> Result<f64> {
    if !is_symmetric(w, 1e-9) {
        return Err(Error::InvalidMatrix("mixing matrix must be symmetric"));
    }
    let (values, _) = deviation_spectrum(w);
    let peak = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(peak * peak)
}

/// Checks symmetry, unit row sums, the `[0, 1]` box and the graph pattern.
pub fn check_mixing(w: &RMatrix, graph: &TopologyGraph, tol: f64) -> Result<()> {
    let m = graph.num_devices();
    if w.nrows() != m || w.ncols() != m {
        return Err(Error::InvalidMatrix("mixing matrix must be M x M"));
    }
    if !is_symmetric(w, tol) {
        return Err(Error::InvalidMatrix("mixing matrix must be symmetric"));
    }
    for i in 0..m {
        if (w.row(i).sum() - 1.0).abs() > tol {
            return Err(Error::InvalidMatrix("rows must sum to one"));
        }
        for j in 0..m {
            let v = w[(i, j)];
            if v < -tol || v > 1.0 + tol {
                return Err(Error::InvalidMatrix("entries must lie in [0, 1]"));
            }
            if i != j && !graph.linked(i, j) && v != 0.0 {
                return Err(Error::InvalidMatrix("weight on an absent link"));
            }
        }
    }
    Ok(())
}

/// Metropolis–Hastings weights `w_ij = 1/(1 + max(deg_i, deg_j))`.
pub fn metropolis_init(graph: &TopologyGraph) -> RMatrix {
    let m = graph.num_devices();
    let mut w = RMatrix::zeros(m, m);
    for (i, j) in graph.edges() {
        let v = 1.0 / (1 + graph.degree(i).max(graph.degree(j))) as f64;
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        w[(i, i)] = 1.0 - w.row(i).sum();
    }
    w
}

/// `I − ηL` for a Laplacian with i.i.d. `U(0.2, 1)` edge weights and
/// `η = 1/(1 + max weighted degree)`; feasible for any connected graph.
pub fn random_feasible(graph: &TopologyGraph, rng: &mut SimRng) -> RMatrix {
    let m = graph.num_devices();
    let mut adj = RMatrix::zeros(m, m);
    for (i, j) in graph.edges() {
        let v = rng.random_range(0.2..1.0);
        adj[(i, j)] = v;
        adj[(j, i)] = v;
    }
    let max_deg = (0..m).map(|i| adj.row(i).sum()).fold(0.0, f64::max);
    let eta = 1.0 / (1.0 + max_deg);
    let mut w = adj * eta;
    for i in 0..m {
        w[(i, i)] = 1.0 - w.row(i).sum();
    }
    w
}

/// Nearest symmetric matrix whose deviation from `J` has spectral norm at
/// most `√delta_hat`: the deviation's eigenvalues are clipped to
/// `[−√δ̂, √δ̂]`.
pub fn project_spectral(w: &RMatrix, delta_hat: f64) -> Result<RMatrix> {
    if !(delta_hat >= 0.0) {
        return Err(Error::InvalidArgument("delta_hat must be non-negative"));
    }
    let m = w.nrows();
    let radius = sqrt(delta_hat);
    let (values, vectors) = deviation_spectrum(w);
    if values.iter().all(|v| v.abs() <= radius) {
        return Ok(w.clone());
    }
    let clipped = RVector::from_iterator(m, values.iter().map(|v| v.clamp(-radius, radius)));
    let dev = &vectors * RMatrix::from_diagonal(&clipped) * vectors.transpose();
    let out = dev + averaging(m);
    Ok((&out + out.transpose()) * 0.5)
}

/// The constraint set of the mixing step for one graph and one slack value.
#[derive(Debug, Clone)]
pub struct FeasibleSet<'g> {
    graph: &'g TopologyGraph,
    delta_hat: f64,
    edges: Vec<(usize, usize)>,
    /// Factor of `I + (D + A)/2`, the normal matrix of the affine projection.
    normal: Cholesky<f64, nalgebra::Dyn>,
}

/// Result of one Dykstra run.
#[derive(Debug, Clone)]
pub struct Projection {
    pub w: RMatrix,
    pub cycles: usize,
    pub converged: bool,
}

impl<'g> FeasibleSet<'g> {
    pub fn new(graph: &'g TopologyGraph, delta_hat: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta_hat) {
            return Err(Error::InvalidArgument("delta_hat must lie in [0, 1]"));
        }
        let m = graph.num_devices();
        let mut normal = RMatrix::identity(m, m);
        for i in 0..m {
            normal[(i, i)] += 0.5 * graph.degree(i) as f64;
        }
        let edges = graph.edges();
        for &(i, j) in &edges {
            normal[(i, j)] += 0.5;
            normal[(j, i)] += 0.5;
        }
        let normal = Cholesky::new(normal).ok_or(Error::InvalidMatrix("affine normal matrix not positive definite"))?;
        Ok(Self {
            graph,
            delta_hat,
            edges,
            normal,
        })
    }

    pub fn delta_hat(&self) -> f64 {
        self.delta_hat
    }

    pub fn graph(&self) -> &TopologyGraph {
        self.graph
    }

    /// Orthogonal projection onto `{W = Wᵀ, W𝟙 = 𝟙, w_ij = 0 off the graph}`.
    pub fn project_affine(&self, z: &RMatrix) -> RMatrix {
        let m = z.nrows();
        let mut r = RVector::from_fn(m, |i, _| z[(i, i)] - 1.0);
        let mut b = Vec::with_capacity(self.edges.len());
        for &(i, j) in &self.edges {
            let v = 0.5 * (z[(i, j)] + z[(j, i)]);
            r[i] += v;
            r[j] += v;
            b.push(v);
        }
        let mu = self.normal.solve(&r);
        let mut w = RMatrix::zeros(m, m);
        for i in 0..m {
            w[(i, i)] = z[(i, i)] - mu[i];
        }
        for (&(i, j), v) in self.edges.iter().zip(b) {
            let e = v - 0.5 * (mu[i] + mu[j]);
            w[(i, j)] = e;
            w[(j, i)] = e;
        }
        w
    }

    /// Dykstra's alternating projections onto spectral ball, box and affine
    /// set, in that order; at most 500 cycles, stopping once a cycle moves
    /// the iterate by less than `1e-10` in Frobenius norm.
    pub fn project(&self, z: &RMatrix) -> Result<Projection> {
        let m = z.nrows();
        let mut x = self.project_affine(z);
        let mut inc_s = RMatrix::zeros(m, m);
        let mut inc_b = RMatrix::zeros(m, m);
        let mut inc_a = z - &x;
        let mut cycles = 0;
        let mut converged = false;
        while cycles < 500 {
            cycles += 1;
            let prev = x.clone();
            let y = &x + &inc_s;
            x = project_spectral(&y, self.delta_hat)?;
            inc_s = y - &x;
            let y = &x + &inc_b;
            x = y.map(|v| v.clamp(0.0, 1.0));
            inc_b = y - &x;
            let y = &x + &inc_a;
            x = self.project_affine(&y);
            inc_a = y - &x;
            if (&x - prev).norm() < 1e-10 {
                converged = true;
                break;
            }
        }
        Ok(Projection { w: x, cycles, converged })
    }

    /// Feasibility at [`FEASIBILITY_TOL`], including `δ(W) ≤ δ̂`.
    pub fn contains(&self, w: &RMatrix) -> bool {
        check_mixing(w, self.graph, FEASIBILITY_TOL).is_ok()
            && delta(w).map(|d| d <= self.delta_hat + FEASIBILITY_TOL).unwrap_or(false)
    }
}

/// Objective of the mixing step with beams frozen; quadratic in `W`.
///
/// Holds `g_ij = f_iᴴ H⟨i,j⟩ u_j` for every link so each evaluation is
/// `O(links)`.
#[derive(Debug, Clone)]
pub struct MixingObjective {
    m: usize,
    gains: Vec<Option<Complex64>>,
    scales: Vec<f64>,
    symbols: f64,
    noise: f64,
    pub weights: ErrorWeights,
}

impl MixingObjective {
    pub fn new(beams: &BeamformerSet, chans: &ChannelSet, scales: &[f64], symbols: usize, weights: ErrorWeights) -> Result<Self> {
        let m = chans.num_devices();
        if beams.num_devices() != m || scales.len() != m {
            return Err(Error::Shape("beams and scales must cover every device"));
        }
        let mut gains = alloc::vec![None; m * m];
        for (i, j) in chans.links() {
            let h = chans.get(i, j).expect("link has a channel");
            gains[i * m + j] = Some(cdot(&beams.receive[i], &(h * &beams.transmit[j])));
        }
        let noise = chans.noise_variance() * beams.receive.iter().map(crate::linalg::cvec_norm_sq).sum::<f64>();
        Ok(Self {
            m,
            gains,
            scales: scales.to_vec(),
            symbols: symbols as f64,
            noise,
            weights,
        })
    }

    pub fn with_weights(&self, weights: ErrorWeights) -> Self {
        Self { weights, ..self.clone() }
    }

    pub fn stats(&self, w: &RMatrix) -> ErrorStats {
        let m = self.m;
        let mut fro = 0.0;
        let mut ones = 0.0;
        for j in 0..m {
            let mut col = Complex64::new(0.0, 0.0);
            for i in 0..m {
                if let Some(g) = self.gains[i * m + j] {
                    let c = Complex64::new(w[(i, j)] * self.scales[j], 0.0) - g;
                    fro += 2.0 * c.norm_sqr();
                    col += c;
                }
            }
            ones += 2.0 * col.norm_sqr();
        }
        ErrorStats {
            fro_expect: self.symbols * (fro + self.noise),
            ones_expect: self.symbols * (ones + self.noise),
        }
    }

    pub fn value(&self, w: &RMatrix) -> f64 {
        self.stats(w).weighted(&self.weights)
    }

    /// Gradient with respect to every entry; zero on the diagonal and on
    /// absent links.
    pub fn gradient(&self, w: &RMatrix) -> RMatrix {
        let m = self.m;
        let mut grad = RMatrix::zeros(m, m);
        for j in 0..m {
            let mut col = 0.0;
            let mut residuals = Vec::new();
            for i in 0..m {
                if let Some(g) = self.gains[i * m + j] {
                    let c = w[(i, j)] * self.scales[j] - g.re;
                    col += c;
                    residuals.push((i, c));
                }
            }
            let k = 4.0 * self.symbols * self.scales[j];
            for (i, c) in residuals {
                grad[(i, j)] = k * (self.weights.fro * c + self.weights.ones * col);
            }
        }
        grad
    }

    /// Upper bound on the curvature of the objective in any entry direction.
    pub fn lipschitz(&self) -> f64 {
        let m = self.m;
        (0..m)
            .map(|j| {
                let deg = (0..m).filter(|&i| self.gains[i * m + j].is_some()).count() as f64;
                4.0 * self.symbols * self.scales[j] * self.scales[j] * (self.weights.fro + self.weights.ones * deg)
            })
            .fold(0.0, f64::max)
    }
}

/// Outcome of the projected-gradient mixing step.
#[derive(Debug, Clone)]
pub struct MixingOutcome {
    pub w: RMatrix,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Last stationarity residual `‖W⁺ − W‖/t`, relative to `1 + ‖∇(W₀)‖`.
    pub residual: f64,
}

/// Projected gradient descent on the frozen-beam objective over
/// `{feasible W, δ(W) ≤ δ̂}` with Armijo backtracking (constant `1e-4`,
/// halving). Each trial step starts at twice the last accepted one, capped
/// at 1. Candidates that Dykstra cannot bring within tolerance of the set
/// are treated like a failed Armijo test, so every iterate stays feasible
/// and the objective never increases.
pub fn optimize_mixing(
    w0: &RMatrix,
    set: &FeasibleSet<'_>,
    objective: &MixingObjective,
    max_iters: usize,
    tol: f64,
) -> Result<MixingOutcome> {
    if !set.contains(w0) {
        return Err(Error::Infeasible("initial mixing matrix outside the constraint set"));
    }
    let mut w = w0.clone();
    let mut value = objective.value(&w);
    let grad0_norm = objective.gradient(&w).norm();
    let lip = objective.lipschitz();
    let mut step: f64 = if lip > 0.0 { (1.0 / lip).min(1.0) } else { 1.0 };
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let grad = objective.gradient(&w);
        if grad.norm() == 0.0 {
            residual = 0.0;
            converged = true;
            break;
        }
        let mut t = (2.0 * step).min(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let proj = set.project(&(&w - &grad * t))?;
            let cand = proj.w;
            let moved = &cand - &w;
            let move_norm = moved.norm();
            if move_norm == 0.0 {
                residual = 0.0;
                break;
            }
            if set.contains(&cand) {
                let cand_value = objective.value(&cand);
                let decrease = grad.dot(&moved);
                if cand_value <= value + 1e-4 * decrease && cand_value <= value {
                    residual = move_norm / t / (1.0 + grad0_norm);
                    w = cand;
                    value = cand_value;
                    step = t;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        log::trace!("mixing step {iterations}: objective {value:.6e} residual {residual:.3e}");
        if !accepted || residual <= tol {
            converged = residual <= tol;
            break;
        }
    }
    Ok(MixingOutcome {
        w,
        objective: value,
        iterations,
        converged,
        residual,
    })
}

/// Caps and weighting for the alternating `(W, δ̂)` loop.
#[derive(Debug, Clone, Copy)]
pub struct MixingLoopConfig {
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Stationarity tolerance of each mixing solve.
    pub tol: f64,
    /// Relative surrogate improvement per alternation below which the loop
    /// stops.
    pub stop_tol: f64,
    pub mode: ErrorWeightMode,
    /// Loss at the initial average model, entering the constant term.
    pub f0: f64,
}

/// Result of the alternating `(W, δ̂)` loop.
#[derive(Debug, Clone)]
pub struct MixingLoopOutcome {
    pub w: RMatrix,
    pub delta_hat: f64,
    /// Surrogate bound at the start and after each `W` step and each `δ̂`
    /// update.
    pub trace: Vec<f64>,
}

/// Alternates the mixing step at fixed `δ̂` (weights taken from `G(δ̂)`)
/// with `δ̂ ← δ(W)`.
pub fn ao_mixing_loop(
    w0: &RMatrix,
    graph: &TopologyGraph,
    objective: &MixingObjective,
    params: &ConvergenceParams,
    cfg: &MixingLoopConfig,
) -> Result<MixingLoopOutcome> {
    let mut w = w0.clone();
    let mut delta_hat = delta(&w)?.min(1.0);
    let surrogate = |w: &RMatrix, d: f64| -> Result<f64> {
        let g = g_factor(d, params)?;
        let obj = objective.with_weights(ErrorWeights::from_g(cfg.mode, g, params));
        p6_objective(&obj.stats(w), d, params, cfg.f0, cfg.mode)
    };
    let mut trace = alloc::vec![surrogate(&w, delta_hat)?];
    for _ in 0..cfg.outer_iters {
        let weights = ErrorWeights::for_delta(cfg.mode, delta_hat, params)?;
        let obj = objective.with_weights(weights);
        let set = FeasibleSet::new(graph, delta_hat)?;
        let before = *trace.last().expect("trace is non-empty");
        let out = optimize_mixing(&w, &set, &obj, cfg.inner_iters, cfg.tol)?;
        w = out.w;
        trace.push(surrogate(&w, delta_hat)?);
        delta_hat = delta(&w)?.min(delta_hat);
        let after = surrogate(&w, delta_hat)?;
        trace.push(after);
        if before - after <= cfg.stop_tol * before.abs() {
            break;
        }
    }
    Ok(MixingLoopOutcome { w, delta_hat, trace })
}

/// Smallest slack for which the constraint set is found non-empty, by
/// bisection on `δ̂` with a Dykstra feasibility test from Metropolis
/// weights. Returns the feasible matrix found at the final slack.
pub fn min_delta_mixing(graph: &TopologyGraph) -> Result<(RMatrix, f64)> {
    let start = metropolis_init(graph);
    let mut best = start.clone();
    let mut hi = delta(&start)?;
    let mut lo = 0.0;
    if let Some(w) = try_project(graph, &start, 0.0)? {
        return Ok((w, 0.0));
    }
    for _ in 0..40 {
        if hi - lo <= 1e-6 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match try_project(graph, &best, mid)? {
            Some(w) => {
                hi = delta(&w)?.min(mid);
                best = w;
            }
            None => lo = mid,
        }
    }
    let d = delta(&best)?;
    Ok((best, d))
}

fn try_project(graph: &TopologyGraph, from: &RMatrix, delta_hat: f64) -> Result<Option<RMatrix>> {
    let set = FeasibleSet::new(graph, delta_hat)?;
    let proj = set.project(from)?;
    Ok(set.contains(&proj.w).then_some(proj.w))
}

/// A feasible matrix with `δ(W)` close to `target`, plus the achieved value.
///
/// Target 0 on a complete graph returns `J` exactly. Otherwise a random
/// feasible matrix is either made lazier, `(1−κ)I + κW`, to raise its
/// statistic to the target, or projected onto `{δ ≤ target}` to lower it.
pub fn with_target_delta(graph: &TopologyGraph, target: f64, rng: &mut SimRng) -> Result<(RMatrix, f64)> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidArgument("target delta must lie in [0, 1)"));
    }
    let m = graph.num_devices();
    if target == 0.0 && graph.num_edges() == m * (m - 1) / 2 {
        return Ok((averaging(m), 0.0));
    }
    let w = random_feasible(graph, rng);
    let current = delta(&w)?;
    let out = if current < target {
        let (values, _) = deviation_spectrum(&w);
        // Largest deviation eigenvalue belongs to the `𝟙`-orthogonal part.
        let lambda2 = values[0];
        let kappa = ((1.0 - sqrt(target)) / (1.0 - lambda2)).clamp(0.0, 1.0);
        let lazy = RMatrix::identity(m, m) * (1.0 - kappa) + &w * kappa;
        if delta(&lazy)? <= target + FEASIBILITY_TOL {
            lazy
        } else {
            project_or_keep(graph, &lazy, target)?
        }
    } else {
        project_or_keep(graph, &w, target)?
    };
    let achieved = delta(&out)?;
    Ok((out, achieved))
}

fn project_or_keep(graph: &TopologyGraph, w: &RMatrix, target: f64) -> Result<RMatrix> {
    Ok(try_project(graph, w, target)?.unwrap_or_else(|| w.clone()))
}
