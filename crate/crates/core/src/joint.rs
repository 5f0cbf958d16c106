//! Joint design of beamformers and mixing matrix for one round: alternate
//! the beam sweep at fixed `W` with the `(W, δ̂)` loop at fixed beams.

use alloc::vec::Vec;

use crate::beamopt::{ao_beam_sweep, BeamProblem, BeamformerSet};
use crate::channel::ChannelSet;
use crate::convergence::{g_factor, ConvergenceParams, ErrorWeightMode, ErrorWeights};
use crate::error::{Error, Result};
use crate::linalg::RMatrix;
use crate::mixing::{ao_mixing_loop, delta, MixingLoopConfig, MixingObjective};
use crate::topology::TopologyGraph;

/// Iteration caps of the joint design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig {
    /// Outer alternations between beams and mixing.
    pub j_max: usize,
    /// Beam sweeps per outer iteration.
    pub i1_max: usize,
    /// `(W, δ̂)` alternations per outer iteration.
    pub i2_max: usize,
    /// Projected-gradient steps per mixing solve.
    pub mixing_iters: usize,
    pub mixing_tol: f64,
    pub mode: ErrorWeightMode,
    /// Relative improvement of the surrogate below which the outer loop
    /// stops early.
    pub tol: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            j_max: 20,
            i1_max: 50,
            i2_max: 50,
            mixing_iters: 50,
            mixing_tol: 1e-6,
            mode: ErrorWeightMode::Bound,
            tol: 1e-6,
        }
    }
}

/// Frozen inputs of one round's design problem.
#[derive(Debug, Clone, Copy)]
pub struct RoundProblem<'a> {
    pub graph: &'a TopologyGraph,
    pub chans: &'a ChannelSet,
    pub scales: &'a [f64],
    pub symbols: usize,
    pub p0: f64,
    pub params: &'a ConvergenceParams,
    /// Loss at the initial average model.
    pub f0: f64,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub w: RMatrix,
    pub delta_hat: f64,
    pub beams: BeamformerSet,
    /// Surrogate bound at the start and after every half-step.
    pub trace: Vec<f64>,
    pub outer_iterations: usize,
}

/// Surrogate bound `(Q + R·G + d)/(½ − 27Mλ²G)` for an already weighted
/// error objective `d`.
pub fn surrogate_from_d(d: f64, delta_hat: f64, params: &ConvergenceParams, f0: f64) -> Result<f64> {
    let g = g_factor(delta_hat, params)?;
    let m = params.devices as f64;
    let denom = 0.5 - 27.0 * m * params.lambda * params.lambda * g;
    if !(denom > 0.0) {
        return Err(Error::InvalidHyperparameters {
            lambda_max: params.lambda_max(delta_hat),
        });
    }
    Ok((params.q(f0) + params.r() * g + d) / denom)
}

/// Runs the joint design from `(w0, beams0)`.
pub fn joint_optimize(problem: &RoundProblem<'_>, w0: &RMatrix, beams0: &BeamformerSet, cfg: &JointConfig) -> Result<JointOutcome> {
    let params = problem.params;
    let mut w = w0.clone();
    let mut delta_hat = delta(&w)?;
    let mut beams = beams0.clone();
    let mut trace = Vec::new();
    let mut outer = 0;
    for _ in 0..cfg.j_max {
        outer += 1;
        let weights = ErrorWeights::for_delta(cfg.mode, delta_hat, params)?;
        let beam_problem = BeamProblem {
            w: &w,
            chans: problem.chans,
            scales: problem.scales,
            symbols: problem.symbols,
            weights,
            p0: problem.p0,
        };
        let before = trace.last().copied();
        let sweep = ao_beam_sweep(&beam_problem, &beams, cfg.i1_max)?;
        let skip = usize::from(!trace.is_empty());
        for d in sweep.trace.iter().skip(skip) {
            trace.push(surrogate_from_d(*d, delta_hat, params, problem.f0)?);
        }
        beams = sweep.beams;

        let objective = MixingObjective::new(&beams, problem.chans, problem.scales, problem.symbols, weights)?;
        let loop_cfg = MixingLoopConfig {
            outer_iters: cfg.i2_max,
            inner_iters: cfg.mixing_iters,
            tol: cfg.mixing_tol,
            stop_tol: cfg.tol,
            mode: cfg.mode,
            f0: problem.f0,
        };
        let mixed = ao_mixing_loop(&w, problem.graph, &objective, params, &loop_cfg)?;
        trace.extend(mixed.trace.iter().skip(1));
        w = mixed.w;
        delta_hat = mixed.delta_hat;
        let end = *trace.last().expect("trace is non-empty");
        log::debug!("joint iteration {outer}: surrogate {end:.6e}");
        if let Some(before) = before {
            if before - end <= cfg.tol * before.abs() {
                break;
            }
        }
    }
    Ok(JointOutcome {
        w,
        delta_hat,
        beams,
        trace,
        outer_iterations: outer,
    })
}
