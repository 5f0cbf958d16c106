//! Monte Carlo check of the closed-form error expectations against the
//! realized errors of the full transceiver chain.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::aircomp::{aggregate_over_the_air, ideal_aggregate};
use crate::beamopt::BeamformerSet;
use crate::channel::{sample_round, ChannelConfig, ChannelSet};
use crate::convergence::{error_stats, symbols_for_dim, ErrorStats};
use crate::error::{Error, Result};
use crate::linalg::{sqrt, CVector, RMatrix};
use crate::mixing::random_feasible;
use crate::rng::{complex_normal, derive, standard_normal, SimRng};
use crate::topology::{generate_random, TopologyGraph};

/// A frozen round: graph, channels, beams, mixing matrix and the per-device
/// normalization moments of the models sent through it.
#[derive(Debug, Clone)]
pub struct ErrorInstance {
    pub graph: TopologyGraph,
    pub chans: ChannelSet,
    pub beams: BeamformerSet,
    pub w: RMatrix,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub dim: usize,
    pub p0: f64,
}

impl ErrorInstance {
    /// Random connected graph (up to 30% of pairs absent), Rayleigh
    /// channels, random feasible mixing matrix and random beams inside the
    /// power budget.
    pub fn random(devices: usize, antennas: usize, snr_db: f64, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = SimRng::seed_from_u64(seed);
        let sparsity = rng.random_range(0.0..0.3);
        let graph = generate_random(devices, sparsity, derive(seed, 1))?;
        let p0 = 1.0;
        let cfg = ChannelConfig::new(snr_db, p0)?;
        let chans = sample_round(&graph, &cfg, antennas, antennas, derive(seed, 2))?;
        let w = random_feasible(&graph, &mut rng);
        let mut beams = BeamformerSet::zeros(devices, antennas, antennas);
        for p in 0..devices {
            let u = CVector::from_fn(antennas, |_, _| complex_normal(&mut rng, 1.0));
            let frac: f64 = rng.random_range(0.2..1.0);
            beams.transmit[p] = &u * num_complex::Complex64::new(sqrt(frac * 0.5 * p0) / u.norm(), 0.0);
            let var = rng.random_range(0.05..0.5);
            beams.receive[p] = CVector::from_fn(antennas, |_, _| complex_normal(&mut rng, var));
        }
        let means = (0..devices).map(|_| standard_normal(&mut rng)).collect();
        let scales = (0..devices).map(|_| rng.random_range(0.5..2.0)).collect();
        Ok(Self {
            graph,
            chans,
            beams,
            w,
            means,
            scales,
            dim,
            p0,
        })
    }

    pub fn closed_form(&self) -> Result<ErrorStats> {
        error_stats(&self.w, &self.beams, &self.chans, &self.scales, symbols_for_dim(self.dim))
    }

    /// Random models with exactly the instance's means and scales.
    fn draw_models(&self, rng: &mut SimRng) -> RMatrix {
        let m = self.means.len();
        let mut x = RMatrix::zeros(self.dim, m);
        for j in 0..m {
            let z: Vec<f64> = (0..self.dim).map(|_| standard_normal(rng)).collect();
            let mean = z.iter().sum::<f64>() / self.dim as f64;
            let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.dim as f64;
            let sd = sqrt(var);
            for (k, v) in z.iter().enumerate() {
                x[(k, j)] = self.means[j] + self.scales[j] * (v - mean) / sd;
            }
        }
        x
    }
}

/// Sample means and standard errors of the realized squared errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloErrors {
    pub fro_mean: f64,
    pub fro_stderr: f64,
    pub ones_mean: f64,
    pub ones_stderr: f64,
    pub frames: usize,
}

impl MonteCarloErrors {
    /// Both closed forms lie within `k` standard errors of the estimates.
    pub fn agrees_with(&self, expected: &ErrorStats, k: f64) -> bool {
        (self.fro_mean - expected.fro_expect).abs() <= k * self.fro_stderr
            && (self.ones_mean - expected.ones_expect).abs() <= k * self.ones_stderr
    }
}

/// Runs `frames` independent rounds of the transceiver chain on fresh
/// models and noise and averages `‖XW − X̂‖²_F` and `‖(XW − X̂)𝟙‖²`.
pub fn monte_carlo_errors(inst: &ErrorInstance, frames: usize, seed: u64) -> Result<MonteCarloErrors> {
    if frames < 2 {
        return Err(Error::InvalidArgument("need at least two frames"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut fro = Welford::default();
    let mut ones = Welford::default();
    for k in 0..frames {
        let x = inst.draw_models(&mut rng);
        let ideal = ideal_aggregate(&x, &inst.w)?;
        let air = aggregate_over_the_air(&x, &inst.w, &inst.beams, &inst.chans, inst.p0, derive(seed, k as u64))?;
        let err = ideal - air.estimate;
        fro.push(err.norm_squared());
        ones.push(err.column_sum().norm_squared());
    }
    Ok(MonteCarloErrors {
        fro_mean: fro.mean,
        fro_stderr: fro.stderr(),
        ones_mean: ones.mean,
        ones_stderr: ones.stderr(),
        frames,
    })
}

/// Frames needed so that `draws` complex symbols are simulated per link.
pub fn frames_for_draws(draws: usize, dim: usize) -> usize {
    draws.div_ceil(symbols_for_dim(dim))
}

#[derive(Debug, Default, Clone, Copy)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn stderr(&self) -> f64 {
        sqrt(self.m2 / (self.n - 1) as f64 / self.n as f64)
    }
}
