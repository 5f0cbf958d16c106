//! Multi-round training driver: channel redraws, per-scheme transceiver and
//! mixing design, aggregation and metric collection.

use alloc::vec::Vec;

use crate::aircomp::prepare_frame;
use crate::beamopt::{ao_beam_sweep, initial_beams, zero_forcing_beams, BeamProblem, BeamformerSet};
use crate::channel::{sample_round, ChannelConfig, ChannelSet};
use crate::convergence::{error_stats, g_factor, symbols_for_dim, ConvergenceParams, ErrorWeightMode, ErrorWeights};
use crate::error::{Error, Result};
use crate::joint::{joint_optimize, JointConfig, RoundProblem};
use crate::linalg::{CMatrix, RMatrix};
use crate::mixing::{delta, metropolis_init, min_delta_mixing, random_feasible, with_target_delta};
use crate::rng::{SeedStreams, Stream};
use crate::task::Task;
use crate::topology::{generate_named, generate_random, NamedTopology, TopologyGraph};
use crate::trainer::{dsgd_round, Aggregation, Momentum, RoundMetrics};

/// Transceiver/mixing design strategies compared in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Joint beamformer and mixing-matrix optimization every round.
    Proposed,
    /// Noiseless gossip with the smallest reachable `δ(W)`.
    ErrorFree,
    /// Optimized beams, fixed random feasible mixing matrix.
    MbNoMmo,
    /// Zero-forcing beams, fixed random feasible mixing matrix.
    ZfbNoMmo,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [Self::Proposed, Self::ErrorFree, Self::MbNoMmo, Self::ZfbNoMmo];

    pub fn id(&self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::ErrorFree => "error_free",
            Self::MbNoMmo => "mb-no-mmo",
            Self::ZfbNoMmo => "zfb-no-mmo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proposed" => Some(Self::Proposed),
            "error_free" | "error-free" => Some(Self::ErrorFree),
            "mb-no-mmo" | "mb_no_mmo" => Some(Self::MbNoMmo),
            "zfb-no-mmo" | "zfb_no_mmo" | "zfb" => Some(Self::ZfbNoMmo),
            _ => None,
        }
    }
}

/// Where the mixing matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingPolicy {
    /// The scheme's own choice.
    Default,
    Metropolis,
    RandomFeasible,
    MinDelta,
    TargetDelta(f64),
    Fixed(RMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub mixing: MixingPolicy,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            mixing: MixingPolicy::Default,
        }
    }

    pub fn with_mixing(mut self, mixing: MixingPolicy) -> Self {
        self.mixing = mixing;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Random { sparsity: f64 },
    Named(NamedTopology),
    Graph(TopologyGraph),
}

/// Scalar settings of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub devices: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub rounds: usize,
    pub snr_db: f64,
    pub p0: f64,
    pub lambda: f64,
    /// Smoothness estimate used by the design objective.
    pub omega: f64,
    pub alpha_sq: f64,
    pub beta_sq: f64,
    pub f_star: f64,
    pub topology: TopologySpec,
    pub seed: u64,
    pub joint: JointConfig,
    /// Full joint design every `k` rounds; beam sweeps only in between.
    pub optimize_every: usize,
    /// Heavy-ball coefficient; 0 keeps the plain update.
    pub momentum: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            devices: 30,
            n_tx: 20,
            n_rx: 20,
            rounds: 150,
            snr_db: 20.0,
            p0: 1.0,
            lambda: 0.02,
            omega: 0.1,
            alpha_sq: 1.0,
            beta_sq: 1.0,
            f_star: 0.0,
            topology: TopologySpec::Random { sparsity: 0.3 },
            seed: 0,
            joint: JointConfig::default(),
            optimize_every: 1,
            momentum: 0.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices < 2 || self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::InvalidArgument("need at least two devices and one antenna each way"));
        }
        let j = &self.joint;
        if j.j_max == 0 || j.i1_max == 0 || j.i2_max == 0 || j.mixing_iters == 0 || self.optimize_every == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1"));
        }
        if !(self.p0 > 0.0) {
            return Err(Error::InvalidArgument("p0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)"));
        }
        self.params().validate()
    }

    pub fn params(&self) -> ConvergenceParams {
        ConvergenceParams {
            omega: self.omega,
            lambda: self.lambda,
            alpha_sq: self.alpha_sq,
            beta_sq: self.beta_sq,
            f_star: self.f_star,
            rounds: self.rounds,
            devices: self.devices,
        }
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        ChannelConfig::new(self.snr_db, self.p0)
    }

    pub fn build_graph(&self) -> Result<TopologyGraph> {
        let streams = SeedStreams::new(self.seed);
        let g = match &self.topology {
            TopologySpec::Random { sparsity } => generate_random(self.devices, *sparsity, streams.seed(Stream::Topology, 0))?,
            TopologySpec::Named(kind) => generate_named(*kind, self.devices)?,
            TopologySpec::Graph(g) => g.clone(),
        };
        if g.num_devices() != self.devices {
            return Err(Error::Shape("topology size differs from the device count"));
        }
        Ok(g)
    }
}

/// Supplies the channel realization of each round.
pub trait ChannelSource {
    fn round_channels(&mut self, round: usize, graph: &TopologyGraph) -> Result<ChannelSet>;
}

/// Fresh i.i.d. Rayleigh draws from the run's channel stream.
#[derive(Debug, Clone)]
pub struct SampledChannels {
    cfg: ChannelConfig,
    n_tx: usize,
    n_rx: usize,
    streams: SeedStreams,
}

impl SampledChannels {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            cfg: config.channel_config()?,
            n_tx: config.n_tx,
            n_rx: config.n_rx,
            streams: SeedStreams::new(config.seed),
        })
    }
}

impl ChannelSource for SampledChannels {
    fn round_channels(&mut self, round: usize, graph: &TopologyGraph) -> Result<ChannelSet> {
        sample_round(graph, &self.cfg, self.n_tx, self.n_rx, self.streams.seed(Stream::Channels, round as u64))
    }
}

/// Hooks for exporting per-round artifacts.
pub trait RoundObserver {
    fn on_channels(&mut self, _round: usize, _chans: &ChannelSet) {}
    fn on_frames(&mut self, _round: usize, _frames: &[CMatrix]) {}
    fn on_round(&mut self, _metrics: &RoundMetrics) {}
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl RoundObserver for NoObserver {}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scheme: SchemeKind,
    pub metrics: Vec<RoundMetrics>,
    pub initial_models: RMatrix,
    pub final_models: RMatrix,
    pub graph: TopologyGraph,
    /// Mixing matrix in force at the end of the run.
    pub mixing: RMatrix,
    pub initial_delta: f64,
    pub beams: Option<BeamformerSet>,
}

impl RunRecord {
    pub fn flagged_rounds(&self) -> Vec<usize> {
        self.metrics.iter().filter(|m| m.flagged).map(|m| m.round).collect()
    }
}

fn initial_mixing(config: &RunConfig, scheme: &SchemeSpec, graph: &TopologyGraph, streams: &SeedStreams) -> Result<RMatrix> {
    let mut rng = streams.rng(Stream::Mixing, 0);
    let policy = match &scheme.mixing {
        MixingPolicy::Default => match scheme.kind {
            SchemeKind::Proposed => MixingPolicy::Metropolis,
            SchemeKind::ErrorFree => MixingPolicy::MinDelta,
            SchemeKind::MbNoMmo | SchemeKind::ZfbNoMmo => MixingPolicy::RandomFeasible,
        },
        other => other.clone(),
    };
    let w = match policy {
        MixingPolicy::Metropolis => {
            let w = metropolis_init(graph);
            // The design objective needs an admissible starting statistic.
            if scheme.kind == SchemeKind::Proposed && g_factor(delta(&w)?, &config.params()).is_err() {
                min_delta_mixing(graph)?.0
            } else {
                w
            }
        }
        MixingPolicy::RandomFeasible => random_feasible(graph, &mut rng),
        MixingPolicy::MinDelta => min_delta_mixing(graph)?.0,
        MixingPolicy::TargetDelta(t) => with_target_delta(graph, t, &mut rng)?.0,
        MixingPolicy::Fixed(w) => {
            crate::mixing::check_mixing(&w, graph, crate::mixing::FEASIBILITY_TOL)?;
            w
        }
        MixingPolicy::Default => unreachable!("resolved above"),
    };
    Ok(w)
}

/// Normalization scales of every device model.
pub fn model_scales(x: &RMatrix) -> Result<Vec<f64>> {
    (0..x.ncols())
        .map(|j| prepare_frame(&x.column(j).into_owned()).map(|(_, rec)| rec.scale))
        .collect()
}

/// Runs `config.rounds` rounds of the scheme on `task`.
pub fn run_training(
    config: &RunConfig,
    scheme: &SchemeSpec,
    task: &dyn Task,
    channels: &mut dyn ChannelSource,
    observer: &mut dyn RoundObserver,
) -> Result<RunRecord> {
    config.validate()?;
    if task.num_devices() != config.devices {
        return Err(Error::Shape("task device count differs from the configuration"));
    }
    let streams = SeedStreams::new(config.seed);
    let graph = config.build_graph()?;
    let params = config.params();
    let m = config.devices;
    let dim = task.dim();
    let symbols = symbols_for_dim(dim);
    let x0 = {
        let mut rng = streams.rng(Stream::Init, 0);
        let col = task.initial_model(&mut rng);
        RMatrix::from_fn(dim, m, |r, _| col[r])
    };
    let f0 = task.global_loss(&x0.column(0).into_owned());
    let mut w = initial_mixing(config, scheme, &graph, &streams)?;
    let initial_delta = delta(&w)?;
    let mut beams: Option<BeamformerSet> = None;
    let mut momentum = (config.momentum > 0.0).then(|| Momentum {
        coefficient: config.momentum,
        velocity: RMatrix::zeros(dim, m),
    });
    let mut x = x0.clone();
    let mut metrics = Vec::with_capacity(config.rounds);

    for t in 0..config.rounds {
        let sampling_seed = streams.seed(Stream::Sampling, t as u64);
        let out = if scheme.kind == SchemeKind::ErrorFree {
            dsgd_round(&x, &w, &Aggregation::ErrorFree, task, config.lambda, sampling_seed, momentum.as_mut())?
        } else {
            let chans = channels.round_channels(t, &graph)?;
            observer.on_channels(t, &chans);
            let scales = model_scales(&x)?;
            let ctx = DesignContext {
                config,
                graph: &graph,
                chans: &chans,
                scales: &scales,
                symbols,
                params: &params,
                f0,
            };
            let (design, flagged) = match ctx.design(scheme.kind, t, &w) {
                Ok(d) => (d, false),
                Err(e) => match &beams {
                    Some(prev) => {
                        log::warn!("round {t}: design failed ({e}); reusing previous transceivers");
                        ((w.clone(), prev.clone()), true)
                    }
                    None => return Err(e),
                },
            };
            w = design.0;
            let round_beams = design.1;
            let stats = error_stats(&w, &round_beams, &chans, &scales, symbols)?;
            let aggregation = Aggregation::OverTheAir {
                beams: &round_beams,
                chans: &chans,
                p0: config.p0,
                noise_seed: streams.seed(Stream::Noise, t as u64),
            };
            let mut out = dsgd_round(&x, &w, &aggregation, task, config.lambda, sampling_seed, momentum.as_mut())?;
            observer.on_frames(t, &out.frames);
            out.metrics.fro_err_expect = stats.fro_expect;
            out.metrics.ones_err_expect = stats.ones_expect;
            out.metrics.flagged = flagged;
            beams = Some(round_beams);
            out
        };
        let mut round_metrics = out.metrics;
        round_metrics.round = t;
        log::info!(
            "round {t}: avg loss {:.6e}, agreement {:.3e}, nmse {:.2} dB, delta {:.4}",
            round_metrics.avg_loss,
            round_metrics.agreement_error,
            round_metrics.nmse_db,
            round_metrics.delta_w
        );
        observer.on_round(&round_metrics);
        metrics.push(round_metrics);
        x = out.x_next;
    }
    Ok(RunRecord {
        scheme: scheme.kind,
        metrics,
        initial_models: x0,
        final_models: x,
        graph,
        mixing: w,
        initial_delta,
        beams,
    })
}

struct DesignContext<'a> {
    config: &'a RunConfig,
    graph: &'a TopologyGraph,
    chans: &'a ChannelSet,
    scales: &'a [f64],
    symbols: usize,
    params: &'a ConvergenceParams,
    f0: f64,
}

impl DesignContext<'_> {
    fn beam_problem<'b>(&'b self, w: &'b RMatrix, mode: ErrorWeightMode) -> Result<BeamProblem<'b>> {
        Ok(BeamProblem {
            w,
            chans: self.chans,
            scales: self.scales,
            symbols: self.symbols,
            weights: ErrorWeights::for_delta(mode, delta(w)?, self.params)?,
            p0: self.config.p0,
        })
    }

    /// Mixing matrix and beams for this round.
    fn design(&self, kind: SchemeKind, round: usize, w: &RMatrix) -> Result<(RMatrix, BeamformerSet)> {
        let joint = &self.config.joint;
        match kind {
            SchemeKind::ZfbNoMmo => Ok((w.clone(), zero_forcing_beams(w, self.chans, self.scales, self.config.p0)?)),
            SchemeKind::MbNoMmo => Ok((w.clone(), self.sweep_only(w)?)),
            SchemeKind::Proposed if round % self.config.optimize_every != 0 => Ok((w.clone(), self.sweep_only(w)?)),
            SchemeKind::Proposed => {
                let start = initial_beams(&self.beam_problem(w, joint.mode)?);
                let problem = RoundProblem {
                    graph: self.graph,
                    chans: self.chans,
                    scales: self.scales,
                    symbols: self.symbols,
                    p0: self.config.p0,
                    params: self.params,
                    f0: self.f0,
                };
                let out = joint_optimize(&problem, w, &start, joint)?;
                Ok((out.w, out.beams))
            }
            SchemeKind::ErrorFree => Err(Error::InvalidArgument("error-free scheme needs no transceiver design")),
        }
    }

    fn sweep_only(&self, w: &RMatrix) -> Result<BeamformerSet> {
        let problem = self.beam_problem(w, self.config.joint.mode)?;
        let start = initial_beams(&problem);
        Ok(ao_beam_sweep(&problem, &start, self.config.joint.i1_max)?.beams)
    }
}
