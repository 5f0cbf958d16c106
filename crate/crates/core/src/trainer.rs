//! One round of decentralized SGD with gossip aggregation, and the learning
//! metrics recorded per round.

use alloc::vec::Vec;

use rand::SeedableRng;

use crate::aircomp::{aggregate_over_the_air, ideal_aggregate, NormalizationRecord};
use crate::beamopt::BeamformerSet;
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, RMatrix, RVector};
use crate::mixing::delta;
use crate::rng::{derive, SimRng};
use crate::task::Task;

/// Lowest reported NMSE; an exact aggregate would otherwise give `−∞`.
pub const NMSE_FLOOR_DB: f64 = -200.0;

/// Per-round learning and communication metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundMetrics {
    pub round: usize,
    /// `‖∇f(X𝟙/M)‖²` after the update.
    pub global_grad_norm_sq: f64,
    /// Spread of the aggregated models around their average.
    pub agreement_error: f64,
    /// Smallest and mean global loss over the device models after the
    /// update.
    pub min_loss: f64,
    pub avg_loss: f64,
    pub nmse_db: f64,
    pub delta_w: f64,
    pub fro_err_expect: f64,
    pub ones_err_expect: f64,
    /// The round fell back to the previous round's transceiver design.
    pub flagged: bool,
}

/// How the gossip step is carried out.
#[derive(Debug, Clone, Copy)]
pub enum Aggregation<'a> {
    ErrorFree,
    OverTheAir {
        beams: &'a BeamformerSet,
        chans: &'a ChannelSet,
        p0: f64,
        noise_seed: u64,
    },
}

/// Heavy-ball state, an optional extension of the plain update.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub coefficient: f64,
    pub velocity: RMatrix,
}

/// Everything a round produced besides the metrics.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub x_next: RMatrix,
    pub metrics: RoundMetrics,
    /// `X W`
    pub ideal: RMatrix,
    /// `X̂`, the models each device actually holds after gossip.
    pub aggregated: RMatrix,
    /// Realized `‖E‖²_F` and `‖E𝟙‖²` with `E = XW − X̂`.
    pub realized_fro: f64,
    pub realized_ones: f64,
    pub frames: Vec<CMatrix>,
    pub records: Vec<NormalizationRecord>,
}

/// `10 log10(‖ideal − estimate‖²_F / ‖ideal‖²_F)`, floored at
/// [`NMSE_FLOOR_DB`].
pub fn compute_nmse(ideal: &RMatrix, estimate: &RMatrix) -> Result<f64> {
    if ideal.shape() != estimate.shape() {
        return Err(Error::Shape("nmse operands differ in shape"));
    }
    let reference = ideal.norm_squared();
    if reference == 0.0 {
        return Err(Error::DegenerateInput("ideal aggregate has zero norm"));
    }
    let ratio = (ideal - estimate).norm_squared() / reference;
    if ratio == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * libm::log10(ratio)).max(NMSE_FLOOR_DB))
}

/// `(1/(2M²)) Σ_i Σ_j ‖x_i − x_j‖²`, equal to `(1/M) Σ_i ‖x̄ − x_i‖²` and
/// exactly zero when all columns coincide.
pub fn agreement_error(x: &RMatrix) -> f64 {
    let m = x.ncols();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (x.column(i) - x.column(j)).norm_squared();
        }
    }
    total / (m * m) as f64
}

/// Column average `X𝟙/M`.
pub fn average_model(x: &RMatrix) -> RVector {
    x.column_sum() / x.ncols() as f64
}

/// Gossip then local step: `X⁺ = X̂ − λ ∂F(X)`, gradients taken at the
/// pre-gossip models with minibatches drawn from `sampling_seed`.
pub fn dsgd_round(
    x: &RMatrix,
    w: &RMatrix,
    aggregation: &Aggregation<'_>,
    task: &dyn Task,
    lambda: f64,
    sampling_seed: u64,
    momentum: Option<&mut Momentum>,
) -> Result<RoundOutput> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("learning rate must be non-negative"));
    }
    let m = x.ncols();
    if task.num_devices() != m || task.dim() != x.nrows() {
        return Err(Error::Shape("model matrix does not match the task"));
    }
    let ideal = ideal_aggregate(x, w)?;
    let (aggregated, frames, records) = match aggregation {
        Aggregation::ErrorFree => (ideal.clone(), Vec::new(), Vec::new()),
        Aggregation::OverTheAir {
            beams,
            chans,
            p0,
            noise_seed,
        } => {
            let air = aggregate_over_the_air(x, w, beams, chans, *p0, *noise_seed)?;
            (air.estimate, air.frames, air.records)
        }
    };
    let err = &ideal - &aggregated;
    let realized_fro = err.norm_squared();
    let realized_ones = err.column_sum().norm_squared();

    let mut grads = RMatrix::zeros(x.nrows(), m);
    for i in 0..m {
        let mut rng = SimRng::seed_from_u64(derive(sampling_seed, i as u64));
        let g = task.stochastic_gradient(i, &x.column(i).into_owned(), &mut rng);
        grads.set_column(i, &g);
    }
    let step = match momentum {
        Some(state) => {
            state.velocity = &state.velocity * state.coefficient + &grads;
            state.velocity.clone()
        }
        None => grads,
    };
    let x_next = &aggregated - step * lambda;

    let nmse_db = match aggregation {
        Aggregation::ErrorFree => NMSE_FLOOR_DB,
        Aggregation::OverTheAir { .. } => compute_nmse(&ideal, &aggregated).unwrap_or(NMSE_FLOOR_DB),
    };
    let mut min_loss = f64::INFINITY;
    let mut sum_loss = 0.0;
    for i in 0..m {
        let loss = task.global_loss(&x_next.column(i).into_owned());
        min_loss = min_loss.min(loss);
        sum_loss += loss;
    }
    let metrics = RoundMetrics {
        round: 0,
        global_grad_norm_sq: task.global_gradient(&average_model(&x_next)).norm_squared(),
        agreement_error: agreement_error(&aggregated),
        min_loss,
        avg_loss: sum_loss / m as f64,
        nmse_db,
        delta_w: delta(w)?,
        fro_err_expect: 0.0,
        ones_err_expect: 0.0,
        flagged: false,
    };
    Ok(RoundOutput {
        x_next,
        metrics,
        ideal,
        aggregated,
        realized_fro,
        realized_ones,
        frames,
        records,
    })
}
