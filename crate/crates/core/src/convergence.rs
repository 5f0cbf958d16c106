//! Closed-form communication-error expectations, the `G` factor, the
//! convergence-bound evaluator and the objectives the optimizers minimize.
//!
//! Per transmitter `p` and listener `i` the alignment residual is
//! `c_ip = w_ip·s_p − f_iᴴ H⟨i,p⟩ u_p`, with `s_p` the standard deviation used
//! by the normalization. With `C` complex symbols per round:
//!
//! ```text
//! E‖E‖²_F = C [ Σ_p Σ_{i∈M_p} 2|c_ip|²      + σ² Σ_i ‖f_i‖² ]
//! E‖E𝟙‖²  = C [ Σ_p 2|Σ_{i∈M_p} c_ip|²      + σ² Σ_i ‖f_i‖² ]
//! ```

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::beamopt::BeamformerSet;
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{cdot, cvec_norm_sq, sqrt, RMatrix};

/// Smoothness, step size and variance bounds entering the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub omega: f64,
    pub lambda: f64,
    pub alpha_sq: f64,
    pub beta_sq: f64,
    pub f_star: f64,
    pub rounds: usize,
    pub devices: usize,
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("omega and lambda must be positive"));
        }
        if self.lambda > 1.0 / self.omega * (1.0 + 1e-12) {
            return Err(Error::InvalidHyperparameters {
                lambda_max: 1.0 / self.omega,
            });
        }
        if !(self.alpha_sq >= 0.0) || !(self.beta_sq >= 0.0) {
            return Err(Error::InvalidArgument("variance bounds must be non-negative"));
        }
        if self.devices == 0 {
            return Err(Error::InvalidArgument("at least one device is required"));
        }
        Ok(())
    }

    /// Largest learning rate for which `G(δ)` stays finite and positive.
    pub fn lambda_max(&self, delta: f64) -> f64 {
        let gap = 1.0 - sqrt(delta.clamp(0.0, 1.0));
        gap / (self.omega * sqrt(27.0 * self.devices as f64))
    }

    /// `(f(x̄⁰) − f*)/(λT) + α²/M`
    pub fn q(&self, f0: f64) -> f64 {
        let m = self.devices as f64;
        let opt = if self.rounds == 0 {
            0.0
        } else {
            (f0 - self.f_star) / (self.lambda * self.rounds as f64)
        };
        opt + self.alpha_sq / m
    }

    /// `3Mα²λ² + 27Mβ²λ²`
    pub fn r(&self) -> f64 {
        let m = self.devices as f64;
        let l2 = self.lambda * self.lambda;
        3.0 * m * self.alpha_sq * l2 + 27.0 * m * self.beta_sq * l2
    }

    fn lead_coeff(&self) -> f64 {
        27.0 * self.devices as f64 * self.lambda * self.lambda
    }
}

/// `G(δ) = ω² / ((1 − √δ)² − 27Mλ²ω²)`
pub fn g_factor(delta: f64, params: &ConvergenceParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument("delta must lie in [0, 1]"));
    }
    let gap = 1.0 - sqrt(delta);
    let w2 = params.omega * params.omega;
    let denom = gap * gap - params.lead_coeff() * w2;
    if !(denom > 0.0) {
        return Err(Error::InvalidHyperparameters {
            lambda_max: params.lambda_max(delta),
        });
    }
    Ok(w2 / denom)
}

/// Which weighting of the two error terms the optimizers minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorWeightMode {
    /// `9G·E‖E‖²_F + E‖E𝟙‖²/(λ²M²)`
    #[default]
    Bound,
    /// `(1/(λ²M) + 9G)·E‖E‖²_F`, an upper bound via `E‖E𝟙‖² ≤ M·E‖E‖²_F`.
    Robust,
}

/// Non-negative coefficients on `E‖E‖²_F` and `E‖E𝟙‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorWeights {
    pub fro: f64,
    pub ones: f64,
}

impl ErrorWeights {
    pub fn new(fro: f64, ones: f64) -> Result<Self> {
        if !(fro >= 0.0) || !(ones >= 0.0) {
            return Err(Error::InvalidArgument("error weights must be non-negative"));
        }
        Ok(Self { fro, ones })
    }

    /// Weights at spectral statistic `delta`.
    pub fn for_delta(mode: ErrorWeightMode, delta: f64, params: &ConvergenceParams) -> Result<Self> {
        let g = g_factor(delta, params)?;
        Ok(Self::from_g(mode, g, params))
    }

    pub fn from_g(mode: ErrorWeightMode, g: f64, params: &ConvergenceParams) -> Self {
        let m = params.devices as f64;
        let l2 = params.lambda * params.lambda;
        match mode {
            ErrorWeightMode::Bound => Self {
                fro: 9.0 * g,
                ones: 1.0 / (l2 * m * m),
            },
            ErrorWeightMode::Robust => Self {
                fro: 1.0 / (l2 * m) + 9.0 * g,
                ones: 0.0,
            },
        }
    }
}

/// Expected squared communication errors of one round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub fro_expect: f64,
    pub ones_expect: f64,
}

impl ErrorStats {
    pub fn weighted(&self, weights: &ErrorWeights) -> f64 {
        weights.fro * self.fro_expect + weights.ones * self.ones_expect
    }
}

/// Number of complex channel uses needed for a `dim`-parameter model.
pub fn symbols_for_dim(dim: usize) -> usize {
    dim.div_ceil(2)
}

/// `c_ij = w_ij·s_j − f_iᴴ H⟨i,j⟩ u_j` for every link, row-major `(i, j)`.
pub(crate) fn residual(
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    scales: &[f64],
    i: usize,
    j: usize,
) -> Option<Complex64> {
    let h = chans.get(i, j)?;
    let g = cdot(&beams.receive[i], &(h * &beams.transmit[j]));
    Some(Complex64::new(w[(i, j)] * scales[j], 0.0) - g)
}

fn check_shapes(w: &RMatrix, beams: &BeamformerSet, chans: &ChannelSet, scales: &[f64]) -> Result<()> {
    let m = chans.num_devices();
    if w.nrows() != m || w.ncols() != m || beams.num_devices() != m || scales.len() != m {
        return Err(Error::Shape("mixing, beams, scales and channels disagree on M"));
    }
    Ok(())
}

/// Both closed-form expectations in one pass.
pub fn error_stats(
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    scales: &[f64],
    symbols: usize,
) -> Result<ErrorStats> {
    check_shapes(w, beams, chans, scales)?;
    let m = chans.num_devices();
    let noise: f64 = chans.noise_variance() * beams.receive.iter().map(cvec_norm_sq).sum::<f64>();
    let mut fro = 0.0;
    let mut ones = 0.0;
    for p in 0..m {
        let mut col = Complex64::new(0.0, 0.0);
        for i in chans.listeners(p) {
            let c = residual(w, beams, chans, scales, i, p).unwrap_or_default();
            fro += 2.0 * c.norm_sqr();
            col += c;
        }
        ones += 2.0 * col.norm_sqr();
    }
    let c = symbols as f64;
    let stats = ErrorStats {
        fro_expect: c * (fro + noise),
        ones_expect: c * (ones + noise),
    };
    debug_assert!(stats.ones_expect <= m as f64 * stats.fro_expect * (1.0 + 1e-9) + 1e-12);
    Ok(stats)
}

/// `E‖E‖²_F` of the over-the-air aggregate.
pub fn expected_error_fro(
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    scales: &[f64],
    symbols: usize,
) -> Result<f64> {
    Ok(error_stats(w, beams, chans, scales, symbols)?.fro_expect)
}

/// `E‖E𝟙‖²` of the over-the-air aggregate.
pub fn expected_error_ones(
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    scales: &[f64],
    symbols: usize,
) -> Result<f64> {
    Ok(error_stats(w, beams, chans, scales, symbols)?.ones_expect)
}

/// Weighted error objective `d(W, f, u)` that the beam and mixing steps
/// minimize.
pub fn objective_d(
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    scales: &[f64],
    symbols: usize,
    weights: &ErrorWeights,
) -> Result<f64> {
    Ok(error_stats(w, beams, chans, scales, symbols)?.weighted(weights))
}

/// Per-round surrogate of the convergence bound with the spectral statistic
/// replaced by the slack `delta_hat`:
/// `(Q + R·G + d) / (½ − 27Mλ²G)`.
pub fn p6_objective(
    stats: &ErrorStats,
    delta_hat: f64,
    params: &ConvergenceParams,
    f0: f64,
    mode: ErrorWeightMode,
) -> Result<f64> {
    let g = g_factor(delta_hat, params)?;
    let denom = 0.5 - params.lead_coeff() * g;
    if !(denom > 0.0) {
        return Err(Error::InvalidHyperparameters {
            lambda_max: lambda_for_positive_lead(params, delta_hat),
        });
    }
    let weights = ErrorWeights::from_g(mode, g, params);
    Ok((params.q(f0) + params.r() * g + stats.weighted(&weights)) / denom)
}

/// Right-hand side of the convergence bound on the time-averaged
/// `‖∇f(x̄)‖²`, with the error terms averaged over `err_series`.
pub fn bound_rhs(params: &ConvergenceParams, delta: f64, err_series: &[ErrorStats], f0: f64) -> Result<f64> {
    params.validate()?;
    let g = g_factor(delta, params)?;
    let denom = 0.5 - params.lead_coeff() * g;
    if !(denom > 0.0) {
        return Err(Error::InvalidHyperparameters {
            lambda_max: lambda_for_positive_lead(params, delta),
        });
    }
    let mean = mean_stats(err_series);
    let weights = ErrorWeights::from_g(ErrorWeightMode::Bound, g, params);
    Ok((params.q(f0) + params.r() * g + mean.weighted(&weights)) / denom)
}

/// Largest λ keeping `½ − 27Mλ²G(δ) > 0`, found by bisection since `G`
/// itself depends on λ.
fn lambda_for_positive_lead(params: &ConvergenceParams, delta: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = params.lambda_max(delta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = ConvergenceParams { lambda: mid, ..*params };
        let ok = g_factor(delta, &p)
            .map(|g| 0.5 - p.lead_coeff() * g > 0.0)
            .unwrap_or(false);
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Average of a series, used when reporting.
pub fn mean_stats(series: &[ErrorStats]) -> ErrorStats {
    if series.is_empty() {
        return ErrorStats::default();
    }
    let n = series.len() as f64;
    ErrorStats {
        fro_expect: series.iter().map(|s| s.fro_expect).sum::<f64>() / n,
        ones_expect: series.iter().map(|s| s.ones_expect).sum::<f64>() / n,
    }
}

/// Collected `(c_ij)` residuals, mainly for diagnostics and tests.
pub fn alignment_residuals(
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    scales: &[f64],
) -> Result<Vec<((usize, usize), Complex64)>> {
    check_shapes(w, beams, chans, scales)?;
    Ok(chans
        .links()
        .map(|(i, j)| ((i, j), residual(w, beams, chans, scales, i, j).unwrap_or_default()))
        .collect())
}
