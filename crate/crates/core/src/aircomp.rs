//! Over-the-air aggregation transceiver chain: normalization, complex
//! packing, multicast transmit, receive combining and recovery, plus the
//! error-free reference aggregation.
//!
//! The de-normalization factor `scale` is the standard deviation of the
//! model entries. A receive chain is perfectly aligned for link `(i, j)` when
//! `f_iᴴ H⟨i,j⟩ u_j = w_ij · scale_j`; with no noise the recovered model then
//! equals the ideal weighted average exactly.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::beamopt::BeamformerSet;
use crate::channel::{transmit, ChannelSet};
use crate::error::{Error, Result};
use crate::linalg::{cvec_norm_sq, sqrt, CMatrix, CVector, RMatrix, RVector, C_ZERO};
use crate::rng::derive;

/// Side information exchanged over the error-free control link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub mean: f64,
    /// Standard deviation of the entries; zero marks a constant model.
    pub scale: f64,
    /// Length of the model vector before any padding.
    pub dim: usize,
    /// One zero was appended to reach an even length.
    pub padded: bool,
}

impl NormalizationRecord {
    pub fn is_degenerate(&self) -> bool {
        self.scale == 0.0
    }

    /// Number of complex symbols the model occupies.
    pub fn symbols(&self) -> usize {
        self.dim.div_ceil(2)
    }
}

/// Complex block `r`, one symbol per channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFrame {
    pub symbols: CVector,
}

impl ComplexFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            symbols: CVector::from_element(len, C_ZERO),
        }
    }
}

fn moments(x: &RVector) -> (f64, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, var)
}

/// Centers and scales `x` to zero mean and unit empirical variance.
pub fn normalize(x: &RVector) -> Result<(RVector, NormalizationRecord)> {
    if x.is_empty() {
        return Err(Error::DegenerateInput("empty model vector"));
    }
    let (mean, var) = moments(x);
    let scale = sqrt(var);
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(scale > 1e-12 * peak) {
        return Err(Error::DegenerateInput("model vector is constant"));
    }
    let x_tilde = x.map(|v| (v - mean) / scale);
    Ok((
        x_tilde,
        NormalizationRecord {
            mean,
            scale,
            dim: x.len(),
            padded: x.len() % 2 == 1,
        },
    ))
}

/// Pairs the first half of `x_tilde` with the second half as real and
/// imaginary parts.
pub fn pack_complex(x_tilde: &RVector) -> Result<ComplexFrame> {
    let d = x_tilde.len();
    if d % 2 != 0 {
        return Err(Error::Shape("pack_complex needs an even length; pad first"));
    }
    let l = d / 2;
    Ok(ComplexFrame {
        symbols: CVector::from_fn(l, |k, _| Complex64::new(x_tilde[k], x_tilde[k + l])),
    })
}

/// Inverse of [`pack_complex`].
pub fn unpack_complex(frame: &ComplexFrame) -> RVector {
    let l = frame.len();
    RVector::from_fn(2 * l, |k, _| {
        if k < l {
            frame.symbols[k].re
        } else {
            frame.symbols[k - l].im
        }
    })
}

/// Normalizes and packs one model; odd lengths get a trailing zero and a
/// constant model yields the zero frame with `scale = 0`.
pub fn prepare_frame(x: &RVector) -> Result<(ComplexFrame, NormalizationRecord)> {
    match normalize(x) {
        Ok((mut x_tilde, rec)) => {
            if rec.padded {
                x_tilde = x_tilde.push(0.0);
            }
            Ok((pack_complex(&x_tilde)?, rec))
        }
        Err(Error::DegenerateInput("model vector is constant")) => {
            let (mean, _) = moments(x);
            let rec = NormalizationRecord {
                mean,
                scale: 0.0,
                dim: x.len(),
                padded: x.len() % 2 == 1,
            };
            Ok((ComplexFrame::zeros(rec.symbols()), rec))
        }
        Err(e) => Err(e),
    }
}

/// `S = u rᵀ`; the per-use power `2‖u‖²` must not exceed `p0`.
pub fn make_transmit(frame: &ComplexFrame, u: &CVector, p0: f64) -> Result<CMatrix> {
    let power = 2.0 * cvec_norm_sq(u);
    if power > p0 + 1e-9 {
        return Err(Error::PowerViolation { power, budget: p0 });
    }
    Ok(u * frame.symbols.transpose())
}

/// Combines the received block and restores the mean offset and the local
/// contribution: `x̂ = [Re r̂; Im r̂] + (Σ_j w_ij x̄_j) 𝟙 + w_ii x_i` with
/// `r̂ = (fᴴ Y)ᵀ`.
pub fn receive_and_recover(
    y: &CMatrix,
    f: &CVector,
    w_row: &[f64],
    recs: &[NormalizationRecord],
    x_self: &RVector,
    self_index: usize,
) -> Result<RVector> {
    if y.nrows() != f.len() {
        return Err(Error::Shape("combiner length must equal receive antennas"));
    }
    if w_row.len() != recs.len() || self_index >= w_row.len() {
        return Err(Error::Shape("mixing row and records must cover every device"));
    }
    let dim = x_self.len();
    if y.ncols() != dim.div_ceil(2) {
        return Err(Error::Shape("received block length must be ceil(D/2)"));
    }
    let r_hat = (f.adjoint() * y).transpose();
    let frame = ComplexFrame {
        symbols: r_hat.column(0).into_owned(),
    };
    let mut x_hat = unpack_complex(&frame);
    if x_hat.len() != dim {
        x_hat = x_hat.rows(0, dim).into_owned();
    }
    let mean_offset: f64 = w_row
        .iter()
        .zip(recs)
        .enumerate()
        .filter(|&(j, _)| j != self_index)
        .map(|(_, (w, rec))| w * rec.mean)
        .sum();
    let w_self = w_row[self_index];
    for (v, xs) in x_hat.iter_mut().zip(x_self.iter()) {
        *v += mean_offset + w_self * xs;
    }
    Ok(x_hat)
}

/// Error-free gossip: column `i` of the result is `Σ_j w_ij x_j`.
///
/// Accumulates in a fixed device order so that identical mixing columns
/// produce bit-identical outputs.
pub fn ideal_aggregate(x: &RMatrix, w: &RMatrix) -> Result<RMatrix> {
    let m = x.ncols();
    if w.nrows() != m || w.ncols() != m {
        return Err(Error::Shape("mixing matrix must be M x M for an D x M model matrix"));
    }
    let mut out = RMatrix::zeros(x.nrows(), m);
    for i in 0..m {
        let mut col = out.column_mut(i);
        for j in 0..m {
            let wij = w[(i, j)];
            if wij != 0.0 {
                col.axpy(wij, &x.column(j), 1.0);
            }
        }
    }
    Ok(out)
}

/// Everything one over-the-air gossip round produced.
#[derive(Debug, Clone)]
pub struct AirAggregate {
    pub estimate: RMatrix,
    pub records: Vec<NormalizationRecord>,
    /// Transmit matrices `S_j`, one per device.
    pub frames: Vec<CMatrix>,
}

/// Runs the full transceiver chain for every device of one round.
pub fn aggregate_over_the_air(
    x: &RMatrix,
    w: &RMatrix,
    beams: &BeamformerSet,
    chans: &ChannelSet,
    p0: f64,
    noise_seed: u64,
) -> Result<AirAggregate> {
    let m = x.ncols();
    if chans.num_devices() != m || beams.num_devices() != m || w.nrows() != m {
        return Err(Error::Shape("models, mixing, beams and channels disagree on M"));
    }
    let mut records = Vec::with_capacity(m);
    let mut frames = Vec::with_capacity(m);
    for j in 0..m {
        let xj = x.column(j).into_owned();
        let (frame, rec) = prepare_frame(&xj)?;
        frames.push(make_transmit(&frame, &beams.transmit[j], p0)?);
        records.push(rec);
    }
    let mut estimate = RMatrix::zeros(x.nrows(), m);
    let w_rows: Vec<Vec<f64>> = (0..m).map(|i| w.row(i).iter().copied().collect()).collect();
    for i in 0..m {
        let y = transmit(chans, &frames, i, derive(noise_seed, i as u64))?;
        let xi = x.column(i).into_owned();
        let xh = receive_and_recover(&y, &beams.receive[i], &w_rows[i], &records, &xi, i)?;
        estimate.set_column(i, &xh);
    }
    Ok(AirAggregate {
        estimate,
        records,
        frames,
    })
}
