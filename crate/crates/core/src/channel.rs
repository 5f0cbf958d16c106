//! Block-fading MIMO D2D channels and receiver noise.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C_ZERO};
use crate::rng::{complex_normal, SimRng};
use crate::topology::TopologyGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fading {
    RayleighIid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Transmitter-side SNR, `P0 / σ_n²`, in dB. `+inf` gives a noiseless link.
    pub snr_db: f64,
    pub p0: f64,
    pub fading: Fading,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, p0: f64) -> Result<Self> {
        if !(p0 > 0.0) {
            return Err(Error::InvalidArgument("p0 must be positive"));
        }
        Ok(Self {
            snr_db,
            p0,
            fading: Fading::RayleighIid,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.p0 / libm::pow(10.0, self.snr_db / 10.0)
    }
}

/// One round of channel state: `H⟨i,j⟩` (receiver `i`, transmitter `j`) for
/// every linked ordered pair with `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    num_devices: usize,
    n_tx: usize,
    n_rx: usize,
    noise_variance: f64,
    matrices: Vec<Option<CMatrix>>,
}

impl ChannelSet {
    /// Assembles a channel set from explicit matrices, e.g. a replayed dump.
    pub fn from_matrices(
        graph: &TopologyGraph,
        n_tx: usize,
        n_rx: usize,
        noise_variance: f64,
        mut matrix_for: impl FnMut(usize, usize) -> CMatrix,
    ) -> Result<Self> {
        if !(noise_variance >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be non-negative"));
        }
        let m = graph.num_devices();
        let mut matrices = vec![None; m * m];
        for i in 0..m {
            for j in graph.neighbors(i) {
                let h = matrix_for(i, j);
                if h.nrows() != n_rx || h.ncols() != n_tx {
                    return Err(Error::Shape("channel matrix must be n_rx x n_tx"));
                }
                matrices[i * m + j] = Some(h);
            }
        }
        Ok(Self {
            num_devices: m,
            n_tx,
            n_rx,
            noise_variance,
            matrices,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    /// `H⟨i,j⟩`, if `i` hears `j`.
    pub fn get(&self, i: usize, j: usize) -> Option<&CMatrix> {
        self.matrices.get(i * self.num_devices + j)?.as_ref()
    }

    #[cfg(test)]
    pub(crate) fn get_mut(&mut self, i: usize, j: usize) -> Option<&mut CMatrix> {
        self.matrices.get_mut(i * self.num_devices + j)?.as_mut()
    }

    /// Receivers that hear transmitter `j`, ascending.
    pub fn listeners(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_devices).filter(move |&i| self.get(i, j).is_some())
    }

    /// Transmitters heard by receiver `i`, ascending.
    pub fn sources(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_devices).filter(move |&j| self.get(i, j).is_some())
    }

    /// Ordered links `(i, j)` in row-major order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.num_devices;
        (0..m * m)
            .filter(move |&k| self.matrices[k].is_some())
            .map(move |k| (k / m, k % m))
    }
}

/// Draws one round of i.i.d. Rayleigh channels; each entry is `CN(0, 1)`.
pub fn sample_round(
    graph: &TopologyGraph,
    cfg: &ChannelConfig,
    n_tx: usize,
    n_rx: usize,
    seed: u64,
) -> Result<ChannelSet> {
    if n_tx == 0 || n_rx == 0 {
        return Err(Error::InvalidArgument("antenna counts must be positive"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    ChannelSet::from_matrices(graph, n_tx, n_rx, cfg.noise_variance(), |_, _| {
        CMatrix::from_fn(n_rx, n_tx, |_, _| complex_normal(&mut rng, 1.0))
    })
}

/// Superposes every neighbor's transmit matrix through its channel and adds
/// receiver noise: `Σ_j H⟨i,j⟩ S_j + N_i`.
///
/// `signals[j]` is device `j`'s `n_tx x L` transmit matrix.
pub fn transmit(
    chans: &ChannelSet,
    signals: &[CMatrix],
    receiver: usize,
    seed: u64,
) -> Result<CMatrix> {
    let m = chans.num_devices();
    if receiver >= m {
        return Err(Error::IndexOutOfRange {
            index: receiver,
            devices: m,
        });
    }
    if signals.len() != m {
        return Err(Error::Shape("one transmit matrix per device"));
    }
    let mut len = None;
    let mut y: Option<CMatrix> = None;
    for j in chans.sources(receiver) {
        let s = &signals[j];
        if s.nrows() != chans.n_tx() {
            return Err(Error::Shape("transmit matrix must have n_tx rows"));
        }
        match len {
            None => len = Some(s.ncols()),
            Some(l) if l != s.ncols() => {
                return Err(Error::Shape("neighbors sent blocks of different length"))
            }
            _ => {}
        }
        let h = chans.get(receiver, j).expect("source has a channel");
        match y.as_mut() {
            None => y = Some(h * s),
            Some(acc) => acc.gemm(Complex64::new(1.0, 0.0), h, s, Complex64::new(1.0, 0.0)),
        }
    }
    let l = len.unwrap_or_else(|| signals.first().map_or(0, |s| s.ncols()));
    let mut y = y.unwrap_or_else(|| CMatrix::from_element(chans.n_rx(), l, C_ZERO));
    let sigma2 = chans.noise_variance();
    if sigma2 > 0.0 {
        let mut rng = SimRng::seed_from_u64(seed);
        // column-major draw order: symbol by symbol
        for z in y.iter_mut() {
            *z += complex_normal(&mut rng, sigma2);
        }
    }
    Ok(y)
}
