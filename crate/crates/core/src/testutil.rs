//! Random instances shared by unit tests.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::beamopt::BeamformerSet;
use crate::channel::{sample_round, ChannelConfig, ChannelSet};
use crate::linalg::{CMatrix, CVector, RMatrix};
use crate::mixing::random_feasible;
use crate::rng::{complex_normal, SimRng};
use crate::topology::{generate_random, TopologyGraph};

pub struct Instance {
    pub graph: TopologyGraph,
    pub chans: ChannelSet,
    pub beams: BeamformerSet,
    pub w: RMatrix,
    pub scales: Vec<f64>,
}

pub fn random_cvec(rng: &mut SimRng, n: usize, var: f64) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng, var))
}

pub fn random_psd(rng: &mut SimRng, n: usize, rank: usize) -> CMatrix {
    let b = CMatrix::from_fn(n, rank, |_, _| complex_normal(rng, 1.0));
    &b * b.adjoint()
}

pub fn instance(m: usize, n: usize, sparsity: f64, snr_db: f64, seed: u64) -> Instance {
    let mut rng = SimRng::seed_from_u64(seed);
    let graph = generate_random(m, sparsity, seed ^ 0x55).unwrap();
    let cfg = ChannelConfig::new(snr_db, 1.0).unwrap();
    let chans = sample_round(&graph, &cfg, n, n, seed ^ 0xaa).unwrap();
    let w = random_feasible(&graph, &mut rng);
    let mut beams = BeamformerSet::zeros(m, n, n);
    for p in 0..m {
        let u = random_cvec(&mut rng, n, 1.0);
        beams.transmit[p] = &u * Complex64::new(0.6 / u.norm(), 0.0);
        beams.receive[p] = random_cvec(&mut rng, n, 0.2);
    }
    let scales = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    Instance {
        graph,
        chans,
        beams,
        w,
        scales,
    }
}
