//! Seed discipline: one master seed fans out into independent named streams
//! so that toggling one consumer never shifts another consumer's draws.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha12Rng;

/// Consumers of randomness inside a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Channels = 2,
    Noise = 3,
    Data = 4,
    Sampling = 5,
    Init = 6,
    Mixing = 7,
    Beams = 8,
}

/// Derives reproducible generators from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Generator for `stream` at position `index` (round, device, ...).
    pub fn rng(&self, stream: Stream, index: u64) -> SimRng {
        SimRng::from_seed(self.key(stream, index))
    }

    /// A 64-bit child seed, for APIs that take a plain seed.
    pub fn seed(&self, stream: Stream, index: u64) -> u64 {
        let k = self.key(stream, index);
        let mut out = 0u64;
        for (n, b) in k.iter().enumerate() {
            out ^= (*b as u64).rotate_left((n as u32 * 8) % 64);
        }
        splitmix(out)
    }

    fn key(&self, stream: Stream, index: u64) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&splitmix(self.master).to_le_bytes());
        key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
        key[16..24].copy_from_slice(&splitmix(index ^ 0x9e37_79b9_7f4a_7c15).to_le_bytes());
        key[24..32].copy_from_slice(&self.master.to_le_bytes());
        key
    }
}

/// Child seed for position `index` under an arbitrary parent seed.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Circularly-symmetric complex normal with total variance `variance`
/// (real and imaginary parts each carry half).
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = crate::linalg::sqrt(variance * 0.5);
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
