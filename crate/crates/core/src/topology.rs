//! Undirected communication graphs: sparsity-controlled random graphs and a
//! few named shapes.
//!
//! Sparsity counts absent off-diagonal unordered pairs out of `M(M-1)/2`.
//! Self links are implicit: a device always hears itself through its own
//! mixing weight.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedTopology {
    Complete,
    Ring,
    Line,
    Star,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyGraph {
    num_devices: usize,
    adjacency: Vec<bool>,
}

impl TopologyGraph {
    /// Builds a graph from an undirected edge list. Rejects self loops,
    /// out-of-range endpoints and disconnected results.
    pub fn from_edges(num_devices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_devices == 0 {
            return Err(Error::InvalidArgument("graph needs at least one device"));
        }
        let mut g = Self::empty(num_devices);
        for &(i, j) in edges {
            for idx in [i, j] {
                if idx >= num_devices {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        devices: num_devices,
                    });
                }
            }
            if i == j {
                return Err(Error::InvalidArgument("self loops are implicit"));
            }
            g.set(i, j, true);
        }
        if !g.is_connected() {
            return Err(Error::InvalidArgument("graph is not connected"));
        }
        Ok(g)
    }

    fn empty(num_devices: usize) -> Self {
        let mut adjacency = vec![false; num_devices * num_devices];
        for i in 0..num_devices {
            adjacency[i * num_devices + i] = true;
        }
        Self {
            num_devices,
            adjacency,
        }
    }

    fn set(&mut self, i: usize, j: usize, on: bool) {
        let m = self.num_devices;
        self.adjacency[i * m + j] = on;
        self.adjacency[j * m + i] = on;
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    /// `e_ij`; the diagonal is always true.
    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.num_devices + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.num_devices)
            .filter(|&j| j != i && self.linked(i, j))
            .count()
    }

    /// Neighbors of `i` other than itself, ascending.
    pub fn neighbor_set(&self, i: usize) -> Result<Vec<usize>> {
        if i >= self.num_devices {
            return Err(Error::IndexOutOfRange {
                index: i,
                devices: self.num_devices,
            });
        }
        Ok(self.neighbors(i).collect())
    }

    pub(crate) fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_devices).filter(move |&j| j != i && self.linked(i, j))
    }

    /// Unordered edges `(i, j)` with `i < j`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let m = self.num_devices;
        let mut out = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if self.linked(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Fraction of absent off-diagonal unordered pairs.
    pub fn sparsity(&self) -> f64 {
        let m = self.num_devices;
        let pairs = m * (m - 1) / 2;
        if pairs == 0 {
            return 0.0;
        }
        (pairs - self.num_edges()) as f64 / pairs as f64
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_devices).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Breadth-first reachability from device 0.
    pub fn is_connected(&self) -> bool {
        let m = self.num_devices;
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == m
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.num_devices;
        (0..m).all(|i| (0..m).all(|j| self.linked(i, j) == self.linked(j, i)))
    }
}

/// Random connected graph with `round(sparsity * M(M-1)/2)` absent pairs.
///
/// A random spanning tree is laid down first and the remaining edges are
/// drawn uniformly from the non-tree pairs, so connectivity never needs a
/// retry.
pub fn generate_random(num_devices: usize, sparsity: f64, seed: u64) -> Result<TopologyGraph> {
    if num_devices < 2 {
        return Err(Error::InvalidArgument("need at least two devices"));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument("sparsity must lie in [0, 1)"));
    }
    let m = num_devices;
    let pairs = m * (m - 1) / 2;
    let absent = libm::round(sparsity * pairs as f64) as usize;
    let present = pairs - absent;
    if present < m - 1 {
        return Err(Error::InfeasibleSparsity {
            devices: m,
            absent,
            pairs,
        });
    }

    let mut rng = SimRng::seed_from_u64(seed);
    let mut g = TopologyGraph::empty(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    for k in 1..m {
        let parent = order[rng.random_range(0..k)];
        g.set(order[k], parent, true);
    }
    let mut rest: Vec<(usize, usize)> = Vec::with_capacity(pairs);
    for i in 0..m {
        for j in (i + 1)..m {
            if !g.linked(i, j) {
                rest.push((i, j));
            }
        }
    }
    rest.shuffle(&mut rng);
    for &(i, j) in rest.iter().take(present - (m - 1)) {
        g.set(i, j, true);
    }
    Ok(g)
}

pub fn generate_named(kind: NamedTopology, num_devices: usize) -> Result<TopologyGraph> {
    if num_devices < 2 {
        return Err(Error::InvalidArgument("need at least two devices"));
    }
    let m = num_devices;
    let mut g = TopologyGraph::empty(m);
    match kind {
        NamedTopology::Complete => {
            for i in 0..m {
                for j in (i + 1)..m {
                    g.set(i, j, true);
                }
            }
        }
        NamedTopology::Ring => {
            for i in 0..m {
                g.set(i, (i + 1) % m, true);
            }
        }
        NamedTopology::Line => {
            for i in 0..m - 1 {
                g.set(i, i + 1, true);
            }
        }
        NamedTopology::Star => {
            for j in 1..m {
                g.set(0, j, true);
            }
        }
    }
    Ok(g)
}
