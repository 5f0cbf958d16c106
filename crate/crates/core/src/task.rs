//! Desk-scale learning tasks: per-device datasets, losses and (stochastic)
//! gradients.

use alloc::vec::Vec;

use nalgebra::Cholesky;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sqrt, sym_eig_sorted, RMatrix, RVector};
use crate::rng::{standard_normal, SimRng};

/// A distributed empirical-risk problem `f(x) = (1/M) Σ_i f_i(x)`.
pub trait Task {
    fn dim(&self) -> usize;

    fn num_devices(&self) -> usize;

    /// `f_i(x)` on device `i`'s full dataset.
    fn local_loss(&self, i: usize, x: &RVector) -> f64;

    /// `∇f_i(x)` on device `i`'s full dataset.
    fn local_gradient(&self, i: usize, x: &RVector) -> RVector;

    /// Unbiased minibatch estimate of `∇f_i(x)`; the full gradient when the
    /// batch covers the dataset.
    fn stochastic_gradient(&self, i: usize, x: &RVector, rng: &mut SimRng) -> RVector;

    fn global_loss(&self, x: &RVector) -> f64 {
        let m = self.num_devices();
        (0..m).map(|i| self.local_loss(i, x)).sum::<f64>() / m as f64
    }

    fn global_gradient(&self, x: &RVector) -> RVector {
        let m = self.num_devices();
        let mut g = RVector::zeros(self.dim());
        for i in 0..m {
            g += self.local_gradient(i, x);
        }
        g / m as f64
    }

    /// Minimum of the global loss, when known in closed form.
    fn optimum(&self) -> Option<f64> {
        None
    }

    /// Starting model shared by every device.
    fn initial_model(&self, rng: &mut SimRng) -> RVector {
        RVector::from_fn(self.dim(), |_, _| 0.1 * standard_normal(rng))
    }
}

fn batch_indices(n: usize, batch: usize, rng: &mut SimRng) -> Option<Vec<usize>> {
    if batch == 0 || batch >= n {
        return None;
    }
    Some((0..batch).map(|_| rng.random_range(0..n)).collect())
}

/// Generator settings for [`QuadraticTask`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub samples: usize,
    /// 0 gives every device the same local optimum, 1 gives each group its
    /// own.
    pub heterogeneity: f64,
    /// Per-device feature variance is drawn uniformly from this range.
    pub curvature: (f64, f64),
    pub noise_std: f64,
    pub groups: usize,
    pub batch: usize,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            dim: 20,
            samples: 100,
            heterogeneity: 0.8,
            curvature: (2.0, 8.0),
            noise_std: 0.5,
            groups: 10,
            batch: 10,
        }
    }
}

/// Least squares `f_i(x) = ‖A_i x − b_i‖²/(2n)` with device-specific
/// curvature and local optima.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    features: Vec<RMatrix>,
    targets: Vec<RVector>,
    hessians: Vec<RMatrix>,
    linear: Vec<RVector>,
    offsets: Vec<f64>,
    minimizer: RVector,
    optimum: f64,
    smoothness: f64,
    batch: usize,
}

impl QuadraticTask {
    pub fn generate(spec: &QuadraticSpec, devices: usize, rng: &mut SimRng) -> Result<Self> {
        if spec.dim == 0 || spec.samples == 0 || devices == 0 || spec.groups == 0 {
            return Err(Error::InvalidArgument("quadratic task needs positive sizes"));
        }
        if !(0.0..=1.0).contains(&spec.heterogeneity) || !(spec.curvature.0 > 0.0 && spec.curvature.1 >= spec.curvature.0) {
            return Err(Error::InvalidArgument("heterogeneity must be in [0, 1] and curvature range positive"));
        }
        let d = spec.dim;
        let common = RVector::from_fn(d, |_, _| standard_normal(rng));
        let shards: Vec<RVector> = (0..spec.groups).map(|_| RVector::from_fn(d, |_, _| standard_normal(rng))).collect();
        let mut features = Vec::with_capacity(devices);
        let mut targets = Vec::with_capacity(devices);
        for i in 0..devices {
            let c = rng.random_range(spec.curvature.0..=spec.curvature.1);
            let s = sqrt(c);
            let a = RMatrix::from_fn(spec.samples, d, |_, _| s * standard_normal(rng));
            let theta = &common * (1.0 - spec.heterogeneity) + &shards[i % spec.groups] * spec.heterogeneity;
            let noise = RVector::from_fn(spec.samples, |_, _| spec.noise_std * standard_normal(rng));
            targets.push(&a * theta + noise);
            features.push(a);
        }
        Self::from_data(features, targets, spec.batch)
    }

    /// Builds the task from explicit per-device `(A_i, b_i)`.
    pub fn from_data(features: Vec<RMatrix>, targets: Vec<RVector>, batch: usize) -> Result<Self> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(Error::Shape("one (A, b) pair per device"));
        }
        let d = features[0].ncols();
        let m = features.len();
        let mut hessians = Vec::with_capacity(m);
        let mut linear = Vec::with_capacity(m);
        let mut offsets = Vec::with_capacity(m);
        let mut smoothness: f64 = 0.0;
        for (a, b) in features.iter().zip(&targets) {
            if a.ncols() != d || a.nrows() != b.len() || a.nrows() == 0 {
                return Err(Error::Shape("inconsistent quadratic data"));
            }
            let n = a.nrows() as f64;
            let h = a.transpose() * a / n;
            smoothness = smoothness.max(sym_eig_sorted(&h).0[0]);
            linear.push(a.transpose() * b / n);
            offsets.push(b.norm_squared() / (2.0 * n));
            hessians.push(h);
        }
        let h_bar = hessians.iter().fold(RMatrix::zeros(d, d), |acc, h| acc + h) / m as f64;
        let g_bar = linear.iter().fold(RVector::zeros(d), |acc, g| acc + g) / m as f64;
        let c_bar = offsets.iter().sum::<f64>() / m as f64;
        let minimizer = Cholesky::new(h_bar.clone())
            .ok_or(Error::DegenerateInput("average Hessian is singular"))?
            .solve(&g_bar);
        let optimum = 0.5 * minimizer.dot(&(&h_bar * &minimizer)) - g_bar.dot(&minimizer) + c_bar;
        Ok(Self {
            features,
            targets,
            hessians,
            linear,
            offsets,
            minimizer,
            optimum,
            smoothness,
            batch,
        })
    }

    pub fn minimizer(&self) -> &RVector {
        &self.minimizer
    }

    /// Largest local curvature `max_i λ_max(A_iᵀA_i/n_i)`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `(H_i, g_i)` with `∇f_i(x) = H_i x − g_i`.
    pub fn local_form(&self, i: usize) -> (&RMatrix, &RVector) {
        (&self.hessians[i], &self.linear[i])
    }
}

impl Task for QuadraticTask {
    fn dim(&self) -> usize {
        self.minimizer.len()
    }

    fn num_devices(&self) -> usize {
        self.features.len()
    }

    fn local_loss(&self, i: usize, x: &RVector) -> f64 {
        0.5 * x.dot(&(&self.hessians[i] * x)) - self.linear[i].dot(x) + self.offsets[i]
    }

    fn local_gradient(&self, i: usize, x: &RVector) -> RVector {
        &self.hessians[i] * x - &self.linear[i]
    }

    fn stochastic_gradient(&self, i: usize, x: &RVector, rng: &mut SimRng) -> RVector {
        let a = &self.features[i];
        let Some(rows) = batch_indices(a.nrows(), self.batch, rng) else {
            return self.local_gradient(i, x);
        };
        let mut g = RVector::zeros(x.len());
        for r in &rows {
            let row = a.row(*r);
            let resid = (row * x)[0] - self.targets[i][*r];
            g += row.transpose() * resid;
        }
        g / rows.len() as f64
    }

    fn optimum(&self) -> Option<f64> {
        Some(self.optimum)
    }
}

/// Generator settings for [`LogisticTask`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticSpec {
    pub dim: usize,
    pub samples: usize,
    /// Fraction of each device's labels drawn from its group's class rather
    /// than uniformly.
    pub heterogeneity: f64,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    pub l2: f64,
    pub batch: usize,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            samples: 100,
            heterogeneity: 0.8,
            separation: 1.0,
            l2: 1e-2,
            batch: 10,
        }
    }
}

/// Binary logistic regression with an L2 penalty on Gaussian clusters,
/// labels skewed per device (even devices lean positive, odd negative).
#[derive(Debug, Clone)]
pub struct LogisticTask {
    features: Vec<RMatrix>,
    labels: Vec<RVector>,
    l2: f64,
    batch: usize,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl LogisticTask {
    pub fn generate(spec: &LogisticSpec, devices: usize, rng: &mut SimRng) -> Result<Self> {
        if spec.dim < 2 || spec.samples == 0 || devices == 0 {
            return Err(Error::InvalidArgument("logistic task needs dim >= 2 and samples"));
        }
        if !(0.0..=1.0).contains(&spec.heterogeneity) || !(spec.l2 >= 0.0) {
            return Err(Error::InvalidArgument("heterogeneity must be in [0, 1], l2 non-negative"));
        }
        let d = spec.dim;
        // Last coordinate is a constant bias feature.
        let mut dir = RVector::from_fn(d - 1, |_, _| standard_normal(rng));
        dir /= dir.norm();
        let mut features = Vec::with_capacity(devices);
        let mut labels = Vec::with_capacity(devices);
        for i in 0..devices {
            let lean = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut a = RMatrix::zeros(spec.samples, d);
            let mut y = RVector::zeros(spec.samples);
            for r in 0..spec.samples {
                let label = if rng.random::<f64>() < spec.heterogeneity {
                    lean
                } else if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                };
                for k in 0..d - 1 {
                    a[(r, k)] = label * spec.separation * dir[k] + standard_normal(rng);
                }
                a[(r, d - 1)] = 1.0;
                y[r] = label;
            }
            features.push(a);
            labels.push(y);
        }
        Ok(Self {
            features,
            labels,
            l2: spec.l2,
            batch: spec.batch,
        })
    }

    fn rows_gradient(&self, i: usize, x: &RVector, rows: impl Iterator<Item = usize>) -> RVector {
        let a = &self.features[i];
        let mut g = RVector::zeros(x.len());
        let mut count = 0usize;
        for r in rows {
            let row = a.row(r);
            let y = self.labels[i][r];
            let z = y * (row * x)[0];
            g += row.transpose() * (-y * sigmoid(-z));
            count += 1;
        }
        g / count as f64 + x * self.l2
    }
}

impl Task for LogisticTask {
    fn dim(&self) -> usize {
        self.features[0].ncols()
    }

    fn num_devices(&self) -> usize {
        self.features.len()
    }

    fn local_loss(&self, i: usize, x: &RVector) -> f64 {
        let a = &self.features[i];
        let margins = a * x;
        let data: f64 = margins
            .iter()
            .zip(self.labels[i].iter())
            .map(|(m, y)| softplus(-y * m))
            .sum::<f64>()
            / a.nrows() as f64;
        data + 0.5 * self.l2 * x.norm_squared()
    }

    fn local_gradient(&self, i: usize, x: &RVector) -> RVector {
        self.rows_gradient(i, x, 0..self.features[i].nrows())
    }

    fn stochastic_gradient(&self, i: usize, x: &RVector, rng: &mut SimRng) -> RVector {
        match batch_indices(self.features[i].nrows(), self.batch, rng) {
            Some(rows) => self.rows_gradient(i, x, rows.into_iter()),
            None => self.local_gradient(i, x),
        }
    }
}

/// Labelled examples held by one device: one row per example.
#[derive(Debug, Clone)]
pub struct LabelledData {
    pub features: RMatrix,
    pub labels: Vec<usize>,
}

/// One-hidden-layer tanh network with softmax cross-entropy.
///
/// Parameters are flattened as `[W1 (row-major), b1, W2 (row-major), b2]`.
#[derive(Debug, Clone)]
pub struct MlpTask {
    devices: Vec<LabelledData>,
    inputs: usize,
    hidden: usize,
    classes: usize,
    l2: f64,
    batch: usize,
}

impl MlpTask {
    pub fn new(devices: Vec<LabelledData>, hidden: usize, classes: usize, l2: f64, batch: usize) -> Result<Self> {
        let Some(first) = devices.first() else {
            return Err(Error::InvalidArgument("at least one device dataset is required"));
        };
        let inputs = first.features.ncols();
        for d in &devices {
            if d.features.ncols() != inputs || d.features.nrows() != d.labels.len() || d.labels.is_empty() {
                return Err(Error::Shape("inconsistent device dataset"));
            }
            if d.labels.iter().any(|&l| l >= classes) {
                return Err(Error::InvalidArgument("label out of range"));
            }
        }
        if hidden == 0 || classes < 2 {
            return Err(Error::InvalidArgument("need hidden units and at least two classes"));
        }
        Ok(Self {
            devices,
            inputs,
            hidden,
            classes,
            l2,
            batch,
        })
    }

    fn split<'a>(&self, x: &'a RVector) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let s = x.as_slice();
        let (w1, rest) = s.split_at(self.hidden * self.inputs);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.classes * self.hidden);
        (w1, b1, w2, b2)
    }

    /// Loss of one example and, when `grad` is given, its gradient added in.
    fn example(&self, x: &RVector, input: &[f64], label: usize, grad: Option<&mut [f64]>) -> f64 {
        let (w1, b1, w2, b2) = self.split(x);
        let (h, c, n) = (self.hidden, self.classes, self.inputs);
        let mut act = Vec::with_capacity(h);
        for k in 0..h {
            let z: f64 = b1[k] + (0..n).map(|q| w1[k * n + q] * input[q]).sum::<f64>();
            act.push(libm::tanh(z));
        }
        let mut logits: Vec<f64> = (0..c).map(|o| b2[o] + (0..h).map(|k| w2[o * h + k] * act[k]).sum::<f64>()).collect();
        let peak = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = libm::exp(*l - peak);
            total += *l;
        }
        let loss = -libm::log(logits[label] / total);
        if let Some(g) = grad {
            let (gw1, rest) = g.split_at_mut(h * n);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            let mut back = alloc::vec![0.0; h];
            for o in 0..c {
                let delta = logits[o] / total - if o == label { 1.0 } else { 0.0 };
                gb2[o] += delta;
                for k in 0..h {
                    gw2[o * h + k] += delta * act[k];
                    back[k] += delta * w2[o * h + k];
                }
            }
            for k in 0..h {
                let dz = back[k] * (1.0 - act[k] * act[k]);
                gb1[k] += dz;
                for q in 0..n {
                    gw1[k * n + q] += dz * input[q];
                }
            }
        }
        loss
    }

    fn rows_gradient(&self, i: usize, x: &RVector, rows: &[usize]) -> RVector {
        let data = &self.devices[i];
        let mut g = alloc::vec![0.0; x.len()];
        let mut input = alloc::vec![0.0; self.inputs];
        for &r in rows {
            for (q, v) in input.iter_mut().enumerate() {
                *v = data.features[(r, q)];
            }
            self.example(x, &input, data.labels[r], Some(&mut g));
        }
        RVector::from_vec(g) / rows.len() as f64 + x * self.l2
    }

    /// Fraction of device `i`'s examples classified correctly.
    pub fn accuracy(&self, i: usize, x: &RVector) -> f64 {
        let data = &self.devices[i];
        let (w1, b1, w2, b2) = self.split(x);
        let (h, c, n) = (self.hidden, self.classes, self.inputs);
        let mut correct = 0usize;
        for r in 0..data.labels.len() {
            let act: Vec<f64> = (0..h)
                .map(|k| libm::tanh(b1[k] + (0..n).map(|q| w1[k * n + q] * data.features[(r, q)]).sum::<f64>()))
                .collect();
            let best = (0..c)
                .map(|o| b2[o] + (0..h).map(|k| w2[o * h + k] * act[k]).sum::<f64>())
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (o, v)| if v > acc.1 { (o, v) } else { acc })
                .0;
            if best == data.labels[r] {
                correct += 1;
            }
        }
        correct as f64 / data.labels.len() as f64
    }
}

impl Task for MlpTask {
    fn dim(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.classes * self.hidden + self.classes
    }

    fn num_devices(&self) -> usize {
        self.devices.len()
    }

    fn local_loss(&self, i: usize, x: &RVector) -> f64 {
        let data = &self.devices[i];
        let mut input = alloc::vec![0.0; self.inputs];
        let mut total = 0.0;
        for r in 0..data.labels.len() {
            for (q, v) in input.iter_mut().enumerate() {
                *v = data.features[(r, q)];
            }
            total += self.example(x, &input, data.labels[r], None);
        }
        total / data.labels.len() as f64 + 0.5 * self.l2 * x.norm_squared()
    }

    fn local_gradient(&self, i: usize, x: &RVector) -> RVector {
        let rows: Vec<usize> = (0..self.devices[i].labels.len()).collect();
        self.rows_gradient(i, x, &rows)
    }

    fn stochastic_gradient(&self, i: usize, x: &RVector, rng: &mut SimRng) -> RVector {
        match batch_indices(self.devices[i].labels.len(), self.batch, rng) {
            Some(rows) => self.rows_gradient(i, x, &rows),
            None => self.local_gradient(i, x),
        }
    }

    fn initial_model(&self, rng: &mut SimRng) -> RVector {
        let s1 = 1.0 / sqrt(self.inputs as f64);
        let s2 = 1.0 / sqrt(self.hidden as f64);
        let split1 = self.hidden * self.inputs;
        let split2 = split1 + self.hidden;
        let split3 = split2 + self.classes * self.hidden;
        RVector::from_fn(self.dim(), |k, _| {
            if k < split1 {
                s1 * standard_normal(rng)
            } else if k >= split2 && k < split3 {
                s2 * standard_normal(rng)
            } else {
                0.0
            }
        })
    }
}
