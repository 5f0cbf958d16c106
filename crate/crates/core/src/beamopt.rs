//! Transmit beamformer (`u`) and receive combiner (`f`) optimization for a
//! fixed mixing matrix, and the alternating sweep over both.
//!
//! Restricted to one transmitter `p`, the weighted error objective is
//! `2C (uᴴ M_p u − 2 Re{n_pᴴ u}) + const`; restricted to one receiver it is
//! `C (fᴴ A_p f − 4 Re{b_pᴴ f}) + const`. Both forms are built by completing
//! the square of the closed-form error expectations.

use alloc::vec::Vec;

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::convergence::{error_stats, residual, ErrorWeights};
use crate::error::{Error, Result};
use crate::linalg::{cvec_norm_sq, herm_eig_sorted, sqrt, CMatrix, CVector, RMatrix, C_ZERO};

/// Per-device transmit beamformers and receive combiners.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub transmit: Vec<CVector>,
    pub receive: Vec<CVector>,
}

impl BeamformerSet {
    pub fn zeros(num_devices: usize, n_tx: usize, n_rx: usize) -> Self {
        Self {
            transmit: (0..num_devices).map(|_| CVector::from_element(n_tx, C_ZERO)).collect(),
            receive: (0..num_devices).map(|_| CVector::from_element(n_rx, C_ZERO)).collect(),
        }
    }

    pub fn num_devices(&self) -> usize {
        self.transmit.len()
    }

    /// Largest per-use transmit power `2‖u_i‖²`.
    pub fn max_power(&self) -> f64 {
        self.transmit.iter().map(|u| 2.0 * cvec_norm_sq(u)).fold(0.0, f64::max)
    }

    pub fn check_power(&self, p0: f64) -> Result<()> {
        let power = self.max_power();
        if power > p0 + 1e-9 {
            return Err(Error::PowerViolation { power, budget: p0 });
        }
        Ok(())
    }
}

/// Everything held fixed while the beams move.
#[derive(Debug, Clone, Copy)]
pub struct BeamProblem<'a> {
    pub w: &'a RMatrix,
    pub chans: &'a ChannelSet,
    pub scales: &'a [f64],
    /// Complex symbols per round, the constant `C` of the error expressions.
    pub symbols: usize,
    pub weights: ErrorWeights,
    pub p0: f64,
}

impl BeamProblem<'_> {
    pub fn objective(&self, beams: &BeamformerSet) -> Result<f64> {
        Ok(error_stats(self.w, beams, self.chans, self.scales, self.symbols)?.weighted(&self.weights))
    }

    fn alpha(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)] * self.scales[j]
    }
}

/// `uᴴ M u − 2 Re{nᴴ u}` for one transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFormU {
    pub m_mat: CMatrix,
    pub n_vec: CVector,
}

impl QuadraticFormU {
    pub fn value(&self, u: &CVector) -> f64 {
        let quad = (u.adjoint() * &self.m_mat * u)[(0, 0)].re;
        quad - 2.0 * (self.n_vec.adjoint() * u)[(0, 0)].re
    }
}

/// `fᴴ A f − 4 Re{bᴴ f}` for one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFormF {
    pub a_mat: CMatrix,
    pub b_vec: CVector,
}

impl QuadraticFormF {
    pub fn value(&self, f: &CVector) -> f64 {
        let quad = (f.adjoint() * &self.a_mat * f)[(0, 0)].re;
        quad - 4.0 * (self.b_vec.adjoint() * f)[(0, 0)].re
    }
}

/// Quadratic form of the objective in `u_p` with every combiner fixed.
pub fn build_u_forms(problem: &BeamProblem<'_>, p: usize, beams: &BeamformerSet) -> QuadraticFormU {
    let chans = problem.chans;
    let n_tx = chans.n_tx();
    let a = problem.weights.fro;
    let b = problem.weights.ones;
    let mut m_mat = CMatrix::from_element(n_tx, n_tx, C_ZERO);
    let mut n_vec = CVector::from_element(n_tx, C_ZERO);
    let mut h_sum = CVector::from_element(n_tx, C_ZERO);
    let mut alpha_sum = 0.0;
    for i in chans.listeners(p) {
        let h_mat = chans.get(i, p).expect("listener has a channel");
        let h = h_mat.adjoint() * &beams.receive[i];
        let alpha = problem.alpha(i, p);
        m_mat += (&h * h.adjoint()) * Complex64::new(a, 0.0);
        n_vec.axpy(Complex64::new(a * alpha, 0.0), &h, Complex64::new(1.0, 0.0));
        h_sum += &h;
        alpha_sum += alpha;
    }
    if b != 0.0 {
        m_mat += (&h_sum * h_sum.adjoint()) * Complex64::new(b, 0.0);
        n_vec.axpy(Complex64::new(b * alpha_sum, 0.0), &h_sum, Complex64::new(1.0, 0.0));
    }
    QuadraticFormU { m_mat, n_vec }
}

/// Minimizer of a u-form under the power budget, with its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct USolution {
    pub u: CVector,
    /// Lagrange multiplier of `‖u‖² ≤ P0/2`; zero at an interior optimum.
    pub multiplier: f64,
}

/// Minimizes `uᴴMu − 2Re{nᴴu}` subject to `‖u‖² ≤ P0/2`.
///
/// Interior optimum `M†n` when it fits the budget; otherwise the multiplier
/// solving `‖(M + λI)⁻¹n‖² = P0/2` is bracketed in `[0, ‖n‖/√(P0/2)]` and
/// bisected, keeping the feasible end of the bracket.
pub fn solve_u(form: &QuadraticFormU, p0: f64) -> USolution {
    let n = form.n_vec.len();
    let budget = 0.5 * p0;
    let n_norm_sq = cvec_norm_sq(&form.n_vec);
    if n_norm_sq == 0.0 {
        return USolution {
            u: CVector::from_element(n, C_ZERO),
            multiplier: 0.0,
        };
    }
    let (mu, v) = herm_eig_sorted(&form.m_mat);
    let mu: Vec<f64> = mu.into_iter().map(|x| x.max(0.0)).collect();
    let c = v.adjoint() * &form.n_vec;
    let cutoff = 1e-12 * mu[0];
    let null_mass: f64 = (0..n)
        .filter(|&k| mu[k] <= cutoff)
        .map(|k| c[k].norm_sqr())
        .sum();
    let assemble = |lambda: f64, pinv: bool| -> CVector {
        let mut coef = CVector::from_element(n, C_ZERO);
        for k in 0..n {
            let d = mu[k] + lambda;
            if pinv && mu[k] <= cutoff {
                continue;
            }
            if d > 0.0 {
                coef[k] = c[k] / d;
            }
        }
        &v * coef
    };
    let norm_at = |lambda: f64| -> f64 { (0..n).map(|k| c[k].norm_sqr() / ((mu[k] + lambda) * (mu[k] + lambda))).sum() };

    if mu[0] > 0.0 && null_mass <= 1e-20 * n_norm_sq {
        let u = assemble(0.0, true);
        if cvec_norm_sq(&u) <= budget {
            return USolution { u, multiplier: 0.0 };
        }
    }
    let mut lo = 0.0;
    let mut hi = sqrt(n_norm_sq / budget);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = assemble(hi, false);
    let norm = cvec_norm_sq(&u);
    if norm > budget {
        u *= Complex64::new(sqrt(budget / norm), 0.0);
    }
    USolution { u, multiplier: hi }
}

/// Quadratic form of the objective in `f_p` with all transmit beams and the
/// other combiners fixed.
pub fn build_f_forms(problem: &BeamProblem<'_>, p: usize, beams: &BeamformerSet) -> QuadraticFormF {
    let chans = problem.chans;
    let n_rx = chans.n_rx();
    let a = problem.weights.fro;
    let b = problem.weights.ones;
    let mut a_mat = CMatrix::identity(n_rx, n_rx) * Complex64::new((a + b) * chans.noise_variance(), 0.0);
    let mut b_vec = CVector::from_element(n_rx, C_ZERO);
    for j in chans.sources(p) {
        let k = chans.get(p, j).expect("source has a channel") * &beams.transmit[j];
        let alpha = problem.alpha(p, j);
        a_mat += (&k * k.adjoint()) * Complex64::new(2.0 * (a + b), 0.0);
        let mut beta = Complex64::new(alpha, 0.0);
        if b != 0.0 {
            for i in chans.listeners(j).filter(|&i| i != p) {
                beta += residual(problem.w, beams, chans, problem.scales, i, j).unwrap_or_default();
            }
        }
        let coef = Complex64::new(a * alpha, 0.0) + beta.conj() * b;
        b_vec.axpy(coef, &k, Complex64::new(1.0, 0.0));
    }
    QuadraticFormF { a_mat, b_vec }
}

/// `f* = 2 A⁻¹ b`.
pub fn solve_f(form: &QuadraticFormF) -> Result<CVector> {
    if form.b_vec.iter().all(|z| *z == C_ZERO) {
        return Ok(CVector::from_element(form.b_vec.len(), C_ZERO));
    }
    let chol = Cholesky::new(form.a_mat.clone()).ok_or(Error::RequiresRegularization)?;
    Ok(chol.solve(&form.b_vec) * Complex64::new(2.0, 0.0))
}

/// [`solve_f`] with a relative ridge `1e-12·tr(A)/N` added when `A` is
/// singular.
pub fn solve_f_regularized(form: &QuadraticFormF) -> CVector {
    match solve_f(form) {
        Ok(f) => f,
        Err(_) => {
            let n = form.a_mat.nrows();
            let tr: f64 = (0..n).map(|k| form.a_mat[(k, k)].re).sum();
            let ridge = 1e-12 * (tr / n as f64).max(f64::MIN_POSITIVE);
            let mut reg = form.clone();
            for k in 0..n {
                reg.a_mat[(k, k)] += Complex64::new(ridge, 0.0);
            }
            solve_f(&reg).unwrap_or_else(|_| CVector::from_element(n, C_ZERO))
        }
    }
}

/// Result of an alternating beam sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub beams: BeamformerSet,
    /// Objective at the start and after every half-step.
    pub trace: Vec<f64>,
}

/// Updates every transmit beam (each an exact constrained minimization with
/// the combiners frozen), then every combiner in ascending device order
/// using the latest values, `i1_max` times or until a full sweep stops
/// improving.
pub fn ao_beam_sweep(problem: &BeamProblem<'_>, beams0: &BeamformerSet, i1_max: usize) -> Result<SweepOutcome> {
    let m = problem.chans.num_devices();
    let mut beams = beams0.clone();
    let mut trace = Vec::with_capacity(2 * i1_max + 1);
    let mut current = problem.objective(&beams)?;
    trace.push(current);
    for _ in 0..i1_max {
        let start = current;
        let forms: Vec<QuadraticFormU> = (0..m).map(|p| build_u_forms(problem, p, &beams)).collect();
        for (p, form) in forms.iter().enumerate() {
            beams.transmit[p] = solve_u(form, problem.p0).u;
        }
        current = problem.objective(&beams)?;
        trace.push(current);
        for p in 0..m {
            let form = build_f_forms(problem, p, &beams);
            beams.receive[p] = solve_f_regularized(&form);
        }
        current = problem.objective(&beams)?;
        trace.push(current);
        if start - current <= 1e-12 * start.abs() {
            break;
        }
    }
    Ok(SweepOutcome { beams, trace })
}

/// Full-power transmit beam along the dominant right singular direction of
/// the stacked outgoing channels of device `p`.
pub fn dominant_transmit(chans: &ChannelSet, p: usize, p0: f64) -> CVector {
    let n_tx = chans.n_tx();
    let mut gram = CMatrix::from_element(n_tx, n_tx, C_ZERO);
    for i in chans.listeners(p) {
        let h = chans.get(i, p).expect("listener has a channel");
        gram += h.adjoint() * h;
    }
    if gram.iter().all(|z| *z == C_ZERO) {
        return CVector::from_element(n_tx, C_ZERO);
    }
    let (_, v) = herm_eig_sorted(&gram);
    v.column(0) * Complex64::new(sqrt(0.5 * p0), 0.0)
}

/// Starting point for the sweep: dominant-direction transmit beams and
/// combiners from one sequential pass of exact receive updates.
pub fn initial_beams(problem: &BeamProblem<'_>) -> BeamformerSet {
    let chans = problem.chans;
    let m = chans.num_devices();
    let mut beams = BeamformerSet::zeros(m, chans.n_tx(), chans.n_rx());
    for p in 0..m {
        beams.transmit[p] = dominant_transmit(chans, p, problem.p0);
    }
    for p in 0..m {
        beams.receive[p] = solve_f_regularized(&build_f_forms(problem, p, &beams));
    }
    beams
}

/// Zero-forcing baseline: dominant-direction transmit beams and the
/// minimum-norm least-squares combiner solving `f_iᴴ H⟨i,j⟩ u_j = w_ij s_j`
/// for every source, noise ignored. The fit is exact when `N_R` is at least
/// the receiver's degree.
pub fn zero_forcing_beams(w: &RMatrix, chans: &ChannelSet, scales: &[f64], p0: f64) -> Result<BeamformerSet> {
    let m = chans.num_devices();
    if w.nrows() != m || scales.len() != m {
        return Err(Error::Shape("mixing and scales must cover every device"));
    }
    let mut beams = BeamformerSet::zeros(m, chans.n_tx(), chans.n_rx());
    for p in 0..m {
        beams.transmit[p] = dominant_transmit(chans, p, p0);
    }
    for i in 0..m {
        let sources: Vec<usize> = chans.sources(i).collect();
        if sources.is_empty() {
            continue;
        }
        let k = CMatrix::from_columns(
            &sources
                .iter()
                .map(|&j| chans.get(i, j).expect("source has a channel") * &beams.transmit[j])
                .collect::<Vec<_>>(),
        );
        let target = CVector::from_iterator(sources.len(), sources.iter().map(|&j| Complex64::new(w[(i, j)] * scales[j], 0.0)));
        // kᴴ f = target, minimum norm.
        let kh = k.adjoint();
        let pinv = kh
            .pseudo_inverse(1e-12 * k.norm().max(f64::MIN_POSITIVE))
            .map_err(|_| Error::DegenerateInput("zero-forcing pseudo-inverse failed"))?;
        beams.receive[i] = pinv * target;
    }
    Ok(beams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_round, ChannelConfig};
    use crate::convergence::ErrorWeightMode;
    use crate::linalg::cdot;
    use crate::rng::SimRng;
    use crate::testutil::{instance, random_cvec, random_psd, Instance};
    use crate::topology::{generate_named, NamedTopology};
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    const SYMBOLS: usize = 8;

    fn weights(mode: ErrorWeightMode) -> ErrorWeights {
        match mode {
            ErrorWeightMode::Bound => ErrorWeights::new(0.9, 25.0).unwrap(),
            ErrorWeightMode::Robust => ErrorWeights::new(250.0, 0.0).unwrap(),
        }
    }

    fn problem(inst: &Instance, mode: ErrorWeightMode) -> BeamProblem<'_> {
        BeamProblem {
            w: &inst.w,
            chans: &inst.chans,
            scales: &inst.scales,
            symbols: SYMBOLS,
            weights: weights(mode),
            p0: 1.0,
        }
    }

    /// Central-difference complex gradient `∂/∂Re + i ∂/∂Im` of `f` at `v`.
    fn fd_gradient(v: &CVector, h: f64, mut f: impl FnMut(&CVector) -> f64) -> CVector {
        let mut g = CVector::from_element(v.len(), C_ZERO);
        for k in 0..v.len() {
            let mut parts = [0.0; 2];
            for (slot, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
                let mut plus = v.clone();
                plus[k] += dir;
                let mut minus = v.clone();
                minus[k] -= dir;
                parts[slot] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
            g[k] = Complex64::new(parts[0], parts[1]);
        }
        g
    }

    fn rel_diff(a: &CVector, b: &CVector) -> f64 {
        (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
    }

    #[test]
    fn u_form_scalar_hand_expansion() {
        let g = generate_named(NamedTopology::Complete, 2).unwrap();
        let cfg = ChannelConfig::new(10.0, 1.0).unwrap();
        let chans = sample_round(&g, &cfg, 1, 1, 5).unwrap();
        let w = RMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let scales = [1.3, 0.8];
        let mut beams = BeamformerSet::zeros(2, 1, 1);
        beams.receive[1] = CVector::from_element(1, Complex64::new(0.4, -0.2));
        let a = 2.5;
        let problem = BeamProblem {
            w: &w,
            chans: &chans,
            scales: &scales,
            symbols: 1,
            weights: ErrorWeights::new(a, 0.0).unwrap(),
            p0: 1.0,
        };
        let form = build_u_forms(&problem, 0, &beams);
        let h = chans.get(1, 0).unwrap()[(0, 0)];
        let f = beams.receive[1][0];
        assert!((form.m_mat[(0, 0)].re - a * h.norm_sqr() * f.norm_sqr()).abs() < 1e-14);
        let n_expect = h.conj() * f * (a * 0.3 * 1.3);
        assert!((form.n_vec[0] - n_expect).norm() < 1e-14);
    }

    #[test]
    fn u_form_vanishes_with_zero_combiners() {
        let inst = instance(4, 2, 0.0, 10.0, 1);
        let beams = BeamformerSet::zeros(4, 2, 2);
        let p = problem(&inst, ErrorWeightMode::Bound);
        for d in 0..4 {
            let form = build_u_forms(&p, d, &beams);
            assert!(form.m_mat.iter().all(|z| *z == C_ZERO));
            assert!(form.n_vec.iter().all(|z| *z == C_ZERO));
        }
    }

    #[test]
    fn u_form_is_psd() {
        let mut rng = SimRng::seed_from_u64(8);
        for seed in 0..5 {
            let inst = instance(5, 3, 0.2, 10.0, seed);
            let p = problem(&inst, ErrorWeightMode::Bound);
            for d in 0..5 {
                let form = build_u_forms(&p, d, &inst.beams);
                for _ in 0..20 {
                    let x = random_cvec(&mut rng, 3, 1.0);
                    assert!(cdot(&x, &(&form.m_mat * &x)).re >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn forms_match_finite_differences_of_objective() {
        for mode in [ErrorWeightMode::Bound, ErrorWeightMode::Robust] {
            for seed in 0..4 {
                let inst = instance(5, 3, 0.3, 5.0, 40 + seed);
                let p = problem(&inst, mode);
                let c = SYMBOLS as f64;
                for d in 0..5 {
                    let uf = build_u_forms(&p, d, &inst.beams);
                    let analytic = (&uf.m_mat * &inst.beams.transmit[d] - &uf.n_vec) * Complex64::new(4.0 * c, 0.0);
                    let numeric = fd_gradient(&inst.beams.transmit[d], 1e-5, |u| {
                        let mut b = inst.beams.clone();
                        b.transmit[d] = u.clone();
                        p.objective(&b).unwrap()
                    });
                    assert!(rel_diff(&analytic, &numeric) < 1e-6, "u {mode:?} {}", rel_diff(&analytic, &numeric));

                    let ff = build_f_forms(&p, d, &inst.beams);
                    let f = &inst.beams.receive[d];
                    let analytic = (&ff.a_mat * f * Complex64::new(2.0, 0.0) - &ff.b_vec * Complex64::new(4.0, 0.0)) * Complex64::new(c, 0.0);
                    let numeric = fd_gradient(f, 1e-5, |v| {
                        let mut b = inst.beams.clone();
                        b.receive[d] = v.clone();
                        p.objective(&b).unwrap()
                    });
                    assert!(rel_diff(&analytic, &numeric) < 1e-6, "f {mode:?} {}", rel_diff(&analytic, &numeric));
                }
            }
        }
    }

    #[test]
    fn forms_reproduce_objective_differences_exactly() {
        let mut rng = SimRng::seed_from_u64(77);
        let inst = instance(6, 2, 0.3, 0.0, 12);
        let p = problem(&inst, ErrorWeightMode::Bound);
        let c = SYMBOLS as f64;
        let base = p.objective(&inst.beams).unwrap();
        for d in 0..6 {
            let uf = build_u_forms(&p, d, &inst.beams);
            let ff = build_f_forms(&p, d, &inst.beams);
            for _ in 0..10 {
                let u = random_cvec(&mut rng, 2, 0.3);
                let mut b = inst.beams.clone();
                b.transmit[d] = u.clone();
                let lhs = p.objective(&b).unwrap() - base;
                let rhs = 2.0 * c * (uf.value(&u) - uf.value(&inst.beams.transmit[d]));
                assert!((lhs - rhs).abs() <= 1e-9 * base);

                let f = random_cvec(&mut rng, 2, 0.3);
                let mut b = inst.beams.clone();
                b.receive[d] = f.clone();
                let lhs = p.objective(&b).unwrap() - base;
                let rhs = c * (ff.value(&f) - ff.value(&inst.beams.receive[d]));
                assert!((lhs - rhs).abs() <= 1e-9 * base);
            }
        }
    }

    #[test]
    fn solve_u_interior_and_boundary_examples() {
        let eye = CMatrix::identity(3, 3);
        let n = CVector::from_vec(vec![Complex64::new(0.2, 0.1), Complex64::new(-0.1, 0.0), Complex64::new(0.0, 0.3)]);
        let sol = solve_u(&QuadraticFormU { m_mat: eye.clone(), n_vec: n.clone() }, 1.0);
        assert_eq!(sol.multiplier, 0.0);
        assert!((sol.u - n).norm() < 1e-15);

        let c = Complex64::new(3.0, -4.0);
        let mut n = CVector::from_element(3, C_ZERO);
        n[0] = c;
        let sol = solve_u(&QuadraticFormU { m_mat: eye, n_vec: n }, 1.0);
        let expect = c / c.norm() * 0.5f64.sqrt();
        assert!((sol.u[0] - expect).norm() < 1e-12);
        assert!(sol.u[1].norm() < 1e-15 && sol.u[2].norm() < 1e-15);
    }

    #[test]
    fn solve_u_handles_zero_and_rank_deficient_forms() {
        let zero = QuadraticFormU {
            m_mat: CMatrix::from_element(2, 2, C_ZERO),
            n_vec: CVector::from_element(2, C_ZERO),
        };
        assert!(solve_u(&zero, 1.0).u.iter().all(|z| *z == C_ZERO));
        let mut rng = SimRng::seed_from_u64(3);
        let linear = QuadraticFormU {
            m_mat: CMatrix::from_element(2, 2, C_ZERO),
            n_vec: random_cvec(&mut rng, 2, 1.0),
        };
        let sol = solve_u(&linear, 1.0);
        assert!((cvec_norm_sq(&sol.u) - 0.5).abs() < 1e-12);
        let dir = linear.n_vec.normalize();
        assert!((sol.u.normalize() - dir).norm() < 1e-9);
    }

    /// Accelerated projected gradient on the power ball.
    fn pgd_oracle(form: &QuadraticFormU, p0: f64) -> f64 {
        let (mu, _) = herm_eig_sorted(&form.m_mat);
        let step = 1.0 / (2.0 * mu[0].max(1e-12));
        let radius = (0.5 * p0).sqrt();
        let project = |v: CVector| {
            let n = v.norm();
            if n > radius {
                v * Complex64::new(radius / n, 0.0)
            } else {
                v
            }
        };
        let mut x = CVector::from_element(form.n_vec.len(), C_ZERO);
        let mut y = x.clone();
        let mut t: f64 = 1.0;
        for _ in 0..200_000 {
            let grad = (&form.m_mat * &y - &form.n_vec) * Complex64::new(2.0, 0.0);
            let next = project(&y - grad * Complex64::new(step, 0.0));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &x) * Complex64::new((t - 1.0) / t_next, 0.0);
            x = next;
            t = t_next;
        }
        form.value(&x)
    }

    #[test]
    fn solve_u_matches_projected_gradient_and_kkt() {
        let mut rng = SimRng::seed_from_u64(21);
        for k in 0..10 {
            let n = 2 + k % 3;
            let rank = 1 + k % n;
            let sd = rng.random_range(0.05..2.0);
            let form = QuadraticFormU {
                m_mat: random_psd(&mut rng, n, rank),
                n_vec: random_cvec(&mut rng, n, sd),
            };
            let p0 = 1.0;
            let sol = solve_u(&form, p0);
            let value = form.value(&sol.u);
            let oracle = pgd_oracle(&form, p0);
            assert!(value <= oracle + 1e-9, "solver worse than oracle: {value} vs {oracle}");
            assert!((value - oracle).abs() < 1e-6, "gap {}", (value - oracle).abs());
            let power = cvec_norm_sq(&sol.u);
            assert!(2.0 * power <= p0 + 1e-9);
            assert!((sol.multiplier * (power - 0.5 * p0)).abs() < 1e-8);
            let kkt = (&form.m_mat * &sol.u + &sol.u * Complex64::new(sol.multiplier, 0.0) - &form.n_vec).norm();
            assert!(kkt <= 1e-8 * form.n_vec.norm(), "kkt {kkt}");
        }
    }

    #[test]
    fn solve_f_examples_and_stationarity() {
        let mut rng = SimRng::seed_from_u64(5);
        let b = random_cvec(&mut rng, 3, 1.0);
        let form = QuadraticFormF {
            a_mat: CMatrix::identity(3, 3) * Complex64::new(2.0, 0.0),
            b_vec: b.clone(),
        };
        assert!((solve_f(&form).unwrap() - &b).norm() < 1e-14);
        let zero_b = QuadraticFormF {
            a_mat: random_psd(&mut rng, 3, 3),
            b_vec: CVector::from_element(3, C_ZERO),
        };
        assert!(solve_f(&zero_b).unwrap().iter().all(|z| *z == C_ZERO));
        let singular = QuadraticFormF {
            a_mat: random_psd(&mut rng, 3, 1) * Complex64::new(0.0, 0.0),
            b_vec: b,
        };
        assert_eq!(solve_f(&singular), Err(Error::RequiresRegularization));

        for seed in 0..6 {
            let inst = instance(5, 3, 0.3, 10.0, 60 + seed);
            let p = problem(&inst, ErrorWeightMode::Bound);
            for d in 0..5 {
                let form = build_f_forms(&p, d, &inst.beams);
                let f = solve_f(&form).unwrap();
                let g = fd_gradient(&f, 1e-6, |v| form.value(v));
                assert!(g.norm() < 1e-8 * form.b_vec.norm().max(1.0), "{}", g.norm());
            }
        }
    }

    #[test]
    fn f_form_noise_only_when_transmitters_silent() {
        let mut inst = instance(4, 2, 0.0, 0.0, 2);
        for u in inst.beams.transmit.iter_mut() {
            *u = CVector::zeros(2);
        }
        let p = problem(&inst, ErrorWeightMode::Bound);
        let (a, b) = (p.weights.fro, p.weights.ones);
        let sigma2 = inst.chans.noise_variance();
        for d in 0..4 {
            let form = build_f_forms(&p, d, &inst.beams);
            let expect = CMatrix::identity(2, 2) * Complex64::new((a + b) * sigma2, 0.0);
            assert!((&form.a_mat - expect).norm() < 1e-12);
            assert!(form.b_vec.norm() < 1e-12);
            assert!(solve_f(&form).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn f_form_min_eigenvalue_respects_noise_floor() {
        for seed in 0..5 {
            let inst = instance(5, 3, 0.2, 10.0, 90 + seed);
            let p = problem(&inst, ErrorWeightMode::Bound);
            let floor = (p.weights.fro + p.weights.ones) * inst.chans.noise_variance();
            for d in 0..5 {
                let form = build_f_forms(&p, d, &inst.beams);
                let (values, _) = herm_eig_sorted(&form.a_mat);
                assert!(*values.last().unwrap() >= floor - 1e-9);
                assert!((&form.a_mat - form.a_mat.adjoint()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sweep_is_monotone_and_halves_objective_on_most_seeds() {
        let mut halved = 0;
        for seed in 0..10 {
            let inst = instance(4, 2, 0.0, 10.0, 200 + seed);
            let p = problem(&inst, ErrorWeightMode::Bound);
            let out = ao_beam_sweep(&p, &inst.beams, 20).unwrap();
            for pair in out.trace.windows(2) {
                assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "{pair:?}");
            }
            out.beams.check_power(1.0).unwrap();
            if *out.trace.last().unwrap() <= 0.5 * out.trace[0] {
                halved += 1;
            }
        }
        assert!(halved >= 8, "halved on {halved}/10 seeds");
    }

    #[test]
    fn aligned_start_stays_at_zero() {
        let g = generate_named(NamedTopology::Complete, 3).unwrap();
        let cfg = ChannelConfig::new(f64::INFINITY, 1.0).unwrap();
        let chans = sample_round(&g, &cfg, 2, 2, 4).unwrap();
        let w = crate::mixing::metropolis_init(&g);
        let scales = [0.5, 1.0, 0.7];
        let beams = zero_forcing_beams(&w, &chans, &scales, 1.0).unwrap();
        let p = BeamProblem {
            w: &w,
            chans: &chans,
            scales: &scales,
            symbols: 4,
            weights: weights(ErrorWeightMode::Bound),
            p0: 1.0,
        };
        let out = ao_beam_sweep(&p, &beams, 3).unwrap();
        assert!(out.trace.iter().all(|v| *v < 1e-18), "{:?}", out.trace);
    }

    #[test]
    fn single_link_reaches_scalar_mmse_point() {
        let g = generate_named(NamedTopology::Complete, 2).unwrap();
        let cfg = ChannelConfig::new(5.0, 1.0).unwrap();
        let chans = sample_round(&g, &cfg, 1, 1, 31).unwrap();
        let w = RMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.4, 0.6]);
        let scales = [1.2, 0.7];
        let wts = weights(ErrorWeightMode::Bound);
        let p = BeamProblem {
            w: &w,
            chans: &chans,
            scales: &scales,
            symbols: 3,
            weights: wts,
            p0: 1.0,
        };
        let sigma2 = chans.noise_variance();
        let mut expect = 0.0;
        for (i, j) in chans.links() {
            let alpha = w[(i, j)] * scales[j];
            let gain = chans.get(i, j).unwrap()[(0, 0)].norm_sqr() * 0.5;
            expect += 2.0 * alpha * alpha * sigma2 / (2.0 * gain + sigma2);
        }
        expect *= 3.0 * (wts.fro + wts.ones);
        let mut rng = SimRng::seed_from_u64(1);
        let mut start = BeamformerSet::zeros(2, 1, 1);
        for d in 0..2 {
            start.transmit[d] = random_cvec(&mut rng, 1, 0.1);
            start.receive[d] = random_cvec(&mut rng, 1, 1.0);
        }
        let out = ao_beam_sweep(&p, &start, 3).unwrap();
        let last = *out.trace.last().unwrap();
        assert!((last - expect).abs() < 1e-9 * expect, "{last} vs {expect}");
    }

    #[test]
    fn zero_forcing_aligns_exactly_with_enough_antennas() {
        let g = generate_named(NamedTopology::Star, 4).unwrap();
        let cfg = ChannelConfig::new(f64::INFINITY, 1.0).unwrap();
        let chans = sample_round(&g, &cfg, 2, 3, 6).unwrap();
        let w = crate::mixing::metropolis_init(&g);
        let scales = [1.0, 2.0, 0.5, 1.5];
        let beams = zero_forcing_beams(&w, &chans, &scales, 1.0).unwrap();
        for (i, j) in chans.links() {
            let gain = cdot(&beams.receive[i], &(chans.get(i, j).unwrap() * &beams.transmit[j]));
            assert!((gain - Complex64::new(w[(i, j)] * scales[j], 0.0)).norm() < 1e-12);
        }
        assert!((beams.max_power() - 1.0).abs() < 1e-12);
    }
}
