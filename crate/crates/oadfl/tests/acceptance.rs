//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and a final list of failures. `OADFL_ACCEPTANCE=2,5` runs a subset and
//! `OADFL_ACCEPTANCE_STRICT=1` turns any failure into a non-zero exit.

use std::path::Path;
use std::time::Instant;

use oadfl::config::{Config, MixingChoice, TaskKind, TopologyKind};
use oadfl::experiment::{self, RunOptions};
use oadfl_core::beamopt::{build_f_forms, build_u_forms, initial_beams, solve_f, solve_u, BeamProblem, BeamformerSet, QuadraticFormU};
use oadfl_core::channel::{sample_round, ChannelConfig};
use oadfl_core::convergence::{g_factor, symbols_for_dim, ErrorWeightMode, ErrorWeights};
use oadfl_core::joint::{joint_optimize, JointConfig, RoundProblem};
use oadfl_core::linalg::{CMatrix, CVector, Complex64, RMatrix};
use oadfl_core::mixing::{delta, metropolis_init, min_delta_mixing, project_spectral, random_feasible};
use oadfl_core::rng::{complex_normal, SimRng};
use oadfl_core::run::{run_training, MixingPolicy, NoObserver, RunConfig, SampledChannels, SchemeKind, SchemeSpec, TopologySpec};
use oadfl_core::task::{QuadraticSpec, QuadraticTask};
use oadfl_core::topology::{generate_random, NamedTopology};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_cvec(rng: &mut SimRng, n: usize, var: f64) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng, var))
}

fn random_psd(rng: &mut SimRng, n: usize, rank: usize) -> CMatrix {
    let b = CMatrix::from_fn(n, rank, |_, _| complex_normal(rng, 1.0));
    &b * b.adjoint()
}

fn criterion_1() -> Outcome {
    let cases = experiment::selftest(20, 64, 200_000, 3.0, 0).expect("selftest runs");
    let passed = cases.iter().filter(|c| c.pass).count();
    let worst = cases
        .iter()
        .map(|c| {
            let mc = &c.monte_carlo;
            let zf = (mc.fro_mean - c.closed.fro_expect).abs() / mc.fro_stderr;
            let zo = (mc.ones_mean - c.closed.ones_expect).abs() / mc.ones_stderr;
            zf.max(zo)
        })
        .fold(0.0, f64::max);
    outcome(
        passed == cases.len(),
        format!(
            "{passed}/{} instances within 3 SE ({} frames each), worst |z| = {worst:.2}",
            cases.len(),
            oadfl_core::validation::frames_for_draws(200_000, 64)
        ),
    )
}

fn criterion_2(dir: &Path) -> Outcome {
    let targets = [0.0, 0.32, 0.6, 0.9];
    let seeds = 10u64;
    let mut losses = vec![vec![0.0; seeds as usize]; targets.len()];
    let mut achieved = vec![0.0; targets.len()];
    let mut zero_agreement = true;
    for (k, &target) in targets.iter().enumerate() {
        for seed in 0..seeds {
            let mut cfg = Config::default();
            cfg.run.devices = 30;
            cfg.run.rounds = 150;
            cfg.run.lambda = 0.02;
            cfg.run.seed = seed;
            cfg.topology.kind = TopologyKind::Complete;
            cfg.scheme.id = "error_free".into();
            cfg.scheme.mixing = MixingChoice::Target;
            cfg.scheme.target_delta = target;
            let run = experiment::run_one(&cfg, "error_free", &dir.join(format!("d{k}_s{seed}")), &RunOptions::default())
                .expect("error-free run");
            losses[k][seed as usize] = run.record.metrics.last().unwrap().avg_loss;
            achieved[k] += run.manifest.initial_delta / seeds as f64;
            if target == 0.0 {
                zero_agreement &= run.record.metrics.iter().all(|m| m.agreement_error == 0.0);
            }
        }
    }
    let means: Vec<f64> = losses.iter().map(|l| l.iter().sum::<f64>() / l.len() as f64).collect();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| achieved[a].total_cmp(&achieved[b]));
    let monotone = order.windows(2).all(|p| means[p[0]] <= means[p[1]]);
    let per_seed = (0..seeds as usize)
        .filter(|&s| order.windows(2).all(|p| losses[p[0]][s] <= losses[p[1]][s]))
        .count();
    outcome(
        monotone && zero_agreement,
        format!(
            "achieved delta {:?}, mean final loss {:?}, ordered on {per_seed}/{seeds} seeds, agreement at delta=0 exactly 0: {zero_agreement}",
            achieved.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>(),
            means.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut steps = 0;
    for k in 0..10u64 {
        let m = 10;
        let n = 4;
        let snr_db = [0.0, 10.0, 20.0][k as usize % 3];
        let graph = generate_random(m, 0.3, 100 + k).unwrap();
        let chans = sample_round(&graph, &ChannelConfig::new(snr_db, 1.0).unwrap(), n, n, 200 + k).unwrap();
        let mut rng = SimRng::seed_from_u64(300 + k);
        let scales: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
        let config = RunConfig {
            devices: m,
            n_tx: n,
            n_rx: n,
            snr_db,
            ..RunConfig::default()
        };
        let params = config.params();
        let symbols = symbols_for_dim(20);
        let mut w = metropolis_init(&graph);
        if g_factor(delta(&w).unwrap(), &params).is_err() {
            w = min_delta_mixing(&graph).unwrap().0;
        }
        let start = initial_beams(&BeamProblem {
            w: &w,
            chans: &chans,
            scales: &scales,
            symbols,
            weights: ErrorWeights::for_delta(ErrorWeightMode::Bound, delta(&w).unwrap(), &params).unwrap(),
            p0: 1.0,
        });
        let problem = RoundProblem {
            graph: &graph,
            chans: &chans,
            scales: &scales,
            symbols,
            p0: 1.0,
            params: &params,
            f0: 50.0,
        };
        let out = joint_optimize(&problem, &w, &start, &JointConfig::default()).expect("joint design");
        for pair in out.trace.windows(2) {
            worst = worst.max((pair[1] - pair[0]) / pair[0].abs());
        }
        steps += out.trace.len() - 1;
    }
    outcome(
        worst <= 1e-9,
        format!("{steps} half-steps over 10 instances, largest relative increase {worst:.3e}"),
    )
}

fn pgd_oracle(form: &QuadraticFormU, p0: f64) -> f64 {
    let lip = form.m_mat.clone().symmetric_eigen().eigenvalues.amax();
    let step = 1.0 / (2.0 * lip.max(1e-12));
    let radius = (0.5 * p0).sqrt();
    let project = |v: CVector| {
        let n = v.norm();
        if n > radius {
            v * Complex64::new(radius / n, 0.0)
        } else {
            v
        }
    };
    let mut x = CVector::zeros(form.n_vec.len());
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

fn fd_gradient(v: &CVector, h: f64, mut f: impl FnMut(&CVector) -> f64) -> CVector {
    let mut g = CVector::zeros(v.len());
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

struct BeamInstance {
    w: RMatrix,
    chans: oadfl_core::channel::ChannelSet,
    beams: BeamformerSet,
    scales: Vec<f64>,
}

fn beam_instance(seed: u64) -> BeamInstance {
    let mut rng = SimRng::seed_from_u64(seed);
    let m = rng.random_range(3..7);
    let n = rng.random_range(2..4);
    let graph = generate_random(m, 0.2, seed).unwrap();
    let chans = sample_round(&graph, &ChannelConfig::new(5.0, 1.0).unwrap(), n, n, seed + 1).unwrap();
    let w = random_feasible(&graph, &mut rng);
    let mut beams = BeamformerSet::zeros(m, n, n);
    for p in 0..m {
        let u = random_cvec(&mut rng, n, 1.0);
        beams.transmit[p] = &u * Complex64::new(0.6 / u.norm(), 0.0);
        beams.receive[p] = random_cvec(&mut rng, n, 0.2);
    }
    let scales = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    BeamInstance { w, chans, beams, scales }
}

fn criterion_4() -> Outcome {
    // (a) transmit solve against accelerated projected gradient, plus KKT.
    let mut rng = SimRng::seed_from_u64(4);
    let (mut gap, mut kkt, mut slack): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..10 {
        let n = 2 + k % 3;
        let sd = rng.random_range(0.05..2.0);
        let form = QuadraticFormU {
            m_mat: random_psd(&mut rng, n, 1 + k % n),
            n_vec: random_cvec(&mut rng, n, sd),
        };
        let sol = solve_u(&form, 1.0);
        gap = gap.max(form.value(&sol.u) - pgd_oracle(&form, 1.0));
        let power = sol.u.norm_squared();
        let stationarity = &form.m_mat * &sol.u + &sol.u * Complex64::new(sol.multiplier, 0.0) - &form.n_vec;
        kkt = kkt.max(stationarity.norm() / form.n_vec.norm());
        slack = slack.max((sol.multiplier * (power - 0.5)).abs());
        if 2.0 * power > 1.0 + 1e-9 {
            slack = f64::INFINITY;
        }
    }
    // (b) receive solve stationarity, (c) forms against the objective.
    let (mut stat, mut form_err): (f64, f64) = (0.0, 0.0);
    for seed in 0..10u64 {
        let inst = beam_instance(1000 + 7 * seed);
        for mode in [ErrorWeightMode::Bound, ErrorWeightMode::Robust] {
            let weights = match mode {
                ErrorWeightMode::Bound => ErrorWeights::new(0.9, 25.0).unwrap(),
                ErrorWeightMode::Robust => ErrorWeights::new(250.0, 0.0).unwrap(),
            };
            let symbols = 8;
            let c = symbols as f64;
            let p = BeamProblem {
                w: &inst.w,
                chans: &inst.chans,
                scales: &inst.scales,
                symbols,
                weights,
                p0: 1.0,
            };
            for d in 0..inst.w.nrows() {
                let ff = build_f_forms(&p, d, &inst.beams);
                let f = solve_f(&ff).expect("noisy receive form is definite");
                stat = stat.max(fd_gradient(&f, 1e-6, |v| ff.value(v)).norm() / ff.b_vec.norm());

                let uf = build_u_forms(&p, d, &inst.beams);
                let u = &inst.beams.transmit[d];
                let analytic = (&uf.m_mat * u - &uf.n_vec) * Complex64::new(4.0 * c, 0.0);
                let numeric = fd_gradient(u, 1e-5, |v| {
                    let mut b = inst.beams.clone();
                    b.transmit[d] = v.clone();
                    p.objective(&b).unwrap()
                });
                form_err = form_err.max((&analytic - &numeric).norm() / analytic.norm().max(numeric.norm()));
                let fr = &inst.beams.receive[d];
                let analytic = (&ff.a_mat * fr * Complex64::new(2.0, 0.0) - &ff.b_vec * Complex64::new(4.0, 0.0)) * Complex64::new(c, 0.0);
                let numeric = fd_gradient(fr, 1e-5, |v| {
                    let mut b = inst.beams.clone();
                    b.receive[d] = v.clone();
                    p.objective(&b).unwrap()
                });
                form_err = form_err.max((&analytic - &numeric).norm() / analytic.norm().max(numeric.norm()));
            }
        }
    }
    outcome(
        gap < 1e-6 && kkt < 1e-8 && slack < 1e-8 && stat < 1e-8 && form_err < 1e-6,
        format!(
            "(a) gap {gap:.2e}, stationarity {kkt:.2e}, slackness {slack:.2e}; (b) fd gradient/|b| {stat:.2e}; (c) form vs fd {form_err:.2e}"
        ),
    )
}

fn spectral_norm_sq_sym(m: &RMatrix) -> f64 {
    let v = m.clone().symmetric_eigen().eigenvalues.amax();
    v * v
}

fn criterion_5() -> Outcome {
    let mut rng = SimRng::seed_from_u64(5);
    let (mut over, mut idem, mut ident, mut lemma): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
    for k in 0..50u64 {
        let m = rng.random_range(3..13);
        let pairs = (m * (m - 1) / 2) as f64;
        let spare = (pairs - (m - 1) as f64) / pairs;
        let g = generate_random(m, rng.random_range(0.0..1.0) * spare, 500 + k).unwrap();
        let w = random_feasible(&g, &mut rng);
        let d = delta(&w).unwrap();

        let target = rng.random_range(0.0..1.0) * d;
        let p = project_spectral(&w, target).unwrap();
        over = over.max(delta(&p).unwrap() - target);
        idem = idem.max((project_spectral(&p, target).unwrap() - &p).amax());

        let mut eig: Vec<f64> = (&w * &w).symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        ident = ident.max((d - (eig[0] + eig[1] - 1.0)).abs());

        let j = RMatrix::from_element(m, m, 1.0 / m as f64);
        let mut power = w.clone();
        for step in 1..=20 {
            lemma = lemma.max(spectral_norm_sq_sym(&(&power - &j)) - d.powi(step));
            power = &power * &w;
        }
    }
    outcome(
        over <= 1e-9 && idem <= 1e-12 && ident <= 1e-9 && lemma <= 1e-9,
        format!(
            "50 matrices: delta overshoot {over:.2e}, idempotence {idem:.2e}, identity {ident:.2e}, power bound slack {lemma:.2e}"
        ),
    )
}

/// Desk-scale comparison configuration; the iteration caps and the
/// amortized redesign keep ten seeds of two tasks within minutes.
fn ordering_config(kind: TaskKind) -> Config {
    let mut cfg = Config::default();
    cfg.run.devices = 10;
    cfg.run.n_tx = 4;
    cfg.run.n_rx = 4;
    cfg.run.snr_db = 5.0;
    cfg.run.rounds = 100;
    cfg.run.seeds = 10;
    cfg.run.optimize_every = 10;
    cfg.topology.sparsity = 0.3;
    cfg.design.j_max = 3;
    cfg.design.i1_max = 10;
    cfg.design.i2_max = 3;
    cfg.design.mixing_iters = 20;
    cfg.task.kind = kind;
    if kind == TaskKind::Logistic {
        let d = oadfl_core::task::LogisticSpec::default();
        cfg.task.dim = d.dim;
    }
    cfg
}

const ORDER: [SchemeKind; 4] = [SchemeKind::Proposed, SchemeKind::ErrorFree, SchemeKind::MbNoMmo, SchemeKind::ZfbNoMmo];

fn criterion_6(dir: &Path) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [TaskKind::Quadratic, TaskKind::Logistic] {
        let cfg = ordering_config(kind);
        let report = experiment::compare(&cfg, &ORDER, &dir.join(format!("{kind:?}"))).expect("comparison");
        let finals: Vec<Vec<f64>> = report
            .runs
            .iter()
            .map(|cell| cell.iter().map(|r| r.summary().unwrap().final_avg_loss).collect())
            .collect();
        let beats = |k: usize| finals.iter().filter(|f| f[0] <= f[k]).count();
        let (vs_mb, vs_zfb) = (beats(2), beats(3));
        let mean = |k: usize| finals.iter().map(|f| f[k]).sum::<f64>() / finals.len() as f64;
        let rel = (mean(0) - mean(1)) / mean(1);
        let ok = vs_mb >= 8 && vs_zfb >= 8 && rel <= 0.10;
        pass &= ok;
        let mut line = format!(
            "{kind:?}: proposed <= mb-no-mmo on {vs_mb}/10, <= zfb-no-mmo on {vs_zfb}/10, mean loss {:.4} vs error-free {:.4} ({:+.1}%)",
            mean(0),
            mean(1),
            100.0 * rel
        );
        if kind == TaskKind::Quadratic {
            // Excess loss over the known optimum, a stricter view of the gap.
            let excess: Vec<f64> = report
                .seeds
                .iter()
                .zip(&finals)
                .map(|(&seed, f)| {
                    let task = oadfl::tasks::build_task(&cfg.task, cfg.run.devices, seed).unwrap();
                    let opt = task.optimum().unwrap();
                    (f[0] - opt) / (f[1] - opt)
                })
                .collect();
            let mean_ratio = excess.iter().sum::<f64>() / excess.len() as f64;
            line += &format!(", excess-loss ratio to error-free {mean_ratio:.3}");
        }
        parts.push(line);
    }
    outcome(pass, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    for (topology, m, n) in [(NamedTopology::Complete, 4, 3), (NamedTopology::Ring, 6, 2)] {
        let config = RunConfig {
            devices: m,
            n_tx: n,
            n_rx: n,
            rounds: 50,
            snr_db: f64::INFINITY,
            topology: TopologySpec::Named(topology),
            seed: 7,
            ..RunConfig::default()
        };
        let spec = QuadraticSpec {
            dim: 12,
            samples: 30,
            ..QuadraticSpec::default()
        };
        let task = QuadraticTask::generate(&spec, m, &mut SimRng::seed_from_u64(7)).unwrap();
        let run = |kind: SchemeKind| {
            let scheme = SchemeSpec::new(kind).with_mixing(MixingPolicy::Metropolis);
            let mut chans = SampledChannels::new(&config).unwrap();
            run_training(&config, &scheme, &task, &mut chans, &mut NoObserver).unwrap()
        };
        let air = run(SchemeKind::ZfbNoMmo);
        let exact = run(SchemeKind::ErrorFree);
        let scale = exact.final_models.amax().max(1.0);
        worst = worst.max((&air.final_models - &exact.final_models).amax() / scale);
        for (a, b) in air.metrics.iter().zip(&exact.metrics) {
            worst = worst.max((a.avg_loss - b.avg_loss).abs() / b.avg_loss.abs().max(1.0));
            worst = worst.max((a.agreement_error - b.agreement_error).abs());
        }
    }
    outcome(worst <= 1e-9, format!("50 rounds on a complete and a ring graph, largest deviation {worst:.2e}"))
}

fn criterion_8(dir: &Path) -> Outcome {
    let mut cfg = ordering_config(TaskKind::Quadratic);
    cfg.run.seed = 3;
    let first = experiment::run_cell(&cfg, &ORDER, &dir.join("a")).expect("first run");
    let second = experiment::run_cell(&cfg, &ORDER, &dir.join("b")).expect("rerun");
    let identical = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| std::fs::read(a.metrics_path()).unwrap() == std::fs::read(b.metrics_path()).unwrap())
        .count();
    outcome(identical == ORDER.len(), format!("{identical}/{} metric CSVs byte-identical on rerun of seed 3", ORDER.len()))
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("OADFL_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let scratch = tempfile::tempdir().expect("scratch directory");
    let root = scratch.path();
    let criteria: [(usize, &str, Box<dyn Fn() -> Outcome>); 8] = [
        (1, "closed-form error expectations vs Monte Carlo", Box::new(criterion_1)),
        (2, "final loss ordered by mixing statistic", Box::new(|| criterion_2(&root.join("c2")))),
        (3, "joint design objective never increases", Box::new(criterion_3)),
        (4, "beamformer sub-solvers are optimal", Box::new(criterion_4)),
        (5, "spectral projection and mixing identities", Box::new(criterion_5)),
        (6, "scheme ordering at desk scale", Box::new(|| criterion_6(&root.join("c6")))),
        (7, "noiseless aligned gossip equals error-free", Box::new(criterion_7)),
        (8, "reruns are byte-identical", Box::new(|| criterion_8(&root.join("c8")))),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in criteria.iter() {
        if selected.as_ref().is_some_and(|s| !s.contains(n)) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        println!(
            "criterion {n} {}: {name}: {} [{:.1}s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(*n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        // Known failures are reported, not fatal, unless strict mode is asked for.
        if std::env::var_os("OADFL_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
