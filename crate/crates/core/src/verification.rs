//! Bound-verification suites. Each returns a [`Report`] of named checks with
//! observed values, bounds and margins.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::batch::{accelerated_bol, accelerated_bsr, accelerated_proxgrad, DEFAULT_PROX_TOL};
use crate::data::{Dataset, Sample, Split};
use crate::delay::{delayed_bol_run, DelayMode, DelaySchedule};
use crate::error::Result;
use crate::graph::{make_doubly_stochastic, TaskGraph};
use crate::harness::report::{Check, Report};
use crate::losses::{estimate_constants, loss_grad, loss_value, LossKind};
use crate::objective::{dense_oracle, lemma1_bound, mean_and_var, Hyperparams, Problem};
use crate::stochastic::{acsa_run, sigma_bound, AcsaParams, AcsaSpace, SampleSource, SampleStream};
use crate::synthdata::{exact_population_loss, generate_world, GeneratedWorld, TaskSpec};
use crate::trace::RunOptions;

/// The desk instance: `d = 10, m = 20, C = 4, n = 50`.
pub fn desk_spec(seed: u64) -> TaskSpec {
    TaskSpec {
        d: 10,
        m: 20,
        clusters: 4,
        n: 50,
        dev_size: 500,
        test_size: 500,
        seed,
        ..TaskSpec::default()
    }
}

/// Desk regularization used by the suites.
pub fn desk_hyperparams() -> Hyperparams {
    Hyperparams::new(0.05, 0.5)
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `max_j (a_jᵀu + c_j)`.
#[derive(Debug, Clone)]
pub struct MaxAffine {
    pub slopes: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
}

impl MaxAffine {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        self.slopes
            .iter()
            .zip(&self.offsets)
            .map(|(a, c)| a.dot(u) + c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lipschitz constant `max_j ‖a_j‖`.
    pub fn lipschitz(&self) -> f64 {
        self.slopes.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }
}

fn subsets(k: usize, max_size: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << k))
        .map(|mask| (0..k).filter(|j| mask & (1 << j) != 0).collect::<Vec<_>>())
        .filter(|s| s.len() <= max_size)
        .collect()
}

/// `argmin_u h(u) + (β/2)‖u − x‖²` by enumerating active piece sets: for a
/// set `S`, `u = x − (1/β)Σ_S λ_j a_j` with `λ` on the simplex and all pieces
/// in `S` tied at the maximum.
pub fn prox_max_affine(h: &MaxAffine, beta: f64, x: &DVector<f64>) -> DVector<f64> {
    let k = h.slopes.len();
    let d = x.len();
    let f = |u: &DVector<f64>| h.value(u) + 0.5 * beta * (u - x).norm_squared();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for set in subsets(k, d + 1) {
        let s = set.len();
        let mut sys = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (r, &j) in set.iter().enumerate() {
            for (c, &l) in set.iter().enumerate() {
                sys[(r, c)] = -h.slopes[j].dot(&h.slopes[l]) / beta;
            }
            sys[(r, s)] = -1.0;
            rhs[r] = -(h.slopes[j].dot(x) + h.offsets[j]);
        }
        for c in 0..s {
            sys[(s, c)] = 1.0;
        }
        rhs[s] = 1.0;
        let Some(sol) = sys.lu().solve(&rhs) else { continue };
        if sol.iter().take(s).any(|&l| l < -1e-12) {
            continue;
        }
        let mut u = x.clone();
        for (c, &j) in set.iter().enumerate() {
            u -= &h.slopes[j] * (sol[c] / beta);
        }
        if h.value(&u) > sol[s] + 1e-9 * (1.0 + sol[s].abs()) {
            continue;
        }
        let val = f(&u);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, u));
        }
    }
    best.expect("the single-piece sets always include the active piece at the optimum").1
}

fn random_max_affine(r: &mut ChaCha8Rng, d: usize, pieces: usize) -> MaxAffine {
    MaxAffine {
        slopes: (0..pieces)
            .map(|_| DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0)))
            .collect(),
        offsets: (0..pieces).map(|_| r.random_range(-1.0..1.0)).collect(),
    }
}

/// Prox displacement `‖x* − x‖ ≤ L/β` and warm-start gap
/// `f(x) − f(x*) ≤ L²/β` on random max-of-affine `h` (`d ≤ 3`, `≤ 5` pieces).
pub fn lemma6_suite(trials: usize, seed: u64) -> Report {
    let mut report = Report::new("lemma6");
    let (mut worst_dist, mut worst_gap) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut violations = 0usize;
    let mut r = rng(seed, 0);
    for _ in 0..trials {
        let d = r.random_range(1..=3);
        let pieces = r.random_range(1..=5);
        let h = random_max_affine(&mut r, d, pieces);
        let beta = 10f64.powf(r.random_range(-1.0..1.0));
        let x = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
        let l = h.lipschitz();
        let xs = prox_max_affine(&h, beta, &x);
        let f = |u: &DVector<f64>| h.value(u) + 0.5 * beta * (u - &x).norm_squared();
        let dist = (&xs - &x).norm() / (l / beta);
        let gap = (f(&x) - f(&xs)) / (l * l / beta);
        // ratios to the bounds; rounding slack of a few ulps
        if dist > 1.0 + 1e-12 || gap > 1.0 + 1e-12 {
            violations += 1;
        }
        worst_dist = worst_dist.max(dist);
        worst_gap = worst_gap.max(gap);
    }
    report.push(Check::upper("displacement_over_L_div_beta_max", worst_dist, 1.0 + 1e-12));
    report.push(Check::upper("warm_start_gap_over_L2_div_beta_max", worst_gap, 1.0 + 1e-12));
    report.push(Check::upper("violations", violations as f64, 0.0));

    // h ≡ 0
    let zero = MaxAffine {
        slopes: vec![DVector::zeros(2)],
        offsets: vec![0.0],
    };
    let x = DVector::from_vec(vec![0.7, -1.1]);
    report.push(Check::upper("zero_h_fixed_point", (prox_max_affine(&zero, 2.0, &x) - &x).norm(), 0.0));

    // L|u| with the center beyond L/β: soft threshold moves exactly L/β
    let (l, beta) = (2.0, 1.0);
    let abs = MaxAffine {
        slopes: vec![DVector::from_element(1, l), DVector::from_element(1, -l)],
        offsets: vec![0.0, 0.0],
    };
    let c = DVector::from_element(1, 5.0);
    let moved = (prox_max_affine(&abs, beta, &c) - &c).norm();
    report.push(Check::upper("soft_threshold_distance_error", (moved - l / beta).abs(), 1e-12));
    report
}

/// Gradient-noise variance of a single combined sample in U-space,
/// `E‖G(ξ) − EG‖²` with `G(ξ) = (1/m)[∇ℓ(w_i, z_i)]_i·M^{-1/2}`, estimated
/// from `draws` samples; returns the estimate and its standard error.
pub fn u_space_gradient_variance(
    world: &GeneratedWorld,
    kind: LossKind,
    w: &DMatrix<f64>,
    inv_sqrt: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<Dataset>)> {
    let m = world.spec.m;
    let mut stream = SampleStream::fresh(world, seed);
    let batch = stream.next_batch(draws)?;
    let grads: Vec<DMatrix<f64>> = (0..draws)
        .into_par_iter()
        .map(|j| {
            let mut g = DMatrix::zeros(w.nrows(), m);
            for (i, task) in batch.iter().enumerate() {
                let z = task.sample(j);
                g.set_column(i, &loss_grad(kind, &w.column(i).into_owned(), &z).expect("shapes agree"));
            }
            g * inv_sqrt / m as f64
        })
        .collect();
    let mean = grads.iter().fold(DMatrix::zeros(w.nrows(), m), |acc, g| acc + g) / draws as f64;
    let sq: Vec<f64> = grads.iter().map(|g| (g - &mean).norm_squared()).collect();
    let (mu, var) = mean_and_var(&sq);
    // unbiased: the centered sum loses one draw's worth of variance
    let scale = draws as f64 / (draws as f64 - 1.0);
    Ok((mu * scale, (var / draws as f64).sqrt() * scale, batch))
}

/// Monte Carlo variance of the single-sample U-space gradient at `points`
/// random `W` with `‖w_i‖ ≤ B_eff`, against `σ² = (4L²/m²)(1 + mρ)` with the
/// effective `L` of the drawn samples.
pub fn lemma4_suite(points: usize, draws: usize, seed: u64) -> Result<Report> {
    let world = generate_world(&desk_spec(seed))?;
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    let hp = desk_hyperparams();
    let kappa = hp.kappa()?;
    let coupling = graph.coupling(kappa)?;
    let rho = crate::harness::runner::rho_from_kappa(&graph, kappa);
    let (d, m) = (world.spec.d, world.spec.m);
    let b_eff = world.true_predictors.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut report = Report::new("lemma4");
    let mut r = rng(seed, 1);
    let mut all_ok = true;
    for p in 0..points {
        let mut w = DMatrix::from_fn(d, m, |_, _| r.random_range(-1.0..1.0));
        for mut col in w.column_iter_mut() {
            let radius = b_eff * r.random_range(0.0..1.0);
            let norm = col.norm();
            col *= radius / norm;
        }
        let (var, se, batch) =
            u_space_gradient_variance(&world, LossKind::Squared, &w, coupling.inv_sqrt(), draws, seed + 100 + p as u64)?;
        let l = estimate_constants(LossKind::Squared, &batch, b_eff)?.lipschitz;
        let bound = sigma_bound(l, m, rho);
        let check = Check::upper(&format!("point_{p}_variance_plus_3se"), var + 3.0 * se, bound);
        all_ok &= check.pass;
        report.push(check);
    }
    report.push(Check::flag("all_points_within_sigma2", all_ok));
    Ok(report)
}

/// Monte Carlo check of the expected generalization gap
/// `E[F(Ŵ) − F̂(Ŵ)] ≤ (4L²/(mn))Σ_i 1/(η + τλ_i)` over `repeats` training
/// sets sharing `W*`. `F` is the closed-form population loss.
pub fn stability_suite(repeats: usize, seed: u64) -> Result<Report> {
    let spec = TaskSpec {
        d: 4,
        m: 5,
        clusters: 2,
        n: 20,
        dev_size: 10,
        test_size: 10,
        seed,
        knn: Some(3),
        ..TaskSpec::default()
    };
    let world = generate_world(&spec)?;
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    let mut report = Report::new("stability");

    let gaps_at = |hp: Hyperparams| -> Result<(Vec<f64>, f64, Vec<Dataset>)> {
        let runs: Vec<(f64, f64, Vec<Dataset>)> = (0..repeats)
            .into_par_iter()
            .map(|rep| {
                let mut stream = SampleStream::fresh(&world, seed.wrapping_add(1 + rep as u64));
                let train = stream.next_batch(spec.n)?;
                let problem = Problem::new(LossKind::Squared, &train, &graph, hp)?;
                let w = dense_oracle(&problem)?;
                let gap = exact_population_loss(&world, &w)? - problem.loss_value(&w)?;
                let b = w.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
                Ok((gap, b, train))
            })
            .collect::<Result<_>>()?;
        let b_eff = runs.iter().map(|r| r.1).fold(0.0, f64::max);
        let gaps = runs.iter().map(|r| r.0).collect();
        let pooled = runs.into_iter().flat_map(|r| r.2).collect();
        Ok((gaps, b_eff, pooled))
    };

    let hp = desk_hyperparams();
    let (gaps, b_eff, pooled) = gaps_at(hp)?;
    let (mean, var) = mean_and_var(&gaps);
    let se = (var / gaps.len() as f64).sqrt();
    let l = estimate_constants(LossKind::Squared, &pooled, b_eff.max(1e-12))?.lipschitz;
    let bound = lemma1_bound(l, spec.n, &hp, &graph);
    report.push(Check::upper("gap_mean_minus_3se_vs_bound", mean - 3.0 * se, bound));
    report.push(Check::upper("gap_to_bound_ratio", mean / bound, 1.0));

    // τ → ∞: only the λ_1 = 0 term survives
    let big = Hyperparams::new(hp.eta, 1e8);
    let limit = 4.0 * l * l / (spec.m as f64 * spec.n as f64 * hp.eta);
    report.push(Check::upper(
        "tau_limit_relative_error",
        (lemma1_bound(l, spec.n, &big, &graph) - limit).abs() / limit,
        1e-4,
    ));

    // η → ∞: Ŵ ≈ 0 and the gap averages out
    let (zero_gaps, _, _) = gaps_at(Hyperparams::new(1e8, hp.tau))?;
    let (zm, zv) = mean_and_var(&zero_gaps);
    let zse = (zv / zero_gaps.len() as f64).sqrt();
    report.push(Check::upper("eta_limit_gap_within_3se", zm.abs(), 3.0 * zse));

    let bounds: Vec<f64> = [5, 10, 20, 40, 80].iter().map(|&n| lemma1_bound(l, n, &hp, &graph)).collect();
    report.push(Check::flag("bound_decreasing_in_n", bounds.windows(2).all(|w| w[1] < w[0])));
    Ok(report)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn rate_world(seed: u64) -> Result<GeneratedWorld> {
    generate_world(&TaskSpec {
        d: 10,
        m: 6,
        clusters: 2,
        n: 30,
        dev_size: 10,
        test_size: 10,
        seed,
        knn: Some(3),
        ..TaskSpec::default()
    })
}

/// Four machines on a ring; machine data `x_a = √d·s_a·e_a` with `s_a²`
/// log-spaced over `[1e-10, 1]`, so every local Hessian is `diag(s²)`.
fn spread_spectrum_instance(seed: u64) -> Result<(Vec<Dataset>, TaskGraph)> {
    let (d, m) = (12usize, 4usize);
    let mut r = rng(seed, 3);
    let data = (0..m)
        .map(|_| {
            let x = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    (d as f64).sqrt() * 10f64.powf(-5.0 * i as f64 / (d - 1) as f64)
                } else {
                    0.0
                }
            });
            let y = DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0));
            Dataset::new(x, y, Split::Train)
        })
        .collect::<Result<_>>()?;
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, (i + 1) % m)] = 1.0;
        a[((i + 1) % m, i)] = 1.0;
    }
    Ok((data, TaskGraph::from_adjacency(a)?))
}

/// Rounds an accelerated solver needs to reach a relative objective gap of
/// `1e-8`.
fn iterations_to_target<F>(problem: &Problem<'_>, solver: F) -> Result<f64>
where
    F: Fn(&Problem<'_>, &RunOptions<'_>) -> Result<crate::trace::RunTrace>,
{
    let oracle = dense_oracle(problem)?;
    let f_star = problem.objective(&oracle)?;
    let mut opts = RunOptions::rounds(1_000_000).with_target(f_star, 1e-8);
    opts.record_every = 1_000_000;
    Ok(solver(problem, &opts)?.rounds() as f64)
}

/// Returns the full-gradient "samples" of each machine's training set, so a
/// sample stream yields exact gradients.
struct ExactGradients<'a>(&'a [Dataset]);

impl SampleSource for ExactGradients<'_> {
    fn machines(&self) -> usize {
        self.0.len()
    }

    fn dim(&self) -> usize {
        self.0[0].dim()
    }

    fn draw(&self, machine: usize, _count: usize, _rng: &mut ChaCha8Rng) -> Result<Dataset> {
        Ok(self.0[machine].clone())
    }
}

/// Iteration-count scalings of the accelerated batch solvers, the noiseless
/// AC-SA decay and the AC-SA noise-branch horizon check.
pub fn rate_suite(seed: u64) -> Result<Report> {
    let mut report = Report::new("rate");

    // condition number 1: no momentum, exact after one step
    let target = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.5);
    let mut iters = 0;
    accelerated_proxgrad(
        |x| Ok((x - &target) * 2.0),
        |v, _| Ok(v.clone()),
        2.0,
        2.0,
        DMatrix::zeros(3, 2),
        100,
        |t, x| {
            iters = t;
            Ok(if (x - &target).norm() <= 1e-8 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        },
    )?;
    report.push(Check::upper("condition_one_iterations", iters as f64, 5.0));

    // BSR: √((β_F + η)/η) against η, on data whose curvature spreads
    // log-uniformly over ten decades so that η sets the conditioning
    let (spread, ring) = spread_spectrum_instance(seed)?;
    let beta_f = estimate_constants(LossKind::Squared, &spread, 1.0)?.beta_f;
    let etas: Vec<f64> = [1e-5, 1e-4, 1e-3, 1e-2].iter().map(|r| r * beta_f).collect();
    let counts: Vec<f64> = etas
        .par_iter()
        .map(|&eta| {
            let p = Problem::new(LossKind::Squared, &spread, &ring, Hyperparams::new(eta, eta * 0.1))?;
            iterations_to_target(&p, accelerated_bsr)
        })
        .collect::<Result<_>>()?;
    report.push(Check::band("bsr_iterations_slope_vs_eta", loglog_slope(&etas, &counts), -0.6, -0.4));

    // BOL: √((η + τλ_m)/η) against τλ_m
    let world = rate_world(seed)?;
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    let train = &world.train;
    let beta_f = estimate_constants(LossKind::Squared, train, 1.0)?.beta_f;
    let eta = 1e-3 * beta_f;
    let taus: Vec<f64> = [1e2, 1e3, 1e4, 1e5].iter().map(|r| r * eta / graph.lambda_max()).collect();
    let counts: Vec<f64> = taus
        .par_iter()
        .map(|&tau| {
            let p = Problem::new(LossKind::Squared, train, &graph, Hyperparams::new(eta, tau))?;
            iterations_to_target(&p, |p, o| accelerated_bol(p, DEFAULT_PROX_TOL, o))
        })
        .collect::<Result<_>>()?;
    let tl: Vec<f64> = taus.iter().map(|t| t * graph.lambda_max()).collect();
    report.push(Check::band("bol_iterations_slope_vs_tau_lambda_max", loglog_slope(&tl, &counts), 0.4, 0.6));

    // noiseless AC-SA on an interpolating least-squares problem (n < d)
    let thin = generate_world(&TaskSpec {
        d: 20,
        m: 6,
        clusters: 2,
        n: 8,
        dev_size: 10,
        test_size: 10,
        seed,
        knn: Some(3),
        ..TaskSpec::default()
    })?;
    let tgraph = TaskGraph::from_adjacency(thin.adjacency.clone())?;
    let hp = Hyperparams::new(1.0, 1.0);
    let problem = Problem::new(LossKind::Squared, &thin.train, &tgraph, hp)?;
    let coupling = tgraph.coupling(hp.kappa()?)?;
    let exact = ExactGradients(&thin.train);
    let bf = estimate_constants(LossKind::Squared, &thin.train, 1.0)?.beta_f;
    let horizons = [16usize, 32, 64, 128, 256];
    let gaps: Vec<f64> = horizons
        .iter()
        .map(|&t| {
            let params = AcsaParams {
                horizon: t,
                machines: thin.spec.m,
                beta_f: bf,
                norm_bound: 1.0,
                sigma: 0.0,
            };
            let mut stream = SampleStream::fresh(&exact, seed);
            let trace = acsa_run(&problem, &coupling, &mut stream, 1, &params, AcsaSpace::W, &RunOptions::rounds(t))?;
            problem.loss_value(&trace.final_w)
        })
        .collect::<Result<_>>()?;
    let hs: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
    report.push(Check::upper("acsa_noiseless_gap_slope", loglog_slope(&hs, &gaps), -1.8));
    report.push(acsa_horizon_check(20, 500, seed)?);
    Ok(report)
}

/// AC-SA with the noise branch active: population excess at `T` over that at
/// `4T`, paired over `seeds` runs.
pub fn acsa_horizon_check(seeds: usize, horizon: usize, seed: u64) -> Result<Check> {
    let world = generate_world(&TaskSpec {
        d: 10,
        m: 40,
        clusters: 4,
        n: 10,
        dev_size: 10,
        test_size: 10,
        seed,
        knn: Some(3),
        ..TaskSpec::default()
    })?;
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    let hp = Hyperparams::new(1.0, 1.0);
    let problem = Problem::new(LossKind::Squared, &world.train, &graph, hp)?;
    let coupling = graph.coupling(hp.kappa()?)?;
    let floor = world.spec.noise_var() / 2.0;
    let bnd = crate::harness::runner::u_space_rms(&world.true_predictors, &hp, &graph)?;
    let consts = estimate_constants(LossKind::Squared, &world.train, bnd)?;
    // measured noise level at W*, so the stepsize is not throttled by the
    // worst-case bound
    let (var, _, _) =
        u_space_gradient_variance(&world, LossKind::Squared, &world.true_predictors, coupling.inv_sqrt(), 4000, seed)?;
    let sigma = var.sqrt();
    let excess = |t: usize, s: u64| -> Result<f64> {
        let params = AcsaParams {
            horizon: t,
            machines: world.spec.m,
            beta_f: consts.beta_f,
            norm_bound: bnd,
            sigma,
        };
        let mut stream = SampleStream::fresh(&world, s);
        let tr = acsa_run(&problem, &coupling, &mut stream, 1, &params, AcsaSpace::W, &RunOptions::rounds(t))?;
        Ok(exact_population_loss(&world, &tr.final_w)? - floor)
    };
    let ratios: Vec<f64> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| Ok(excess(horizon, 1000 + s)? / excess(4 * horizon, 1000 + s)?))
        .collect::<Result<_>>()?;
    let (mean, var) = mean_and_var(&ratios);
    let se = (var / ratios.len() as f64).sqrt();
    Ok(Check::lower("acsa_T_vs_4T_improvement_minus_3se", mean - 3.0 * se, 1.8))
}

/// `V(t) ≤ bound(t) + 10·prox_tol·t` over `runs` delayed runs cycling through
/// `Γ ∈ {1, 3, 5}` and the three delay modes on the doubly-stochastic desk
/// graph.
pub fn theorem7_suite(runs: usize, rounds: usize, seed: u64) -> Result<Report> {
    let world = generate_world(&desk_spec(seed))?;
    let graph = TaskGraph::from_adjacency(make_doubly_stochastic(&world.adjacency)?)?;
    let hp = desk_hyperparams();
    let problem = Problem::new(LossKind::Squared, &world.train, &graph, hp)?;
    let oracle = dense_oracle(&problem)?;
    let prox_tol = DEFAULT_PROX_TOL;
    let gammas = [1usize, 3, 5];
    let modes = [DelayMode::Fixed, DelayMode::UniformRandom, DelayMode::AdversarialMax];
    let results: Vec<(usize, f64)> = (0..runs)
        .into_par_iter()
        .map(|k| {
            let schedule = DelaySchedule::new(gammas[k % 3], modes[(k / 3) % 3], seed + k as u64);
            let trace = delayed_bol_run(&problem, &schedule, prox_tol, &oracle, &RunOptions::rounds(rounds))?;
            let mut violations = 0;
            let mut worst = f64::INFINITY;
            for row in &trace.rows {
                let (v, bound) = (row.extras[2], row.extras[3]);
                let slack = bound + 10.0 * prox_tol * row.round as f64 - v;
                worst = worst.min(slack);
                if slack < 0.0 {
                    violations += 1;
                }
            }
            Ok((violations, worst))
        })
        .collect::<Result<_>>()?;
    let mut report = Report::new("theorem7");
    let total: usize = results.iter().map(|r| r.0).sum();
    let worst = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    report.push(Check::upper("violations", total as f64, 0.0));
    report.push(Check::lower("smallest_slack", worst, 0.0));
    report.push(Check::lower("runs", runs as f64, 20.0));
    Ok(report)
}

/// Every suite at its acceptance size, in a fixed order.
pub fn full_suite(seed: u64) -> Result<Vec<Report>> {
    let world = generate_world(&desk_spec(seed))?;
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    Ok(vec![
        crate::harness::consensus::consensus_suite(&graph, &desk_hyperparams(), LossKind::Squared, &world.train)?,
        theorem7_suite(20, 80, seed)?,
        lemma4_suite(10, 5000, seed)?,
        lemma6_suite(100, seed),
        rate_suite(seed)?,
        gradient_suite(20, seed)?,
        stability_suite(300, seed)?,
    ])
}

/// Central finite difference of `f` along every coordinate of `x`.
pub fn finite_difference<F: Fn(&DMatrix<f64>) -> f64>(f: F, x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(numeric.norm()).max(1e-8)
}

/// Analytic gradients of the losses, the regularizer, the full objective and
/// the U-space composite against central differences.
pub fn gradient_suite(probes: usize, seed: u64) -> Result<Report> {
    const H: f64 = 1e-6;
    let mut report = Report::new("gradients");
    let mut r = rng(seed, 2);
    let (d, m, n) = (4, 5, 6);
    let mut worst = [0.0f64; 6];
    for _ in 0..probes {
        let mut a = DMatrix::from_fn(m, m, |_, _| if r.random::<f64>() < 0.5 { r.random_range(0.1..2.0) } else { 0.0 });
        a = (&a + a.transpose()) * 0.5;
        a.fill_diagonal(0.0);
        let graph = TaskGraph::from_adjacency(a)?;
        let hp = Hyperparams::new(r.random_range(0.05..2.0), r.random_range(0.0..2.0));
        for (slot, kind) in [(0usize, LossKind::Squared), (1, LossKind::Logistic)] {
            let data: Vec<Dataset> = (0..m)
                .map(|_| {
                    let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
                    let y = DVector::from_fn(n, |_, _| match kind {
                        LossKind::Logistic => {
                            if r.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        LossKind::Squared => r.random_range(-2.0..2.0),
                    });
                    Dataset::new(x, y, Split::Train)
                })
                .collect::<Result<_>>()?;
            let w = DMatrix::from_fn(d, m, |_, _| r.random_range(-1.0..1.0));
            // single-sample loss
            let z = Sample::new(DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0)), data[0].y()[0]);
            let w0 = DMatrix::from_column_slice(d, 1, w.column(0).as_slice());
            let g = loss_grad(kind, &w.column(0).into_owned(), &z)?;
            let fd = finite_difference(|v| loss_value(kind, &v.column(0).into_owned(), &z).expect("shape"), &w0, H);
            worst[slot] = worst[slot].max(relative_error(&DMatrix::from_column_slice(d, 1, g.as_slice()), &fd));

            let problem = Problem::new(kind, &data, &graph, hp)?;
            let g = problem.grad_objective(&w)?;
            let fd = finite_difference(|v| problem.objective(v).expect("shape"), &w, H);
            worst[3] = worst[3].max(relative_error(&g, &fd));
            if slot == 0 {
                let g = problem.grad_regularizer(&w)?;
                let fd = finite_difference(|v| problem.regularizer(v).expect("shape"), &w, H);
                worst[2] = worst[2].max(relative_error(&g, &fd));
            }
            if hp.eta > 0.0 {
                let coupling = graph.coupling(hp.kappa()?)?;
                let g = problem.grad_objective_u(&w, &coupling)?;
                let fd = finite_difference(|u| problem.objective_u(u, &coupling).expect("shape"), &w, H);
                worst[4 + slot] = worst[4 + slot].max(relative_error(&g, &fd));
            }
        }
    }
    let names = [
        "squared_loss",
        "logistic_loss",
        "regularizer",
        "full_objective",
        "u_space_squared",
        "u_space_logistic",
    ];
    for (name, err) in names.iter().zip(worst) {
        report.push(Check::upper(&format!("{name}_max_relative_error"), err, 1e-5));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn prox_matches_brute_force_in_one_dimension() {
        let mut r = rng(4, 9);
        for _ in 0..20 {
            let h = random_max_affine(&mut r, 1, 4);
            let beta = r.random_range(0.2..3.0);
            let x = DVector::from_element(1, r.random_range(-2.0..2.0));
            let xs = prox_max_affine(&h, beta, &x);
            let f = |u: f64| h.value(&DVector::from_element(1, u)) + 0.5 * beta * (u - x[0]).powi(2);
            let grid_best = (0..200_001).map(|k| -10.0 + k as f64 * 1e-4).map(f).fold(f64::INFINITY, f64::min);
            assert!(f(xs[0]) <= grid_best + 1e-9);
        }
    }

    #[test]
    fn lemma6_small() {
        let r = lemma6_suite(100, 1);
        assert!(r.all_pass(), "{}", r.to_csv());
    }

    #[test]
    fn gradients_small() {
        let r = gradient_suite(20, 3).unwrap();
        assert!(r.all_pass(), "{}", r.to_csv());
    }
}
