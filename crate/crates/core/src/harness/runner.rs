//! One configured run: world, hyperparameters, solver dispatch and output
//! files (`trace.csv`, `extras.csv`, `summary.txt`, `config.cfg`, plots).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::batch::{accelerated_bol, accelerated_bsr, run_bol, run_bsr, run_gd};
use crate::delay::{delayed_bol_run, DelaySchedule};
use crate::error::{Error, Result};
use crate::graph::{make_doubly_stochastic, TaskGraph};
use crate::losses::estimate_constants;
use crate::objective::{corollary2_params, population_loss, Hyperparams, Problem};
use crate::stochastic::{
    accelerated_sol, acsa_run, minibatch_prox_run, run_ssr, sigma_bound, AcsaParams, AcsaSpace, MbproxParams,
    SampleStream,
};
use crate::synthdata::{generate_world, GeneratedWorld};
use crate::trace::{RunOptions, RunTrace};

use super::baselines::{run_centralized_baseline, run_centralized_fixed, run_local_baseline, solve_exact};
use super::config::{AlgorithmId, ExperimentConfig, RegSpec, WorldSource};
use super::plot::{emit_plots, PlotAxis, References, Series};

/// Environment variable that relocates relative output directories.
pub const OUT_ENV: &str = "GRAPHMTL_OUT";

/// Inner iteration cap for each minibatch-prox subproblem.
const MBPROX_INNER_MAX_ITER: usize = 10_000;

/// Output directory after applying [`OUT_ENV`].
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) if cfg.out_dir.is_relative() => PathBuf::from(root).join(&cfg.out_dir),
        _ => cfg.out_dir.clone(),
    }
}

/// Generates or loads the world and rejects disconnected graphs.
pub fn prepare_world(cfg: &ExperimentConfig) -> Result<GeneratedWorld> {
    let world = match &cfg.world {
        WorldSource::Generate(spec) => generate_world(spec)?,
        WorldSource::Load(path) => GeneratedWorld::load(path)?,
    };
    if !world.connected {
        return Err(Error::Config(format!(
            "world seed {} gives a disconnected relatedness graph",
            world.spec.seed
        )));
    }
    Ok(world)
}

/// `(1/m)Σ_{i≥2} 1/(1 + κλ_i)`: ρ expressed through `κ = mB²/S²`.
pub fn rho_from_kappa(graph: &TaskGraph, kappa: f64) -> f64 {
    let tail = graph.eigenvalues().iter().skip(1);
    tail.map(|l| 1.0 / (1.0 + kappa * l)).sum::<f64>() / graph.m() as f64
}

/// `(η, τ)` for the run. Tuned configs pick the centralized dev-set optimum.
pub fn resolve_hyperparams(cfg: &ExperimentConfig, world: &GeneratedWorld, graph: &TaskGraph) -> Result<Hyperparams> {
    match &cfg.reg {
        RegSpec::Direct { eta, tau } => Ok(Hyperparams::new(*eta, *tau)),
        RegSpec::Bounds {
            norm_bound,
            dissimilarity_bound,
        } => {
            let l = estimate_constants(cfg.loss, &world.train, *norm_bound)?.lipschitz;
            let hp = corollary2_params(l, *norm_bound, *dissimilarity_bound, world.spec.m, world.spec.n, graph)?;
            Ok(hp.with_bounds(*norm_bound, *dissimilarity_bound))
        }
        RegSpec::Tuned { eta_grid, tau_grid } => {
            Ok(run_centralized_baseline(cfg.loss, &world.train, &world.dev, None, graph, eta_grid, tau_grid)?.hp)
        }
    }
}

/// `√(tr(W M Wᵀ)/m)`: the root-mean-square U-space norm of `w`.
pub fn u_space_rms(w: &DMatrix<f64>, hp: &Hyperparams, graph: &TaskGraph) -> Result<f64> {
    let coupling = graph.coupling(hp.kappa()?)?;
    Ok(((w * coupling.matrix()).dot(w) / graph.m() as f64).sqrt())
}

/// Runs the configured algorithm in memory. `live_csv` mirrors rows to disk
/// as they are produced.
pub fn execute(cfg: &ExperimentConfig, world: &GeneratedWorld, live_csv: Option<&Path>) -> Result<RunTrace> {
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    let kind = cfg.loss;
    let (train, dev, test) = (&world.train[..], &world.dev[..], &world.test[..]);
    if cfg.algorithm == AlgorithmId::Local {
        return Ok(run_local_baseline(kind, train, dev, Some(test), &cfg.lambda_grid)?.trace);
    }
    if cfg.algorithm == AlgorithmId::Centralized {
        return Ok(match &cfg.reg {
            RegSpec::Tuned { eta_grid, tau_grid } => {
                run_centralized_baseline(kind, train, dev, Some(test), &graph, eta_grid, tau_grid)?.trace
            }
            _ => {
                let hp = resolve_hyperparams(cfg, world, &graph)?;
                run_centralized_fixed(&Problem::new(kind, train, &graph, hp)?, Some(test))?.trace
            }
        });
    }

    let hp = resolve_hyperparams(cfg, world, &graph)?;
    let ds_graph;
    let graph = if cfg.algorithm == AlgorithmId::BolDelayed {
        ds_graph = TaskGraph::from_adjacency(make_doubly_stochastic(&world.adjacency)?)?;
        &ds_graph
    } else {
        &graph
    };
    let problem = Problem::new(kind, train, graph, hp)?;
    let oracle = solve_exact(&problem)?;
    let mut opts = RunOptions::rounds(cfg.rounds).with_tests(test).with_oracle(&oracle);
    opts.record_every = cfg.record_every;
    opts.record_wall_ms = cfg.record_wall_ms;
    if let Some(p) = live_csv {
        opts = opts.with_live_csv(p);
    }
    let m = world.spec.m;
    let b = cfg.batch;
    let budget = cfg.sample_budget.unwrap_or((b * cfg.rounds) as u64);
    let make_stream = || {
        let s = if cfg.fresh {
            SampleStream::fresh(world, cfg.seed)
        } else {
            SampleStream::resample(train, cfg.seed)
        };
        s.with_budget(budget)
    };
    let norm_bound = || -> Result<f64> {
        match (cfg.norm_bound, &cfg.reg) {
            (Some(v), _) => Ok(v),
            (None, RegSpec::Bounds { norm_bound, .. }) => Ok(*norm_bound),
            _ => u_space_rms(&oracle, &hp, graph),
        }
    };

    match cfg.algorithm {
        AlgorithmId::Gd => run_gd(&problem, cfg.alpha, &opts),
        AlgorithmId::Bsr => run_bsr(&problem, cfg.alpha, &opts),
        AlgorithmId::Bol => run_bol(&problem, cfg.alpha, cfg.prox_tol, &opts),
        AlgorithmId::BsrAcc => accelerated_bsr(&problem, &opts),
        AlgorithmId::BolAcc => accelerated_bol(&problem, cfg.prox_tol, &opts),
        AlgorithmId::Ssr => {
            let coupling = graph.coupling(hp.kappa()?)?;
            let alpha = match cfg.alpha {
                Some(a) => a,
                None => m as f64 / (2.0 * estimate_constants(kind, train, 1.0)?.beta_f),
            };
            run_ssr(&problem, &coupling, &mut make_stream(), b, alpha, &opts)
        }
        AlgorithmId::Acsa => {
            let coupling = graph.coupling(hp.kappa()?)?;
            let bnd = norm_bound()?;
            let consts = estimate_constants(kind, train, bnd)?;
            let base = AcsaParams {
                horizon: cfg.rounds,
                machines: m,
                beta_f: consts.beta_f,
                norm_bound: bnd,
                sigma: match cfg.sigma {
                    Some(s) => s,
                    None => sigma_bound(consts.lipschitz, m, rho_from_kappa(graph, hp.kappa()?)).sqrt(),
                },
            };
            match &cfg.sigma_grid {
                None => acsa_run(&problem, &coupling, &mut make_stream(), b, &base, AcsaSpace::W, &opts),
                Some(grid) => {
                    let mut best: Option<(f64, RunTrace)> = None;
                    for &sigma in grid {
                        let params = AcsaParams { sigma, ..base };
                        let trace = acsa_run(&problem, &coupling, &mut make_stream(), b, &params, AcsaSpace::W, &opts)?;
                        let score = population_loss(kind, &trace.final_w, dev)?;
                        if best.as_ref().is_none_or(|(s, _)| score < *s) {
                            best = Some((score, trace));
                        }
                    }
                    Ok(best.expect("grid is nonempty").1)
                }
            }
        }
        AlgorithmId::Sol => accelerated_sol(&problem, &mut make_stream(), b, cfg.prox_tol, &opts),
        AlgorithmId::Mbprox => {
            let coupling = graph.coupling(hp.kappa()?)?;
            let bnd = norm_bound()?;
            let params = MbproxParams {
                horizon: cfg.rounds * b,
                batch: b,
                lipschitz: estimate_constants(kind, train, bnd)?.lipschitz,
                norm_bound: bnd,
                rho: rho_from_kappa(graph, hp.kappa()?),
                gamma: None,
                zeta_scale: 1.0,
                inner_max_iter: MBPROX_INNER_MAX_ITER,
            };
            minibatch_prox_run(&problem, &coupling, &mut make_stream(), &params, &opts)
        }
        AlgorithmId::BolDelayed => {
            let schedule = DelaySchedule::new(cfg.gamma_max, cfg.delay_mode, cfg.seed);
            delayed_bol_run(&problem, &schedule, cfg.prox_tol, &oracle, &opts)
        }
        AlgorithmId::Local | AlgorithmId::Centralized => unreachable!("handled above"),
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub algorithm: AlgorithmId,
    pub out_dir: PathBuf,
    /// Solver error, if the run failed after the world was built.
    pub error: Option<String>,
    pub rounds: usize,
    pub comm_rounds: usize,
    pub vectors_per_machine: f64,
    pub samples_per_machine: u64,
    pub final_objective: Option<f64>,
    pub final_population_loss: Option<f64>,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "algorithm = {}\nstatus = {}\nrounds = {}\ncomm_rounds = {}\nvectors_per_machine = {}\nsamples_per_machine = {}\nfinal_objective = {}\nfinal_population_loss = {}\n",
            self.algorithm.as_str(),
            self.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {e}")),
            self.rounds,
            self.comm_rounds,
            self.vectors_per_machine,
            self.samples_per_machine,
            opt(self.final_objective),
            opt(self.final_population_loss),
        )
    }
}

/// Runs one config end to end. Config and world problems are errors; a solver
/// failure is reported in the summary and leaves the partial trace on disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let world = prepare_world(cfg)?;
    let out = resolve_out_dir(cfg);
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.cfg"), cfg.to_text())?;
    let trace_path = out.join("trace.csv");
    let mut summary = RunSummary {
        algorithm: cfg.algorithm,
        out_dir: out.clone(),
        error: None,
        rounds: 0,
        comm_rounds: 0,
        vectors_per_machine: 0.0,
        samples_per_machine: 0,
        final_objective: None,
        final_population_loss: None,
    };
    match execute(cfg, &world, Some(&trace_path)) {
        Ok(trace) => {
            trace.save(&trace_path)?;
            if !trace.extra_columns.is_empty() {
                trace.write_extras_csv(fs::File::create(out.join("extras.csv"))?)?;
            }
            if let Some(last) = trace.last() {
                summary.rounds = last.round;
                summary.comm_rounds = last.comm_rounds;
                summary.vectors_per_machine = last.vectors_per_machine;
                summary.samples_per_machine = last.samples_per_machine;
                summary.final_objective = Some(last.erm_objective);
                summary.final_population_loss = last.population_loss;
            }
            if cfg.plots {
                plot_with_references(cfg, &world, &trace, &out)?;
            }
        }
        Err(e) => {
            if !trace_path.exists() {
                fs::write(&trace_path, crate::trace::TRACE_HEADER.join(",") + "\n")?;
            }
            summary.error = Some(e.to_string());
        }
    }
    fs::write(out.join("summary.txt"), summary.to_text())?;
    Ok(summary)
}

/// Local and Centralized population losses for reference lines.
pub fn reference_losses(cfg: &ExperimentConfig, world: &GeneratedWorld) -> Result<References> {
    let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
    let local = run_local_baseline(cfg.loss, &world.train, &world.dev, Some(&world.test), &cfg.lambda_grid)?;
    let central = match &cfg.reg {
        RegSpec::Tuned { eta_grid, tau_grid } => run_centralized_baseline(
            cfg.loss,
            &world.train,
            &world.dev,
            Some(&world.test),
            &graph,
            eta_grid,
            tau_grid,
        )?,
        _ => {
            let hp = resolve_hyperparams(cfg, world, &graph)?;
            run_centralized_fixed(&Problem::new(cfg.loss, &world.train, &graph, hp)?, Some(&world.test))?
        }
    };
    Ok(References {
        local: local.trace.last().and_then(|r| r.population_loss),
        centralized: central.trace.last().and_then(|r| r.population_loss),
    })
}

fn plot_with_references(cfg: &ExperimentConfig, world: &GeneratedWorld, trace: &RunTrace, out: &Path) -> Result<()> {
    let refs = reference_losses(cfg, world)?;
    let series = [Series {
        name: trace.algorithm.clone(),
        rows: &trace.rows,
    }];
    emit_plots(
        &series,
        &[PlotAxis::Rounds, PlotAxis::Samples, PlotAxis::Passes],
        refs,
        world.spec.n,
        out,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::TaskSpec;

    fn cfg(alg: AlgorithmId, dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            world: WorldSource::Generate(TaskSpec {
                d: 4,
                m: 6,
                clusters: 2,
                n: 25,
                dev_size: 40,
                test_size: 40,
                seed: 5,
                knn: Some(3),
                ..TaskSpec::default()
            }),
            algorithm: alg,
            reg: RegSpec::Direct { eta: 0.2, tau: 0.5 },
            rounds: 30,
            batch: 5,
            gamma_max: 2,
            out_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn every_algorithm_runs_and_is_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        for alg in AlgorithmId::ALL {
            let c = cfg(alg, &tmp.path().join(alg.as_str()));
            let s = run_experiment(&c).unwrap();
            assert!(s.ok(), "{}: {:?}", alg.as_str(), s.error);
            let first = fs::read(s.out_dir.join("trace.csv")).unwrap();
            let s2 = run_experiment(&c).unwrap();
            assert_eq!(first, fs::read(s2.out_dir.join("trace.csv")).unwrap(), "{}", alg.as_str());
        }
    }

    #[test]
    fn centralized_single_row_and_bsr_bol_agree() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg(AlgorithmId::Centralized, tmp.path());
        let world = prepare_world(&c).unwrap();
        let t = execute(&c, &world, None).unwrap();
        assert_eq!(t.rows.len(), 1);
        let mut c2 = cfg(AlgorithmId::Bsr, tmp.path());
        c2.rounds = 3000;
        let bsr = execute(&c2, &world, None).unwrap();
        c2.algorithm = AlgorithmId::Bol;
        let bol = execute(&c2, &world, None).unwrap();
        let f = t.rows[0].erm_objective;
        for tr in [&bsr, &bol] {
            assert!(((tr.final_objective().unwrap() - f) / f).abs() < 1e-6);
        }
    }

    #[test]
    fn solver_failure_is_summarized() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = cfg(AlgorithmId::Ssr, tmp.path());
        c.sample_budget = Some(7);
        let s = run_experiment(&c).unwrap();
        assert!(!s.ok());
        let text = fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
        assert!(text.contains("status = failed"));
        let partial = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
        assert!(partial.lines().count() >= 2, "{partial}");
    }

    #[test]
    fn rho_matches_graph_formula() {
        let world = prepare_world(&cfg(AlgorithmId::Bsr, Path::new("."))).unwrap();
        let g = TaskGraph::from_adjacency(world.adjacency.clone()).unwrap();
        let (b, s) = (1.3, 0.7);
        let kappa = 6.0 * b * b / (s * s);
        assert!((rho_from_kappa(&g, kappa) - g.rho(b, s).unwrap()).abs() < 1e-14);
    }
}
