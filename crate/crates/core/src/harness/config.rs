//! Flat `key = value` config files with dotted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synthdata::TaskSpec;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Duplicate keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Algorithm ids accepted by `algorithm = ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlgorithmId {
    Local,
    Centralized,
    Gd,
    Bsr,
    Bol,
    BsrAcc,
    BolAcc,
    Ssr,
    Acsa,
    Sol,
    Mbprox,
    BolDelayed,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 12] = [
        AlgorithmId::Local,
        AlgorithmId::Centralized,
        AlgorithmId::Gd,
        AlgorithmId::Bsr,
        AlgorithmId::Bol,
        AlgorithmId::BsrAcc,
        AlgorithmId::BolAcc,
        AlgorithmId::Ssr,
        AlgorithmId::Acsa,
        AlgorithmId::Sol,
        AlgorithmId::Mbprox,
        AlgorithmId::BolDelayed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmId::Local => "local",
            AlgorithmId::Centralized => "centralized",
            AlgorithmId::Gd => "gd",
            AlgorithmId::Bsr => "bsr",
            AlgorithmId::Bol => "bol",
            AlgorithmId::BsrAcc => "bsr_acc",
            AlgorithmId::BolAcc => "bol_acc",
            AlgorithmId::Ssr => "ssr",
            AlgorithmId::Acsa => "acsa",
            AlgorithmId::Sol => "sol",
            AlgorithmId::Mbprox => "mbprox",
            AlgorithmId::BolDelayed => "bol_delayed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, AlgorithmId::Ssr | AlgorithmId::Acsa | AlgorithmId::Sol | AlgorithmId::Mbprox)
    }
}

/// Where a run gets its world.
#[derive(Debug, Clone, PartialEq)]
pub enum WorldSource {
    Generate(TaskSpec),
    Load(PathBuf),
}

/// How (η, τ) are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RegSpec {
    Direct { eta: f64, tau: f64 },
    /// Derived from the norm and dissimilarity bounds.
    Bounds { norm_bound: f64, dissimilarity_bound: f64 },
    /// Grid search on the dev set with the centralized solver.
    Tuned { eta_grid: Vec<f64>, tau_grid: Vec<f64> },
}

/// One run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldSource,
    pub algorithm: AlgorithmId,
    pub loss: crate::losses::LossKind,
    pub reg: RegSpec,
    pub lambda_grid: Vec<f64>,
    pub alpha: Option<f64>,
    pub batch: usize,
    pub rounds: usize,
    /// Fresh-sample budget per machine for stochastic runs; `None` means
    /// `batch * rounds`.
    pub sample_budget: Option<u64>,
    pub fresh: bool,
    pub gamma_max: usize,
    pub delay_mode: crate::delay::DelayMode,
    pub prox_tol: f64,
    pub oracle_tol: f64,
    /// AC-SA gradient noise level; derived from the loss constants when absent.
    pub sigma: Option<f64>,
    /// Dev-set grid over `sigma` for AC-SA.
    pub sigma_grid: Option<Vec<f64>>,
    /// Norm bound `B` for the stochastic stepsizes; derived from the
    /// centralized solution when absent.
    pub norm_bound: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub record_every: usize,
    pub record_wall_ms: bool,
    pub plots: bool,
}

fn default_grid() -> Vec<f64> {
    (-4..=3).map(|e| 10f64.powi(e)).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldSource::Generate(TaskSpec::default()),
            algorithm: AlgorithmId::Bsr,
            loss: crate::losses::LossKind::Squared,
            reg: RegSpec::Direct { eta: 0.1, tau: 1.0 },
            lambda_grid: default_grid(),
            alpha: None,
            batch: 10,
            rounds: 100,
            sample_budget: None,
            fresh: true,
            gamma_max: 0,
            delay_mode: crate::delay::DelayMode::UniformRandom,
            prox_tol: 1e-12,
            oracle_tol: 1e-10,
            sigma: None,
            sigma_grid: None,
            norm_bound: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            record_every: 1,
            record_wall_ms: false,
            plots: false,
        }
    }
}

fn parse_f64(k: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|e| Error::Config(format!("{k} = {v:?}: {e}")))
}

fn parse_usize(k: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|e| Error::Config(format!("{k} = {v:?}: {e}")))
}

fn parse_bool(k: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{k} = {v:?}: expected a boolean"))),
    }
}

/// Comma-separated list of reals.
pub fn parse_grid(k: &str, v: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(k, s))
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Config(format!("{k}: empty grid")));
    }
    Ok(grid)
}

fn format_grid(g: &[f64]) -> String {
    g.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = Self::default();
        let mut world_pairs: Vec<(&str, &str)> = Vec::new();
        let mut world_path = None;
        let (mut eta, mut tau, mut b_bound, mut s_bound) = (None, None, None, None);
        let (mut eta_grid, mut tau_grid) = (None, None);
        for (k, v) in &pairs {
            let (k, v) = (k.as_str(), v.as_str());
            if let Some(wk) = k.strip_prefix("world.") {
                if wk == "path" {
                    world_path = Some(PathBuf::from(v));
                } else {
                    world_pairs.push((wk, v));
                }
                continue;
            }
            match k {
                "algorithm" => cfg.algorithm = AlgorithmId::parse(v)?,
                "loss" => cfg.loss = crate::losses::LossKind::parse(v)?,
                "hp.eta" => eta = Some(parse_f64(k, v)?),
                "hp.tau" => tau = Some(parse_f64(k, v)?),
                "hp.norm_bound" => b_bound = Some(parse_f64(k, v)?),
                "hp.dissimilarity_bound" => s_bound = Some(parse_f64(k, v)?),
                "tune.eta_grid" => eta_grid = Some(parse_grid(k, v)?),
                "tune.tau_grid" => tau_grid = Some(parse_grid(k, v)?),
                "tune.lambda_grid" => cfg.lambda_grid = parse_grid(k, v)?,
                "solver.alpha" => cfg.alpha = Some(parse_f64(k, v)?),
                "solver.batch" => cfg.batch = parse_usize(k, v)?,
                "solver.rounds" => cfg.rounds = parse_usize(k, v)?,
                "solver.sample_budget" => cfg.sample_budget = Some(parse_usize(k, v)? as u64),
                "solver.fresh" => cfg.fresh = parse_bool(k, v)?,
                "solver.gamma_max" => cfg.gamma_max = parse_usize(k, v)?,
                "solver.delay_mode" => cfg.delay_mode = crate::delay::DelayMode::parse(v)?,
                "solver.prox_tol" => cfg.prox_tol = parse_f64(k, v)?,
                "solver.oracle_tol" => cfg.oracle_tol = parse_f64(k, v)?,
                "solver.sigma" => cfg.sigma = Some(parse_f64(k, v)?),
                "solver.norm_bound" => cfg.norm_bound = Some(parse_f64(k, v)?),
                "tune.sigma_grid" => cfg.sigma_grid = Some(parse_grid(k, v)?),
                "seed" => cfg.seed = v.parse().map_err(|e| Error::Config(format!("seed = {v:?}: {e}")))?,
                "output.dir" => cfg.out_dir = PathBuf::from(v),
                "output.record_every" => cfg.record_every = parse_usize(k, v)?,
                "output.wall_ms" => cfg.record_wall_ms = parse_bool(k, v)?,
                "output.plots" => cfg.plots = parse_bool(k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.world = match world_path {
            Some(p) if world_pairs.is_empty() => WorldSource::Load(p),
            Some(_) => return Err(Error::Config("world.path excludes inline world keys".into())),
            None => WorldSource::Generate(TaskSpec::from_pairs(world_pairs)?),
        };
        cfg.reg = match (eta, tau, b_bound, s_bound, eta_grid, tau_grid) {
            (Some(eta), Some(tau), None, None, None, None) => RegSpec::Direct { eta, tau },
            (None, None, Some(b), Some(s), None, None) => RegSpec::Bounds {
                norm_bound: b,
                dissimilarity_bound: s,
            },
            (None, None, None, None, Some(e), Some(t)) => RegSpec::Tuned {
                eta_grid: e,
                tau_grid: t,
            },
            (None, None, None, None, None, None) => cfg.reg,
            _ => {
                return Err(Error::Config(
                    "give exactly one of hp.eta+hp.tau, hp.norm_bound+hp.dissimilarity_bound, tune.eta_grid+tune.tau_grid"
                        .into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the run seed and, for generated worlds, the world seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let WorldSource::Generate(spec) = &mut self.world {
            spec.seed = seed;
        }
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let WorldSource::Generate(spec) = &self.world {
            spec.validate()?;
        }
        if self.rounds == 0 || self.batch == 0 || self.record_every == 0 {
            return Err(Error::Config("rounds, batch and record_every must be positive".into()));
        }
        if self.sigma.is_some() && self.sigma_grid.is_some() {
            return Err(Error::Config("solver.sigma excludes tune.sigma_grid".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("empty lambda grid".into()));
        }
        match &self.reg {
            RegSpec::Direct { eta, tau } if !(*eta > 0.0) || !(*tau >= 0.0) => {
                Err(Error::Config(format!("need eta > 0 and tau >= 0, got {eta}, {tau}")))
            }
            RegSpec::Bounds {
                norm_bound,
                dissimilarity_bound,
            } if !(*norm_bound > 0.0) || !(*dissimilarity_bound >= 0.0) => Err(Error::Config(format!(
                "need B > 0 and S >= 0, got {norm_bound}, {dissimilarity_bound}"
            ))),
            RegSpec::Tuned { eta_grid, tau_grid } if eta_grid.is_empty() || tau_grid.is_empty() => {
                Err(Error::Config("empty tuning grid".into()))
            }
            _ => Ok(()),
        }
    }

    /// Inverse of [`Self::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.world {
            WorldSource::Load(p) => s.push_str(&format!("world.path = {}\n", p.display())),
            WorldSource::Generate(spec) => {
                for line in spec.to_config().lines() {
                    s.push_str(&format!("world.{line}\n"));
                }
            }
        }
        s.push_str(&format!("algorithm = {}\nloss = {}\n", self.algorithm.as_str(), self.loss.as_str()));
        match &self.reg {
            RegSpec::Direct { eta, tau } => s.push_str(&format!("hp.eta = {eta}\nhp.tau = {tau}\n")),
            RegSpec::Bounds {
                norm_bound,
                dissimilarity_bound,
            } => s.push_str(&format!(
                "hp.norm_bound = {norm_bound}\nhp.dissimilarity_bound = {dissimilarity_bound}\n"
            )),
            RegSpec::Tuned { eta_grid, tau_grid } => s.push_str(&format!(
                "tune.eta_grid = {}\ntune.tau_grid = {}\n",
                format_grid(eta_grid),
                format_grid(tau_grid)
            )),
        }
        s.push_str(&format!("tune.lambda_grid = {}\n", format_grid(&self.lambda_grid)));
        if let Some(a) = self.alpha {
            s.push_str(&format!("solver.alpha = {a}\n"));
        }
        s.push_str(&format!(
            "solver.batch = {}\nsolver.rounds = {}\nsolver.fresh = {}\nsolver.gamma_max = {}\nsolver.delay_mode = {}\nsolver.prox_tol = {}\nsolver.oracle_tol = {}\n",
            self.batch,
            self.rounds,
            self.fresh,
            self.gamma_max,
            self.delay_mode.as_str(),
            self.prox_tol,
            self.oracle_tol
        ));
        if let Some(b) = self.sample_budget {
            s.push_str(&format!("solver.sample_budget = {b}\n"));
        }
        if let Some(v) = self.sigma {
            s.push_str(&format!("solver.sigma = {v}\n"));
        }
        if let Some(v) = self.norm_bound {
            s.push_str(&format!("solver.norm_bound = {v}\n"));
        }
        if let Some(g) = &self.sigma_grid {
            s.push_str(&format!("tune.sigma_grid = {}\n", format_grid(g)));
        }
        s.push_str(&format!(
            "seed = {}\noutput.dir = {}\noutput.record_every = {}\noutput.wall_ms = {}\noutput.plots = {}\n",
            self.seed,
            self.out_dir.display(),
            self.record_every,
            self.record_wall_ms,
            self.plots
        ));
        s
    }

    /// Key-value view used by the sweep expander.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        parse_pairs(&self.to_text())
            .expect("to_text emits valid pairs")
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_with_comments() {
        let p = parse_pairs("# header\n a.b = 3 # trailing\n\nc=x\n").unwrap();
        assert_eq!(p, vec![("a.b".into(), "3".into()), ("c".into(), "x".into())]);
        assert!(parse_pairs("novalue\n").is_err());
        assert!(parse_pairs("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::parse(
            "world.d = 5\nworld.m = 6\nworld.clusters = 2\nworld.n = 10\nworld.dev_size = 20\nworld.test_size = 20\n\
             algorithm = acsa\nhp.norm_bound = 2\nhp.dissimilarity_bound = 0.5\nsolver.batch = 4\ntune.sigma_grid = 0.5,1\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.algorithm, AlgorithmId::Acsa);
        assert_eq!(cfg.seed, 9);
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_mixed_reg_and_unknown_keys() {
        assert!(ExperimentConfig::parse("hp.eta = 1\nhp.norm_bound = 1\n").is_err());
        assert!(ExperimentConfig::parse("bogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("algorithm = sgd\n").is_err());
        assert!(ExperimentConfig::parse("tune.eta_grid = \ntune.tau_grid = 1\n").is_err());
    }

    #[test]
    fn every_algorithm_id_parses() {
        for a in AlgorithmId::ALL {
            assert_eq!(AlgorithmId::parse(a.as_str()).unwrap(), a);
        }
    }
}
