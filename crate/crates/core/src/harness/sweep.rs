//! Sweeps: a base config with `sweep.<key> = v1; v2; ...` lines expands to a
//! directory of single-run configs, which run in parallel.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::config::{parse_pairs, ExperimentConfig};
use super::runner::{run_experiment, RunSummary};

/// Cartesian product of the sweep axes, first axis slowest. Each entry is the
/// run name and its config text; `output.dir` becomes `<out_root>/<name>`.
pub fn expand_sweep(text: &str, out_root: &Path) -> Result<Vec<(String, String)>> {
    let pairs = parse_pairs(text)?;
    let mut base = Vec::new();
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for (k, v) in pairs {
        if let Some(key) = k.strip_prefix("sweep.") {
            let values: Vec<String> = v.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if values.is_empty() {
                return Err(Error::Config(format!("{k}: no values")));
            }
            axes.push((key.to_string(), values));
        } else if k != "output.dir" {
            base.push((k, v));
        }
    }
    if axes.iter().any(|(k, _)| base.iter().any(|(b, _)| b == k)) {
        return Err(Error::Config("a swept key is also set in the base config".into()));
    }
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let name = format!("run_{idx:04}");
        let mut rest = idx;
        let mut chosen = Vec::with_capacity(axes.len());
        for (k, values) in axes.iter().rev() {
            chosen.push((k.clone(), values[rest % values.len()].clone()));
            rest /= values.len();
        }
        chosen.reverse();
        let mut text = String::new();
        for (k, v) in base.iter().chain(chosen.iter()) {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!("output.dir = {}\n", out_root.join(&name).display()));
        ExperimentConfig::parse(&text)?;
        out.push((name, text));
    }
    Ok(out)
}

/// Writes `<dir>/<name>.cfg` for every expanded run.
pub fn write_sweep(text: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    expand_sweep(text, dir)?
        .into_iter()
        .map(|(name, body)| {
            let p = dir.join(format!("{name}.cfg"));
            fs::write(&p, body)?;
            Ok(p)
        })
        .collect()
}

/// Config files of a sweep directory in name order.
pub fn sweep_configs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every config in `dir` in parallel; results keep name order.
pub fn run_sweep(dir: &Path, seed: Option<u64>) -> Result<Vec<RunSummary>> {
    let files = sweep_configs(dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no .cfg files in {}", dir.display())));
    }
    let cfgs: Vec<ExperimentConfig> = files
        .iter()
        .map(|p| ExperimentConfig::load(p).map(|c| match seed {
            Some(s) => c.with_seed(s),
            None => c,
        }))
        .collect::<Result<_>>()?;
    cfgs.par_iter().map(run_experiment).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "world.d = 3\nworld.m = 4\nworld.clusters = 2\nworld.n = 10\nworld.dev_size = 10\n\
                        world.test_size = 10\nworld.knn = 3\nhp.eta = 0.5\nhp.tau = 1\nsolver.rounds = 5\n";

    #[test]
    fn product_order() {
        let text = format!("{BASE}sweep.algorithm = bsr; bol\nsweep.solver.batch = 1;2;3\n");
        let runs = expand_sweep(&text, Path::new("/o")).unwrap();
        assert_eq!(runs.len(), 6);
        assert!(runs[0].1.contains("algorithm = bsr\nsolver.batch = 1\n"));
        assert!(runs[5].1.contains("algorithm = bol\nsolver.batch = 3\n"));
        assert!(runs[4].1.ends_with("output.dir = /o/run_0004\n"));
    }

    #[test]
    fn conflicting_key_rejected() {
        assert!(expand_sweep(&format!("{BASE}sweep.hp.eta = 1;2\n"), Path::new("o")).is_err());
        assert!(expand_sweep(&format!("{BASE}sweep.algorithm = bogus\n"), Path::new("o")).is_err());
    }

    #[test]
    fn runs_in_parallel_in_order() {
        let tmp = tempfile::tempdir().unwrap();
        let files = write_sweep(&format!("{BASE}sweep.algorithm = gd;bsr;bol\n"), tmp.path()).unwrap();
        assert_eq!(files.len(), 3);
        let out = run_sweep(tmp.path(), None).unwrap();
        let algs: Vec<_> = out.iter().map(|s| s.algorithm.as_str()).collect();
        assert_eq!(algs, ["gd", "bsr", "bol"]);
        assert!(out.iter().all(|s| s.ok()));
    }
}
