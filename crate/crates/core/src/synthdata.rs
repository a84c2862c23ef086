//! Synthetic clustered-task benchmark: cluster references, perturbed true
//! predictors, correlated Gaussian features, noisy linear labels and a k-NN
//! relatedness graph over the true predictors.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{build_laplacian, knn_graph};
use crate::linalg::{read_matrix, write_matrix};
use crate::losses::LossKind;
use crate::stochastic::SampleSource;

/// World generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub d: usize,
    pub m: usize,
    pub clusters: usize,
    pub n: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Neighbors per task in the relatedness graph; `None` means
    /// `min(10, m − 1)`.
    pub knn: Option<usize>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            d: 100,
            m: 100,
            clusters: 10,
            n: 500,
            dev_size: 10_000,
            test_size: 10_000,
            noise_std: 3f64.sqrt(),
            seed: 0,
            knn: None,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.clusters == 0 || self.n == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(Error::Config("all world counts must be positive".into()));
        }
        if self.clusters > self.m {
            return Err(Error::Config(format!(
                "{} clusters for {} tasks",
                self.clusters, self.m
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("bad noise level {}", self.noise_std)));
        }
        if self.m < 2 {
            return Err(Error::Config("need at least two tasks for a graph".into()));
        }
        if self.knn_k() == 0 || self.knn_k() >= self.m {
            return Err(Error::Config(format!("k = {} neighbors for {} tasks", self.knn_k(), self.m)));
        }
        Ok(())
    }

    pub fn knn_k(&self) -> usize {
        self.knn.unwrap_or_else(|| 10.min(self.m.saturating_sub(1)))
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// Flat `key = value` text.
    pub fn to_config(&self) -> String {
        let mut s = format!(
            "d = {}\nm = {}\nclusters = {}\nn = {}\ndev_size = {}\ntest_size = {}\nnoise_std = {}\nseed = {}\n",
            self.d, self.m, self.clusters, self.n, self.dev_size, self.test_size, self.noise_std, self.seed
        );
        if let Some(k) = self.knn {
            s.push_str(&format!("knn = {k}\n"));
        }
        s
    }

    /// Reads the keys written by [`Self::to_config`]; missing keys keep their
    /// defaults.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut spec = Self::default();
        for (k, v) in pairs {
            let uint = || v.parse::<usize>().map_err(|e| Error::Config(format!("{k} = {v:?}: {e}")));
            match k {
                "d" => spec.d = uint()?,
                "m" => spec.m = uint()?,
                "clusters" | "c" => spec.clusters = uint()?,
                "n" => spec.n = uint()?,
                "dev_size" => spec.dev_size = uint()?,
                "test_size" => spec.test_size = uint()?,
                "knn" => spec.knn = Some(uint()?),
                "seed" => spec.seed = v.parse().map_err(|e| Error::Config(format!("seed = {v:?}: {e}")))?,
                "noise_std" => {
                    spec.noise_std = v.parse().map_err(|e| Error::Config(format!("noise_std = {v:?}: {e}")))?
                }
                "noise_var" => {
                    let var: f64 = v.parse().map_err(|e| Error::Config(format!("noise_var = {v:?}: {e}")))?;
                    spec.noise_std = var.sqrt();
                }
                other => return Err(Error::Config(format!("unknown world key {other:?}"))),
            }
        }
        Ok(spec)
    }
}

/// `Σ_ij = 2^{−|i−j|/3}`.
pub fn feature_covariance(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| 2f64.powf(-(i.abs_diff(j) as f64) / 3.0))
}

/// A generated benchmark.
#[derive(Debug, Clone)]
pub struct GeneratedWorld {
    pub spec: TaskSpec,
    /// `d × m`, column `i` is `w_i*`.
    pub true_predictors: DMatrix<f64>,
    /// `d × C` cluster references.
    pub cluster_refs: DMatrix<f64>,
    pub assignment: Vec<usize>,
    pub train: Vec<Dataset>,
    pub dev: Vec<Dataset>,
    pub test: Vec<Dataset>,
    /// Binary k-NN adjacency over the true predictors.
    pub adjacency: DMatrix<f64>,
    pub connected: bool,
    cov_factor: DMatrix<f64>,
}

// world randomness lives on streams above 2^32 so it never overlaps the
// per-machine sample streams (stream = machine index)
const WORLD_STREAM: u64 = 1 << 32;

fn world_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(WORLD_STREAM + stream);
    rng
}

fn covariance_factor(d: usize) -> Result<DMatrix<f64>> {
    Ok(feature_covariance(d)
        .cholesky()
        .ok_or_else(|| Error::Cholesky("feature covariance not positive definite".into()))?
        .l())
}

fn draw_dataset(
    w_star: &DVector<f64>,
    factor: &DMatrix<f64>,
    noise_std: f64,
    count: usize,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let d = w_star.len();
    let z = DMatrix::<f64>::from_fn(count, d, |_, _| StandardNormal.sample(rng));
    let x = z * factor.transpose();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Domain(e.to_string()))?;
    let y = &x * w_star + DVector::from_fn(count, |_, _| noise.sample(rng));
    Dataset::new(x, y, split)
}

/// Builds a world from its spec; bit-reproducible in the seed.
pub fn generate_world(spec: &TaskSpec) -> Result<GeneratedWorld> {
    spec.validate()?;
    let (d, m, c) = (spec.d, spec.m, spec.clusters);
    let mut rng = world_rng(spec.seed, 0);
    let refs = DMatrix::from_fn(d, c, |_, _| rng.random_range(-0.5..=0.5));
    let assignment: Vec<usize> = (0..m).map(|i| i % c).collect();
    let w_star = DMatrix::from_fn(d, m, |a, i| refs[(a, assignment[i])] + rng.random_range(-0.05..=0.05));
    let factor = covariance_factor(d)?;
    let mut train = Vec::with_capacity(m);
    let mut dev = Vec::with_capacity(m);
    let mut test = Vec::with_capacity(m);
    for i in 0..m {
        let w = w_star.column(i).into_owned();
        let mut r = world_rng(spec.seed, 1 + i as u64);
        train.push(draw_dataset(&w, &factor, spec.noise_std, spec.n, Split::Train, &mut r)?);
        dev.push(draw_dataset(&w, &factor, spec.noise_std, spec.dev_size, Split::Dev, &mut r)?);
        test.push(draw_dataset(&w, &factor, spec.noise_std, spec.test_size, Split::Test, &mut r)?);
    }
    let adjacency = knn_graph(&w_star, spec.knn_k())?;
    let connected = build_laplacian(adjacency.clone())?.is_connected();
    Ok(GeneratedWorld {
        spec: spec.clone(),
        true_predictors: w_star,
        cluster_refs: refs,
        assignment,
        train,
        dev,
        test,
        adjacency,
        connected,
        cov_factor: factor,
    })
}

impl SampleSource for GeneratedWorld {
    fn machines(&self) -> usize {
        self.spec.m
    }

    fn dim(&self) -> usize {
        self.spec.d
    }

    fn draw(&self, machine: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        if machine >= self.spec.m {
            return Err(Error::Dimension(format!("no machine {machine}")));
        }
        draw_dataset(
            &self.true_predictors.column(machine).into_owned(),
            &self.cov_factor,
            self.spec.noise_std,
            count,
            Split::Stream,
            rng,
        )
    }
}

/// Expected loss of the generating predictors: `noise_var/2` for the squared
/// loss.
pub fn oracle_population_loss_floor(world: &GeneratedWorld, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::Squared => Ok(world.spec.noise_var() / 2.0),
        LossKind::Logistic => Err(Error::Unsupported(
            "the noise floor is only known for the squared loss".into(),
        )),
    }
}

/// Closed-form squared-loss population objective
/// `(1/m)Σ_i ½(w_i − w_i*)ᵀΣ(w_i − w_i*) + noise_var/2`.
pub fn exact_population_loss(world: &GeneratedWorld, w: &DMatrix<f64>) -> Result<f64> {
    if w.shape() != world.true_predictors.shape() {
        return Err(Error::Dimension(format!(
            "predictors are {:?}, world has {:?}",
            w.shape(),
            world.true_predictors.shape()
        )));
    }
    let diff = world.cov_factor.transpose() * (w - &world.true_predictors);
    Ok(0.5 * diff.norm_squared() / world.spec.m as f64 + world.spec.noise_var() / 2.0)
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for j in 0..ds.len() {
        let mut rec: Vec<String> = ds.x().row(j).iter().map(|v| format!("{v}")).collect();
        rec.push(format!("{}", ds.y()[j]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len().saturating_sub(1);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for j in 0..d {
            xs.push(rec[j].parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
        }
        ys.push(rec[d].parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
    }
    let n = ys.len();
    Dataset::new(DMatrix::from_row_slice(n, d, &xs), DVector::from_vec(ys), split)
}

fn split_files(dir: &Path, split: Split, i: usize) -> std::path::PathBuf {
    dir.join(format!("{}_{i:04}.csv", split.as_str()))
}

impl GeneratedWorld {
    /// Writes `world.cfg`, predictor / reference / adjacency matrices and one
    /// CSV per machine per split.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("world.cfg"), self.spec.to_config())?;
        write_matrix(&dir.join("true_predictors.txt"), &self.true_predictors)?;
        write_matrix(&dir.join("cluster_refs.txt"), &self.cluster_refs)?;
        write_matrix(&dir.join("adjacency.txt"), &self.adjacency)?;
        for (split, sets) in [(Split::Train, &self.train), (Split::Dev, &self.dev), (Split::Test, &self.test)] {
            for (i, ds) in sets.iter().enumerate() {
                write_dataset(&split_files(dir, split, i), ds)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("world.cfg"))?;
        let pairs = crate::harness::config::parse_pairs(&text)?;
        let spec = TaskSpec::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        spec.validate()?;
        let true_predictors = read_matrix(&dir.join("true_predictors.txt"))?;
        let cluster_refs = read_matrix(&dir.join("cluster_refs.txt"))?;
        let adjacency = read_matrix(&dir.join("adjacency.txt"))?;
        if true_predictors.shape() != (spec.d, spec.m) || adjacency.shape() != (spec.m, spec.m) {
            return Err(Error::Parse(format!("{}: matrices disagree with world.cfg", dir.display())));
        }
        let load = |split| -> Result<Vec<Dataset>> {
            (0..spec.m).map(|i| read_dataset(&split_files(dir, split, i), split)).collect()
        };
        let connected = build_laplacian(adjacency.clone())?.is_connected();
        Ok(Self {
            assignment: (0..spec.m).map(|i| i % spec.clusters).collect(),
            train: load(Split::Train)?,
            dev: load(Split::Dev)?,
            test: load(Split::Test)?,
            cov_factor: covariance_factor(spec.d)?,
            spec,
            true_predictors,
            cluster_refs,
            adjacency,
            connected,
        })
    }

    /// Mean within-cluster and across-cluster predictor distances.
    pub fn cluster_distances(&self) -> (f64, f64) {
        let m = self.spec.m;
        let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..m {
            for k in (i + 1)..m {
                let dist = (self.true_predictors.column(i) - self.true_predictors.column(k)).norm();
                if self.assignment[i] == self.assignment[k] {
                    within += dist;
                    nw += 1;
                } else {
                    across += dist;
                    na += 1;
                }
            }
        }
        (within / nw.max(1) as f64, across / na.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(c: usize, m: usize) -> TaskSpec {
        TaskSpec {
            d: 6,
            m,
            clusters: c,
            n: 20,
            dev_size: 30,
            test_size: 30,
            seed: 3,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn own_cluster_per_task() {
        let w = generate_world(&small(8, 8)).unwrap();
        for i in 0..8 {
            let gap = (w.true_predictors.column(i) - w.cluster_refs.column(i)).amax();
            assert!(gap <= 0.05);
        }
    }

    #[test]
    fn single_cluster_is_tight() {
        let w = generate_world(&small(1, 9)).unwrap();
        for i in 0..9 {
            for k in 0..9 {
                assert!((w.true_predictors.column(i) - w.true_predictors.column(k)).amax() <= 0.1);
            }
        }
    }

    #[test]
    fn covariance_entry() {
        let s = feature_covariance(5);
        assert!((s[(0, 3)] - 0.5).abs() < 1e-15);
        assert_eq!(s[(2, 2)], 1.0);
    }

    #[test]
    fn reproducible_and_round_trips() {
        let spec = small(3, 7);
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        assert_eq!(a.true_predictors, b.true_predictors);
        assert_eq!(a.train[4].checksum(), b.train[4].checksum());
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let c = GeneratedWorld::load(dir.path()).unwrap();
        assert_eq!(c.spec, a.spec);
        assert_eq!(c.true_predictors, a.true_predictors);
        assert_eq!(c.adjacency, a.adjacency);
        for i in 0..7 {
            assert_eq!(c.test[i].checksum(), a.test[i].checksum());
        }
    }

    #[test]
    fn noise_floor() {
        let mut spec = small(2, 4);
        let w = generate_world(&spec).unwrap();
        assert!((oracle_population_loss_floor(&w, LossKind::Squared).unwrap() - 1.5).abs() < 1e-12);
        spec.noise_std = 0.0;
        let w0 = generate_world(&spec).unwrap();
        assert_eq!(oracle_population_loss_floor(&w0, LossKind::Squared).unwrap(), 0.0);
        assert!(oracle_population_loss_floor(&w0, LossKind::Logistic).is_err());
    }

    #[test]
    fn exact_population_loss_matches_test_estimate() {
        let mut spec = small(2, 4);
        spec.test_size = 20_000;
        let w = generate_world(&spec).unwrap();
        let probe = &w.true_predictors * 0.5;
        let exact = exact_population_loss(&w, &probe).unwrap();
        let est = crate::objective::population_loss_estimate(LossKind::Squared, &probe, &w.test).unwrap();
        assert!((exact - est.mean).abs() <= 3.0 * est.std_error, "{exact} vs {est:?}");
        let at_truth = exact_population_loss(&w, &w.true_predictors).unwrap();
        assert!((at_truth - 1.5).abs() < 1e-12);
    }

    #[test]
    fn empirical_covariance_matches() {
        let spec = TaskSpec {
            d: 5,
            m: 2,
            clusters: 1,
            n: 10,
            dev_size: 10,
            test_size: 100_000,
            seed: 8,
            knn: Some(1),
            ..TaskSpec::default()
        };
        let w = generate_world(&spec).unwrap();
        let x = w.test[0].x();
        let n = x.nrows() as f64;
        let sigma = feature_covariance(5);
        for a in 0..5 {
            for b in 0..5 {
                let prod: Vec<f64> = x.column(a).iter().zip(x.column(b).iter()).map(|(p, q)| p * q).collect();
                let (mean, var) = crate::objective::mean_and_var(&prod);
                let se = (var / n).sqrt();
                assert!((mean - sigma[(a, b)]).abs() <= 3.0 * se + 1e-3, "({a},{b}): {mean} vs {}", sigma[(a, b)]);
            }
        }
    }

    #[test]
    fn within_cluster_closer_than_across() {
        for c in [5, 10, 50] {
            let spec = TaskSpec {
                d: 8,
                m: 100,
                clusters: c,
                n: 5,
                dev_size: 5,
                test_size: 5,
                seed: c as u64,
                ..TaskSpec::default()
            };
            let w = generate_world(&spec).unwrap();
            let (within, across) = w.cluster_distances();
            assert!(within < across, "C = {c}: {within} vs {across}");
        }
    }

    #[test]
    fn default_spec_graph_is_connected() {
        let spec = TaskSpec {
            dev_size: 1,
            test_size: 1,
            n: 1,
            ..TaskSpec::default()
        };
        assert!(generate_world(&spec).unwrap().connected);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(5, 4);
        assert!(generate_world(&s).is_err());
        s.clusters = 2;
        s.n = 0;
        assert!(generate_world(&s).is_err());
    }

    #[test]
    fn fresh_draws_differ_from_training_data() {
        let w = generate_world(&small(2, 4)).unwrap();
        let mut s = crate::stochastic::SampleStream::fresh(&w, w.spec.seed);
        let batch = s.next_batch(20).unwrap();
        assert_ne!(batch[0].x().row(0), w.train[0].x().row(0));
    }
}
