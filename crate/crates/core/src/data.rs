//! Per-machine sample sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One labelled example `z = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: DVector<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Origin of a dataset. Tuning code checks it so test data never leaks
/// into model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
    /// A minibatch drawn from a sample stream.
    Stream,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Stream => "stream",
        }
    }
}

/// A machine's samples stored row-wise (`n × d` features), together with the
/// moment statistics the squared loss needs.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    split: Split,
    second_moment: DMatrix<f64>,
    cross_moment: DVector<f64>,
    mean_y_sq: f64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, split: Split) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty(format!("{} dataset has no samples", split.as_str())));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!(
                "{n} feature rows but {} labels",
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        let inv_n = 1.0 / n as f64;
        let second_moment = x.tr_mul(&x) * inv_n;
        let cross_moment = x.tr_mul(&y) * inv_n;
        let mean_y_sq = y.norm_squared() * inv_n;
        Ok(Self {
            x,
            y,
            split,
            second_moment,
            cross_moment,
            mean_y_sq,
        })
    }

    pub fn from_samples(samples: &[Sample], split: Split) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Empty(format!("{} dataset has no samples", split.as_str())))?;
        let d = first.x.len();
        if let Some(bad) = samples.iter().find(|s| s.x.len() != d) {
            return Err(Error::Dimension(format!(
                "sample of dimension {} in a dimension-{d} dataset",
                bad.x.len()
            )));
        }
        let x = DMatrix::from_fn(samples.len(), d, |j, c| samples[j].x[c]);
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.y));
        Self::new(x, y, split)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Features, one sample per row.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample(&self, j: usize) -> Sample {
        Sample::new(self.x.row(j).transpose(), self.y[j])
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|j| self.sample(j))
    }

    /// `(1/n) Σ x xᵀ`.
    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second_moment
    }

    /// `(1/n) Σ y x`.
    pub fn cross_moment(&self) -> &DVector<f64> {
        &self.cross_moment
    }

    /// `(1/n) Σ y²`.
    pub fn mean_y_sq(&self) -> f64 {
        self.mean_y_sq
    }

    /// Order-sensitive FNV-1a hash of the raw bits; lets tests prove a solver
    /// only touched the data it was given.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.x.iter().chain(self.y.iter()) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Checks that `data` holds one dataset per machine, all of dimension `d`.
pub(crate) fn check_machines(data: &[Dataset], m: usize, d: usize) -> Result<()> {
    if data.len() != m {
        return Err(Error::Dimension(format!(
            "{} datasets for {m} machines",
            data.len()
        )));
    }
    if let Some((i, ds)) = data.iter().enumerate().find(|(_, ds)| ds.dim() != d) {
        return Err(Error::Dimension(format!(
            "machine {i} has dimension {} but predictors have {d}",
            ds.dim()
        )));
    }
    Ok(())
}
