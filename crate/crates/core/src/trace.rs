//! Per-round run records and their CSV form.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::Result;
use crate::objective::{population_loss, Problem};

/// Exact trace CSV header.
pub const TRACE_HEADER: [&str; 8] = [
    "round",
    "comm_rounds",
    "vectors_per_machine",
    "samples_per_machine",
    "erm_objective",
    "population_loss",
    "dist_to_oracle",
    "wall_ms",
];

/// One row per communication round. Counters are cumulative.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub comm_rounds: usize,
    pub vectors_per_machine: f64,
    pub samples_per_machine: u64,
    pub erm_objective: f64,
    pub population_loss: Option<f64>,
    pub dist_to_oracle: Option<f64>,
    pub wall_ms: f64,
    /// Algorithm-specific columns, written to the sidecar file.
    pub extras: Vec<f64>,
}

/// Record of a whole run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: String,
    pub rows: Vec<TraceRow>,
    pub extra_columns: Vec<&'static str>,
    /// Final predictor matrix returned by the solver.
    pub final_w: DMatrix<f64>,
}

impl RunTrace {
    pub fn new(algorithm: &str, extra_columns: &[&'static str], init: DMatrix<f64>) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            rows: Vec::new(),
            extra_columns: extra_columns.to_vec(),
            final_w: init,
        }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Rounds actually executed.
    pub fn rounds(&self) -> usize {
        self.rows.last().map_or(0, |r| r.round)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().map(|r| r.erm_objective)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for row in &self.rows {
            w.write_record(main_fields(row))?;
            w.flush()?;
        }
        w.flush()?;
        Ok(())
    }

    /// `round` plus the algorithm-specific columns; nothing when there are none.
    pub fn write_extras_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round"];
        header.extend(self.extra_columns.iter().copied());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.round.to_string()];
            rec.extend(row.extras.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }
}

fn main_fields(row: &TraceRow) -> Vec<String> {
    vec![
        row.round.to_string(),
        row.comm_rounds.to_string(),
        fmt_f64(row.vectors_per_machine),
        row.samples_per_machine.to_string(),
        fmt_f64(row.erm_objective),
        row.population_loss.map(fmt_f64).unwrap_or_default(),
        row.dist_to_oracle.map(fmt_f64).unwrap_or_default(),
        fmt_f64(row.wall_ms),
    ]
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Parses a trace CSV written by [`RunTrace::write_csv`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(crate::error::Error::Parse(format!(
            "{}: unexpected trace header {:?}",
            path.display(),
            header
        )));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| crate::error::Error::Parse(format!("{s:?}: {e}")))
    };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() { Ok(None) } else { num(s).map(Some) }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(TraceRow {
            round: num(&rec[0])? as usize,
            comm_rounds: num(&rec[1])? as usize,
            vectors_per_machine: num(&rec[2])?,
            samples_per_machine: num(&rec[3])? as u64,
            erm_objective: num(&rec[4])?,
            population_loss: opt(&rec[5])?,
            dist_to_oracle: opt(&rec[6])?,
            wall_ms: num(&rec[7])?,
            extras: Vec::new(),
        });
    }
    Ok(rows)
}

/// Per-round communication and sample cost of an algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommProfile {
    /// Vectors in `R^d` sent per machine per round.
    pub vectors_per_round: f64,
    /// Samples each machine touches per round.
    pub samples_per_round: u64,
}

impl CommProfile {
    /// All-to-all exchange of one vector per machine.
    pub fn broadcast(m: usize, samples: u64) -> Self {
        Self {
            vectors_per_round: m as f64,
            samples_per_round: samples,
        }
    }

    /// Neighbor-only exchange: `|E|/m` vectors per machine.
    pub fn neighbor(edges: usize, m: usize, samples: u64) -> Self {
        Self {
            vectors_per_round: edges as f64 / m as f64,
            samples_per_round: samples,
        }
    }

    pub fn silent() -> Self {
        Self {
            vectors_per_round: 0.0,
            samples_per_round: 0,
        }
    }
}

/// Evaluation context shared by all solvers.
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Hard cap on rounds.
    pub max_rounds: usize,
    /// Stop once `(F − F*)/|F*| ≤ rel_gap`.
    pub target: Option<Target>,
    /// Test sets for the population-loss column.
    pub tests: Option<&'a [Dataset]>,
    /// Reference solution for the `dist_to_oracle` column.
    pub oracle: Option<&'a DMatrix<f64>>,
    /// Record real elapsed time; otherwise `wall_ms` is 0 so traces are
    /// byte-reproducible.
    pub record_wall_ms: bool,
    /// Starting point (zero when absent).
    pub init: Option<DMatrix<f64>>,
    /// Record one row every `record_every` rounds (0 or 1: every round). The
    /// final round is always recorded.
    pub record_every: usize,
    /// Mirror every row to this trace CSV as it is produced, flushed per row,
    /// so a failed run leaves its partial trace behind.
    pub live_csv: Option<std::path::PathBuf>,
}

impl<'a> RunOptions<'a> {
    pub fn rounds(max_rounds: usize) -> Self {
        Self {
            max_rounds,
            ..Self::default()
        }
    }

    pub fn with_target(mut self, objective: f64, rel_gap: f64) -> Self {
        self.target = Some(Target { objective, rel_gap });
        self
    }

    pub fn with_tests(mut self, tests: &'a [Dataset]) -> Self {
        self.tests = Some(tests);
        self
    }

    pub fn with_oracle(mut self, oracle: &'a DMatrix<f64>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn with_init(mut self, init: DMatrix<f64>) -> Self {
        self.init = Some(init);
        self
    }

    pub fn with_live_csv(mut self, path: &Path) -> Self {
        self.live_csv = Some(path.to_path_buf());
        self
    }
}

/// Relative-gap stopping rule against a known optimal value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub objective: f64,
    pub rel_gap: f64,
}

impl Target {
    pub fn relative_gap(&self, value: f64) -> f64 {
        (value - self.objective) / self.objective.abs().max(f64::MIN_POSITIVE)
    }

    pub fn reached(&self, value: f64) -> bool {
        self.relative_gap(value) <= self.rel_gap
    }
}

/// Accumulates rows for one run.
pub(crate) struct Recorder<'a> {
    problem: Problem<'a>,
    opts: &'a RunOptions<'a>,
    profile: CommProfile,
    start: Instant,
    comm: usize,
    vectors: f64,
    samples: u64,
    live: Option<csv::Writer<File>>,
    pub trace: RunTrace,
}

impl<'a> Recorder<'a> {
    pub fn new(
        algorithm: &str,
        problem: Problem<'a>,
        opts: &'a RunOptions<'a>,
        profile: CommProfile,
        extra_columns: &[&'static str],
    ) -> Self {
        let init = opts.init.clone().unwrap_or_else(|| problem.zeros());
        // best effort: the complete trace is written again by the caller
        let live = opts.live_csv.as_ref().and_then(|p| {
            let mut w = csv::Writer::from_path(p).ok()?;
            w.write_record(TRACE_HEADER).ok()?;
            w.flush().ok()?;
            Some(w)
        });
        Self {
            problem,
            opts,
            profile,
            start: Instant::now(),
            comm: 0,
            vectors: 0.0,
            samples: 0,
            live,
            trace: RunTrace::new(algorithm, extra_columns, init),
        }
    }

    pub fn init(&self) -> DMatrix<f64> {
        self.trace.final_w.clone()
    }

    /// Charges one round at the declared profile and records `w`. Returns
    /// `true` when the run should stop (target reached or round cap hit).
    pub fn round(&mut self, round: usize, w: &DMatrix<f64>, extras: Vec<f64>) -> Result<bool> {
        let samples = self.profile.samples_per_round;
        self.advance(round, 1, samples, w, extras)
    }

    /// Charges `comm_rounds` communication rounds at the declared profile and
    /// `samples` samples per machine, then records `w` as of `round`.
    pub fn advance(
        &mut self,
        round: usize,
        comm_rounds: usize,
        samples: u64,
        w: &DMatrix<f64>,
        extras: Vec<f64>,
    ) -> Result<bool> {
        self.comm += comm_rounds;
        // recomputed, not accumulated, so counters match t·profile exactly
        self.vectors = self.profile.vectors_per_round * self.comm as f64;
        self.samples += samples;
        self.trace.final_w = w.clone();
        let last = round >= self.opts.max_rounds;
        let every = self.opts.record_every.max(1);
        let objective = self.problem.objective(w)?;
        let reached = self.opts.target.is_some_and(|t| t.reached(objective));
        if round.is_multiple_of(every) || last || reached {
            self.push(round, objective, w, extras)?;
        }
        Ok(last || reached)
    }

    /// Records a row without charging anything (initial point).
    pub fn record(&mut self, round: usize, w: &DMatrix<f64>, extras: Vec<f64>) -> Result<()> {
        self.trace.final_w = w.clone();
        let objective = self.problem.objective(w)?;
        self.push(round, objective, w, extras)
    }

    fn push(&mut self, round: usize, objective: f64, w: &DMatrix<f64>, extras: Vec<f64>) -> Result<()> {
        let population = match self.opts.tests {
            Some(t) => Some(population_loss(self.problem.loss, w, t)?),
            None => None,
        };
        let dist = self.opts.oracle.map(|o| (w - o).norm());
        let wall_ms = if self.opts.record_wall_ms {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let row = TraceRow {
            round,
            comm_rounds: self.comm,
            vectors_per_machine: self.vectors,
            samples_per_machine: self.samples,
            erm_objective: objective,
            population_loss: population,
            dist_to_oracle: dist,
            wall_ms,
            extras,
        };
        if let Some(live) = self.live.as_mut() {
            if live.write_record(main_fields(&row)).and_then(|_| Ok(live.flush()?)).is_err() {
                self.live = None;
            }
        }
        self.trace.rows.push(row);
        Ok(())
    }

    pub fn finish(self) -> RunTrace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize) -> TraceRow {
        TraceRow {
            round,
            comm_rounds: round,
            vectors_per_machine: 2.5 * round as f64,
            samples_per_machine: 10 * round as u64,
            erm_objective: 1.0 / (round as f64 + 1.0),
            population_loss: Some(0.25),
            dist_to_oracle: None,
            wall_ms: 0.0,
            extras: vec![round as f64],
        }
    }

    #[test]
    fn csv_header_and_empty_oracle_field() {
        let mut t = RunTrace::new("bsr", &["extra"], DMatrix::zeros(1, 1));
        t.rows = vec![row(0), row(1)];
        let text = t.to_csv_string().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "0,0,0,0,1,0.25,,0");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = RunTrace::new("bol", &[], DMatrix::zeros(1, 1));
        t.rows = (0..5).map(row).collect();
        let path = dir.path().join("trace.csv");
        t.save(&path).unwrap();
        let back = read_trace_csv(&path).unwrap();
        for (a, b) in back.iter().zip(&t.rows) {
            assert_eq!(a.erm_objective, b.erm_objective);
            assert_eq!(a.vectors_per_machine, b.vectors_per_machine);
            assert_eq!(a.dist_to_oracle, None);
        }
    }

    #[test]
    fn target_gap() {
        let t = Target { objective: 2.0, rel_gap: 1e-6 };
        assert!(t.reached(2.0 + 1e-6));
        assert!(!t.reached(2.0 + 1e-5));
    }
}
