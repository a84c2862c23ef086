//! Named pass/fail checks with effect sizes, written as
//! `check,observed,bound_or_band,margin,pass`.

use std::fs::File;
use std::path::Path;

use crate::error::Result;

pub const REPORT_HEADER: [&str; 5] = ["check", "observed", "bound_or_band", "margin", "pass"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub bound_or_band: String,
    /// Distance to the nearest failing value; negative on failure.
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `observed ≤ bound`.
    pub fn upper(name: &str, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            bound_or_band: format!("<= {bound:e}"),
            margin: bound - observed,
            pass: observed <= bound,
        }
    }

    /// Passes when `observed ≥ bound`.
    pub fn lower(name: &str, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            bound_or_band: format!(">= {bound:e}"),
            margin: observed - bound,
            pass: observed >= bound,
        }
    }

    /// Passes when `lo ≤ observed ≤ hi`.
    pub fn band(name: &str, observed: f64, lo: f64, hi: f64) -> Self {
        let margin = (observed - lo).min(hi - observed);
        Self {
            name: name.into(),
            observed,
            bound_or_band: format!("[{lo}, {hi}]"),
            margin,
            pass: margin >= 0.0,
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            observed: if ok { 1.0 } else { 0.0 },
            bound_or_band: "== 1".into(),
            margin: if ok { 0.0 } else { -1.0 },
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(suite: &str) -> Self {
        Self {
            suite: suite.into(),
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn all_pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for c in &self.checks {
            w.write_record([
                c.name.clone(),
                format!("{:e}", c.observed),
                c.bound_or_band.clone(),
                format!("{:e}", c.margin),
                c.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8_lossy(&buf).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins_and_csv() {
        let mut r = Report::new("x");
        r.push(Check::upper("a", 1.0, 2.0));
        r.push(Check::band("b", 0.5, 0.4, 0.55));
        assert!(r.all_pass());
        r.push(Check::lower("c", 1.0, 2.0));
        assert!(!r.all_pass());
        assert_eq!(r.failures().count(), 1);
        let text = r.to_csv();
        assert!(text.starts_with("check,observed,bound_or_band,margin,pass\n"));
        assert!(text.contains("c,1e0,>= 2e0,-1e0,false"));
        assert!(Report::new("empty").checks.is_empty() && !Report::new("e").all_pass());
    }
}
