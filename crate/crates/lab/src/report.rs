//! Suite summaries: named checks with the measured value and the bound it was held to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value <= bound`
    AtMost,
    /// `value >= bound`
    AtLeast,
    /// `value > bound`
    Above,
    /// `value == bound` (counts)
    Equals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, bound: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => value <= bound,
            Relation::AtLeast => value >= bound,
            Relation::Above => value > bound,
            Relation::Equals => value == bound,
        };
        Check {
            name: name.into(),
            pass,
            value,
            relation,
            bound,
            detail: None,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value, Relation::AtMost, bound)
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value, Relation::AtLeast, bound)
    }

    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value, Relation::Above, bound)
    }

    pub fn count_zero(name: impl Into<String>, count: usize) -> Self {
        Self::new(name, count as f64, Relation::Equals, 0.0)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
            Relation::Equals => "==",
        };
        write!(
            f,
            "{} {} {:.6e} {} {:.6e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            op,
            self.bound
        )?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub pass: bool,
    /// Additional measured quantities that are reported but not gated.
    pub residuals: BTreeMap<String, f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl SuiteReport {
    pub fn new(suite: &str, seed: u64, config_hash: String) -> Self {
        SuiteReport {
            suite: suite.into(),
            checks: Vec::new(),
            pass: true,
            residuals: BTreeMap::new(),
            seed,
            config_hash,
        }
    }

    pub fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn note(&mut self, name: impl Into<String>, value: f64) {
        self.residuals.insert(name.into(), value);
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Checks whose name starts with `prefix`.
    pub fn checks_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Check> + 'a {
        self.checks.iter().filter(move |c| c.name.starts_with(prefix))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| LabError::io(path, e))
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{}: {} checks, {} failed, {}",
            self.suite,
            self.checks.len(),
            failed,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Check::at_most("a", 1e-13, 1e-12).pass);
        assert!(!Check::at_most("a", f64::NAN, 1e-12).pass);
        assert!(!Check::above("b", 0.0, 0.0).pass);
        assert!(Check::at_least("c", 2.0, 2.0).pass);
        assert!(Check::count_zero("d", 0).pass);
        assert!(!Check::count_zero("d", 3).pass);
    }

    #[test]
    fn a_failed_check_fails_the_suite() {
        let mut r = SuiteReport::new("s", 1, "h".into());
        r.push(Check::at_most("ok", 0.0, 1.0));
        assert!(r.pass);
        r.push(Check::at_most("bad", 2.0, 1.0));
        assert!(!r.pass);
        assert_eq!(r.failures().count(), 1);
        assert!(r.to_string().contains("FAIL bad"));
    }
}
