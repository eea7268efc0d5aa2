//! Built-in verification: finite-difference gradient checks, loop oracles for every kernel,
//! and exact identities of the model, losses, optimizer, and metrics.

pub mod gradcheck;
pub mod identities;
pub mod oracle;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::model::specialization::LAPLACIAN_KERNEL;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    /// Probes, random cases, or evaluations behind the verdict.
    pub cases: usize,
    /// Worst error observed, in the check's own measure.
    pub worst: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn new(group: &'static str, name: &str, passed: bool, cases: usize, worst: f64, detail: String) -> Self {
        Self {
            group,
            name: name.to_string(),
            passed,
            cases,
            worst,
            detail,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    /// Stencil used by the boundary high-pass identity checks.
    pub laplacian_kernel: [f64; 9],
    pub seed: u64,
    /// Skip the whole-model gradient checks, the slowest part.
    pub skip_model: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            laplacian_kernel: LAPLACIAN_KERNEL,
            seed: 7,
            skip_model: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub results: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    pub fn group(&self, group: &str) -> impl Iterator<Item = &CheckResult> {
        let group = group.to_string();
        self.results.iter().filter(move |r| r.group == group)
    }

    /// One line per check, then a totals line.
    pub fn table(&self) -> String {
        let width = self.results.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for r in &self.results {
            let line = format!(
                "{} {:<10} {:<width$} cases {:>4} worst {:.3e} {}",
                if r.passed { "ok  " } else { "FAIL" },
                r.group,
                r.name,
                r.cases,
                r.worst,
                r.detail,
            );
            let _ = writeln!(out, "{}", line.trim_end());
        }
        let failed = self.failures().count();
        let _ = writeln!(
            out,
            "{} checks, {} failed, {:.1}s",
            self.results.len(),
            failed,
            self.elapsed.as_secs_f64()
        );
        out
    }
}

pub fn run_all(options: &Options) -> Report {
    let start = Instant::now();
    let seed = options.seed;
    let mut results = gradcheck::operation_checks(seed);
    results.extend(gradcheck::module_checks(seed));
    if !options.skip_model {
        results.extend(gradcheck::model_checks(seed));
    }
    results.extend(identities::operator_oracles(seed));
    results.extend(identities::structural_identities(seed, &options.laplacian_kernel));
    results.extend(identities::supervision_identities(seed));
    results.extend(identities::optimizer_arithmetic());
    results.extend(identities::metric_oracles(seed));
    Report {
        results,
        elapsed: start.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all(results: &[CheckResult]) {
        let bad: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(bad.is_empty(), "{bad:#?}");
    }

    #[test]
    fn operator_oracles_pass() {
        assert_all(&identities::operator_oracles(3));
    }

    #[test]
    fn identities_pass() {
        assert_all(&identities::structural_identities(3, &LAPLACIAN_KERNEL));
        assert_all(&identities::supervision_identities(3));
        assert_all(&identities::optimizer_arithmetic());
        assert_all(&identities::metric_oracles(3));
    }

    #[test]
    fn corrupted_laplacian_is_caught() {
        let mut kernel = LAPLACIAN_KERNEL;
        kernel[4] = -3.9;
        let bad = identities::structural_identities(3, &kernel);
        assert!(bad.iter().any(|r| r.name.contains("constant") && !r.passed));
    }

    #[test]
    fn operation_gradients_pass() {
        assert_all(&gradcheck::operation_checks(3));
    }
}
