//! Randomized numeric identity checking and verification reports.
//!
//! Identities between smooth functions are checked by evaluating both sides
//! at seeded random points of a [`SampleDomain`]. Deviations are reported
//! both absolutely and scaled by `max(1, |lhs|, |rhs|)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{Binding, Expr, VarRef};
use crate::linalg::{rank_from_singular_values, singular_values, SymbolicJacobian, RANK_TOLERANCE};
use crate::Error;

pub const DEFAULT_SEED: u64 = 0x5eed_f1a7;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Seeded generator shared by every sampling routine.
pub type SampleRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Keep only samples where `|expr| > bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct Exclusion {
    pub expr: Expr,
    pub bound: f64,
}

impl Exclusion {
    pub fn new(expr: Expr, bound: f64) -> Self {
        Exclusion { expr, bound }
    }

    /// True when the sample is admissible. Evaluation failures reject.
    pub fn admits(&self, b: &Binding) -> bool {
        matches!(self.expr.evaluate(b), Ok(v) if v.abs() > self.bound)
    }
}

/// Where random samples are drawn from.
#[derive(Clone, Debug)]
pub struct SampleDomain {
    /// Inclusive integer range for `k`.
    pub k_range: (i64, i64),
    /// Box used for variables without an explicit entry in `boxes`.
    pub default_box: (f64, f64),
    pub boxes: BTreeMap<VarRef, (f64, f64)>,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub exclusions: Vec<Exclusion>,
    /// Draw budget per requested sample before giving up.
    pub attempts_per_sample: usize,
}

impl Default for SampleDomain {
    fn default() -> Self {
        SampleDomain {
            k_range: (-10, 10),
            default_box: (-2.0, 2.0),
            boxes: BTreeMap::new(),
            samples: 100,
            seed: DEFAULT_SEED,
            tolerance: DEFAULT_TOLERANCE,
            exclusions: Vec::new(),
            attempts_per_sample: 50,
        }
    }
}

impl SampleDomain {
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_k_range(mut self, lo: i64, hi: i64) -> Self {
        self.k_range = (lo, hi);
        self
    }

    pub fn with_box(mut self, lo: f64, hi: f64) -> Self {
        self.default_box = (lo, hi);
        self
    }

    pub fn with_exclusion(mut self, exclusion: Exclusion) -> Self {
        self.exclusions.push(exclusion);
        self
    }

    fn range_for(&self, v: &VarRef) -> (f64, f64) {
        self.boxes.get(v).copied().unwrap_or(self.default_box)
    }

    fn draw(&self, rng: &mut SampleRng, vars: &BTreeSet<VarRef>) -> Binding {
        let (klo, khi) = self.k_range;
        let mut b = Binding::new(if klo >= khi { klo } else { rng.gen_range(klo..=khi) });
        for v in vars {
            let (lo, hi) = self.range_for(v);
            let value = if lo < hi { rng.gen_range(lo..hi) } else { lo };
            b.set(*v, value);
        }
        b
    }

    /// Draws admissible bindings for `vars` (plus the variables of the
    /// exclusions) and hands them to `visit`. Returns the number of rejected
    /// draws. Fails with [`Error::AllSamplesSingular`] when no draw is
    /// admissible.
    pub fn for_each_sample(
        &self,
        vars: &BTreeSet<VarRef>,
        mut visit: impl FnMut(&Binding),
    ) -> Result<usize, Error> {
        let mut all = vars.clone();
        for ex in &self.exclusions {
            all.extend(ex.expr.variables());
        }
        let mut rng = rng_from_seed(self.seed);
        let budget = self.samples.saturating_mul(self.attempts_per_sample.max(1));
        let mut accepted = 0;
        let mut rejected = 0;
        for _ in 0..budget {
            if accepted == self.samples {
                break;
            }
            let b = self.draw(&mut rng, &all);
            if self.exclusions.iter().all(|ex| ex.admits(&b)) {
                accepted += 1;
                visit(&b);
            } else {
                rejected += 1;
            }
        }
        if accepted == 0 && self.samples > 0 {
            return Err(Error::AllSamplesSingular);
        }
        Ok(rejected)
    }
}

/// Rank observed at one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RankSample {
    pub label: String,
    pub k: i64,
    pub rank: usize,
    pub expected: usize,
    pub singular_values: Vec<f64>,
}

/// Outcome of a numeric check.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub seed: Option<u64>,
    pub tolerance: f64,
    /// Samples at which both sides were evaluated.
    pub samples: usize,
    /// Draws rejected by exclusions or singular evaluations.
    pub skipped: usize,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    pub ranks: Vec<RankSample>,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> Self {
        VerificationReport {
            check: check.into(),
            passed: true,
            seed: None,
            tolerance,
            samples: 0,
            skipped: 0,
            max_abs_deviation: 0.0,
            max_rel_deviation: 0.0,
            ranks: Vec::new(),
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Records one comparison; returns its scaled deviation.
    pub fn record(&mut self, lhs: f64, rhs: f64) -> f64 {
        let abs = (lhs - rhs).abs();
        let rel = abs / 1f64.max(lhs.abs()).max(rhs.abs());
        let (abs, rel) = if abs.is_nan() { (f64::INFINITY, f64::INFINITY) } else { (abs, rel) };
        self.max_abs_deviation = self.max_abs_deviation.max(abs);
        self.max_rel_deviation = self.max_rel_deviation.max(rel);
        rel
    }

    pub fn fail(&mut self, message: impl Into<String>) {
        self.passed = false;
        if self.failures.len() < 20 {
            self.failures.push(message.into());
        }
    }

    /// Sets the verdict from the deviation and tolerance (keeps earlier
    /// failures).
    pub fn conclude(&mut self) {
        if self.samples == 0 || self.max_rel_deviation >= self.tolerance {
            self.passed = false;
        }
    }

    /// Combines several reports into one: passes iff all pass.
    pub fn merge(check: impl Into<String>, parts: &[VerificationReport]) -> Self {
        let tolerance = parts.iter().map(|r| r.tolerance).fold(0.0, f64::max);
        let mut out = VerificationReport::new(check, tolerance);
        out.seed = parts.iter().find_map(|r| r.seed);
        for r in parts {
            out.passed &= r.passed;
            out.samples += r.samples;
            out.skipped += r.skipped;
            out.max_abs_deviation = out.max_abs_deviation.max(r.max_abs_deviation);
            out.max_rel_deviation = out.max_rel_deviation.max(r.max_rel_deviation);
            out.ranks.extend(r.ranks.iter().cloned());
            out.failures.extend(r.failures.iter().map(|f| alloc::format!("{}: {f}", r.check)));
            out.notes.extend(r.notes.iter().cloned());
        }
        out
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: samples={} skipped={} max_abs={:.3e} max_rel={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.check,
            self.samples,
            self.skipped,
            self.max_abs_deviation,
            self.max_rel_deviation,
            self.tolerance,
        )?;
        if let Some(seed) = self.seed {
            write!(f, " seed={seed}")?;
        }
        for msg in &self.failures {
            write!(f, "\n    failure: {msg}")?;
        }
        for msg in &self.notes {
            write!(f, "\n    note: {msg}")?;
        }
        Ok(())
    }
}

/// Compares `lhs[i]` with `rhs[i]` for all `i` at random samples.
pub fn numeric_equal_all(
    check: &str,
    lhs: &[Expr],
    rhs: &[Expr],
    domain: &SampleDomain,
) -> Result<VerificationReport, Error> {
    let mut report = VerificationReport::new(check, domain.tolerance);
    report.seed = Some(domain.seed);
    if lhs.len() != rhs.len() {
        report.fail(alloc::format!("length mismatch: {} vs {}", lhs.len(), rhs.len()));
        return Ok(report);
    }
    let vars: BTreeSet<VarRef> =
        lhs.iter().chain(rhs.iter()).flat_map(|e| e.variables()).collect();
    let mut singular = 0;
    let rejected = domain.for_each_sample(&vars, |b| {
        let mut values = Vec::with_capacity(lhs.len());
        for (l, r) in lhs.iter().zip(rhs) {
            match (l.evaluate(b), r.evaluate(b)) {
                (Ok(a), Ok(c)) => values.push((a, c)),
                _ => {
                    singular += 1;
                    return;
                }
            }
        }
        report.samples += 1;
        for (i, (a, c)) in values.into_iter().enumerate() {
            let rel = report.record(a, c);
            if rel >= domain.tolerance {
                report.fail(alloc::format!(
                    "component {} at k={}: {a:.12e} vs {c:.12e}",
                    i + 1,
                    b.k
                ));
            }
        }
    })?;
    report.skipped = rejected + singular;
    if report.samples == 0 {
        return Err(Error::AllSamplesSingular);
    }
    report.conclude();
    Ok(report)
}

/// Samples the numeric rank of symbolic Jacobians. Each entry is
/// `(label, jacobian, expected rank)`; every sample is recorded with its
/// singular values.
pub fn sampled_rank_check(
    check: &str,
    jacobians: &[(&str, &SymbolicJacobian, usize)],
    domain: &SampleDomain,
) -> VerificationReport {
    let mut report = VerificationReport::new(check, RANK_TOLERANCE);
    report.seed = Some(domain.seed);
    let vars: BTreeSet<VarRef> =
        jacobians.iter().flat_map(|(_, j, _)| j.vars.iter().copied()).collect();
    let result = domain.for_each_sample(&vars, |b| {
        let mut ranks = Vec::new();
        for (label, jac, expected) in jacobians {
            match jac.evaluate(b) {
                Ok(m) => {
                    let sv = singular_values(&m);
                    let rank = rank_from_singular_values(&sv, RANK_TOLERANCE);
                    ranks.push(RankSample {
                        label: String::from(*label),
                        k: b.k,
                        rank,
                        expected: *expected,
                        singular_values: sv,
                    });
                }
                Err(_) => {
                    report.skipped += 1;
                    return;
                }
            }
        }
        report.samples += 1;
        for r in ranks {
            if r.rank != r.expected {
                report.fail(alloc::format!("{}: rank {} != {} at k={}", r.label, r.rank, r.expected, r.k));
            }
            report.ranks.push(r);
        }
    });
    match result {
        Ok(rejected) => report.skipped += rejected,
        Err(e) => report.fail(alloc::format!("{e}")),
    }
    if report.samples == 0 {
        report.passed = false;
    }
    report
}

/// Numeric identity check of two expressions.
pub fn numeric_equal(e1: &Expr, e2: &Expr, domain: &SampleDomain) -> Result<VerificationReport, Error> {
    numeric_equal_all("numeric_equal", core::slice::from_ref(e1), core::slice::from_ref(e2), domain)
}
