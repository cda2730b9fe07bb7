use std::fmt;
use std::path::PathBuf;

use dtflat::verify::VerificationReport;

/// Everything a command prints, in order.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; `None` under `--deterministic`.
    pub timestamp: Option<u64>,
    pub checks: Vec<VerificationReport>,
    /// Free-form result lines (matrices, verdicts, plans).
    pub lines: Vec<String>,
    pub singular_values: Vec<f64>,
    pub csv_files: Vec<PathBuf>,
    /// Set by commands whose outcome is not a list of checks.
    pub failed: bool,
}

impl RunReport {
    pub fn new(command: impl Into<String>, seed: u64, deterministic: bool) -> Self {
        let timestamp = (!deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        RunReport { command: command.into(), seed, timestamp, ..Default::default() }
    }

    pub fn line(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }

    pub fn check(&mut self, report: VerificationReport) {
        self.checks.push(report);
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check.as_str()).collect()
    }

    pub fn passed(&self) -> bool {
        !self.failed && self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> u8 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "command: {}", self.command)?;
        writeln!(f, "seed: {}", self.seed)?;
        if let Some(t) = self.timestamp {
            writeln!(f, "timestamp: {t}")?;
        }
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        if !self.singular_values.is_empty() {
            let sv: Vec<String> = self.singular_values.iter().map(|s| format!("{s:.6e}")).collect();
            writeln!(f, "singular values: {}", sv.join(", "))?;
        }
        for path in &self.csv_files {
            writeln!(f, "wrote {}", path.display())?;
        }
        let failed = self.failed_checks();
        if self.passed() {
            writeln!(f, "result: PASS")
        } else if failed.is_empty() {
            writeln!(f, "result: FAIL")
        } else {
            writeln!(f, "result: FAIL ({})", failed.join(", "))
        }
    }
}
