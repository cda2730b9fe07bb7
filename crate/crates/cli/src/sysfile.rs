//! Loader for `.sys` definition files.
//!
//! A file is a list of `key = value` lines; `#` starts a comment. Keys:
//!
//! | key | value |
//! |-----|-------|
//! | `n`, `m` | dimensions |
//! | `f.i`, `g.j` | dynamics and `ζ` components |
//! | `psi.x.i`, `psi.u.j` | inverse of `(f, g)` in `x` (for `x⁺`) and `z_[-1]` |
//! | `equilibrium.x`, `equilibrium.u` | comma-separated numbers |
//! | `trajectory.x.i`, `trajectory.u.j` | closed form in `k` |
//! | `trajectory.x0`, `trajectory.k0`, `trajectory.steps` | simulate `trajectory.u.j` from `x0` instead |
//! | `flat.j` | flat output component |
//! | `param.R` | comma-separated `r_j` |
//! | `param.x.i`, `param.u.j` | parameterization in `y` |
//! | `exclude`, `exclude.l` | singular locus, sampled only where `\|expr\| > exclude.bound` |
//! | `exclude.bound` | default `0.1` |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use dtflat::expr::{parse, Expr};
use dtflat::flatness::{FlatOutputCandidate, FlatPair, Parameterization};
use dtflat::planner::simulate;
use dtflat::system::{DiscreteTimeSystem, ExtensionInverse};
use dtflat::trajectory::Trajectory;
use dtflat::verify::{Exclusion, SampleDomain};

pub const DEFAULT_EXCLUSION_BOUND: f64 = 0.1;
pub const DEFAULT_SIMULATION_STEPS: usize = 10;

/// A malformed or inconsistent input file.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for LoadError {}

#[derive(Clone, Debug)]
pub struct SystemFile {
    pub path: PathBuf,
    pub system: DiscreteTimeSystem,
    pub trajectory: Option<Trajectory>,
    pub pair: Option<FlatPair>,
}

struct Entries {
    path: PathBuf,
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(path: &Path, text: &str) -> Result<Self, LoadError> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| LoadError { path: path.to_path_buf(), line: Some(no + 1), message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if !known_key(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if map.insert(key.clone(), (no + 1, value.trim().to_string())).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Entries { path: path.to_path_buf(), map })
    }

    fn error(&self, key: &str, message: impl Into<String>) -> LoadError {
        LoadError { path: self.path.clone(), line: self.map.get(key).map(|(l, _)| *l), message: message.into() }
    }

    fn wrap<'a>(&'a self, key: &'a str) -> impl FnOnce(dtflat::Error) -> LoadError + 'a {
        move |err| self.error(key, err.to_string())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }

    fn usize(&self, key: &str) -> Result<usize, LoadError> {
        let v = self.get(key).ok_or_else(|| self.error(key, format!("missing key `{key}`")))?;
        v.parse().map_err(|_| self.error(key, format!("`{key}` must be a non-negative integer, got `{v}`")))
    }

    fn expr(&self, key: &str) -> Result<Expr, LoadError> {
        let v = self.get(key).ok_or_else(|| self.error(key, format!("missing key `{key}`")))?;
        parse(v).map_err(|e| self.error(key, format!("`{key}`: {e}")))
    }

    /// `prefix.1 ..= prefix.count`, all required.
    fn exprs(&self, prefix: &str, count: usize) -> Result<Vec<Expr>, LoadError> {
        (1..=count).map(|i| self.expr(&format!("{prefix}.{i}"))).collect()
    }

    fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>, LoadError> {
        self.get(key)
            .map(|v| parse_numbers(v).map_err(|m| self.error(key, format!("`{key}`: {m}"))))
            .transpose()
    }

    /// Rejects `prefix.i` with `i` outside `1..=count`.
    fn check_indices(&self, prefix: &str, count: usize) -> Result<(), LoadError> {
        for key in self.map.keys() {
            if let Some(rest) = key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                match rest.parse::<usize>() {
                    Ok(i) if (1..=count).contains(&i) => {}
                    _ => return Err(self.error(key, format!("`{key}`: index out of range 1..={count}"))),
                }
            }
        }
        Ok(())
    }
}

fn known_key(key: &str) -> bool {
    const FIXED: [&str; 9] = [
        "n",
        "m",
        "equilibrium.x",
        "equilibrium.u",
        "trajectory.x0",
        "trajectory.k0",
        "trajectory.steps",
        "param.R",
        "exclude",
    ];
    const INDEXED: [&str; 9] = ["f", "g", "psi.x", "psi.u", "trajectory.x", "trajectory.u", "flat", "param.x", "param.u"];
    if FIXED.contains(&key) || key == "exclude.bound" {
        return true;
    }
    let Some((head, tail)) = key.rsplit_once('.') else { return false };
    tail.parse::<usize>().is_ok() && (INDEXED.contains(&head) || head == "exclude")
}

/// Comma-separated numbers; integers and decimals only.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("`{s}` is not a number"))
        })
        .collect()
}

impl SystemFile {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LoadError { path: path.to_path_buf(), line: None, message: e.to_string() })?;
        Self::from_str(path, &text)
    }

    /// Parses `text` as if read from `path`.
    pub fn from_str(path: &Path, text: &str) -> Result<Self, LoadError> {
        let e = Entries::parse(path, text)?;
        let n = e.usize("n")?;
        let m = e.usize("m")?;
        if n == 0 {
            return Err(e.error("n", "n must be positive"));
        }
        for (prefix, count) in
            [("f", n), ("g", m), ("psi.x", n), ("psi.u", m), ("trajectory.x", n), ("trajectory.u", m), ("flat", m), ("param.x", n), ("param.u", m)]
        {
            e.check_indices(prefix, count)?;
        }
        let system_error = |err: dtflat::Error| LoadError { path: path.to_path_buf(), line: None, message: err.to_string() };
        let mut system = DiscreteTimeSystem::new(e.exprs("f", n)?, e.exprs("g", m)?).map_err(system_error)?;

        let diagnostic = system.check_submersivity(&SampleDomain::default());
        if !diagnostic.passed {
            return Err(LoadError {
                path: path.to_path_buf(),
                line: None,
                message: format!("the system is not submersive (rank of df/d(x,u) must be n)\n{diagnostic}"),
            });
        }

        if e.has_prefix("psi.") {
            let psi = ExtensionInverse { x: e.exprs("psi.x", n)?, u: e.exprs("psi.u", m)? };
            system = system.with_inverse(psi).map_err(system_error)?;
        }
        match (e.numbers("equilibrium.x")?, e.numbers("equilibrium.u")?) {
            (None, None) => {}
            (Some(x), Some(u)) => {
                if x.len() != n || u.len() != m {
                    return Err(e.error("equilibrium.x", format!("equilibrium needs {n} state and {m} input values")));
                }
                system = system
                    .with_equilibrium(x, u)
                    .map_err(|err| e.error("equilibrium.x", err.to_string()))?;
            }
            _ => return Err(e.error("equilibrium.x", "equilibrium.x and equilibrium.u must be given together")),
        }

        let trajectory = load_trajectory(&e, &system)?;
        let pair = load_pair(&e, &system)?;
        Ok(SystemFile { path: path.to_path_buf(), system, trajectory, pair })
    }
}

fn load_trajectory(e: &Entries, sys: &DiscreteTimeSystem) -> Result<Option<Trajectory>, LoadError> {
    let (n, m) = (sys.n(), sys.m());
    if !e.has_prefix("trajectory.") {
        return Ok(None);
    }
    let u = e.exprs("trajectory.u", m)?;
    let Some(x0) = e.numbers("trajectory.x0")? else {
        if e.get("trajectory.k0").is_some() || e.get("trajectory.steps").is_some() {
            return Err(e.error("trajectory.k0", "trajectory.k0 and trajectory.steps need trajectory.x0"));
        }
        return Trajectory::closed(e.exprs("trajectory.x", n)?, u).map(Some).map_err(e.wrap("trajectory.x.1"));
    };
    if e.has_prefix("trajectory.x.") {
        return Err(e.error("trajectory.x0", "give either trajectory.x.i or trajectory.x0, not both"));
    }
    if x0.len() != n {
        return Err(e.error("trajectory.x0", format!("trajectory.x0 needs {n} values")));
    }
    let k0 = match e.get("trajectory.k0") {
        None => 0,
        Some(v) => v.parse().map_err(|_| e.error("trajectory.k0", format!("`trajectory.k0` must be an integer, got `{v}`")))?,
    };
    let steps = if e.get("trajectory.steps").is_some() { e.usize("trajectory.steps")? } else { DEFAULT_SIMULATION_STEPS };
    let inputs = (0..steps as i64)
        .map(|t| u.iter().map(|c| c.evaluate_at(k0 + t)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(e.wrap("trajectory.u.1"))?;
    simulate(sys, &x0, k0, &inputs).map(Some).map_err(e.wrap("trajectory.x0"))
}

/// A file holding only `trajectory.*` keys, for the system `sys`.
pub fn load_trajectory_file(path: &Path, sys: &DiscreteTimeSystem) -> Result<Trajectory, LoadError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LoadError { path: path.to_path_buf(), line: None, message: e.to_string() })?;
    let e = Entries::parse(path, &text)?;
    if let Some(key) = e.map.keys().find(|k| !k.starts_with("trajectory.")) {
        return Err(e.error(key, format!("`{key}` does not belong in a trajectory file")));
    }
    e.check_indices("trajectory.x", sys.n())?;
    e.check_indices("trajectory.u", sys.m())?;
    load_trajectory(&e, sys)?.ok_or_else(|| LoadError { path: path.to_path_buf(), line: None, message: "no trajectory keys".into() })
}

fn load_pair(e: &Entries, sys: &DiscreteTimeSystem) -> Result<Option<FlatPair>, LoadError> {
    let (n, m) = (sys.n(), sys.m());
    if !(e.has_prefix("flat.") || e.has_prefix("param.") || e.has_prefix("exclude")) {
        return Ok(None);
    }
    let phi = e
        .exprs("flat", m)?
        .into_iter()
        .enumerate()
        .map(|(j, p)| sys.extended(p).map_err(|err| e.error(&format!("flat.{}", j + 1), err.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let r_text = e.get("param.R").ok_or_else(|| e.error("param.R", "missing key `param.R`"))?;
    let r = r_text
        .split(',')
        .map(|s| s.trim().parse::<u32>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| e.error("param.R", format!("`param.R` must list non-negative integers, got `{r_text}`")))?;
    let param = Parameterization::new(r, e.exprs("param.x", n)?, e.exprs("param.u", m)?)
        .map_err(|err| e.error("param.R", err.to_string()))?;
    let bound = match e.numbers("exclude.bound")? {
        None => DEFAULT_EXCLUSION_BOUND,
        Some(v) if v.len() == 1 && v[0] >= 0.0 => v[0],
        Some(_) => return Err(e.error("exclude.bound", "exclude.bound must be one non-negative number")),
    };
    let exclusions = e
        .map
        .keys()
        .filter(|k| *k == "exclude" || (k.starts_with("exclude.") && *k != "exclude.bound"))
        .map(|k| e.expr(k).map(|x| Exclusion::new(x, bound)))
        .collect::<Result<Vec<_>, _>>()?;
    FlatPair::new(sys, FlatOutputCandidate::new(phi), param, exclusions)
        .map(Some)
        .map_err(|err| e.error("flat.1", err.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<SystemFile, LoadError> {
        SystemFile::from_str(Path::new("test.sys"), text)
    }

    #[test]
    fn minimal_system() {
        let f = load("n = 1\nm = 1\nf.1 = x1 + u1\ng.1 = x1 # comment\n").unwrap();
        assert_eq!(f.system.n(), 1);
        assert!(f.trajectory.is_none() && f.pair.is_none());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = load("n = 1\nm = 1\nf.1 = x1 +\ng.1 = x1\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = load("n = 1\nm = 1\nf.1 = x1 + u1\ng.1 = x1\nh = 2\n").unwrap_err();
        assert!(err.to_string().starts_with("test.sys:5: unknown key"));
        let err = load("n = 1\nm = 1\nf.1 = x1 + u1\nf.1 = x1\n").unwrap_err();
        assert!(err.message.contains("duplicate"));
        let err = load("n = 1\nm = 1\nf.1 = x1 + u1\ng.1 = x1\ng.2 = x1\n").unwrap_err();
        assert!(err.message.contains("out of range"));
    }

    #[test]
    fn rejects_non_submersive_system() {
        let err = load("n = 1\nm = 1\nf.1 = 2\ng.1 = x1 + u1\n").unwrap_err();
        assert!(err.message.contains("not submersive"), "{err}");
    }

    #[test]
    fn simulated_trajectory() {
        let f = load("n = 1\nm = 1\nf.1 = x1 + u1\ng.1 = x1\ntrajectory.x0 = 2\ntrajectory.k0 = 3\ntrajectory.steps = 4\ntrajectory.u.1 = k\n")
            .unwrap();
        let traj = f.trajectory.unwrap();
        assert_eq!(traj.x.at(7).unwrap(), vec![2.0 + 3.0 + 4.0 + 5.0 + 6.0]);
        assert!(traj.x.at(8).is_err());
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_numbers("1, -2.5,3e1").unwrap(), vec![1.0, -2.5, 30.0]);
        assert!(parse_numbers("1,,2").is_err());
        assert!(parse_numbers("nan").is_err());
    }
}
