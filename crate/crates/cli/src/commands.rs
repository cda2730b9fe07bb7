use std::fmt;
use std::path::{Path, PathBuf};

use dtflat::expr::Expr;
use dtflat::flatness::{check_rank_conditions, verify_flat_pair, verify_parameterization_identity};
use dtflat::linalg::Matrix;
use dtflat::linearize::{check_commutation, linearize_along, linearize_flat_pair, verify_linear_pair, LTVSystem, COMMUTATION_DEPTH};
use dtflat::ltv::{check_ab_annihilation, default_horizon, necessary_condition_for};
use dtflat::planner::{plan, simulate, PlanProblem};
use dtflat::system::{DiscreteTimeSystem, ExtendedFunction};
use dtflat::trajectory::{TimeFunction, Trajectory};
use dtflat::verify::{rng_from_seed, SampleDomain, VerificationReport};
use dtflat::Error;
use rand::Rng;

use crate::export;
use crate::report::RunReport;
use crate::sysfile::{LoadError, SystemFile};

/// Tolerance of the nonlinear flat-pair checks, which compose rational
/// functions in floating point.
pub const FLAT_PAIR_TOLERANCE: f64 = 1e-8;
/// Window used for closed-form trajectories when none is given.
pub const DEFAULT_WINDOW: (i64, i64) = (-10, 10);
/// Inputs of `--simulate` are drawn from `[-INPUT_RANGE, INPUT_RANGE]`.
pub const INPUT_RANGE: f64 = 1.0;

/// Failure before any analysis result exists. Exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

impl From<LoadError> for InputError {
    fn from(e: LoadError) -> Self {
        InputError(e.to_string())
    }
}

impl From<Error> for InputError {
    fn from(e: Error) -> Self {
        InputError(e.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub command: String,
    pub seed: u64,
    pub deterministic: bool,
    pub samples: usize,
    pub window: Option<(i64, i64)>,
}

impl Options {
    fn report(&self) -> RunReport {
        RunReport::new(self.command.clone(), self.seed, self.deterministic)
    }

    fn domain(&self) -> SampleDomain {
        SampleDomain::default().with_seed(self.seed).with_samples(self.samples)
    }

    fn window_for(&self, traj: &Trajectory) -> (i64, i64) {
        if let Some(w) = self.window {
            return w;
        }
        match traj.x.window() {
            Some((lo, hi)) => (lo, hi - 1),
            None => DEFAULT_WINDOW,
        }
    }
}

fn failed(check: &str, err: Error) -> VerificationReport {
    let mut r = VerificationReport::new(check, 0.0);
    r.fail(err.to_string());
    r
}

fn checked(check: &str, result: Result<VerificationReport, Error>) -> VerificationReport {
    result.unwrap_or_else(|e| failed(check, e))
}

fn write_csv(report: &mut RunReport, path: &Path, result: Result<(), impl fmt::Display>) -> Result<(), InputError> {
    result.map_err(|e| InputError(format!("cannot write {}: {e}", path.display())))?;
    report.csv_files.push(path.to_path_buf());
    Ok(())
}

/// Trajectory keys from a separate file, replacing the system file's.
pub fn trajectory_from(file: &SystemFile, traj: Option<&PathBuf>) -> Result<Option<Trajectory>, InputError> {
    match traj {
        Some(path) => Ok(Some(crate::sysfile::load_trajectory_file(path, &file.system)?)),
        None => Ok(file.trajectory.clone()),
    }
}

pub fn verify(file: &SystemFile, opts: &Options) -> RunReport {
    let sys = &file.system;
    let domain = opts.domain();
    let mut report = opts.report();
    report.line(format!("system: n = {}, m = {}", sys.n(), sys.m()));
    report.check(sys.check_submersivity(&domain));
    report.check(sys.check_extension_regularity(&domain));
    if sys.psi().is_some() {
        report.check(checked("inverse", sys.check_inverse(&domain)));
    }
    if let Some((x0, u0)) = sys.equilibrium() {
        let (lo, hi) = opts.window.unwrap_or(DEFAULT_WINDOW);
        let mut r = VerificationReport::new("equilibrium", 0.0);
        r.samples = (hi - lo + 1).max(0) as usize;
        if !sys.check_equilibrium(x0, u0, (lo, hi)) {
            r.fail(format!("f(k, x0, u0) != x0 for some k in [{lo}, {hi}]"));
        }
        report.check(r);
    }
    if let Some(traj) = &file.trajectory {
        report.check(sys.check_trajectory(traj, opts.window_for(traj)));
    }
    if let Some(pair) = &file.pair {
        let domain = domain.clone().with_tolerance(FLAT_PAIR_TOLERANCE);
        report.check(checked("flat_pair", verify_flat_pair(sys, pair, &domain)));
        report.check(checked(
            "parameterization_identity",
            verify_parameterization_identity(sys, pair.param(), &pair.jet_domain(&domain)),
        ));
        report.check(check_rank_conditions(pair.param(), &pair.jet_domain(&domain)));
    }
    report
}

fn matrix_text(rows: &[Vec<String>]) -> String {
    let rows: Vec<String> = rows.iter().map(|r| format!("[{}]", r.join(", "))).collect();
    format!("[{}]", rows.join(", "))
}

fn jacobian_text(functions: &[Expr], vars: &[dtflat::expr::VarRef]) -> String {
    matrix_text(&functions.iter().map(|f| vars.iter().map(|v| f.differentiate(*v).to_string()).collect()).collect::<Vec<_>>())
}

fn time_matrix_text(rows: &[Vec<TimeFunction>]) -> Option<String> {
    let rows: Option<Vec<Vec<String>>> =
        rows.iter().map(|r| r.iter().map(|e| e.as_expr().map(|e| e.simplified_in_k().to_string())).collect()).collect();
    rows.map(|r| matrix_text(&r))
}

fn numeric_matrix_text(m: &Matrix) -> String {
    matrix_text(&m.row_iter().map(|r| r.iter().map(|v| format!("{v}")).collect()).collect::<Vec<_>>())
}

fn describe_matrices(report: &mut RunReport, ltv: &LTVSystem, window: (i64, i64)) {
    match (time_matrix_text(&ltv.a), time_matrix_text(&ltv.b)) {
        (Some(a), Some(b)) => {
            report.line(format!("A(k) = {a}"));
            report.line(format!("B(k) = {b}"));
        }
        _ => {
            for k in window.0..=window.1 {
                if let (Ok(a), Ok(b)) = (ltv.a_at(k), ltv.b_at(k)) {
                    report.line(format!("A({k}) = {}", numeric_matrix_text(&a)));
                    report.line(format!("B({k}) = {}", numeric_matrix_text(&b)));
                }
            }
        }
    }
}

pub fn linearize(file: &SystemFile, traj: Option<&PathBuf>, csv: Option<&Path>, opts: &Options) -> Result<RunReport, InputError> {
    let sys = &file.system;
    let traj = trajectory_from(file, traj)?.ok_or_else(|| InputError("linearize needs a trajectory".into()))?;
    let window = opts.window_for(&traj);
    let mut report = opts.report();
    report.line(format!("df/dx = {}", jacobian_text(sys.f(), &sys.state_vars())));
    report.line(format!("df/du = {}", jacobian_text(sys.f(), &sys.input_vars())));
    let ltv = linearize_along(sys, &traj, window)?;
    report.line(format!("along the {} on [{}, {}]:", ltv.source, window.0, window.1));
    describe_matrices(&mut report, &ltv, window);
    report.check(ltv.check_regularity(window));
    if let Some(path) = csv {
        write_csv(&mut report, path, export::write_ltv(path, &ltv, window))?;
    }
    let Some(pair) = &file.pair else { return Ok(report) };
    match linearize_flat_pair(sys, pair, &traj, window) {
        Ok((lfo, lp)) => {
            for (j, c) in lfo.components.iter().enumerate() {
                report.line(format!("dy{} = {c}", j + 1));
            }
            for (i, c) in lp.x.iter().enumerate() {
                report.line(format!("dx{} = {c}", i + 1));
            }
            for (j, c) in lp.u.iter().enumerate() {
                report.line(format!("du{} = {c}", j + 1));
            }
            let domain = opts.domain().with_k_range(window.0, window.1);
            let lin = verify_linear_pair(&ltv, &lfo, &lp, &domain);
            report.check(lin.dynamics);
            report.check(lin.round_trip);
        }
        Err(Error::SingularTrajectory { k }) => {
            report.line(format!("the trajectory meets a singularity of the flat pair at k = {k}"));
            report.failed = true;
        }
        Err(e) => return Err(e.into()),
    }
    let labelled = |prefix: &str, exprs: Vec<Expr>| -> Vec<(String, Expr)> {
        exprs.into_iter().enumerate().map(|(i, e)| (format!("{prefix}{}", i + 1), e)).collect()
    };
    let functions = labelled("phi", pair.candidate().exprs())
        .into_iter()
        .chain(labelled("f", sys.f().to_vec()))
        .chain(labelled("g", sys.g().to_vec()));
    for (label, e) in functions {
        let name = format!("commutation({label})");
        let r = sys.extended(e).and_then(|h: ExtendedFunction| check_commutation(sys, &h, COMMUTATION_DEPTH, &opts.domain()));
        let mut r = checked(&name, r);
        r.check = name;
        report.check(r);
    }
    Ok(report)
}

/// Seeded random inputs in `[-INPUT_RANGE, INPUT_RANGE]`, starting at the
/// equilibrium (or the origin) at `k = 0`.
pub fn random_trajectory(sys: &DiscreteTimeSystem, steps: usize, seed: u64) -> Result<Trajectory, Error> {
    let mut rng = rng_from_seed(seed);
    let x0 = sys.equilibrium().map_or_else(|| vec![0.0; sys.n()], |(x, _)| x.to_vec());
    let u: Vec<Vec<f64>> =
        (0..steps).map(|_| (0..sys.m()).map(|_| rng.gen_range(-INPUT_RANGE..=INPUT_RANGE)).collect()).collect();
    simulate(sys, &x0, 0, &u)
}

pub struct NecessaryConditionArgs<'a> {
    pub traj: Option<&'a PathBuf>,
    pub simulate: Option<usize>,
    pub horizon: Option<usize>,
    pub csv: Option<&'a Path>,
    pub matrix_csv: Option<&'a Path>,
}

pub fn necessary_condition(file: &SystemFile, args: &NecessaryConditionArgs<'_>, opts: &Options) -> Result<RunReport, InputError> {
    let sys = &file.system;
    let mut report = opts.report();
    let traj = match (args.simulate, trajectory_from(file, args.traj)?) {
        (Some(steps), _) => {
            report.line(format!("trajectory: {steps} steps of random inputs from seed {}", opts.seed));
            random_trajectory(sys, steps, opts.seed)?
        }
        (None, Some(t)) => t,
        (None, None) => {
            let steps = crate::sysfile::DEFAULT_SIMULATION_STEPS;
            report.line(format!("trajectory: {steps} steps of random inputs from seed {}", opts.seed));
            random_trajectory(sys, steps, opts.seed)?
        }
    };
    let window = opts.window_for(&traj);
    let horizon = args.horizon.unwrap_or_else(|| default_horizon(sys.n()));
    let ltv = linearize_along(sys, &traj, window)?;
    let nc = necessary_condition_for(&ltv, (window.0, window.1 + 1), horizon)?;
    let ab = check_ab_annihilation(&ltv, window);
    report.line(format!("max |A(k)B(k)| on [{}, {}] = {:e}", window.0, window.1, ab.max_abs_deviation));
    report.line(format!("windows tested: {} (horizon {horizon})", nc.analyses.len()));
    let a = nc.verdict.analysis();
    report.line(format!("witness window: [{}, {}], rank {}", a.k0, a.kf, a.rank));
    report.line(nc.verdict.describe(sys.n()));
    report.singular_values = a.singular_values.clone();
    if let Some(path) = args.csv {
        write_csv(&mut report, path, export::write_windows(path, &nc.analyses, sys.n()))?;
    }
    if let Some(path) = args.matrix_csv {
        write_csv(&mut report, path, export::write_matrix(path, &a.matrix))?;
    }
    Ok(report)
}

pub struct PlanArgs<'a> {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub k_i: i64,
    pub k_f: i64,
    pub csv: Option<&'a Path>,
}

pub fn plan_transition(file: &SystemFile, args: &PlanArgs<'_>, opts: &Options) -> Result<RunReport, InputError> {
    let sys = &file.system;
    let pair = file.pair.clone().ok_or_else(|| InputError("plan needs a flat pair (flat.j, param.*)".into()))?;
    let n = sys.n();
    if args.from.len() != n || args.to.len() != n {
        return Err(InputError(format!("--from and --to need {n} components")));
    }
    let r = i64::from(pair.param().r());
    let problem = PlanProblem { pair, x_i: args.from.clone(), k_i: args.k_i, x_f: args.to.clone(), k_f: args.k_f };
    let mut report = opts.report();
    match plan(sys, &problem, opts.seed) {
        Ok(p) => {
            report.line(format!("restarts: {}", p.restarts));
            report.line(format!("boundary residual: {:e}", p.boundary_residual));
            report.line(format!("simulation error: {:e}", p.simulation_error));
            for k in args.k_i..=args.k_f {
                let mut line = format!("k = {k}: x = {:?}", p.realized.x.at(k).unwrap_or_default());
                if let Ok(u) = p.realized.u.at(k) {
                    line.push_str(&format!(", u = {u:?}"));
                }
                report.line(line);
            }
            if let Some(path) = args.csv {
                let m = sys.m();
                write_csv(&mut report, path, export::write_plan(path, &p, n, m, (args.k_i, args.k_f + r - 1)))?;
            }
        }
        Err(Error::Precondition(msg)) => return Err(InputError(msg)),
        Err(e) => {
            report.line(format!("planning failed: {e}"));
            report.failed = true;
        }
    }
    Ok(report)
}
