//! Finite-horizon reachability of linear time-varying systems and the
//! resulting necessary condition for flatness.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{rank_from_singular_values, singular_values, Matrix, RANK_TOLERANCE};
use crate::linearize::{linearize_along, LTVSystem};
use crate::system::DiscreteTimeSystem;
use crate::trajectory::Trajectory;
use crate::verify::VerificationReport;
use crate::Error;

/// Threshold below which `A(k)B(k)` counts as zero.
pub const ANNIHILATION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reachability {
    Reachable,
    NotReachableOnWindow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachabilityAnalysis {
    pub k0: i64,
    pub kf: i64,
    /// `[B(kf-1) | A(kf-1)B(kf-2) | … | A(kf-1)⋯A(k0+1)B(k0)]`.
    pub matrix: Matrix,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub verdict: Reachability,
}

/// States reachable from zero at `kf` when starting at `k0`.
pub fn reachability(ltv: &LTVSystem, k0: i64, kf: i64) -> Result<ReachabilityAnalysis, Error> {
    if kf <= k0 {
        return Err(Error::Precondition(format!("reachability window needs kf > k0, got [{k0}, {kf}]")));
    }
    let steps = (kf - k0) as usize;
    let mut matrix = Matrix::zeros(ltv.n, ltv.m * steps);
    let mut transition = Matrix::identity(ltv.n, ltv.n);
    for (block, k) in (k0..kf).rev().enumerate() {
        let column = &transition * ltv.b_at(k)?;
        matrix.view_mut((0, block * ltv.m), (ltv.n, ltv.m)).copy_from(&column);
        if k > k0 {
            transition *= ltv.a_at(k)?;
        }
    }
    let sv = singular_values(&matrix);
    let rank = rank_from_singular_values(&sv, RANK_TOLERANCE);
    Ok(ReachabilityAnalysis {
        k0,
        kf,
        matrix,
        rank,
        singular_values: sv,
        verdict: if rank == ltv.n { Reachability::Reachable } else { Reachability::NotReachableOnWindow },
    })
}

/// `max |A(k)B(k)|` over `[lo, hi]`; passes when it stays below
/// [`ANNIHILATION_TOLERANCE`].
pub fn check_ab_annihilation(ltv: &LTVSystem, (lo, hi): (i64, i64)) -> VerificationReport {
    let mut report = VerificationReport::new("ab_annihilation", ANNIHILATION_TOLERANCE);
    for k in lo..=hi {
        match ltv.a_at(k).and_then(|a| Ok(a * ltv.b_at(k)?)) {
            Ok(ab) => {
                report.samples += 1;
                let max = ab.amax();
                report.max_abs_deviation = report.max_abs_deviation.max(max);
                report.max_rel_deviation = report.max_abs_deviation;
                if max > ANNIHILATION_TOLERANCE {
                    report.fail(format!("|A(k)B(k)| = {max:e} at k={k}"));
                }
            }
            Err(_) => report.skipped += 1,
        }
    }
    if report.samples == 0 {
        report.passed = false;
    }
    report
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    /// Every tested window is unreachable; `witness` has the highest rank
    /// seen.
    NotFlat { witness: ReachabilityAnalysis },
    /// Some window is reachable. The condition is only necessary, so this
    /// does not establish flatness.
    Inconclusive { reachable: ReachabilityAnalysis },
}

impl Verdict {
    pub fn is_not_flat(&self) -> bool {
        matches!(self, Verdict::NotFlat { .. })
    }

    pub fn analysis(&self) -> &ReachabilityAnalysis {
        match self {
            Verdict::NotFlat { witness } => witness,
            Verdict::Inconclusive { reachable } => reachable,
        }
    }

    /// One-line human-readable statement.
    pub fn describe(&self, n: usize) -> alloc::string::String {
        match self {
            Verdict::NotFlat { witness } => format!(
                "NotFlat: the linearization is not reachable on any tested window (max rank {} < n = {n}); \
                 the system is not flat in any neighborhood of the tested trajectory",
                witness.rank
            ),
            Verdict::Inconclusive { reachable } => format!(
                "Inconclusive: the linearization is reachable on [{}, {}] (rank {n}); \
                 reachability is necessary for flatness, not sufficient",
                reachable.k0, reachable.kf
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NecessaryCondition {
    pub verdict: Verdict,
    /// Every window tested, in scan order.
    pub analyses: Vec<ReachabilityAnalysis>,
}

/// Default horizon: windows of up to `2n` steps.
pub fn default_horizon(n: usize) -> usize {
    2 * n
}

/// Linearizes along `traj` and tests reachability on every window
/// `[s, s+w] ⊆ [k0, kf]` with `1 ≤ w ≤ horizon`. The scan stops at the first
/// reachable window.
pub fn flatness_necessary_condition(
    sys: &DiscreteTimeSystem,
    traj: &Trajectory,
    (k0, kf): (i64, i64),
    horizon: usize,
) -> Result<NecessaryCondition, Error> {
    let ltv = linearize_along(sys, traj, (k0, kf))?;
    necessary_condition_for(&ltv, (k0, kf), horizon)
}

/// The window scan of [`flatness_necessary_condition`] on a given LTV
/// system.
pub fn necessary_condition_for(
    ltv: &LTVSystem,
    (k0, kf): (i64, i64),
    horizon: usize,
) -> Result<NecessaryCondition, Error> {
    let (k0, kf) = match ltv.window() {
        Some((a, b)) => (k0.max(a), kf.min(b + 1)),
        None => (k0, kf),
    };
    let mut analyses = Vec::new();
    let mut best: Option<ReachabilityAnalysis> = None;
    for w in 1..=horizon as i64 {
        for s in k0..=kf - w {
            let r = reachability(ltv, s, s + w)?;
            analyses.push(r.clone());
            if r.verdict == Reachability::Reachable {
                return Ok(NecessaryCondition { verdict: Verdict::Inconclusive { reachable: r }, analyses });
            }
            if best.as_ref().is_none_or(|b| r.rank > b.rank) {
                best = Some(r);
            }
        }
    }
    let witness = best.ok_or_else(|| Error::Precondition(format!("no window fits into [{k0}, {kf}]")))?;
    Ok(NecessaryCondition { verdict: Verdict::NotFlat { witness }, analyses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::expr::{parse, Expr};
    use crate::trajectory::TimeFunction;

    #[test]
    fn product_is_reachable_in_three_steps() {
        let ltv = linearize_along(&corpus::product_system(), &corpus::product_trajectory(), (-10, 10)).unwrap();
        let r = reachability(&ltv, 0, 3).unwrap();
        assert_eq!(r.rank, 3);
        assert_eq!(r.verdict, Reachability::Reachable);
        assert_eq!(r.matrix.ncols(), 6);
        // columns B(2) | A(2)B(1) | A(2)A(1)B(0)
        assert_eq!(r.matrix.column(0)[2], -2.0);
        assert_eq!(r.matrix.column(2)[2], -1.0);
        assert_eq!(r.matrix.column(4)[2], 0.0);
    }

    #[test]
    fn scalar_without_input_has_rank_zero() {
        let ltv = LTVSystem::from_constant(&Matrix::identity(1, 1), &Matrix::zeros(1, 1));
        let r = reachability(&ltv, 0, 4).unwrap();
        assert_eq!(r.rank, 0);
        assert_eq!(r.verdict, Reachability::NotReachableOnWindow);
    }

    #[test]
    fn rank_is_monotone_in_final_step() {
        let ltv = linearize_along(&corpus::product_system(), &corpus::product_trajectory(), (-10, 10)).unwrap();
        let mut last = 0;
        for kf in -4..=4 {
            let r = reachability(&ltv, -5, kf).unwrap();
            assert!(r.rank >= last);
            last = r.rank;
        }
    }

    #[test]
    fn annihilation() {
        let nonflat = corpus::nonflat_system();
        let traj = crate::planner::simulate(&nonflat, &[0.0; 3], 0, &alloc::vec![alloc::vec![1.0, 1.0]; 10]).unwrap();
        let ltv = linearize_along(&nonflat, &traj, (0, 9)).unwrap();
        let r = check_ab_annihilation(&ltv, (0, 9));
        assert!(r.passed && r.samples == 10, "{r}");

        let ltv = linearize_along(&corpus::product_system(), &corpus::product_trajectory(), (-3, 3)).unwrap();
        assert!(!check_ab_annihilation(&ltv, (-3, 3)).passed);

        let zero_b = LTVSystem::from_constant(&Matrix::identity(2, 2), &Matrix::zeros(2, 1));
        let r = check_ab_annihilation(&zero_b, (0, 3));
        assert!(r.passed && r.max_abs_deviation == 0.0);
    }

    #[test]
    fn nonflat_verdict() {
        let sys = corpus::nonflat_system();
        let traj = crate::planner::simulate(&sys, &[0.0; 3], 0, &alloc::vec![alloc::vec![1.0, 1.0]; 10]).unwrap();
        let nc = flatness_necessary_condition(&sys, &traj, (0, 10), default_horizon(3)).unwrap();
        assert!(nc.verdict.is_not_flat());
        assert!(nc.analyses.iter().all(|a| a.rank <= 2));
        assert!(nc.verdict.describe(3).contains("not flat in any neighborhood of the tested trajectory"));
    }

    #[test]
    fn product_verdict_is_inconclusive() {
        let sys = corpus::product_system();
        let nc = flatness_necessary_condition(&sys, &corpus::product_trajectory(), (0, 10), 6).unwrap();
        assert!(matches!(nc.verdict, Verdict::Inconclusive { .. }));
    }

    #[test]
    fn controllable_lti_is_inconclusive() {
        let sys = corpus::double_integrator_system();
        let traj = Trajectory::closed(alloc::vec![Expr::zero(); 2], alloc::vec![Expr::zero()]).unwrap();
        let nc = flatness_necessary_condition(&sys, &traj, (0, 6), 4).unwrap();
        assert_eq!(nc.verdict.analysis().rank, 2);
        assert!(!nc.verdict.is_not_flat());
    }

    #[test]
    fn sampled_coefficients_limit_the_scan() {
        let ltv = LTVSystem {
            n: 1,
            m: 1,
            a: alloc::vec![alloc::vec![TimeFunction::Symbolic(parse("1").unwrap())]],
            b: alloc::vec![alloc::vec![TimeFunction::Sampled { k0: 2, values: alloc::vec![0.0, 0.0, 1.0] }]],
            dzeta: Vec::new(),
            source: "test".into(),
        };
        let nc = necessary_condition_for(&ltv, (0, 10), 2).unwrap();
        assert_eq!(nc.verdict.analysis().k0, 4);
    }
}
