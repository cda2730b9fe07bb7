//! Reference systems, flat pairs and trajectories.

use alloc::vec::Vec;

use crate::expr::{parse, Expr};
use crate::flatness::{FlatOutputCandidate, FlatPair, Parameterization};
use crate::system::{DiscreteTimeSystem, ExtensionInverse};
use crate::trajectory::Trajectory;
use crate::verify::Exclusion;

/// Sampling guard around the singular locus of the product example.
pub const PRODUCT_EXCLUSION_BOUND: f64 = 0.1;

fn exprs(src: &[&str]) -> Vec<Expr> {
    src.iter().map(|s| parse(s).expect("corpus expression")).collect()
}

/// `x1⁺ = x1 + u1`, `x2⁺ = x2 + u2`, `x3⁺ = x3 + u1 u2` with `ζ = (x1, x2)`.
pub fn product_system() -> DiscreteTimeSystem {
    DiscreteTimeSystem::new(exprs(&["x1 + u1", "x2 + u2", "x3 + u1*u2"]), exprs(&["x1", "x2"]))
        .and_then(|s| {
            s.with_inverse(ExtensionInverse {
                x: exprs(&["z1_[-1]", "z2_[-1]", "x3 - (x1 - z1_[-1])*(x2 - z2_[-1])"]),
                u: exprs(&["x1 - z1_[-1]", "x2 - z2_[-1]"]),
            })
        })
        .and_then(|s| s.with_equilibrium(alloc::vec![0.0; 3], alloc::vec![0.0; 2]))
        .expect("product system")
}

pub const PRODUCT_PHI: [&str; 2] = ["z1_[-1]", "x3 - x2*(x1 - z1_[-1])"];

pub const PRODUCT_FX: [&str; 3] = [
    "y1_[1]",
    "(y2 - y2_[1])/(y1 - 2*y1_[1] + y1_[2])",
    "(y1*y2_[1] - y1_[1]*(y2 + y2_[1]) + y1_[2]*y2)/(y1 - 2*y1_[1] + y1_[2])",
];

const PRODUCT_U2_DEN: &str = "(y1*(y1_[1] - 2*y1_[2] + y1_[3]) + y1_[1]*(-2*y1_[1] + 5*y1_[2] - 2*y1_[3]) \
     + y1_[2]*(-2*y1_[2] + y1_[3]))";

fn product_fu(sign: &str) -> Vec<Expr> {
    let u2 = alloc::format!(
        "(y1*(y2_[1] - y2_[2]) + y1_[1]*(-y2 - y2_[1] + 2*y2_[2]))/{d} \
         {sign} (y1_[2]*(2*y2 - y2_[1] - y2_[2]) + y1_[3]*(-y2 + y2_[1]))/{d}",
        d = PRODUCT_U2_DEN
    );
    exprs(&["y1_[2] - y1_[1]", &u2])
}

pub const PRODUCT_EXCLUSION: &str = "y1 - 2*y1_[1] + y1_[2]";

fn product_pair_with(fu: Vec<Expr>) -> FlatPair {
    let sys = product_system();
    let phi = exprs(&PRODUCT_PHI)
        .into_iter()
        .map(|e| sys.extended(e).expect("flat output"))
        .collect();
    let param = Parameterization::new(alloc::vec![3, 2], exprs(&PRODUCT_FX), fu).expect("parameterization");
    let exclusion = Exclusion::new(parse(PRODUCT_EXCLUSION).expect("exclusion"), PRODUCT_EXCLUSION_BOUND);
    FlatPair::new(&sys, FlatOutputCandidate::new(phi), param, alloc::vec![exclusion]).expect("flat pair")
}

pub fn product_pair() -> FlatPair {
    product_pair_with(product_fu("+"))
}

/// The product pair with the sign of the second term of `F_u²` flipped.
pub fn product_pair_broken() -> FlatPair {
    product_pair_with(product_fu("-"))
}

/// `x = (k(k-1)/2, -k(k-1)/2, -k(k-1)(2k-1)/6)`, `u = (k, -k)`.
pub fn product_trajectory() -> Trajectory {
    Trajectory::closed(
        exprs(&["1/2*k*(k - 1)", "-1/2*k*(k - 1)", "-1/6*k*(k - 1)*(2*k - 1)"]),
        exprs(&["k", "-k"]),
    )
    .expect("product trajectory")
}

/// `x1⁺ = -sin(x1 - x3) + u2`, `x2⁺ = (1 - sin(x1 - x3)) u1`, `x3⁺ = u2`
/// with `ζ = (x2, x1)`.
pub fn nonflat_system() -> DiscreteTimeSystem {
    DiscreteTimeSystem::new(
        exprs(&["-sin(x1 - x3) + u2", "(1 - sin(x1 - x3))*u1", "u2"]),
        exprs(&["x2", "x1"]),
    )
    .and_then(|s| s.with_equilibrium(alloc::vec![0.0; 3], alloc::vec![0.0; 2]))
    .expect("nonflat system")
}

/// Scalar integrator `x⁺ = x + u`, `ζ = x`.
pub fn integrator_system() -> DiscreteTimeSystem {
    DiscreteTimeSystem::new(exprs(&["x1 + u1"]), exprs(&["x1"]))
        .and_then(|s| {
            s.with_inverse(ExtensionInverse { x: exprs(&["z1_[-1]"]), u: exprs(&["x1 - z1_[-1]"]) })
        })
        .expect("integrator")
}

/// `y = x`, `x = y`, `u = y_[1] - y`.
pub fn integrator_pair() -> FlatPair {
    let sys = integrator_system();
    let phi = alloc::vec![sys.extended(parse("x1").expect("phi")).expect("phi")];
    let param = Parameterization::new(alloc::vec![1], exprs(&["y1"]), exprs(&["y1_[1] - y1"])).expect("param");
    FlatPair::new(&sys, FlatOutputCandidate::new(phi), param, Vec::new()).expect("integrator pair")
}

/// Double integrator `x1⁺ = x1 + x2`, `x2⁺ = x2 + u1`, `ζ = x1`.
pub fn double_integrator_system() -> DiscreteTimeSystem {
    DiscreteTimeSystem::new(exprs(&["x1 + x2", "x2 + u1"]), exprs(&["x1"]))
        .and_then(|s| {
            s.with_inverse(ExtensionInverse {
                x: exprs(&["z1_[-1]", "x1 - z1_[-1]"]),
                u: exprs(&["x2 - x1 + z1_[-1]"]),
            })
        })
        .expect("double integrator")
}

/// Every function of the corpus on extended coordinates, paired with the
/// system it lives on: the product flat output components and all `f`, `g`
/// components of the product and non-flat systems.
pub fn commutation_corpus() -> Vec<(DiscreteTimeSystem, Expr)> {
    let mut out = Vec::new();
    let product = product_system();
    for e in exprs(&PRODUCT_PHI) {
        out.push((product.clone(), e));
    }
    for sys in [product, nonflat_system()] {
        for e in sys.f().iter().chain(sys.g()) {
            out.push((sys.clone(), e.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::SampleDomain;

    #[test]
    fn systems_construct() {
        assert_eq!(product_system().n(), 3);
        assert_eq!(nonflat_system().m(), 2);
        assert_eq!(integrator_system().n(), 1);
        assert_eq!(commutation_corpus().len(), 12);
    }

    #[test]
    fn inverses_are_valid() {
        for sys in [integrator_system(), double_integrator_system()] {
            let r = sys.check_inverse(&SampleDomain::default()).unwrap();
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn nonflat_extension_is_regular() {
        let r = nonflat_system().check_extension_regularity(&SampleDomain::default());
        assert!(r.passed, "{r}");
    }
}
