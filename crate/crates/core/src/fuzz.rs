//! Random functions on the extended coordinates, for property checks.

use alloc::vec::Vec;

use rand::Rng;

use crate::expr::{Expr, VarRef};
use crate::system::{DiscreteTimeSystem, ExtendedFunction};
use crate::verify::SampleRng;

/// Bounds for generated expressions.
#[derive(Clone, Copy, Debug)]
pub struct FuzzConfig {
    pub max_depth: u32,
    /// Deepest backward ζ-shift `l_ζ`.
    pub zeta_window: u32,
    /// Highest forward input shift `l_u`.
    pub input_window: u32,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig { max_depth: 3, zeta_window: 2, input_window: 2 }
    }
}

fn leaf(sys: &DiscreteTimeSystem, cfg: &FuzzConfig, rng: &mut SampleRng) -> Expr {
    match rng.gen_range(0..6) {
        0 => Expr::int(rng.gen_range(-3..=3)),
        1 => Expr::time(),
        2 | 3 => Expr::var(VarRef::x(rng.gen_range(1..=sys.n() as u32))),
        4 if cfg.zeta_window > 0 && sys.m() > 0 => Expr::var(VarRef::zeta(
            rng.gen_range(1..=sys.m() as u32),
            -(rng.gen_range(1..=cfg.zeta_window) as i32),
        )),
        _ if sys.m() > 0 => Expr::var(VarRef::u(
            rng.gen_range(1..=sys.m() as u32),
            rng.gen_range(0..=cfg.input_window) as i32,
        )),
        _ => Expr::var(VarRef::x(1)),
    }
}

fn node(sys: &DiscreteTimeSystem, cfg: &FuzzConfig, depth: u32, rng: &mut SampleRng) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return leaf(sys, cfg, rng);
    }
    let op = rng.gen_range(0..7);
    let mut sub = || node(sys, cfg, depth - 1, rng);
    match op {
        0 | 1 => {
            let a = sub();
            a.add(&sub())
        }
        2 => {
            let a = sub();
            a.sub(&sub())
        }
        3 | 4 => {
            let a = sub();
            a.mul(&sub())
        }
        5 => sub().sin(),
        _ => sub().pow(2),
    }
}

/// A random smooth function on the extended coordinates of `sys`.
/// Division is avoided so every sample point is regular.
pub fn random_function(sys: &DiscreteTimeSystem, cfg: &FuzzConfig, rng: &mut SampleRng) -> ExtendedFunction {
    let e = node(sys, cfg, cfg.max_depth, rng);
    ExtendedFunction::new(e).expect("generated coordinates are extended coordinates")
}

pub fn random_functions(sys: &DiscreteTimeSystem, cfg: &FuzzConfig, count: usize, rng: &mut SampleRng) -> Vec<ExtendedFunction> {
    (0..count).map(|_| random_function(sys, cfg, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::verify::rng_from_seed;

    #[test]
    fn generated_functions_respect_windows() {
        let sys = corpus::product_system();
        let cfg = FuzzConfig::default();
        let mut rng = rng_from_seed(3);
        for h in random_functions(&sys, &cfg, 200, &mut rng) {
            assert!(h.l_zeta() <= cfg.zeta_window && h.l_u() <= cfg.input_window);
            assert!(sys.extended(h.expr().clone()).is_ok());
        }
    }

    #[test]
    fn generation_is_seeded() {
        let sys = corpus::nonflat_system();
        let a = random_functions(&sys, &FuzzConfig::default(), 10, &mut rng_from_seed(9));
        let b = random_functions(&sys, &FuzzConfig::default(), 10, &mut rng_from_seed(9));
        assert_eq!(a, b);
    }
}
