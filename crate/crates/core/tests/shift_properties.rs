use dtflat::corpus;
use dtflat::fuzz::{random_function, random_functions, FuzzConfig};
use dtflat::linearize::{check_commutation, COMMUTATION_DEPTH};
use dtflat::system::DiscreteTimeSystem;
use dtflat::verify::{numeric_equal, rng_from_seed, SampleDomain};
use proptest::prelude::*;

fn invertible() -> [DiscreteTimeSystem; 3] {
    [corpus::product_system(), corpus::integrator_system(), corpus::double_integrator_system()]
}

fn domain(seed: u64) -> SampleDomain {
    SampleDomain::default().with_samples(20).with_seed(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_shift_inverts_forward_shift(seed in any::<u64>(), which in 0usize..3) {
        let sys = &invertible()[which];
        let h = random_function(sys, &FuzzConfig::default(), &mut rng_from_seed(seed));
        let there = sys.forward_shift(&h, 1);
        let back = sys.backward_shift(&there, 1).unwrap();
        let r = numeric_equal(back.expr(), h.expr(), &domain(seed)).unwrap();
        prop_assert!(r.passed, "{}", r);
    }

    #[test]
    fn forward_shift_inverts_backward_shift(seed in any::<u64>(), which in 0usize..3) {
        let sys = &invertible()[which];
        let h = random_function(sys, &FuzzConfig::default(), &mut rng_from_seed(seed));
        let back = sys.backward_shift(&h, 2).unwrap();
        let there = sys.forward_shift(&back, 2);
        let r = numeric_equal(there.expr(), h.expr(), &domain(seed)).unwrap();
        prop_assert!(r.passed, "{}", r);
    }

    #[test]
    fn forward_shifts_compose(seed in any::<u64>()) {
        let sys = corpus::nonflat_system();
        let h = random_function(&sys, &FuzzConfig::default(), &mut rng_from_seed(seed));
        let twice = sys.forward_shift(&sys.forward_shift(&h, 1), 1);
        let r = numeric_equal(twice.expr(), sys.forward_shift(&h, 2).expr(), &domain(seed)).unwrap();
        prop_assert!(r.passed, "{}", r);
    }
}

#[test]
fn linearization_commutes_with_shift_on_random_functions() {
    let cfg = FuzzConfig::default();
    let mut rng = rng_from_seed(17);
    for sys in [corpus::product_system(), corpus::nonflat_system(), corpus::double_integrator_system()] {
        for h in random_functions(&sys, &cfg, 20, &mut rng) {
            let r = check_commutation(&sys, &h, COMMUTATION_DEPTH, &domain(5)).unwrap();
            assert!(r.passed && r.samples == 20, "{r}");
        }
    }
}
