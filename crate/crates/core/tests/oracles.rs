mod common;

use common::{m_step_case, tree_case};

#[test]
fn bp_is_exact_on_trees() {
    for seed in 0..60 {
        let case = tree_case(seed);
        assert!(
            case.marginal_error < 1e-6,
            "seed {seed} (n {}, k {}): marginal error {:e}",
            case.n,
            case.k,
            case.marginal_error
        );
        assert!(case.ll_error < 1e-6, "seed {seed}: log-likelihood error {:e}", case.ll_error);
    }
}

#[test]
fn closed_form_m_step_maximizes_the_bound() {
    for seed in 0..25 {
        let case = m_step_case(seed);
        assert!(case.theta_error < 1e-6, "seed {seed}: theta error {:e}", case.theta_error);
        assert!(
            case.gamma_discrete_error < 1e-6,
            "seed {seed}: discrete prior error {:e}",
            case.gamma_discrete_error
        );
        assert!(
            case.gamma_ordered_error < 1e-6,
            "seed {seed}: ordered prior error {:e}",
            case.gamma_ordered_error
        );
    }
}
