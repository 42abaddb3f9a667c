//! Non-uniform reference weights: the recursions must agree with path
//! enumeration, and the bounds must hold, when `psi` is not all ones.

use approx::assert_abs_diff_eq;
use filterstab::backward::{backward_init, backward_step, brute_force_backward, likelihood_ratio};
use filterstab::ergodicity::{geometric_ergodicity_report, stationary_backward_sequence, delta_bound_check};
use filterstab::filter::{brute_force_posterior, run_filter, run_filter_pair, PriorLabel};
use filterstab::model::{invariant_density, invariance_residual, mixing_coefficients};
use filterstab::simulate::sample_trajectory;
use filterstab::{Density, FiniteModel, Matrix, ModelSetup, ObservationModel, StateSpace, TransitionKernel};

/// Three states with weights (0.5, 1, 2); rows of the probability matrix
/// divided column-wise by the weights.
fn weighted_setup() -> ModelSetup {
    let space = StateSpace::new(vec![0.5, 1.0, 2.0]).unwrap();
    let probs = [[0.2, 0.5, 0.3], [0.4, 0.4, 0.2], [0.1, 0.3, 0.6]];
    let lambda = Matrix::from_fn(3, 3, |i, j| probs[i][j] / space.psi()[j]);
    let kernel = TransitionKernel::new(lambda, &space).unwrap();
    let gamma = Matrix::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6], vec![0.1, 0.9]]).unwrap();
    let obs = ObservationModel::finite(gamma, None).unwrap();
    let model = FiniteModel::new(space.clone(), kernel, obs).unwrap();
    // Probabilities (0.6, 0.3, 0.1) and (1/3, 1/3, 1/3) as densities against psi.
    let nu = Density::new(vec![1.2, 0.3, 0.05], &space).unwrap();
    let beta = Density::new(vec![2.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0], &space).unwrap();
    ModelSetup::new(model, nu, beta).unwrap()
}

#[test]
fn invariant_density_is_weighted() {
    let setup = weighted_setup();
    let m = invariant_density(&setup.model.kernel, &setup.model.space).unwrap();
    assert!(invariance_residual(&setup.model.kernel, &setup.model.space, &m) < 1e-12);
    assert_abs_diff_eq!(setup.model.space.integrate(m.values()), 1.0, epsilon = 1e-12);
}

#[test]
fn filter_and_backward_match_enumeration() {
    let setup = weighted_setup();
    let model = &setup.model;
    let traj = sample_trajectory(model, &setup.nu, 7, 5).unwrap();
    let run = run_filter(&setup.beta, &traj.observations, model, PriorLabel::Beta).unwrap();
    let mut rho = backward_init(&setup.beta, &model.kernel, &model.space).unwrap();
    for n in 1..=traj.horizon() {
        let obs = &traj.observations[..n];
        let oracle = brute_force_posterior(model, &setup.beta, obs).unwrap();
        assert!(run.densities[n].max_abs_diff(&oracle) < 1e-12, "filter step {n}");
        if n > 1 {
            rho = backward_step(&rho, &run.densities[n - 1], &model.kernel, &model.space).unwrap();
        }
        for x in 0..model.dim() {
            let column = brute_force_backward(model, &setup.beta, obs, x).unwrap();
            for u in 0..model.dim() {
                assert_abs_diff_eq!(rho.get(u, x), column.values()[u], epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn likelihood_ratio_links_the_two_filters() {
    let setup = weighted_setup();
    let model = &setup.model;
    let traj = sample_trajectory(model, &setup.nu, 40, 9).unwrap();
    let pair = run_filter_pair(&setup.nu, &setup.beta, &traj.observations, model).unwrap();
    let mut rho = backward_init(&setup.beta, &model.kernel, &model.space).unwrap();
    for n in 2..=traj.horizon() {
        rho = backward_step(&rho, &pair.run_wrong.densities[n - 1], &model.kernel, &model.space).unwrap();
    }
    let ratio = setup.nu_over_beta();
    let l = likelihood_ratio(&rho, pair.run_wrong.last(), &ratio, &model.space).value;
    // L π^ν(x) = π^β(x) Σ_u (ν/β)(u) ρ(u, x) ψ(u)
    for x in 0..model.dim() {
        let h: f64 = (0..model.dim()).map(|u| ratio[u] * rho.get(u, x) * model.space.psi()[u]).sum();
        let lhs = l * pair.run_correct.last().values()[x];
        let rhs = pair.run_wrong.last().values()[x] * h;
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }
}

#[test]
fn ergodicity_bounds_hold_with_weights() {
    let setup = weighted_setup();
    let model = &setup.model;
    let m = invariant_density(&model.kernel, &model.space).unwrap();
    let coeffs = mixing_coefficients(model, &m);
    assert!(coeffs.is_mixing());
    let report = geometric_ergodicity_report(model, &m, &coeffs, 40).unwrap();
    assert!(report.holds(), "{:?}", report.worst_ratio);
    let seq = stationary_backward_sequence(model, &m, 40).unwrap();
    assert!(delta_bound_check(&seq, &m, &coeffs).holds());
}
