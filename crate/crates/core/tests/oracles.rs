//! Frozen reference values.

use defaultlab::bsde::{LsmcSettings, SolverMode};
use defaultlab::model::{build_grid, ClaimSpec, FiniteLevyMeasure, IntensitySpec, MarketSpec, Model};
use defaultlab::oracle::{build_tree, tree_dp_optimize, TreeSpec};
use defaultlab::utility::{certainty_equivalent, indifference_price, random_horizon_value, value_function};

fn model(phi: f64, lambda: f64) -> Model {
    Model::new(
        MarketSpec::scalar(1.0, phi, 1.0, 1.0, 0.0),
        FiniteLevyMeasure::empty(),
        IntensitySpec::constant(lambda),
        build_grid(1.0, 50).unwrap(),
    )
}

fn settings(n_paths: usize) -> LsmcSettings {
    LsmcSettings {
        n_paths,
        basis_degree: 2,
        seed: 42,
        workers: 1,
    }
}

#[test]
fn defaultable_bond_price() {
    let m = model(0.2, 0.3);
    let bond = ClaimSpec::survival(1.0);
    let p = indifference_price(&bond, &m, SolverMode::Ode, &settings(1), 0.0).unwrap();
    assert!((p.pi - 0.8210717221).abs() < 1e-9, "{}", p.pi);
    assert!((certainty_equivalent(&bond, &m).unwrap() - 0.8210717221).abs() < 1e-9);
}

#[test]
fn random_horizon_default_indicator() {
    let m = model(0.0, 0.3);
    let r = random_horizon_value(&ClaimSpec::default_indicator(1.0), &m, SolverMode::Ode, &settings(2000), 0.0).unwrap();
    assert!((r.y0 - 0.3683496675).abs() < 1e-9, "{}", r.y0);
    assert!(r.strategy_zero_after_default && r.y_constant_after_default);
    assert!(r.defaults_checked > 0);
}

#[test]
fn merton_value() {
    assert!((value_function(-0.02, 0.0, 1.0).unwrap() + 0.9801986733).abs() < 1e-9);
}

#[test]
fn one_step_binomial_dp() {
    let tree = build_tree(TreeSpec {
        depth: 1,
        dt: 1.0,
        delta: 1.0,
        mark_probs: vec![],
        default_probs: vec![0.0],
        phi: 0.2,
        sigma: 1.0,
        s0: 1.0,
    })
    .unwrap();
    let dp = tree_dp_optimize(&tree, &[0.0, 0.0], 1.0, 0.0).unwrap();
    assert!((dp.theta[0] - 0.2027325541).abs() < 1e-9);
    assert!((dp.value + 0.9800658521).abs() < 1e-9);
}
