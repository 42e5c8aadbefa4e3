use defaultlab::bsde::{generator_f, solve_ode_deterministic, GeneratorSpec, Horizon};
use defaultlab::cli::{parse_text_metrics, render_text, ExperimentConfig, Metric, RunReport};
use defaultlab::enlargement::azema;
use defaultlab::model::{build_grid, ClaimSpec, FiniteLevyMeasure, IntensitySpec, MarketSpec, Model};
use defaultlab::oracle::{build_tree, TreeSpec};
use proptest::prelude::*;

fn model(phi: f64, lambda: f64, n: usize) -> Model {
    Model::new(
        MarketSpec::scalar(1.0, phi, 1.0, 1.0, 0.0),
        FiniteLevyMeasure::empty(),
        IntensitySpec::constant(lambda),
        build_grid(1.0, n).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_leaf_probabilities_sum_to_one(
        depth in 1usize..6,
        q in 0.0f64..0.4,
        marks in proptest::collection::vec(0.0f64..0.2, 0..3),
    ) {
        let spec = TreeSpec {
            depth,
            dt: 0.1,
            delta: 0.1f64.sqrt(),
            mark_probs: marks,
            default_probs: vec![q; depth],
            phi: 0.2,
            sigma: 1.0,
            s0: 1.0,
        };
        let tree = build_tree(spec).unwrap();
        let p = tree.leaf_probabilities();
        prop_assert_eq!(p.len(), tree.n_leaves());
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{total}");
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn ode_cash_invariance(phi in -0.5f64..0.5, lambda in 0.0f64..1.0, c in -2.0f64..2.0) {
        let m = model(phi, lambda, 20);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let claim = ClaimSpec::survival(1.0);
        let base = solve_ode_deterministic(&spec, &claim, &m.grid).unwrap().y0();
        let shifted = solve_ode_deterministic(&spec, &claim.shifted(c), &m.grid).unwrap().y0();
        prop_assert!((shifted - base - c).abs() < 1e-9, "{shifted} {base} {c}");
    }

    #[test]
    fn generator_at_zero_controls(phi in -1.0f64..1.0, alpha in 0.1f64..5.0, lambda in 0.0f64..2.0, t in 0.0f64..1.0) {
        let mut m = model(phi, lambda, 10);
        m.market.alpha = alpha;
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let f = generator_f(&spec, t, &[0.0], &[], 0.0, true).unwrap();
        prop_assert!((f + phi * phi / (2.0 * alpha)).abs() < 1e-14);
        let stopped = GeneratorSpec::from_model(&m, Horizon::Stopped);
        prop_assert_eq!(generator_f(&stopped, t, &[0.3], &[], 0.7, false).unwrap(), 0.0);
    }

    #[test]
    fn default_jump_term_is_nonnegative(w in -5.0f64..5.0, lambda in 0.0f64..2.0) {
        let m = model(0.0, lambda, 10);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        prop_assert!(generator_f(&spec, 0.5, &[0.0], &[], w, true).unwrap() >= 0.0);
    }

    #[test]
    fn azema_is_survival_function(lambda in 0.0f64..3.0, t in 0.0f64..2.0, dt in 0.0f64..1.0) {
        let i = IntensitySpec::constant(lambda);
        let g = azema(&i, t).unwrap();
        prop_assert!((g - (-lambda * t).exp()).abs() < 1e-12);
        prop_assert!(azema(&i, t + dt).unwrap() <= g + 1e-15);
    }

    #[test]
    fn report_text_round_trip(
        values in proptest::collection::vec((-1e6f64..1e6, 0.0f64..1e3, 0.0f64..1e6), 0..8),
    ) {
        let metrics: Vec<Metric> = values
            .iter()
            .enumerate()
            .map(|(i, (v, se, tol))| Metric::at_most(format!("m{i}"), *v, *se, *tol))
            .collect();
        let report = RunReport {
            experiment: "solve".into(),
            metrics: metrics.clone(),
            artifacts: vec![],
            warnings: vec![],
            wall_time_s: 0.0,
            seed: 1,
            workers: 1,
            config: String::new(),
        };
        prop_assert_eq!(parse_text_metrics(&render_text(&report)).unwrap(), metrics);
    }

    #[test]
    fn config_toml_round_trip(
        horizon in 0.1f64..5.0,
        n in 1usize..500,
        sigma in 0.1f64..2.0,
        phi in -1.0f64..1.0,
        lambda in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let text = format!(
            "[grid]\nT = {horizon:?}\nn_steps = {n}\n[market]\nsigma = {sigma:?}\nphi = {phi:?}\nS0 = 1.0\nalpha = 1.0\n\
             [default]\nlambda = {lambda:?}\n[solver]\nseed = {seed}\n[experiment]\nkind = \"solve\"\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(cfg.solver.seed, seed);
    }
}
