use infograph::model::{
    enumerate_joint, marginal_conditional, trajectory_probability, validate_positivity, Alphabet,
    GenerativeModelBuilder, ModelError, Var, DEFAULT_STATE_CAP,
};
use infograph::sim::{random_generative_model, xor_system, RandomModelSpec};
use proptest::prelude::*;

fn small_spec() -> impl Strategy<Value = RandomModelSpec> {
    (
        2usize..=3,
        1usize..=3,
        0usize..=2,
        any::<u64>(),
        prop::bool::ANY,
    )
        .prop_map(|(m, n, deg, seed, ternary)| {
            let mut spec = RandomModelSpec::binary(m, n, deg, seed);
            if ternary {
                spec.alphabets[0] = Alphabet::new(3).unwrap();
                spec.effect_floor = 0.02;
            }
            spec
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_is_normalized_and_positive(spec in small_spec()) {
        let model = random_generative_model(&spec).unwrap();
        let joint = enumerate_joint(&model, DEFAULT_STATE_CAP).unwrap();
        let total: f64 = joint.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(joint.probs().iter().all(|&p| p > 0.0));
        for code in (0..joint.len()).step_by(7) {
            let tr = joint.trajectory(code);
            let p = trajectory_probability(&model, &tr).unwrap();
            prop_assert!((p - joint.probs()[code]).abs() <= 1e-12 * p.max(1e-300).max(joint.probs()[code]));
        }
    }

    #[test]
    fn chain_of_conditionals_rebuilds_joint(spec in small_spec()) {
        // P(x) = prod over variables in time-major order of P(x_v | all earlier variables
        // of earlier ticks), since same-tick variables are conditionally independent.
        let model = random_generative_model(&spec).unwrap();
        let joint = enumerate_joint(&model, DEFAULT_STATE_CAP).unwrap();
        let (m, n) = (model.m(), model.n());
        let mut conds = Vec::new();
        for t in 0..n {
            let past: Vec<Var> = (0..t).flat_map(|s| (0..m).map(move |i| Var::new(i, s))).collect();
            for i in 0..m {
                conds.push(marginal_conditional(&joint, Var::new(i, t), &past).unwrap());
            }
        }
        for code in 0..joint.len() {
            let tr = joint.trajectory(code);
            let p: f64 = conds.iter().map(|c| c.prob_on(&tr).unwrap()).product();
            prop_assert!((p - joint.probs()[code]).abs() < 1e-9);
        }
        for c in &conds {
            for row in c.rows().flatten() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn builder_rejects_any_non_past_context(t in 0usize..3, s in 0usize..3, p in 0usize..2) {
        prop_assume!(s >= t);
        let b = GenerativeModelBuilder::binary(2, 3, 2).parents(0, &[1]).unwrap();
        let r = b.factor(0, t, vec![Var::new(p, s)], vec![0.5; 4]);
        let rejected = matches!(r, Err(ModelError::FutureConditioning { .. }));
        prop_assert!(rejected);
    }
}

#[test]
fn xor_model_passes_positivity() {
    assert!(validate_positivity(&xor_system(0.1, 3).unwrap()).is_ok());
}

#[test]
fn fair_coin_models_pass_positivity() {
    let mut b = GenerativeModelBuilder::binary(3, 2, 1);
    for i in 0..3 {
        for t in 0..2 {
            b = b.factor(i, t, vec![], vec![0.5, 0.5]).unwrap();
        }
    }
    assert!(validate_positivity(&b.build().unwrap()).is_ok());
}
