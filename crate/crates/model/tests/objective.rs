//! Objective-level tests: term accounting, finite-difference gradients, the
//! beta sensitivity identity, and a single-batch descent sanity check.

use cgram_autodiff::{adam_step, AdamConfig, AdamState, Tape};
use cgram_envs::dataset::to_raw;
use cgram_envs::{collect_dataset, make_env, EnvId};
use cgram_model::{pendulum_config, sample_standard_normal, total_objective, Batch, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn pendulum_batch(n: usize, seed: u64) -> Batch {
    let env = make_env(EnvId::Pendulum);
    let records = collect_dataset(env.as_ref(), n, seed, 8).unwrap();
    let raw: Vec<_> = records.iter().map(to_raw).collect();
    let indices: Vec<usize> = (0..n).collect();
    Batch::from_records(&raw, &indices, (48, 48), 1).unwrap()
}

#[test]
fn beta_zero_equals_prediction_terms_exactly() {
    let model = Model::new(pendulum_config(), 21).unwrap();
    let batch = pendulum_batch(4, 100);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let noise = sample_standard_normal(&mut rng, &[4, 2]);

    let mut tape = Tape::new();
    let eval = total_objective(&model, &mut tape, &batch, 0.0, &noise).unwrap();
    let total = tape.value(eval.loss).item().unwrap();
    let d = eval.diagnostics;
    let expected = d.reconstruction + model.config.kl_weight * d.kl;
    assert_eq!(total.to_bits(), expected.to_bits());
    assert_eq!(d.total.to_bits(), expected.to_bits());
    assert!(d.constraint.is_finite());
}

#[test]
fn objective_is_deterministic_for_fixed_noise() {
    let model = Model::new(pendulum_config(), 22).unwrap();
    let batch = pendulum_batch(3, 101);
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let noise = sample_standard_normal(&mut rng, &[3, 2]);

    let run = || {
        let mut tape = Tape::new();
        let eval = total_objective(&model, &mut tape, &batch, 0.3, &noise).unwrap();
        tape.value(eval.loss).item().unwrap()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn beta_sensitivity_is_minus_constraint() {
    // evaluating at two beta values with identical parameters and noise:
    // (total(b2) - total(b1)) / (b2 - b1) == -l_omega
    let model = Model::new(pendulum_config(), 23).unwrap();
    let batch = pendulum_batch(3, 102);
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let noise = sample_standard_normal(&mut rng, &[3, 2]);

    let eval_at = |beta: f64| {
        let mut tape = Tape::new();
        let eval = total_objective(&model, &mut tape, &batch, beta, &noise).unwrap();
        (tape.value(eval.loss).item().unwrap(), eval.diagnostics)
    };
    let (l1, d1) = eval_at(0.25);
    let (l2, d2) = eval_at(0.75);
    assert!((d1.constraint - d2.constraint).abs() <= 1e-12);
    let slope = (l2 - l1) / 0.5;
    assert!(
        (slope + d1.constraint).abs() <= 1e-9 * (1.0 + d1.constraint.abs()),
        "slope {slope} vs -constraint {}",
        -d1.constraint
    );
}

#[test]
fn gradients_match_finite_differences_on_sampled_parameters() {
    let model = Model::new(pendulum_config(), 24).unwrap();
    let batch = pendulum_batch(2, 103);
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let noise = sample_standard_normal(&mut rng, &[2, 2]);
    let beta = 0.4;

    let mut tape = Tape::new();
    let eval = total_objective(&model, &mut tape, &batch, beta, &noise).unwrap();
    let grads = tape.backward(eval.loss).unwrap();
    let by_name = eval.reg.collect(&grads, &model.params);

    let eval_loss = |store: &cgram_autodiff::ParameterStore| {
        let probe = Model { config: model.config.clone(), params: store.clone() };
        let mut t = Tape::new();
        let e = total_objective(&probe, &mut t, &batch, beta, &noise).unwrap();
        t.value(e.loss).item().unwrap()
    };

    let perturbed = |name: &str, e: usize, delta: f64| {
        let mut store = model.params.clone();
        let mut t = store.get(name).unwrap().clone();
        t.data_mut()[e] += delta;
        store.set_values(name, t).unwrap();
        eval_loss(&store)
    };
    // Richardson-extrapolated central differences at a small step: the
    // log-det term has steep curvature at initialization (so a plain O(h^2)
    // difference is too coarse) and the relu kinks must stay outside the
    // probed interval (so the step must be small).
    let numeric_grad = |name: &str, e: usize| {
        let h = 1e-6;
        let coarse = (perturbed(name, e, h) - perturbed(name, e, -h)) / (2.0 * h);
        let fine = (perturbed(name, e, 0.5 * h) - perturbed(name, e, -0.5 * h)) / h;
        (4.0 * fine - coarse) / 3.0
    };

    let names: Vec<String> = model.params.names().cloned().collect();
    let mut name_rng = ChaCha12Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let name = &names[name_rng.gen_range(0..names.len())];
        let tensor = model.params.get(name).unwrap();
        let e = name_rng.gen_range(0..tensor.len());
        let analytic = by_name[name].data()[e];
        let numeric = numeric_grad(name, e);

        let denom = 1.0_f64.max(analytic.abs()).max(numeric.abs());
        let rel = (analytic - numeric).abs() / denom;
        worst = worst.max(rel);
        assert!(
            rel <= 1e-4,
            "{name}[{e}]: analytic {analytic} vs numeric {numeric} (rel {rel:.3e})"
        );
    }
    println!("worst relative error over 20 sampled parameters: {worst:.3e}");
}

#[test]
fn one_adam_epoch_on_fixed_batch_decreases_loss() {
    let mut model = Model::new(pendulum_config(), 25).unwrap();
    let batch = pendulum_batch(64, 104);
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let noise = sample_standard_normal(&mut rng, &[64, 2]);

    let mut tape = Tape::new();
    let eval = total_objective(&model, &mut tape, &batch, 0.0, &noise).unwrap();
    let initial = tape.value(eval.loss).item().unwrap();
    let grads = tape.backward(eval.loss).unwrap();
    let by_name = eval.reg.collect(&grads, &model.params);
    drop(tape);

    let mut state = AdamState::new(AdamConfig::with_learning_rate(3e-4));
    adam_step(&mut model.params, &by_name, &mut state).unwrap();

    let mut tape2 = Tape::new();
    let eval2 = total_objective(&model, &mut tape2, &batch, 0.0, &noise).unwrap();
    let after = tape2.value(eval2.loss).item().unwrap();
    assert!(after < initial, "loss {initial} -> {after}");
}
