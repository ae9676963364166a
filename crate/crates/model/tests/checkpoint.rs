//! Checkpoint persistence: byte-exact round trips and loss reproduction.

use cgram_autodiff::Tape;
use cgram_envs::dataset::to_raw;
use cgram_envs::{collect_dataset, make_env, EnvId};
use cgram_model::checkpoint::{
    load_checkpoint, quantize_params_to_f32, save_checkpoint, CheckpointError,
};
use cgram_model::{pendulum_config, sample_standard_normal, total_objective, Batch, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn save_load_save_is_byte_identical() {
    let model = Model::new(pendulum_config(), 31).unwrap();
    let mut first = Vec::new();
    save_checkpoint(&mut first, &model).unwrap();
    let loaded = load_checkpoint(&mut first.as_slice()).unwrap();
    assert_eq!(loaded.config, model.config);
    let mut second = Vec::new();
    save_checkpoint(&mut second, &loaded).unwrap();
    assert_eq!(first, second);
}

#[test]
fn load_is_value_exact_at_f32() {
    let mut model = Model::new(pendulum_config(), 32).unwrap();
    quantize_params_to_f32(&mut model);
    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &model).unwrap();
    let loaded = load_checkpoint(&mut bytes.as_slice()).unwrap();
    for (name, tensor) in model.params.iter() {
        assert_eq!(tensor.data(), loaded.params.get(name).unwrap().data(), "{name}");
    }
}

#[test]
fn reloaded_model_reproduces_loss_on_fixed_batch() {
    let env = make_env(EnvId::Pendulum);
    let records = collect_dataset(env.as_ref(), 8, 55, 8).unwrap();
    let raw: Vec<_> = records.iter().map(to_raw).collect();
    let indices: Vec<usize> = (0..8).collect();
    let batch = Batch::from_records(&raw, &indices, (48, 48), 1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(56);
    let noise = sample_standard_normal(&mut rng, &[8, 2]);

    let mut model = Model::new(pendulum_config(), 33).unwrap();
    quantize_params_to_f32(&mut model);
    let loss_of = |m: &Model| {
        let mut tape = Tape::new();
        let eval = total_objective(m, &mut tape, &batch, 0.5, &noise).unwrap();
        tape.value(eval.loss).item().unwrap()
    };
    let before = loss_of(&model);

    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &model).unwrap();
    let loaded = load_checkpoint(&mut bytes.as_slice()).unwrap();
    let after = loss_of(&loaded);
    assert!(
        (before - after).abs() <= 1e-6,
        "loss before {before} vs after reload {after}"
    );
    assert_eq!(before.to_bits(), after.to_bits());
}

#[test]
fn truncated_checkpoint_is_format_error() {
    let model = Model::new(pendulum_config(), 34).unwrap();
    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &model).unwrap();
    bytes.truncate(bytes.len() / 2);
    match load_checkpoint(&mut bytes.as_slice()) {
        Err(CheckpointError::Format { .. }) => {}
        other => panic!("expected format error, got {:?}", other.map(|_| "model")),
    }
}

#[test]
fn bad_magic_is_format_error_naming_the_field() {
    let bytes = b"XXXX\x01\x00\x00\x00".to_vec();
    match load_checkpoint(&mut bytes.as_slice()) {
        Err(CheckpointError::Format { field, .. }) => assert_eq!(field, "magic"),
        other => panic!("expected format error, got {:?}", other.map(|_| "model")),
    }
}

#[test]
fn version_bump_is_unsupported_version_error() {
    let model = Model::new(pendulum_config(), 35).unwrap();
    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &model).unwrap();
    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    match load_checkpoint(&mut bytes.as_slice()) {
        Err(CheckpointError::UnsupportedVersion(7)) => {}
        other => panic!("expected version error, got {:?}", other.map(|_| "model")),
    }
}
