//! Pinned benchmark instances: generator output must not drift, and every
//! emitted file must read back to the same object.

use std::path::PathBuf;

use bethe_core::bench::{
    generate_cgm, generate_prototype, generate_softcon, CgmSpec, ExperimentConfig, PrototypeSpec,
    SoftconSpec, TaskConfig,
};
use bethe_core::energy::{EnergyFile, EnergySpec};
use bethe_core::learning::Dataset;
use bethe_core::ChainModel;

fn pinned(task: &str) -> (u64, String) {
    let fixture: serde_json::Value = serde_json::from_str(include_str!("fixtures/pinned_tasks.json")).unwrap();
    let entry = &fixture[task];
    (
        entry["seed"].as_u64().unwrap(),
        entry["hash"].as_str().unwrap().to_string(),
    )
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(path).unwrap()
}

fn assert_dataset_round_trip(dir: &std::path::Path, name: &str, data: &Dataset) {
    let path = dir.join(format!("{name}.jsonl"));
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(&back, data);
    assert_eq!(back.content_hash().unwrap(), data.content_hash().unwrap());
}

fn assert_energy_round_trip(dir: &std::path::Path, spec: &EnergySpec) {
    let path = dir.join("energy.toml");
    EnergyFile::new(spec.clone()).save(&path).unwrap();
    assert_eq!(&EnergyFile::load(&path).unwrap().spec, spec);
}

#[test]
fn softcon_is_pinned() {
    let (seed, hash) = pinned("softcon");
    let spec = SoftconSpec {
        seed,
        ..SoftconSpec::default()
    };
    let task = generate_softcon(&spec).unwrap();
    assert_eq!(task.hash().unwrap(), hash);
    let TaskConfig::Softcon(from_config) = config("softcon.toml").task else {
        panic!("softcon.toml holds another task");
    };
    assert_eq!(from_config, spec);

    let dir = tempfile::tempdir().unwrap();
    for (name, data) in [("train", &task.train), ("dev", &task.dev), ("test", &task.test)] {
        assert_dataset_round_trip(dir.path(), name, data);
    }
    assert_energy_round_trip(dir.path(), &task.energy);
    let truth = dir.path().join("truth.json");
    task.truth.save(&truth).unwrap();
    assert_eq!(ChainModel::load(&truth).unwrap(), task.truth);
}

#[test]
fn prototype_is_pinned() {
    let (seed, hash) = pinned("prototype");
    let spec = PrototypeSpec {
        seed,
        ..PrototypeSpec::default()
    };
    let task = generate_prototype(&spec).unwrap();
    assert_eq!(task.hash().unwrap(), hash);
    let TaskConfig::Prototype(from_config) = config("prototype.toml").task else {
        panic!("prototype.toml holds another task");
    };
    assert_eq!(from_config, spec);

    let dir = tempfile::tempdir().unwrap();
    for (name, data) in [("train", &task.train), ("dev", &task.dev), ("test", &task.test)] {
        assert_dataset_round_trip(dir.path(), name, data);
    }
    assert_energy_round_trip(dir.path(), &task.unigram);
    assert_energy_round_trip(dir.path(), &task.full);
}

#[test]
fn cgm_is_pinned() {
    let (seed, hash) = pinned("cgm");
    let spec = CgmSpec {
        seed,
        ..CgmSpec::default()
    };
    let inst = generate_cgm(&spec).unwrap();
    assert_eq!(inst.hash().unwrap(), hash);
    let TaskConfig::Cgm(from_config) = config("cgm.toml").task else {
        panic!("cgm.toml holds another task");
    };
    assert_eq!(from_config, spec);
    assert!(spec.num_states() >= 25);

    let dir = tempfile::tempdir().unwrap();
    let theta = dir.path().join("theta.json");
    inst.theta.save(&theta).unwrap();
    assert_eq!(ChainModel::load(&theta).unwrap(), inst.theta);
    assert_energy_round_trip(dir.path(), &inst.energy);
}

#[test]
fn a_different_seed_changes_the_hash() {
    let (seed, hash) = pinned("softcon");
    let spec = SoftconSpec {
        seed: seed + 1,
        ..SoftconSpec::default()
    };
    assert_ne!(generate_softcon(&spec).unwrap().hash().unwrap(), hash);
}

#[test]
fn shipped_configs_round_trip_through_toml() {
    for name in ["softcon.toml", "prototype.toml", "cgm.toml"] {
        let cfg = config(name);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg, "{name}");
    }
}
