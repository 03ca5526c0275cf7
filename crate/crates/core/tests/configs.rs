//! The JSON files under `configs/` encode the built-in instances.

use std::path::PathBuf;

use matchq::instances;
use matchq::model::{validate_config, SystemConfig};

fn shipped(name: &str) -> SystemConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    SystemConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn shipped_configs_match_instances() {
    for (file, built) in [
        ("two_state_matching.json", instances::two_state_matching()),
        ("two_queue.json", instances::two_queue_example()),
        ("single_queue.json", instances::single_queue_example()),
    ] {
        let cfg = shipped(file);
        assert_eq!(cfg.spec(), built.spec(), "{file}");
        assert_eq!(cfg.hash(), built.hash(), "{file}");
        assert!(validate_config(&cfg).is_empty(), "{file}");
    }
}

#[test]
fn hash_survives_a_round_trip() {
    let cfg = instances::two_state_matching();
    let back = SystemConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn unknown_keys_are_rejected() {
    let mut value: serde_json::Value = serde_json::from_str(&instances::two_queue_example().to_json_pretty()).unwrap();
    value["surplus"] = serde_json::json!(1);
    assert!(SystemConfig::from_json_str(&value.to_string()).is_err());
}
