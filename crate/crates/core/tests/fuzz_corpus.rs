//! Replays the fuzz corpus seeds through the parsers they target.

use std::fs;
use std::path::PathBuf;

use sagd_mixing::harness::emit::{parse_table_csv, parse_trajectory_csv};
use sagd_mixing::harness::{ingest_reader, ExperimentConfig};
use sagd_mixing::{MomentSpec, TuneConfig};

fn seed(target: &str, name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fuzz", "corpus", target, name]
        .iter()
        .collect();
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn model_seeds() {
    let g = MomentSpec::from_json_slice(&seed("model_json", "gaussian.json")).unwrap();
    assert_eq!(g.sigma(), &[0.05, 1.0]);
    let r = MomentSpec::from_json_slice(&seed("model_json", "rotated.json")).unwrap();
    assert!(!r.has_identity_basis());
    // Declared fourth moment disagrees with the uniform sampler.
    assert!(MomentSpec::from_json_slice(&seed("model_json", "bad_moment.json")).is_err());
}

#[test]
fn tune_config_seeds() {
    let d = TuneConfig::from_json_str(&text("tune_config_json", "default.json")).unwrap();
    assert_eq!(d.gamma.values().len(), 33);
    let v = TuneConfig::from_json_str(&text("tune_config_json", "values.json")).unwrap();
    assert!(v.swap_indices);
}

#[test]
fn experiment_config_seeds() {
    for name in ["gaussian.json", "dataset.json", "noisy.json"] {
        ExperimentConfig::from_json_str(&text("experiment_config_json", name)).unwrap();
    }
}

#[test]
fn dataset_seeds() {
    let r = ingest_reader(&seed("dataset_csv", "rademacher.csv")[..], "r", "y", 0.0).unwrap();
    assert_eq!(r.sigma(), &[1.0]);
    let c = ingest_reader(&seed("dataset_csv", "collinear_constant.csv")[..], "c", "y", 1e-3).unwrap();
    assert_eq!(c.dropped(), &["c".to_string()]);
    assert!(ingest_reader(&seed("dataset_csv", "non_numeric.csv")[..], "n", "y", 0.0).is_err());
}

#[test]
fn csv_seeds() {
    assert_eq!(
        parse_trajectory_csv(&seed("trajectory_csv", "decay.csv")[..])
            .unwrap()
            .len(),
        4
    );
    assert!(parse_trajectory_csv(&seed("trajectory_csv", "gap.csv")[..]).is_err());
    let rows = parse_table_csv(&seed("table_csv", "rates.csv")[..]).unwrap();
    assert!(rows[1].empirical_rate.is_nan());
    assert!(parse_table_csv(&seed("table_csv", "empty.csv")[..]).unwrap().is_empty());
}
