use std::fs;

use vluci::synth::{generate, SynthConfig};
use vluci::vluci::{VluciConfig, VluciModel};
use vluci_lab::checkpoint::{self, CheckpointHeader};
use vluci_lab::dataset::{read_dataset, read_observational, read_truth_meta, write_dataset, TRUTH_META};
use vluci_lab::LabError;

fn small() -> SynthConfig {
    SynthConfig { n_samples: 120, x_dim: 3, seed: 11, ..SynthConfig::default() }
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&small()).unwrap();
    write_dataset(dir.path(), &ds, true).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.obs, ds.obs);
    assert_eq!(back.truth, ds.truth);
    assert_eq!(back.weights, ds.weights);
    assert_eq!(back.covariance, ds.covariance);
}

#[test]
fn unconfounded_metadata_has_zero_confounder_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { confounded: false, ..small() };
    write_dataset(dir.path(), &generate(&cfg).unwrap(), false).unwrap();
    let meta = read_truth_meta(&dir.path().join(TRUTH_META)).unwrap();
    assert!(!meta.confounded);
    assert!(meta.weights.cu_t.iter().chain(&meta.weights.cu_y).all(|&w| w == 0.0));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.csv");
    fs::write(&path, "x_0,t,y\n0.5,1,2\n0.25,0,oops\n").unwrap();
    match read_observational(&path) {
        Err(LabError::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("oops"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(&path, "x_0,t,y\n0.5,1,2\n0.25,2,1\n").unwrap();
    let err = read_observational(&path).unwrap_err();
    assert!(matches!(err, LabError::Parse { line: 3, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    fs::write(&path, "x_0,t,y\n0.5,1\n").unwrap();
    assert!(matches!(read_observational(&path), Err(LabError::Parse { line: 2, .. })));
}

#[test]
fn missing_columns_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.csv");
    fs::write(&path, "x_0,y\n0.5,2\n").unwrap();
    let err = read_observational(&path).unwrap_err().to_string();
    assert!(err.contains("missing column t"), "{err}");
}

#[test]
fn checkpoint_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = VluciConfig { epochs: 1, ..VluciConfig::default() };
    let model = VluciModel::new(&cfg, 3).unwrap();
    let path = dir.path().join("m.vlck");
    let header = CheckpointHeader { config: cfg, trained: false, split_seed: 5 };
    checkpoint::save(&path, &model, &header).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.header, header);
    for (a, b) in back.model.nets().iter().zip(model.nets()) {
        assert_eq!(a.layer_dims(), b.layer_dims());
        assert_eq!(a.params(), b.params());
    }
    fs::write(&path, b"VLCK").unwrap();
    assert_eq!(checkpoint::load(&path).err().map(|e| e.exit_code()), Some(3));
}
