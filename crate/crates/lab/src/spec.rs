//! Experiment specification files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vluci::estimators::EstimatorKind;
use vluci::synth::SynthConfig;
use vluci::vluci::VluciConfig;

use crate::error::{LabError, Result};

/// Everything needed to reproduce one experiment.
///
/// Repeat `r` uses seed `base_seed + r` for data generation, the 80/20 split,
/// VLUCI training and every estimator fit. The `seed` fields inside `synth`
/// and `vluci` are overwritten per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub synth: SynthConfig,
    pub vluci: VluciConfig,
    pub estimators: Vec<EstimatorKind>,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            vluci: VluciConfig::default(),
            estimators: vec![EstimatorKind::t_learner(), EstimatorKind::s_learner(), EstimatorKind::ipw()],
            n_repeats: 100,
            base_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn field(name: &str, e: vluci::Error) -> LabError {
    LabError::Config(format!("{name}: {}", inner(&e)))
}

fn inner(e: &vluci::Error) -> String {
    match e {
        vluci::Error::Config(m) | vluci::Error::Data(m) | vluci::Error::State(m) => m.clone(),
        other => other.to_string(),
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| LabError::Config(format!("spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(LabError::io(path))?;
        Self::from_json(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate().map_err(|e| field("synth", e))?;
        self.vluci.validate().map_err(|e| field("vluci", e))?;
        if self.vluci.cu_dim != self.synth.cu_dim {
            return Err(LabError::Config(format!(
                "vluci.cu_dim: {} differs from synth.cu_dim {}",
                self.vluci.cu_dim, self.synth.cu_dim
            )));
        }
        if self.n_repeats == 0 {
            return Err(LabError::Config("n_repeats: must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(LabError::Config("estimators: at least one estimator is required".into()));
        }
        for (i, k) in self.estimators.iter().enumerate() {
            k.validate().map_err(|e| field(&format!("estimators[{i}]"), e))?;
        }
        Ok(())
    }

    /// Seed of repeat `r`.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        self.base_seed.wrapping_add(r as u64)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_repeats).map(|r| self.repeat_seed(r)).collect()
    }

    /// SHA-256 of the canonical JSON form: object keys sorted, defaults filled in.
    /// Independent of field order and whitespace in the source file.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("spec serialises");
        let canonical = serde_json::to_string(&value).expect("value serialises");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(ExperimentSpec::from_json("{}").unwrap(), ExperimentSpec::default());
    }

    #[test]
    fn hash_ignores_field_order_and_layout() {
        let a = ExperimentSpec::from_json(r#"{"n_repeats": 3, "base_seed": 7, "synth": {"n_samples": 50, "seed": 1}}"#).unwrap();
        let b = ExperimentSpec::from_json(
            r#"{
                "synth": {"seed": 1, "n_samples": 50},
                "base_seed": 7,
                "n_repeats": 3
            }"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentSpec { base_seed: 8, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentSpec::from_json(r#"{"n_repeats": 0}"#).unwrap_err().to_string();
        assert!(e.contains("n_repeats"), "{e}");
        let e = ExperimentSpec::from_json(r#"{"synth": {"n_sampels": 10}}"#).unwrap_err().to_string();
        assert!(e.contains("n_sampels"), "{e}");
        let e = ExperimentSpec::from_json(r#"{"vluci": {"batch_size": 0}}"#).unwrap_err().to_string();
        assert!(e.contains("vluci") && e.contains("batch_size"), "{e}");
        let e = ExperimentSpec::from_json(r#"{"synth": {"x_dim": 0}}"#).unwrap_err().to_string();
        assert!(e.contains("x_dim"), "{e}");
        let e = ExperimentSpec::from_json(r#"{"vluci": {"cu_dim": 2}}"#).unwrap_err().to_string();
        assert!(e.contains("cu_dim"), "{e}");
    }

    #[test]
    fn estimators_parse_by_kind() {
        let s = ExperimentSpec::from_json(r#"{"estimators": [{"kind": "ipw", "hidden": [8], "epochs": 3}]}"#).unwrap();
        assert_eq!(s.estimators.len(), 1);
        assert_eq!(s.estimators[0].name(), "ipw");
        assert_eq!(s.estimators[0].params().epochs, 3);
    }

    #[test]
    fn repeat_seeds_count_up_from_the_base() {
        let s = ExperimentSpec { base_seed: 40, n_repeats: 3, ..Default::default() };
        assert_eq!(s.seeds(), vec![40, 41, 42]);
    }
}
