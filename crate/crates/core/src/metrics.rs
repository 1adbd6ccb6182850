//! Counterfactual accuracy metrics and multi-run aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, data_err, Result};
use crate::math;

fn check(ite_true: &[f64], ite_hat: &[f64]) -> Result<()> {
    if ite_true.len() != ite_hat.len() {
        return Err(config_err!("ITE vectors differ in length: {} vs {}", ite_true.len(), ite_hat.len()));
    }
    if ite_true.is_empty() {
        return Err(data_err!("metrics need at least one sample"));
    }
    Ok(())
}

/// Precision in estimation of heterogeneous effects: mean squared ITE error.
/// Tables report its square root.
pub fn pehe(ite_true: &[f64], ite_hat: &[f64]) -> Result<f64> {
    check(ite_true, ite_hat)?;
    Ok(ite_true.iter().zip(ite_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ite_true.len() as f64)
}

pub fn sqrt_pehe(ite_true: &[f64], ite_hat: &[f64]) -> Result<f64> {
    pehe(ite_true, ite_hat).map(math::sqrt)
}

/// Absolute error of the average treatment effect.
pub fn ate_error(ite_true: &[f64], ite_hat: &[f64]) -> Result<f64> {
    check(ite_true, ite_hat)?;
    Ok((math::mean(ite_true) - math::mean(ite_hat)).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Metrics of one estimator fit in one repeat.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunMetrics {
    pub estimator: String,
    pub seed: u64,
    pub augmented: bool,
    pub sqrt_pehe_train: f64,
    pub sqrt_pehe_test: f64,
    pub eps_ate_train: f64,
    pub eps_ate_test: f64,
}

impl RunMetrics {
    pub fn sqrt_pehe(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.sqrt_pehe_train,
            Split::Test => self.sqrt_pehe_test,
        }
    }

    pub fn eps_ate(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.eps_ate_train,
            Split::Test => self.eps_ate_test,
        }
    }
}

/// Mean with standard error `sd / sqrt(n)` (`n - 1` denominator).
/// The standard error is undefined for a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean: f64,
    pub stderr: Option<f64>,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let stderr = (xs.len() >= 2).then(|| math::sqrt(math::sample_variance(xs) / xs.len() as f64));
        Self { mean: math::mean(xs), stderr }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateCell {
    pub estimator: String,
    pub augmented: bool,
    pub split: Split,
    pub count: usize,
    pub sqrt_pehe: Summary,
    pub eps_ate: Summary,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateTable {
    /// Estimators in order of first appearance.
    pub estimators: Vec<String>,
    /// Ordered by estimator, then split (train, test), then raw before augmented.
    pub cells: Vec<AggregateCell>,
}

impl AggregateTable {
    pub fn cell(&self, estimator: &str, augmented: bool, split: Split) -> Option<&AggregateCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.augmented == augmented && c.split == split)
    }
}

/// Mean and standard error per (estimator, augmented, split).
pub fn aggregate(runs: &[RunMetrics]) -> Result<AggregateTable> {
    let mut estimators: Vec<String> = Vec::new();
    for r in runs {
        if !estimators.contains(&r.estimator) {
            estimators.push(r.estimator.clone());
        }
    }
    if estimators.is_empty() {
        return Err(data_err!("no runs to aggregate"));
    }
    let mut cells = Vec::new();
    for est in &estimators {
        for split in [Split::Train, Split::Test] {
            for augmented in [false, true] {
                let members: Vec<&RunMetrics> =
                    runs.iter().filter(|r| &r.estimator == est && r.augmented == augmented).collect();
                if members.is_empty() {
                    return Err(data_err!(
                        "empty aggregate cell: estimator={est} augmented={augmented} split={}",
                        split.name()
                    ));
                }
                let pehe: Vec<f64> = members.iter().map(|r| r.sqrt_pehe(split)).collect();
                let ate: Vec<f64> = members.iter().map(|r| r.eps_ate(split)).collect();
                cells.push(AggregateCell {
                    estimator: est.clone(),
                    augmented,
                    split,
                    count: members.len(),
                    sqrt_pehe: Summary::of(&pehe),
                    eps_ate: Summary::of(&ate),
                });
            }
        }
    }
    Ok(AggregateTable { estimators, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn pehe_examples() {
        assert_eq!(pehe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(pehe(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.25);
        assert_eq!(sqrt_pehe(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        let truth = [0.3, -1.0, 2.5];
        let biased: Vec<f64> = truth.iter().map(|v| v + 0.75).collect();
        assert!((pehe(&truth, &biased).unwrap() - 0.5625).abs() < 1e-15);
        assert!(pehe(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ate_examples() {
        assert_eq!(ate_error(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ate_error(&[1.0, 1.0], &[0.5, 1.0]).unwrap(), 0.25);
        assert!(ate_error(&[], &[]).is_err());
    }

    fn run(est: &str, augmented: bool, v: f64) -> RunMetrics {
        RunMetrics {
            estimator: est.into(),
            seed: 0,
            augmented,
            sqrt_pehe_train: v,
            sqrt_pehe_test: v,
            eps_ate_train: v,
            eps_ate_test: v,
        }
    }

    #[test]
    fn aggregate_examples() {
        let runs = vec![run("t", false, 0.6), run("t", false, 0.8), run("t", true, 0.5), run("t", true, 0.5)];
        let table = aggregate(&runs).unwrap();
        let raw = table.cell("t", false, Split::Test).unwrap();
        assert!((raw.sqrt_pehe.mean - 0.7).abs() < 1e-15);
        assert!((raw.sqrt_pehe.stderr.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(raw.count, 2);
        let aug = table.cell("t", true, Split::Train).unwrap();
        assert_eq!(aug.eps_ate.stderr, Some(0.0));
        assert_eq!(table.cells.len(), 4);
    }

    #[test]
    fn aggregate_reports_empty_cell() {
        let err = aggregate(&[run("ipw", false, 0.1), run("ipw", false, 0.2)]).unwrap_err();
        assert!(alloc::format!("{err}").contains("estimator=ipw augmented=true"));
    }

    #[test]
    fn aggregate_order_is_stable() {
        let runs = vec![run("b", false, 1.0), run("a", true, 1.0), run("a", false, 1.0), run("b", true, 1.0)];
        let t = aggregate(&runs).unwrap();
        assert_eq!(t.estimators, vec![String::from("b"), String::from("a")]);
        assert_eq!(t.cells[0].estimator, "b");
        assert_eq!((t.cells[0].split, t.cells[0].augmented), (Split::Train, false));
        assert_eq!((t.cells[1].split, t.cells[1].augmented), (Split::Train, true));
    }

    proptest! {
        #[test]
        fn ate_error_bounded_by_root_pehe(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assert!(ate_error(&a, &b).unwrap() <= sqrt_pehe(&a, &b).unwrap() + 1e-12);
        }

        #[test]
        fn metrics_are_permutation_invariant(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30), k in 0usize..30) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let k = k % a.len();
            let (mut ra, mut rb) = (a.clone(), b.clone());
            ra.rotate_left(k);
            rb.rotate_left(k);
            prop_assert!((pehe(&a, &b).unwrap() - pehe(&ra, &rb).unwrap()).abs() < 1e-9);
            prop_assert!((ate_error(&a, &b).unwrap() - ate_error(&ra, &rb).unwrap()).abs() < 1e-9);
        }
    }
}
