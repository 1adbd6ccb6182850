//! Tabular outputs: loss trajectories, predictions, per-run metrics and the
//! aggregate effect-estimation table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use vluci::estimators::CounterfactualPrediction;
use vluci::metrics::{AggregateTable, RunMetrics, Split, Summary};
use vluci::vluci::LossReport;

use crate::error::{LabError, Result};

pub(crate) fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(LabError::io(path))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn loss_csv(history: &[LossReport]) -> String {
    csv_text(
        &["epoch", "l_tX", "l_yX", "l_kl", "l_recT", "l_recY", "total"],
        history.iter().map(|r| {
            vec![r.epoch.to_string(), num(r.l_tx), num(r.l_yx), num(r.l_kl), num(r.l_rec_t), num(r.l_rec_y), num(r.total)]
        }),
    )
}

pub fn predictions_csv(p: &CounterfactualPrediction) -> String {
    let with_interval = p.interval_low.is_some() && p.interval_high.is_some();
    let mut header = vec!["row", "y0_hat", "y1_hat", "ite_hat"];
    if with_interval {
        header.extend(["lo", "hi"]);
    }
    csv_text(
        &header,
        (0..p.ite_hat.len()).map(|i| {
            let mut row = vec![i.to_string(), num(p.y0_hat[i]), num(p.y1_hat[i]), num(p.ite_hat[i])];
            if let (Some(lo), Some(hi)) = (&p.interval_low, &p.interval_high) {
                row.push(num(lo[i]));
                row.push(num(hi[i]));
            }
            row
        }),
    )
}

pub fn runs_csv(runs: &[RunMetrics]) -> String {
    csv_text(
        &["estimator", "seed", "augmented", "sqrt_pehe_train", "sqrt_pehe_test", "eps_ate_train", "eps_ate_test"],
        runs.iter().map(|r| {
            vec![
                r.estimator.clone(),
                r.seed.to_string(),
                r.augmented.to_string(),
                num(r.sqrt_pehe_train),
                num(r.sqrt_pehe_test),
                num(r.eps_ate_train),
                num(r.eps_ate_test),
            ]
        }),
    )
}

pub fn aggregate_csv(table: &AggregateTable) -> String {
    csv_text(
        &[
            "estimator",
            "augmented",
            "split",
            "count",
            "sqrt_pehe_mean",
            "sqrt_pehe_stderr",
            "eps_ate_mean",
            "eps_ate_stderr",
        ],
        table.cells.iter().map(|c| {
            vec![
                c.estimator.clone(),
                c.augmented.to_string(),
                c.split.name().to_string(),
                c.count.to_string(),
                num(c.sqrt_pehe.mean),
                opt(c.sqrt_pehe.stderr),
                num(c.eps_ate.mean),
                opt(c.eps_ate.stderr),
            ]
        }),
    )
}

fn summary_cell(s: &Summary) -> String {
    match s.stderr {
        Some(se) => format!("{:.3} ± {:.3}", s.mean, se),
        None => format!("{:.3}", s.mean),
    }
}

/// Methods as rows; for each metric the columns are training, training with
/// the learned confounder, test, and test with the learned confounder.
pub fn aggregate_markdown(table: &AggregateTable) -> String {
    let header = [
        "Method",
        "√ε_PEHE train",
        "+Ĉu",
        "√ε_PEHE test",
        "+Ĉu",
        "ε_ATE train",
        "+Ĉu",
        "ε_ATE test",
        "+Ĉu",
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for est in &table.estimators {
        let mut row = vec![est.clone()];
        for metric in 0..2 {
            for split in [Split::Train, Split::Test] {
                for augmented in [false, true] {
                    let text = table
                        .cell(est, augmented, split)
                        .map(|c| summary_cell(if metric == 0 { &c.sqrt_pehe } else { &c.eps_ate }))
                        .unwrap_or_else(|| "-".into());
                    row.push(text);
                }
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].chars().count()).chain([header[j].chars().count()]).max().unwrap_or(1))
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
    let mut out = String::new();
    let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header.iter().zip(&widths).map(|(h, &w)| pad(h, w)).collect()));
    out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect()));
    for r in &rows {
        out.push_str(&line(r.iter().zip(&widths).map(|(c, &w)| pad(c, w)).collect()));
    }
    out
}

/// `index,cu_true,mu,lo,hi` with a band of three posterior standard deviations.
/// `cu_true` is left empty when the ground truth is unavailable.
pub fn band_csv(cu_true: Option<&[f64]>, mu: &[f64], sd: &[f64]) -> String {
    let mut s = String::from("index,cu_true,mu,mu_minus_3sd,mu_plus_3sd\n");
    for i in 0..mu.len() {
        let truth = cu_true.map(|c| num(c[i])).unwrap_or_default();
        let _ = writeln!(s, "{i},{truth},{},{},{}", num(mu[i]), num(mu[i] - 3.0 * sd[i]), num(mu[i] + 3.0 * sd[i]));
    }
    s
}

/// Fitted direct effects next to their true counterparts, for scatter plots.
pub fn direct_effects_csv(t_hat: &[f64], y_hat: &[f64], truth: Option<(&[f64], &[f64])>) -> String {
    let mut s = String::from("index,t_x_hat,t_x_true,y_x_hat,y_x_true\n");
    for i in 0..t_hat.len() {
        let (tt, yt) = truth.map(|(t, y)| (num(t[i]), num(y[i]))).unwrap_or_default();
        let _ = writeln!(s, "{i},{},{tt},{},{yt}", num(t_hat[i]), num(y_hat[i]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use vluci::metrics::aggregate;

    fn run(est: &str, seed: u64, augmented: bool, v: f64) -> RunMetrics {
        RunMetrics {
            estimator: est.into(),
            seed,
            augmented,
            sqrt_pehe_train: v,
            sqrt_pehe_test: v + 0.1,
            eps_ate_train: v / 2.0,
            eps_ate_test: v / 4.0,
        }
    }

    #[test]
    fn loss_header_matches_the_schema() {
        let h = vec![LossReport { epoch: 0, l_tx: 1.0, l_yx: 2.0, l_kl: 0.5, l_rec_t: 0.25, l_rec_y: 0.125, total: 3.875 }];
        assert_eq!(loss_csv(&h), "epoch,l_tX,l_yX,l_kl,l_recT,l_recY,total\n0,1,2,0.5,0.25,0.125,3.875\n");
    }

    #[test]
    fn interval_columns_appear_only_with_intervals() {
        let mut p = CounterfactualPrediction {
            y0_hat: vec![1.0],
            y1_hat: vec![1.5],
            ite_hat: vec![0.5],
            interval_low: None,
            interval_high: None,
        };
        assert_eq!(predictions_csv(&p), "row,y0_hat,y1_hat,ite_hat\n0,1,1.5,0.5\n");
        p.interval_low = Some(vec![0.25]);
        p.interval_high = Some(vec![0.75]);
        assert_eq!(predictions_csv(&p), "row,y0_hat,y1_hat,ite_hat,lo,hi\n0,1,1.5,0.5,0.25,0.75\n");
    }

    #[test]
    fn markdown_has_one_row_per_method() {
        let runs = vec![
            run("t_learner", 0, false, 0.6),
            run("t_learner", 1, false, 0.8),
            run("t_learner", 0, true, 0.3),
            run("t_learner", 1, true, 0.5),
            run("ipw", 0, false, 0.2),
            run("ipw", 1, false, 0.2),
            run("ipw", 0, true, 0.1),
            run("ipw", 1, true, 0.1),
        ];
        let table = aggregate(&runs).unwrap();
        let md = aggregate_markdown(&table);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("| t_learner"));
        assert!(lines[2].contains("0.700 ± 0.100"));
        assert!(lines[3].contains("0.200 ± 0.000"));
        assert_eq!(lines[0].matches('|').count(), 10);
        let csv = aggregate_csv(&table);
        assert_eq!(csv.lines().count(), 1 + 8);
        assert!(csv.contains("t_learner,false,train,2,0.7,"));
    }

    #[test]
    fn band_marks_missing_truth_as_empty() {
        let s = band_csv(None, &[0.0], &[1.0]);
        assert_eq!(s.lines().nth(1).unwrap(), "0,,0,-3,3");
        let s = band_csv(Some(&[0.5]), &[0.0], &[1.0]);
        assert_eq!(s.lines().nth(1).unwrap(), "0,0.5,0,-3,3");
    }
}
