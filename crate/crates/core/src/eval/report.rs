use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{mean_std, PredictionSet};
use super::ttest::paired_t_test;
use crate::data::StudentSequence;
use crate::error::Result;
use crate::model::{predict_sequence, QiktParams};

/// Predictions for every step of every sequence, in sequence order.
pub fn predict_all(params: &QiktParams, sequences: &[StudentSequence]) -> Result<PredictionSet> {
    let per_seq: Vec<(Vec<f64>, Vec<u8>)> = sequences
        .par_iter()
        .map(|seq| {
            let preds = predict_sequence(params, &seq.interactions)?;
            let labels = seq.interactions[1..].iter().map(|it| it.response).collect();
            Ok((preds, labels))
        })
        .collect::<Result<_>>()?;
    let mut set = PredictionSet::default();
    for (p, l) in per_seq {
        set.preds.extend(p);
        set.labels.extend(l);
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auc: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub name: String,
    pub folds: Vec<FoldMetrics>,
}

impl RunMetrics {
    pub fn aucs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.auc).collect()
    }

    pub fn auc_mean_std(&self) -> (f64, f64) {
        mean_std(&self.aucs())
    }

    pub fn acc_mean_std(&self) -> (f64, f64) {
        mean_std(&self.folds.iter().map(|f| f.acc).collect::<Vec<_>>())
    }
}

/// Fold metrics of one or more runs plus pairwise paired t-test p-values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub runs: Vec<RunMetrics>,
    /// `p_values[i][j]` pairs runs `i` and `j` on their shared folds (AUC);
    /// `None` when fewer than two folds are shared. The diagonal is 1.
    pub p_values: Vec<Vec<Option<f64>>>,
}

impl EvalReport {
    pub fn new(runs: Vec<RunMetrics>) -> Result<Self> {
        let k = runs.len();
        let mut p_values = vec![vec![None; k]; k];
        for i in 0..k {
            p_values[i][i] = Some(1.0);
            for j in i + 1..k {
                let (a, b): (Vec<f64>, Vec<f64>) = runs[i]
                    .folds
                    .iter()
                    .filter_map(|fa| {
                        runs[j]
                            .folds
                            .iter()
                            .find(|fb| fb.fold == fa.fold)
                            .map(|fb| (fa.auc, fb.auc))
                    })
                    .unzip();
                let p = if a.len() >= 2 { Some(paired_t_test(&a, &b)?) } else { None };
                p_values[i][j] = p;
                p_values[j][i] = p;
            }
        }
        Ok(Self { runs, p_values })
    }

    pub fn write_folds_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["run", "fold", "auc", "acc"])?;
        for run in &self.runs {
            for f in &run.folds {
                w.write_record([
                    run.name.clone(),
                    f.fold.to_string(),
                    format!("{:?}", f.auc),
                    format!("{:?}", f.acc),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["run", "folds", "auc_mean", "auc_std", "acc_mean", "acc_std"])?;
        for run in &self.runs {
            let (am, asd) = run.auc_mean_std();
            let (cm, csd) = run.acc_mean_std();
            w.write_record([
                run.name.clone(),
                run.folds.len().to_string(),
                format!("{am:?}"),
                format!("{asd:?}"),
                format!("{cm:?}"),
                format!("{csd:?}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Run × run matrix with `-` on the diagonal and `NA` where undefined.
    pub fn write_pvalues_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["run".to_string()];
        header.extend(self.runs.iter().map(|r| r.name.clone()));
        w.write_record(&header)?;
        for (i, run) in self.runs.iter().enumerate() {
            let mut rec = vec![run.name.clone()];
            for j in 0..self.runs.len() {
                rec.push(match (i == j, self.p_values[i][j]) {
                    (true, _) => "-".to_string(),
                    (false, Some(p)) => format!("{p:.4}"),
                    (false, None) => "NA".to_string(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self.runs.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
        let _ = writeln!(out, "{:<width$}  {:>5}  {:>17}  {:>17}", "run", "folds", "AUC", "ACC");
        for run in &self.runs {
            let (am, asd) = run.auc_mean_std();
            let (cm, csd) = run.acc_mean_std();
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>8.4}±{:<8.4}  {:>8.4}±{:<8.4}",
                run.name,
                run.folds.len(),
                am,
                asd,
                cm,
                csd
            );
        }
        out
    }
}
