use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::trainer::{train, TrainReport};
use crate::data::{kfold_split, Dataset, Fold, StudentSequence};
use crate::error::{Error, Result};
use crate::eval::{predict_all, EvalReport, FoldMetrics, RunMetrics};
use crate::model::{ModelConfig, QiktParams, Variant};

pub const DEFAULT_FOLDS: usize = 5;

fn gather(ds: &Dataset, idx: &[usize]) -> Vec<StudentSequence> {
    idx.iter().map(|&i| ds.sequences[i].clone()).collect()
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub split: Fold,
    pub report: TrainReport,
    pub test_auc: f64,
    pub test_acc: f64,
    pub best: QiktParams,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub model: ModelConfig,
    pub folds: Vec<FoldResult>,
}

impl CvResult {
    pub fn metrics(&self, name: &str) -> RunMetrics {
        RunMetrics {
            name: name.to_string(),
            folds: self
                .folds
                .iter()
                .map(|f| FoldMetrics {
                    fold: f.fold,
                    auc: f.test_auc,
                    acc: f.test_acc,
                })
                .collect(),
        }
    }

    /// Mean and population std of test AUC.
    pub fn auc_mean_std(&self) -> (f64, f64) {
        self.metrics("").auc_mean_std()
    }

    pub fn acc_mean_std(&self) -> (f64, f64) {
        self.metrics("").acc_mean_std()
    }
}

/// Trains and tests one fold. `config.stream` is replaced by the fold index.
pub fn run_fold(
    ds: &Dataset,
    split: &Fold,
    fold: usize,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<FoldResult> {
    let cfg = TrainConfig {
        stream: fold as u64,
        ..config.clone()
    };
    let outcome = train(model, &cfg, &gather(ds, &split.train), &gather(ds, &split.valid))?;
    let test = predict_all(&outcome.best, &gather(ds, &split.test))?;
    Ok(FoldResult {
        fold,
        split: split.clone(),
        test_auc: test.auc()?,
        test_acc: test.accuracy()?,
        report: outcome.report,
        best: outcome.best,
    })
}

/// k-fold cross-validation over students; folds run concurrently. The split
/// depends only on `config.seed`, so runs sharing a seed share their folds.
pub fn run_cv(ds: &Dataset, model: &ModelConfig, config: &TrainConfig, k: usize) -> Result<CvResult> {
    run_cv_folds(ds, model, config, k, None)
}

/// Like [`run_cv`] but restricted to the listed fold indices.
pub fn run_cv_folds(
    ds: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    k: usize,
    only: Option<&[usize]>,
) -> Result<CvResult> {
    let splits = kfold_split(ds, k, config.seed)?;
    let selected: Vec<usize> = match only {
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
                return Err(Error::Index {
                    op: "fold",
                    index: bad,
                    len: k,
                });
            }
            idx.to_vec()
        }
        None => (0..k).collect(),
    };
    let folds = selected
        .par_iter()
        .map(|&i| run_fold(ds, &splits[i], i, model, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvResult {
        model: model.clone(),
        folds,
    })
}

/// Hyper-parameter grids searched by [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lambdas: Vec<f64>,
    pub lrs: Vec<f64>,
    pub dims: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            lrs: vec![1e-3, 1e-4, 1e-5],
            dims: vec![64, 256],
        }
    }
}

impl Grid {
    /// Every `(λ, lr, d)` combination.
    pub fn cells(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.lambdas.len() * self.lrs.len() * self.dims.len());
        for &lambda in &self.lambdas {
            for &lr in &self.lrs {
                for &d in &self.dims {
                    out.push((lambda, lr, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub lambda: f64,
    pub lr: f64,
    pub d: usize,
    pub valid_auc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "lr", "d", "valid_auc", "best_epoch", "epochs_run", "selected"])?;
        for (i, c) in self.cells.iter().enumerate() {
            w.write_record([
                format!("{:?}", c.lambda),
                format!("{:e}", c.lr),
                c.d.to_string(),
                format!("{:?}", c.valid_auc),
                c.best_epoch.to_string(),
                c.epochs_run.to_string(),
                u8::from(i == self.best).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the winning cell: highest AUC, then smaller d, larger λ, larger lr.
pub fn select_cell(cells: &[GridCell]) -> Option<usize> {
    (0..cells.len()).reduce(|best, i| {
        let (a, b) = (&cells[i], &cells[best]);
        let better = a
            .valid_auc
            .total_cmp(&b.valid_auc)
            .then(b.d.cmp(&a.d))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.lr.total_cmp(&b.lr))
            .is_gt();
        if better {
            i
        } else {
            best
        }
    })
}

/// Scores every cell by validation AUC on fold 0. `base` supplies n, m and
/// the variant; `config` everything but the learning rate.
pub fn grid_search(ds: &Dataset, base: &ModelConfig, config: &TrainConfig, grid: &Grid) -> Result<GridResult> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    let split = kfold_split(ds, DEFAULT_FOLDS, config.seed)?.swap_remove(0);
    let train_set = gather(ds, &split.train);
    let valid_set = gather(ds, &split.valid);
    let scored = cells
        .par_iter()
        .map(|&(lambda, lr, d)| {
            let model = ModelConfig::new(d, base.n, base.m, lambda, base.variant)?;
            let cfg = TrainConfig { lr, ..config.clone() };
            let out = train(&model, &cfg, &train_set, &valid_set)?;
            Ok(GridCell {
                lambda,
                lr,
                d,
                valid_auc: out.report.best_valid_auc,
                best_epoch: out.report.best_epoch,
                epochs_run: out.report.epochs_run,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_cell(&scored).expect("non-empty grid");
    Ok(GridResult { cells: scored, best })
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub runs: Vec<(Variant, CvResult)>,
    pub report: EvalReport,
}

/// Cross-validates all five variants on shared folds and seeds.
pub fn run_ablation(ds: &Dataset, base: &ModelConfig, config: &TrainConfig, k: usize) -> Result<AblationResult> {
    let mut runs = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let model = ModelConfig { variant, ..base.clone() };
        runs.push((variant, run_cv(ds, &model, config, k)?));
    }
    let report = EvalReport::new(runs.iter().map(|(v, r)| r.metrics(v.as_str())).collect())?;
    Ok(AblationResult { runs, report })
}
