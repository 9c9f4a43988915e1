//! Evaluation protocols, grid search and metric aggregation.
//!
//! For every split the design matrix rows are partitioned, a standardizer is
//! fitted on the training rows only (skipped for NB), the model is fitted on
//! the transformed training rows and scored on the transformed test rows.
//! Splits run in parallel on a bounded pool; results are assembled in split
//! index order and every random stream is derived from the plan's master seed,
//! so the worker count never changes the output.

mod grid;
mod metrics;
mod split;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Dataset};
use crate::error::{Error, Result};
use crate::models::{self, ModelParams, ModelSpec, TrainedModel};
use crate::preprocess::{
    apply_standardizer, build_design_matrix, fit_standardizer, DesignMatrix, FeatureProtocol, ProtocolName,
    Standardizer,
};
use crate::scalar::Scalar;

pub use grid::{default_grid, grid_search, CandidateResult, GridSearchResult};
pub use metrics::{
    add_confusion, box_stats, classification_metrics, confusion_matrix, mean, population_std, quantile, BoxStats,
    ClassMetrics, ClassificationMetrics, ConfusionMatrix,
};
pub use split::{
    stratified_kfold, stratified_shuffle_split, test_allocation, PlannedSplit, Protocol, Split, SplitPlan,
};

/// Receives the dataset rows every standardizer is fitted on.
pub trait ScalerObserver: Send + Sync {
    fn observe(&self, split_index: usize, rows: &[usize]);
}

#[derive(Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub observer: Option<&'a dyn ScalerObserver>,
}

impl<'a> RunOptions<'a> {
    pub fn with_workers(workers: usize) -> Self {
        RunOptions {
            workers,
            observer: None,
        }
    }
}

/// Runs `f` on a pool with `workers` threads (the global pool for 0).
pub(crate) fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// A model fitted on one split, with the transform its inputs went through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SplitFit<T> {
    pub split: PlannedSplit,
    pub scaler: Standardizer<T>,
    pub model: TrainedModel<T>,
    pub train_predictions: Vec<ClassLabel>,
    pub test_predictions: Vec<ClassLabel>,
}

impl<T: Scalar> SplitFit<T> {
    pub fn train_accuracy(&self, y: &[ClassLabel]) -> f64 {
        accuracy(&self.split.split.train, &self.train_predictions, y)
    }

    pub fn test_accuracy(&self, y: &[ClassLabel]) -> f64 {
        accuracy(&self.split.split.test, &self.test_predictions, y)
    }

    /// Standardized test rows.
    pub fn test_matrix(&self, x: &DesignMatrix<T>) -> Result<DesignMatrix<T>> {
        apply_standardizer(&self.scaler, &x.select_rows(&self.split.split.test))
    }

    pub fn train_matrix(&self, x: &DesignMatrix<T>) -> Result<DesignMatrix<T>> {
        apply_standardizer(&self.scaler, &x.select_rows(&self.split.split.train))
    }
}

fn accuracy(rows: &[usize], pred: &[ClassLabel], y: &[ClassLabel]) -> f64 {
    let hits = rows.iter().zip(pred).filter(|(&i, p)| y[i] == **p).count();
    hits as f64 / rows.len() as f64
}

/// Standardize on train rows (unless the family takes raw inputs), fit, predict.
pub fn fit_on_split<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[ClassLabel],
    params: &ModelParams,
    split: &PlannedSplit,
    observer: Option<&dyn ScalerObserver>,
) -> Result<SplitFit<T>> {
    let train_raw = x.select_rows(&split.split.train);
    let scaler = if params.family().wants_standardized_input() {
        if let Some(o) = observer {
            o.observe(split.index, &split.split.train);
        }
        fit_standardizer(&train_raw)?
    } else {
        Standardizer::identity(x.n_cols())
    };
    let train = apply_standardizer(&scaler, &train_raw)?;
    let test = apply_standardizer(&scaler, &x.select_rows(&split.split.test))?;
    let y_train: Vec<ClassLabel> = split.split.train.iter().map(|&i| y[i]).collect();
    let model = models::fit(&ModelSpec::new(params.clone(), split.model_seed), &train, &y_train)?;
    Ok(SplitFit {
        split: split.clone(),
        train_predictions: models::predict(&model, &train)?,
        test_predictions: models::predict(&model, &test)?,
        scaler,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub index: usize,
    pub repetition: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// Mean test accuracy over all splits.
    pub avg: f64,
    /// Population standard deviation over all splits.
    pub std: f64,
    /// Protocol maximum: the best split for hold-out, the best repetition
    /// mean for repeated k-fold, the best fold for a single k-fold run.
    pub max: f64,
    pub max_split: f64,
    pub min_split: f64,
    pub repetition_means: Vec<f64>,
    pub train_avg: f64,
}

/// Aggregates per-split accuracies listed in split order.
pub fn summarize(protocol: &Protocol, test: &[f64], train: &[f64]) -> Result<AccuracySummary> {
    if test.is_empty() || test.len() != protocol.n_splits() {
        return Err(Error::Shape {
            expected: protocol.n_splits(),
            got: test.len(),
        });
    }
    let per_rep = test.len() / protocol.repeats();
    let repetition_means: Vec<f64> = test.chunks(per_rep).map(mean).collect();
    let max_split = test.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max = match protocol {
        Protocol::Kfold { repeats, .. } if *repeats > 1 => {
            repetition_means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
        _ => max_split,
    };
    Ok(AccuracySummary {
        avg: mean(test),
        std: population_std(test),
        max,
        max_split,
        min_split: test.iter().copied().fold(f64::INFINITY, f64::min),
        repetition_means,
        train_avg: mean(train),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: ModelParams,
    pub feature_protocol: ProtocolName,
    pub plan: SplitPlan,
    pub n_rows: usize,
    pub n_features: usize,
    pub n_fits: usize,
    pub splits: Vec<SplitResult>,
    pub accuracy: AccuracySummary,
    /// Summed over all test sets.
    pub confusion: ConfusionMatrix,
    pub metrics: ClassificationMetrics,
    pub boxplot: BoxStats,
}

impl EvaluationReport {
    pub fn test_accuracies(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.test_accuracy).collect()
    }

    /// File-name stem such as `MLP_SF_RHO`.
    pub fn stem(&self) -> String {
        format!("{}_{}_{}", self.model.family(), self.feature_protocol, self.plan.protocol.tag())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_splits_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "repetition", "fold", "n_train", "n_test", "train_accuracy", "test_accuracy"])?;
        for s in &self.splits {
            out.write_record([
                s.index.to_string(),
                s.repetition.to_string(),
                s.fold.to_string(),
                s.n_train.to_string(),
                s.n_test.to_string(),
                s.train_accuracy.to_string(),
                s.test_accuracy.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_confusion_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["true", "pred_L", "pred_M", "pred_H"])?;
        for (label, row) in ClassLabel::ALL.iter().zip(&self.confusion) {
            out.write_record([
                label.to_string(),
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_boxplot_csv<W: Write>(&self, w: W) -> Result<()> {
        let b = &self.boxplot;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["stat", "value"])?;
        for (name, v) in [
            ("min", b.min),
            ("whisker_low", b.whisker_low),
            ("q1", b.q1),
            ("median", b.median),
            ("q3", b.q3),
            ("whisker_high", b.whisker_high),
            ("max", b.max),
        ] {
            out.write_record([name.to_string(), v.to_string()])?;
        }
        for v in &b.outliers {
            out.write_record(["outlier".to_string(), v.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Writes `<stem>.json`, `<stem>_splits.csv`, `<stem>_confusion.csv` and `<stem>_box.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.stem();
        let write = |name: String, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
            let mut buf = Vec::new();
            f(&mut buf)?;
            let path = dir.join(name);
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write(format!("{stem}.json"), &|b| {
            b.extend_from_slice(self.to_json()?.as_bytes());
            Ok(())
        })?;
        write(format!("{stem}_splits.csv"), &|b| self.write_splits_csv(b))?;
        write(format!("{stem}_confusion.csv"), &|b| self.write_confusion_csv(b))?;
        write(format!("{stem}_box.csv"), &|b| self.write_boxplot_csv(b))
    }
}

/// Evaluates `params` under `plan` on the `proto` columns of `ds`.
pub fn run_protocol<T: Scalar>(
    ds: &Dataset,
    proto: &FeatureProtocol,
    params: &ModelParams,
    plan: &SplitPlan,
    opts: RunOptions<'_>,
) -> Result<EvaluationReport> {
    params.validate()?;
    let x = build_design_matrix::<T>(ds, proto)?;
    let y = ds.labels();
    let splits = plan.splits(y)?;
    let results: Vec<Result<SplitResult>> = in_pool(opts.workers, || {
        splits
            .par_iter()
            .map(|ps| {
                let fit = fit_on_split(&x, y, params, ps, opts.observer).map_err(|e| Error::Split {
                    index: ps.index,
                    source: Box::new(e),
                })?;
                let truth: Vec<ClassLabel> = ps.split.test.iter().map(|&i| y[i]).collect();
                Ok(SplitResult {
                    index: ps.index,
                    repetition: ps.repetition,
                    fold: ps.fold,
                    n_train: ps.split.train.len(),
                    n_test: ps.split.test.len(),
                    train_accuracy: fit.train_accuracy(y),
                    test_accuracy: fit.test_accuracy(y),
                    confusion: confusion_matrix(&truth, &fit.test_predictions)?,
                })
            })
            .collect()
    })?;
    let splits: Vec<SplitResult> = results.into_iter().collect::<Result<_>>()?;
    let test: Vec<f64> = splits.iter().map(|s| s.test_accuracy).collect();
    let train: Vec<f64> = splits.iter().map(|s| s.train_accuracy).collect();
    let mut confusion = [[0; 3]; 3];
    for s in &splits {
        add_confusion(&mut confusion, &s.confusion);
    }
    Ok(EvaluationReport {
        model: params.clone(),
        feature_protocol: proto.name,
        plan: *plan,
        n_rows: ds.len(),
        n_features: x.n_cols(),
        n_fits: splits.len(),
        accuracy: summarize(&plan.protocol, &test, &train)?,
        metrics: classification_metrics(&confusion)?,
        boxplot: box_stats(&test)?,
        confusion,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_kfold_max_is_best_repetition_mean() {
        let p = Protocol::Kfold { k: 2, repeats: 2 };
        let s = summarize(&p, &[0.8, 0.6, 0.75, 0.75], &[1.0; 4]).unwrap();
        assert_eq!(s.repetition_means, vec![0.7, 0.75]);
        assert_eq!(s.max, 0.75);
        assert_eq!(s.max_split, 0.8);
        assert!((s.avg - 0.725).abs() < 1e-15);
    }

    #[test]
    fn rho_max_is_best_split() {
        let p = Protocol::Rho {
            repeats: 3,
            test_fraction: 0.1,
        };
        let s = summarize(&p, &[0.5, 0.9, 0.7], &[1.0; 3]).unwrap();
        assert_eq!(s.max, 0.9);
        assert!(s.avg <= s.max && s.std >= 0.0);
    }
}
