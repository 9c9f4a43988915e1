use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_on_split, in_pool, PlannedSplit, RunOptions};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{
    Activation, Criterion, DtParams, Family, KnnParams, LrParams, MlpParams, ModelParams, NbParams, Penalty,
    Splitter, SvmParams,
};
use crate::preprocess::{build_design_matrix, FeatureProtocol, ProtocolName};
use crate::rng::child_seed;
use crate::scalar::Scalar;

use super::split::stratified_kfold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: ModelParams,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub family: Family,
    pub feature_protocol: ProtocolName,
    pub k: usize,
    pub seed: u64,
    pub candidates: Vec<CandidateResult>,
    pub selected_index: usize,
    pub selected: ModelParams,
    /// The configuration reported as tuned for this family.
    pub reference: ModelParams,
    pub matches_reference: bool,
}

impl GridSearchResult {
    pub fn best_accuracy(&self) -> f64 {
        self.candidates[self.selected_index].mean_accuracy
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Halving pyramids: start width in {256, 128, 64}, depth 3 to 5.
fn pyramid_architectures() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for start in [256usize, 128, 64] {
        for depth in 3..=5 {
            out.push((0..depth).map(|i| start >> i).collect());
        }
    }
    out
}

/// Search spaces for each family.
pub fn default_grid(family: Family) -> Vec<ModelParams> {
    match family {
        Family::Knn => (3..=19)
            .step_by(2)
            .flat_map(|k| (1..=5).map(move |p| ModelParams::Knn(KnnParams { k, p: p as f64 })))
            .collect(),
        Family::Svm => [100.0, 10.0, 1.0, 0.99, 0.9, 0.4, 0.1]
            .into_iter()
            .map(|c| ModelParams::Svm(SvmParams { c, ..SvmParams::default() }))
            .collect(),
        Family::Lr => [Penalty::L1, Penalty::L2]
            .into_iter()
            .flat_map(|penalty| {
                [100.0, 10.0, 1.0, 0.5, 0.1].into_iter().map(move |c| {
                    ModelParams::Lr(LrParams {
                        penalty,
                        c,
                        ..LrParams::default()
                    })
                })
            })
            .collect(),
        Family::Nb => [1.0, 0.5, 0.1]
            .into_iter()
            .map(|alpha| ModelParams::Nb(NbParams { alpha }))
            .collect(),
        Family::Dt => {
            let mut out = Vec::new();
            let depths: Vec<Option<usize>> = std::iter::once(None)
                .chain((2..=10).map(Some))
                .chain(std::iter::once(Some(20)))
                .collect();
            for criterion in [Criterion::Gini, Criterion::Entropy] {
                for splitter in [Splitter::Random, Splitter::Best] {
                    for &max_depth in &depths {
                        for min_samples_split in [2, 4, 8, 16] {
                            for min_samples_leaf in [1, 2, 4, 8] {
                                out.push(ModelParams::Dt(DtParams {
                                    criterion,
                                    splitter,
                                    max_depth,
                                    min_samples_split,
                                    min_samples_leaf,
                                }));
                            }
                        }
                    }
                }
            }
            out
        }
        Family::Mlp => {
            let mut out = Vec::new();
            for layers in pyramid_architectures() {
                for activation in [Activation::Relu, Activation::Tanh] {
                    for batch_size in [100, 200] {
                        for learning_rate in [0.0001, 0.001, 0.1] {
                            out.push(ModelParams::Mlp(MlpParams {
                                layers: layers.clone(),
                                activation,
                                batch_size,
                                learning_rate,
                                ..MlpParams::default()
                            }));
                        }
                    }
                }
            }
            out
        }
    }
}

/// Scores every candidate on the same `k` stratified folds and picks the
/// highest mean accuracy; ties go to the earlier candidate.
pub fn grid_search<T: Scalar>(
    ds: &Dataset,
    proto: &FeatureProtocol,
    grid: &[ModelParams],
    k: usize,
    seed: u64,
    opts: RunOptions<'_>,
) -> Result<GridSearchResult> {
    let Some(first) = grid.first() else {
        return Err(Error::invalid("grid search needs at least one candidate"));
    };
    let family = first.family();
    if let Some(p) = grid.iter().find(|p| p.family() != family) {
        return Err(Error::invalid(format!(
            "grid mixes model families {family} and {}",
            p.family()
        )));
    }
    for p in grid {
        p.validate()?;
    }
    let x = build_design_matrix::<T>(ds, proto)?;
    let y = ds.labels();
    let folds: Vec<PlannedSplit> = stratified_kfold(y, k, child_seed(seed, 0))?
        .into_iter()
        .enumerate()
        .map(|(f, split)| PlannedSplit {
            index: f,
            repetition: 0,
            fold: f,
            model_seed: child_seed(seed, 1 + f as u64),
            split,
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let scores: Vec<Result<f64>> = in_pool(opts.workers, || {
        jobs.par_iter()
            .map(|&(c, f)| {
                let fit = fit_on_split(&x, y, &grid[c], &folds[f], opts.observer).map_err(|e| Error::Split {
                    index: c * k + f,
                    source: Box::new(e),
                })?;
                Ok(fit.test_accuracy(y))
            })
            .collect()
    })?;
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    let candidates: Vec<CandidateResult> = grid
        .iter()
        .zip(scores.chunks(k))
        .map(|(p, accs)| CandidateResult {
            params: p.clone(),
            fold_accuracies: accs.to_vec(),
            mean_accuracy: super::mean(accs),
        })
        .collect();
    let mut selected_index = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.mean_accuracy > candidates[selected_index].mean_accuracy {
            selected_index = i;
        }
    }
    let selected = candidates[selected_index].params.clone();
    let reference = ModelParams::reference(family);
    Ok(GridSearchResult {
        family,
        feature_protocol: proto.name,
        k,
        seed,
        matches_reference: selected == reference,
        candidates,
        selected_index,
        selected,
        reference,
    })
}
