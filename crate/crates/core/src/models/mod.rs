//! The six classifier families behind one fit / predict interface.
//!
//! Every model predicts over the fixed class order (L, M, H). Classes that
//! were absent from the training labels receive probability zero and are
//! never predicted.

pub mod knn;
pub mod linear;
pub mod mlp;
pub mod nb;
pub mod ovo;
pub mod svm;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::scalar::Scalar;

pub use knn::{KnnModel, KnnParams};
pub use linear::{LinearBinary, LrParams, Penalty};
pub use mlp::{Activation, MlpModel, MlpParams, Network};
pub use nb::{NbModel, NbParams};
pub use ovo::{OvoModel, OvoVote};
pub use svm::{Kernel, SvmBinary, SvmParams};
pub use tree::{Criterion, DtParams, Splitter, TreeModel};

/// Version tag written into serialized model documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "NB")]
    Nb,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "SVM")]
    Svm,
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "MLP")]
    Mlp,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Mlp,
        Family::Svm,
        Family::Knn,
        Family::Lr,
        Family::Nb,
        Family::Dt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Knn => "KNN",
            Family::Nb => "NB",
            Family::Lr => "LR",
            Family::Svm => "SVM",
            Family::Dt => "DT",
            Family::Mlp => "MLP",
        }
    }

    /// Whether inputs should be standardized before fitting.
    pub fn wants_standardized_input(self) -> bool {
        self != Family::Nb
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KNN" | "K-NN" => Ok(Family::Knn),
            "NB" => Ok(Family::Nb),
            "LR" => Ok(Family::Lr),
            "SVM" => Ok(Family::Svm),
            "DT" => Ok(Family::Dt),
            "MLP" | "MLPC" => Ok(Family::Mlp),
            _ => Err(Error::invalid(format!(
                "unknown model family '{s}', expected one of KNN, NB, LR, SVM, DT, MLP"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum ModelParams {
    #[serde(rename = "KNN")]
    Knn(KnnParams),
    #[serde(rename = "NB")]
    Nb(NbParams),
    #[serde(rename = "LR")]
    Lr(LrParams),
    #[serde(rename = "SVM")]
    Svm(SvmParams),
    #[serde(rename = "DT")]
    Dt(DtParams),
    #[serde(rename = "MLP")]
    Mlp(MlpParams),
}

impl ModelParams {
    pub fn family(&self) -> Family {
        match self {
            ModelParams::Knn(_) => Family::Knn,
            ModelParams::Nb(_) => Family::Nb,
            ModelParams::Lr(_) => Family::Lr,
            ModelParams::Svm(_) => Family::Svm,
            ModelParams::Dt(_) => Family::Dt,
            ModelParams::Mlp(_) => Family::Mlp,
        }
    }

    /// The tuned configuration reported for each family.
    pub fn reference(family: Family) -> Self {
        match family {
            Family::Knn => ModelParams::Knn(KnnParams { k: 15, p: 1.0 }),
            Family::Nb => ModelParams::Nb(NbParams { alpha: 1.0 }),
            Family::Lr => ModelParams::Lr(LrParams {
                penalty: Penalty::L2,
                c: 0.1,
                ..LrParams::default()
            }),
            Family::Svm => ModelParams::Svm(SvmParams {
                c: 1.0,
                ..SvmParams::default()
            }),
            Family::Dt => ModelParams::Dt(DtParams {
                criterion: Criterion::Gini,
                splitter: Splitter::Random,
                max_depth: Some(6),
                min_samples_split: 4,
                min_samples_leaf: 4,
            }),
            Family::Mlp => ModelParams::Mlp(MlpParams::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelParams::Knn(p) => p.validate(),
            ModelParams::Nb(p) => p.validate(),
            ModelParams::Lr(p) => p.validate(),
            ModelParams::Svm(p) => p.validate(),
            ModelParams::Dt(p) => p.validate(),
            ModelParams::Mlp(p) => p.validate(),
        }
    }

    /// Short human-readable parameter summary.
    pub fn describe(&self) -> String {
        match self {
            ModelParams::Knn(p) => format!("k={} p={}", p.k, p.p),
            ModelParams::Nb(p) => format!("alpha={}", p.alpha),
            ModelParams::Lr(p) => format!("penalty={:?} C={}", p.penalty, p.c),
            ModelParams::Svm(p) => format!("C={} kernel={:?}", p.c, p.kernel),
            ModelParams::Dt(p) => format!(
                "criterion={:?} splitter={:?} max_depth={} min_split={} min_leaf={}",
                p.criterion,
                p.splitter,
                p.max_depth.map_or("None".to_string(), |d| d.to_string()),
                p.min_samples_split,
                p.min_samples_leaf
            ),
            ModelParams::Mlp(p) => format!(
                "layers={:?} activation={:?} batch={} lr={}",
                p.layers, p.activation, p.batch_size, p.learning_rate
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: ModelParams,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        ModelSpec { params, seed }
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ModelSpec {
            params: self.params.clone(),
            seed,
        }
    }
}

/// A fitted classifier. Immutable; prediction is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedModel<T> {
    pub family: Family,
    pub n_features: usize,
    /// Whether each of (L, M, H) was present in the training labels.
    pub classes: [bool; 3],
    pub inner: ModelKind<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum ModelKind<T> {
    Knn(KnnModel<T>),
    Nb(NbModel<T>),
    Lr(OvoModel<LinearBinary<T>>),
    Svm(OvoModel<SvmBinary<T>>),
    Dt(TreeModel<T>),
    Mlp(MlpModel<T>),
}

/// Row-wise classifier behaviour shared by every family.
pub trait Classifier<T: Scalar> {
    /// Class scores over (L, M, H); rows sum to one.
    fn proba_row(&self, x: &[T]) -> [T; 3];

    fn predict_row(&self, x: &[T]) -> ClassLabel {
        argmax_label(&self.proba_row(x))
    }
}

/// Index of the first maximum, as a label.
pub fn argmax_label<T: Scalar>(scores: &[T; 3]) -> ClassLabel {
    let mut best = 0;
    for k in 1..3 {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    ClassLabel::ALL[best]
}

pub(crate) fn present_classes(y: &[ClassLabel]) -> [bool; 3] {
    let mut present = [false; 3];
    for l in y {
        present[l.index()] = true;
    }
    present
}

pub(crate) fn class_counts(y: &[ClassLabel]) -> [usize; 3] {
    let mut counts = [0; 3];
    for l in y {
        counts[l.index()] += 1;
    }
    counts
}

/// Fits `spec` on `x` / `y`.
pub fn fit<T: Scalar>(spec: &ModelSpec, x: &DesignMatrix<T>, y: &[ClassLabel]) -> Result<TrainedModel<T>> {
    spec.params.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite feature value".into()));
    }
    let classes = present_classes(y);
    if classes.iter().filter(|&&p| p).count() < 2 {
        let missing: Vec<&str> = ClassLabel::ALL
            .iter()
            .filter(|l| !classes[l.index()])
            .map(|l| l.as_str())
            .collect();
        return Err(Error::Fit(format!(
            "training labels need at least two classes; absent: {missing:?}"
        )));
    }
    let inner = match &spec.params {
        ModelParams::Knn(p) => ModelKind::Knn(knn::fit(p, x, y)?),
        ModelParams::Nb(p) => ModelKind::Nb(nb::fit(p, x, y)?),
        ModelParams::Lr(p) => ModelKind::Lr(linear::fit_ovo(p, x, y)?),
        ModelParams::Svm(p) => ModelKind::Svm(svm::fit_ovo(p, x, y)?),
        ModelParams::Dt(p) => ModelKind::Dt(tree::fit(p, x, y, spec.seed)?),
        ModelParams::Mlp(p) => ModelKind::Mlp(mlp::fit(p, x, y, spec.seed)?),
    };
    Ok(TrainedModel {
        family: spec.family(),
        n_features: x.n_cols(),
        classes,
        inner,
    })
}

impl<T: Scalar> TrainedModel<T> {
    fn classifier(&self) -> &dyn Classifier<T> {
        match &self.inner {
            ModelKind::Knn(m) => m,
            ModelKind::Nb(m) => m,
            ModelKind::Lr(m) => m,
            ModelKind::Svm(m) => m,
            ModelKind::Dt(m) => m,
            ModelKind::Mlp(m) => m,
        }
    }

    fn check_width(&self, n_cols: usize) -> Result<()> {
        if n_cols != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: n_cols,
            });
        }
        Ok(())
    }

    pub fn predict_row(&self, x: &[T]) -> Result<ClassLabel> {
        self.check_width(x.len())?;
        Ok(self.classifier().predict_row(x))
    }

    pub fn proba_row(&self, x: &[T]) -> Result<[T; 3]> {
        self.check_width(x.len())?;
        Ok(self.classifier().proba_row(x))
    }

    /// Whether `predict_proba` returns model probabilities rather than a
    /// vote-fraction or leaf-frequency surrogate.
    pub fn has_native_proba(&self) -> bool {
        matches!(self.family, Family::Nb | Family::Mlp)
    }

    /// Whether the argmax of `predict_proba` always equals `predict`.
    /// k-NN vote fractions can tie where `predict` breaks ties by class frequency.
    pub fn proba_argmax_matches_predict(&self) -> bool {
        self.family != Family::Knn
    }

    /// MLP forward passes run batched; everything else row by row.
    pub fn predict_proba_batch(&self, values: &[T], n_cols: usize) -> Result<Vec<[T; 3]>> {
        self.check_width(n_cols)?;
        if let ModelKind::Mlp(m) = &self.inner {
            return Ok(m.proba_batch(values, n_cols));
        }
        let clf = self.classifier();
        Ok(values.chunks_exact(n_cols).map(|r| clf.proba_row(r)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        #[serde(bound = "T: Scalar")]
        struct Doc<'a, T> {
            format_version: u32,
            model: &'a TrainedModel<T>,
        }
        serde_json::to_string(&Doc {
            format_version: MODEL_FORMAT_VERSION,
            model: self,
        })
        .map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(bound = "T: Scalar")]
        struct Doc<T> {
            format_version: u32,
            model: TrainedModel<T>,
        }
        let doc: Doc<T> = serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn predict<T: Scalar>(m: &TrainedModel<T>, x: &DesignMatrix<T>) -> Result<Vec<ClassLabel>> {
    m.check_width(x.n_cols())?;
    let clf = m.classifier();
    Ok(x.rows().map(|r| clf.predict_row(r)).collect())
}

/// Per-class scores in (L, M, H) order.
///
/// NB and MLP return model probabilities. LR and SVM return a one-vs-one
/// vote surrogate (see [`ovo`]), k-NN the neighbour vote fractions and DT
/// the class frequencies of the reached leaf.
pub fn predict_proba<T: Scalar>(m: &TrainedModel<T>, x: &DesignMatrix<T>) -> Result<Vec<[T; 3]>> {
    m.predict_proba_batch(x.values(), x.n_cols())
}
