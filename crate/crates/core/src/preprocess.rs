//! Feature protocols, categorical encoding and train-only standardization.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, FeatureSpec, Schema, BEHAVIORAL_FEATURES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Categorical features removed by the selected-features protocol.
pub const SF_DROPPED: [&str; 4] = ["SectionID", "StageID", "GradeID", "Semester"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolName {
    #[serde(rename = "SF")]
    Sf,
    #[serde(rename = "WBF")]
    Wbf,
    #[serde(rename = "WOBF")]
    Wobf,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 3] = [ProtocolName::Sf, ProtocolName::Wbf, ProtocolName::Wobf];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolName::Sf => "SF",
            ProtocolName::Wbf => "WBF",
            ProtocolName::Wobf => "WOBF",
        }
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SF" | "FS" => Ok(ProtocolName::Sf),
            "WBF" => Ok(ProtocolName::Wbf),
            "WOBF" => Ok(ProtocolName::Wobf),
            _ => Err(Error::invalid(format!(
                "unknown feature protocol '{s}', expected one of SF, WBF, WOBF"
            ))),
        }
    }
}

/// A named subset of schema features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureProtocol {
    pub name: ProtocolName,
    pub included_features: Vec<String>,
}

impl FeatureProtocol {
    /// Builds the named protocol over `schema`.
    ///
    /// WBF keeps every feature, WOBF drops the behavioral numerics and SF drops
    /// [`SF_DROPPED`].
    pub fn for_schema(name: ProtocolName, schema: &Schema) -> Self {
        let keep = |f: &FeatureSpec| match name {
            ProtocolName::Wbf => true,
            ProtocolName::Wobf => !BEHAVIORAL_FEATURES.contains(&f.name.as_str()),
            ProtocolName::Sf => !SF_DROPPED.contains(&f.name.as_str()),
        };
        FeatureProtocol {
            name,
            included_features: schema
                .features
                .iter()
                .filter(|f| keep(f))
                .map(|f| f.name.clone())
                .collect(),
        }
    }

    pub fn includes(&self, feature: &str) -> bool {
        self.included_features.iter().any(|f| f == feature)
    }
}

/// Row-major real matrix with named columns.
///
/// `column_features[j]` is the schema index of the feature column `j` came
/// from, so one-hot groups can be folded back onto their parent feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DesignMatrix<T> {
    values: Vec<T>,
    n_rows: usize,
    n_cols: usize,
    column_names: Vec<String>,
    column_features: Vec<usize>,
    feature_names: Vec<String>,
}

impl<T: Scalar> DesignMatrix<T> {
    /// Wraps raw row-major values. Each column becomes its own feature.
    pub fn from_rows(values: Vec<T>, n_cols: usize, column_names: Vec<String>) -> Result<Self> {
        if column_names.len() != n_cols {
            return Err(Error::Shape {
                expected: n_cols,
                got: column_names.len(),
            });
        }
        if n_cols == 0 || values.len() % n_cols != 0 {
            return Err(Error::invalid("value count is not a multiple of the column count"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite matrix entry"));
        }
        Ok(DesignMatrix {
            n_rows: values.len() / n_cols,
            n_cols,
            column_features: (0..n_cols).collect(),
            feature_names: column_names.clone(),
            column_names,
            values,
        })
    }

    /// Builds an unnamed matrix from nested rows (columns named `x0`, `x1`, ...).
    pub fn from_nested(rows: &[Vec<T>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let names = (0..n_cols).map(|j| format!("x{j}")).collect();
        Self::from_rows(rows.concat(), n_cols, names)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_features(&self) -> &[usize] {
        &self.column_features
    }

    /// Names of the source features indexed by `column_features`.
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        self.rows().map(|r| r[j]).collect()
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            values,
            n_rows: indices.len(),
            ..self.clone_meta()
        }
    }

    /// Same column metadata, different values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        if values.len() % self.n_cols != 0 {
            return Err(Error::Shape {
                expected: self.n_cols,
                got: values.len() % self.n_cols,
            });
        }
        Ok(DesignMatrix {
            n_rows: values.len() / self.n_cols,
            values,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        DesignMatrix {
            values: Vec::new(),
            n_rows: 0,
            n_cols: self.n_cols,
            column_names: self.column_names.clone(),
            column_features: self.column_features.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Column index ranges grouped by source feature, in feature order.
    pub fn feature_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, &f) in self.column_features.iter().enumerate() {
            let name = &self.feature_names[f];
            match groups.last_mut() {
                Some((n, cols)) if n == name => cols.push(j),
                _ => groups.push((name.clone(), vec![j])),
            }
        }
        groups
    }

    pub fn cast<U: Scalar>(&self) -> DesignMatrix<U> {
        DesignMatrix {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            column_names: self.column_names.clone(),
            column_features: self.column_features.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.column_names)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// One 0/1 column per category, in category order.
///
/// Returns row-major values with `feature.categories.len()` columns.
pub fn one_hot_encode<T: Scalar, S: AsRef<str>>(
    feature: &FeatureSpec,
    column: &[S],
) -> Result<Vec<T>> {
    if feature.kind != FeatureKind::Nominal {
        return Err(Error::Encoding {
            feature: feature.name.clone(),
            message: format!("one-hot encoding needs a nominal feature, got {:?}", feature.kind),
        });
    }
    let width = feature.categories.len();
    let mut out = vec![T::zero(); column.len() * width];
    for (i, raw) in column.iter().enumerate() {
        let c = category_of(feature, raw.as_ref())?;
        out[i * width + c] = T::one();
    }
    Ok(out)
}

/// Maps each value to its index in the feature's category list.
pub fn label_encode<S: AsRef<str>>(feature: &FeatureSpec, column: &[S]) -> Result<Vec<usize>> {
    if !feature.is_categorical() {
        return Err(Error::Encoding {
            feature: feature.name.clone(),
            message: "label encoding needs a categorical feature".into(),
        });
    }
    column
        .iter()
        .map(|raw| category_of(feature, raw.as_ref()))
        .collect()
}

fn category_of(feature: &FeatureSpec, raw: &str) -> Result<usize> {
    feature.category_index(raw).ok_or_else(|| Error::Encoding {
        feature: feature.name.clone(),
        message: format!("unknown category '{raw}'"),
    })
}

/// Encodes the protocol's features in schema order: numerics pass through,
/// ordinals become one label-encoded column, nominals are one-hot encoded.
pub fn build_design_matrix<T: Scalar>(ds: &Dataset, proto: &FeatureProtocol) -> Result<DesignMatrix<T>> {
    let schema = ds.schema();
    for name in &proto.included_features {
        if schema.feature(name).is_none() {
            return Err(Error::invalid(format!(
                "protocol {} references unknown feature '{name}'",
                proto.name
            )));
        }
    }

    // Encoded blocks, each row-major with its own width.
    let mut blocks: Vec<(Vec<T>, usize)> = Vec::new();
    let mut column_names = Vec::new();
    let mut column_features = Vec::new();
    let mut feature_names = Vec::new();

    for (fi, spec) in schema.features.iter().enumerate() {
        if !proto.includes(&spec.name) {
            continue;
        }
        let feature_slot = feature_names.len();
        feature_names.push(spec.name.clone());
        match spec.kind {
            FeatureKind::Numeric => {
                let col = ds.numeric_column(fi)?;
                blocks.push((col.into_iter().map(T::of).collect(), 1));
                column_names.push(spec.name.clone());
                column_features.push(feature_slot);
            }
            FeatureKind::Ordinal => {
                let codes = label_encode(spec, &ds.raw_column(fi))?;
                blocks.push((codes.into_iter().map(T::of_usize).collect(), 1));
                column_names.push(spec.name.clone());
                column_features.push(feature_slot);
            }
            FeatureKind::Nominal => {
                let encoded = one_hot_encode::<T, _>(spec, &ds.raw_column(fi))?;
                blocks.push((encoded, spec.categories.len()));
                for c in &spec.categories {
                    column_names.push(format!("{}={}", spec.name, c));
                    column_features.push(feature_slot);
                }
            }
        }
    }

    let n_rows = ds.len();
    let n_cols = column_names.len();
    let mut values = Vec::with_capacity(n_rows * n_cols);
    for i in 0..n_rows {
        for (block, width) in &blocks {
            values.extend_from_slice(&block[i * width..(i + 1) * width]);
        }
    }
    Ok(DesignMatrix {
        values,
        n_rows,
        n_cols,
        column_names,
        column_features,
        feature_names,
    })
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    /// Population (divide-by-n) standard deviation.
    pub stddev: Vec<T>,
}

pub fn fit_standardizer<T: Scalar>(train: &DesignMatrix<T>) -> Result<Standardizer<T>> {
    if train.n_rows() < 2 {
        return Err(Error::invalid(format!(
            "standardizer needs at least 2 training rows, got {}",
            train.n_rows()
        )));
    }
    let n = T::of_usize(train.n_rows());
    let mut mean = vec![T::zero(); train.n_cols()];
    for row in train.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); train.n_cols()];
    for row in train.rows() {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
            let d = x - m;
            *v += d * d;
        }
    }
    let stddev = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(Standardizer { mean, stddev })
}

impl<T: Scalar> Standardizer<T> {
    /// Identity transform over `n_cols` columns.
    pub fn identity(n_cols: usize) -> Self {
        Standardizer {
            mean: vec![T::zero(); n_cols],
            stddev: vec![T::one(); n_cols],
        }
    }

    pub fn n_cols(&self) -> usize {
        self.mean.len()
    }

    /// Transforms one row in place. Zero-variance columns are only centered.
    pub fn transform_row(&self, row: &mut [T]) {
        for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.stddev) {
            let scale = if s > T::zero() { s } else { T::one() };
            *x = (*x - m) / scale;
        }
    }
}

pub fn apply_standardizer<T: Scalar>(s: &Standardizer<T>, m: &DesignMatrix<T>) -> Result<DesignMatrix<T>> {
    if s.n_cols() != m.n_cols() {
        return Err(Error::Shape {
            expected: s.n_cols(),
            got: m.n_cols(),
        });
    }
    let mut values = m.values().to_vec();
    for row in values.chunks_exact_mut(m.n_cols()) {
        s.transform_row(row);
    }
    m.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureGroup, Schema};

    fn semester() -> FeatureSpec {
        FeatureSpec {
            name: "Semester".into(),
            kind: FeatureKind::Nominal,
            categories: vec!["F".into(), "S".into()],
            group: FeatureGroup::Academic,
        }
    }

    #[test]
    fn one_hot_two_categories() {
        let enc: Vec<f64> = one_hot_encode(&semester(), &["F", "S", "F"]).unwrap();
        assert_eq!(enc, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        for row in enc.chunks(2) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn one_hot_rejects_non_nominal_and_unknown() {
        let numeric = FeatureSpec {
            name: "raisedhands".into(),
            kind: FeatureKind::Numeric,
            categories: vec![],
            group: FeatureGroup::Behavioral,
        };
        assert!(one_hot_encode::<f64, _>(&numeric, &["1"]).is_err());
        assert!(one_hot_encode::<f64, _>(&semester(), &["X"]).is_err());
    }

    #[test]
    fn grade_label_encoding_follows_rank() {
        let schema = Schema::sapdata();
        let grade = schema.feature("GradeID").unwrap();
        let vals = [
            "G-02", "G-04", "G-05", "G-06", "G-07", "G-08", "G-09", "G-10", "G-11", "G-12",
        ];
        assert_eq!(label_encode(grade, &vals).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(label_encode(&semester(), &["F"]).unwrap(), vec![0]);
        assert!(label_encode(grade, &["G-99"]).is_err());
    }

    #[test]
    fn nationality_width() {
        let schema = Schema::sapdata();
        let nat = schema.feature("NationalITy").unwrap();
        let enc: Vec<f32> = one_hot_encode(nat, &["Jordan"]).unwrap();
        assert_eq!(enc.len(), 14);
    }

    #[test]
    fn protocol_membership() {
        let schema = Schema::sapdata();
        let wbf = FeatureProtocol::for_schema(ProtocolName::Wbf, &schema);
        let wobf = FeatureProtocol::for_schema(ProtocolName::Wobf, &schema);
        let sf = FeatureProtocol::for_schema(ProtocolName::Sf, &schema);
        assert_eq!(wbf.included_features.len(), 16);
        assert_eq!(wobf.included_features.len(), 12);
        assert_eq!(sf.included_features.len(), 12);
        assert!(!sf.includes("GradeID"));
        assert!(sf.includes("raisedhands"));
        assert!(!wobf.includes("Discussion"));
        assert_eq!("fs".parse::<ProtocolName>().unwrap(), ProtocolName::Sf);
        assert!("xyz".parse::<ProtocolName>().is_err());
    }

    #[test]
    fn standardizer_two_point() {
        let m = DesignMatrix::from_nested(&[vec![0.0_f64, 3.0], vec![10.0, 3.0]]).unwrap();
        let s = fit_standardizer(&m).unwrap();
        assert_eq!(s.mean, vec![5.0, 3.0]);
        assert_eq!(s.stddev, vec![5.0, 0.0]);
        let z = apply_standardizer(&s, &m).unwrap();
        assert_eq!(z.values(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn standardizer_errors() {
        let one = DesignMatrix::from_nested(&[vec![1.0_f64]]).unwrap();
        assert!(fit_standardizer(&one).is_err());
        let s = Standardizer::<f64>::identity(2);
        assert!(matches!(apply_standardizer(&s, &one), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_standardizer_is_noop() {
        let m = DesignMatrix::from_nested(&[vec![1.5_f64, -2.0], vec![3.0, 4.0]]).unwrap();
        let z = apply_standardizer(&Standardizer::identity(2), &m).unwrap();
        assert_eq!(z, m);
    }

    #[test]
    fn test_rows_use_train_statistics() {
        // Train: column a = (1, 3, 5), column b = (2, 2, 8).
        // mean = (3, 4); population var = (8/3, 24/3 = 8); sd = (1.63299.., 2.82842..)
        let train =
            DesignMatrix::from_nested(&[vec![1.0_f64, 2.0], vec![3.0, 2.0], vec![5.0, 8.0]]).unwrap();
        let test = DesignMatrix::from_nested(&[vec![7.0_f64, 0.0]]).unwrap();
        let s = fit_standardizer(&train).unwrap();
        let z = apply_standardizer(&s, &test).unwrap();
        let sd_a = (8.0_f64 / 3.0).sqrt();
        let sd_b = 8.0_f64.sqrt();
        assert!((z.get(0, 0) - 4.0 / sd_a).abs() < 1e-12);
        assert!((z.get(0, 1) - (-4.0 / sd_b)).abs() < 1e-12);
    }
}
