//! Typed records for the student-performance table: schema, loading, and
//! target handling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bundled schema for the xAPI-Edu-Data table.
pub const SAPDATA_SCHEMA_TOML: &str = include_str!("../schema/sapdata.toml");

/// The four behavioral activity counts.
pub const BEHAVIORAL_FEATURES: [&str; 4] = [
    "raisedhands",
    "VisITedResources",
    "AnnouncementsView",
    "Discussion",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Nominal,
    Ordinal,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Demographic,
    Academic,
    Behavioral,
    Parental,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Category names; rank order for ordinal features, empty for numerics.
    #[serde(default)]
    pub categories: Vec<String>,
    pub group: FeatureGroup,
}

impl FeatureSpec {
    pub fn is_categorical(&self) -> bool {
        self.kind != FeatureKind::Numeric
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }

    fn validate(&self) -> Result<()> {
        match (self.kind, self.categories.is_empty()) {
            (FeatureKind::Numeric, false) => {
                return Err(Error::Schema(format!(
                    "numeric feature '{}' must not list categories",
                    self.name
                )))
            }
            (FeatureKind::Nominal | FeatureKind::Ordinal, true) => {
                return Err(Error::Schema(format!(
                    "categorical feature '{}' has no categories",
                    self.name
                )))
            }
            _ => {}
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate category '{c}' in feature '{}'",
                    self.name
                )));
            }
        }
        if self.categories.len() > u16::MAX as usize {
            return Err(Error::Schema(format!("too many categories in '{}'", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub target_name: String,
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    pub fn new(target_name: impl Into<String>, features: Vec<FeatureSpec>) -> Result<Self> {
        let schema = Schema {
            target_name: target_name.into(),
            features,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The bundled xAPI-Edu-Data schema.
    pub fn sapdata() -> Self {
        let schema = Self::from_toml_str(SAPDATA_SCHEMA_TOML).expect("bundled schema is valid");
        schema
            .check_sapdata_shape()
            .expect("bundled schema has SAPData shape");
        schema
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    /// Loads a schema document; `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("no features".into()));
        }
        let mut names = HashSet::new();
        for f in &self.features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name '{}'", f.name)));
            }
        }
        if names.contains(self.target_name.as_str()) {
            return Err(Error::Schema(format!(
                "target '{}' collides with a feature name",
                self.target_name
            )));
        }
        Ok(())
    }

    /// Checks the table-specific shape: 16 features, the four behavioral
    /// numerics, and GradeID as the single ordinal feature.
    pub fn check_sapdata_shape(&self) -> Result<()> {
        if self.features.len() != 16 {
            return Err(Error::Schema(format!(
                "expected 16 features, found {}",
                self.features.len()
            )));
        }
        let numerics: Vec<&str> = self
            .features
            .iter()
            .filter(|f| f.kind == FeatureKind::Numeric)
            .map(|f| f.name.as_str())
            .collect();
        if numerics != BEHAVIORAL_FEATURES {
            return Err(Error::Schema(format!(
                "expected numeric features {BEHAVIORAL_FEATURES:?}, found {numerics:?}"
            )));
        }
        let ordinals: Vec<&str> = self
            .features
            .iter()
            .filter(|f| f.kind == FeatureKind::Ordinal)
            .map(|f| f.name.as_str())
            .collect();
        if ordinals != ["GradeID"] {
            return Err(Error::Schema(format!(
                "expected GradeID as the only ordinal feature, found {ordinals:?}"
            )));
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Performance class. Integer codes follow the L = -1, M = 0, H = +1 convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    L,
    M,
    H,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::L, ClassLabel::M, ClassLabel::H];
    pub const COUNT: usize = 3;

    /// Position in (L, M, H) order.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::L => 0,
            ClassLabel::M => 1,
            ClassLabel::H => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> i8 {
        self.index() as i8 - 1
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            -1 => Some(ClassLabel::L),
            0 => Some(ClassLabel::M),
            1 => Some(ClassLabel::H),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::L => "L",
            ClassLabel::M => "M",
            ClassLabel::H => "H",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "L" => Ok(ClassLabel::L),
            "M" => Ok(ClassLabel::M),
            "H" => Ok(ClassLabel::H),
            other => Err(format!("unknown class '{other}', expected L, M or H")),
        }
    }
}

/// Maps a raw 0-100 mark onto a performance class.
///
/// Only needed for inputs that carry raw marks; the published table already
/// ships the discretized class column.
pub fn discretize_mark(mark: i64) -> Result<ClassLabel> {
    match mark {
        0..=69 => Ok(ClassLabel::L),
        70..=89 => Ok(ClassLabel::M),
        90..=100 => Ok(ClassLabel::H),
        _ => Err(Error::MarkOutOfRange(mark)),
    }
}

/// A single cell value: category index into the feature's category list, or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Category(u16),
    Numeric(f64),
}

impl Value {
    pub fn category(self) -> Option<usize> {
        match self {
            Value::Category(c) => Some(c as usize),
            Value::Numeric(_) => None,
        }
    }

    pub fn numeric(self) -> Option<f64> {
        match self {
            Value::Numeric(x) => Some(x),
            Value::Category(_) => None,
        }
    }
}

pub type Record = Vec<Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Record>,
    labels: Vec<ClassLabel>,
}

impl Dataset {
    /// Builds a dataset, checking every record against the schema.
    pub fn new(schema: Schema, rows: Vec<Record>, labels: Vec<ClassLabel>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Shape {
                    expected: schema.len(),
                    got: row.len(),
                });
            }
            for (f, (value, spec)) in row.iter().zip(&schema.features).enumerate() {
                let ok = match (spec.kind, value) {
                    (FeatureKind::Numeric, Value::Numeric(x)) => x.is_finite(),
                    (FeatureKind::Nominal | FeatureKind::Ordinal, Value::Category(c)) => {
                        (*c as usize) < spec.categories.len()
                    }
                    _ => false,
                };
                if !ok {
                    return Err(Error::Cell {
                        row: r + 1,
                        column: schema.features[f].name.clone(),
                        message: format!("value {value:?} does not conform to schema"),
                    });
                }
            }
        }
        Ok(Dataset {
            schema,
            rows,
            labels,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Category indices of a categorical feature, one per row.
    pub fn categorical_column(&self, feature: usize) -> Result<Vec<usize>> {
        let spec = &self.schema.features[feature];
        if !spec.is_categorical() {
            return Err(Error::Encoding {
                feature: spec.name.clone(),
                message: "not a categorical feature".into(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r[feature].category().expect("validated"))
            .collect())
    }

    pub fn numeric_column(&self, feature: usize) -> Result<Vec<f64>> {
        let spec = &self.schema.features[feature];
        if spec.is_categorical() {
            return Err(Error::Encoding {
                feature: spec.name.clone(),
                message: "not a numeric feature".into(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r[feature].numeric().expect("validated"))
            .collect())
    }

    /// Raw string values of a feature, as they would appear in the CSV.
    pub fn raw_column(&self, feature: usize) -> Vec<String> {
        let spec = &self.schema.features[feature];
        self.rows
            .iter()
            .map(|r| format_value(spec, r[feature]))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes the dataset as CSV in schema column order followed by the target.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.target_name);
        w.write_record(&header)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row
                .iter()
                .zip(&self.schema.features)
                .map(|(v, spec)| format_value(spec, *v))
                .collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
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

fn format_value(spec: &FeatureSpec, v: Value) -> String {
    match v {
        Value::Category(c) => spec.categories[c as usize].clone(),
        Value::Numeric(x) => x.to_string(),
    }
}

/// Loads a CSV file whose header names the schema's features (any order) and the target.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let positions: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    if positions.len() != header.len() {
        return Err(Error::Schema("duplicate column in CSV header".into()));
    }

    let mut feature_cols = Vec::with_capacity(schema.len());
    for f in &schema.features {
        match positions.get(f.name.as_str()) {
            Some(&i) => feature_cols.push(i),
            None => return Err(Error::MissingColumn(f.name.clone())),
        }
    }
    let target_col = *positions
        .get(schema.target_name.as_str())
        .ok_or_else(|| Error::MissingColumn(schema.target_name.clone()))?;
    if header.len() != schema.len() + 1 {
        let known: HashSet<&str> = schema
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain(std::iter::once(schema.target_name.as_str()))
            .collect();
        let extra: Vec<&str> = header
            .iter()
            .map(String::as_str)
            .filter(|h| !known.contains(h))
            .collect();
        return Err(Error::Schema(format!("unexpected columns {extra:?}")));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let mut row = Vec::with_capacity(schema.len());
        for (spec, &col) in schema.features.iter().zip(&feature_cols) {
            let raw = record.get(col).unwrap_or("");
            row.push(parse_value(spec, raw).map_err(|message| Error::Cell {
                row: row_no,
                column: spec.name.clone(),
                message,
            })?);
        }
        let raw = record.get(target_col).unwrap_or("");
        let label = raw.parse::<ClassLabel>().map_err(|message| Error::Cell {
            row: row_no,
            column: schema.target_name.clone(),
            message,
        })?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        schema: schema.clone(),
        rows,
        labels,
    })
}

fn parse_value(spec: &FeatureSpec, raw: &str) -> std::result::Result<Value, String> {
    match spec.kind {
        FeatureKind::Numeric => {
            let x: f64 = raw
                .parse()
                .map_err(|_| format!("non-numeric value '{raw}'"))?;
            if !x.is_finite() {
                return Err(format!("non-finite value '{raw}'"));
            }
            Ok(Value::Numeric(x))
        }
        FeatureKind::Nominal | FeatureKind::Ordinal => spec
            .category_index(raw)
            .map(|i| Value::Category(i as u16))
            .ok_or_else(|| format!("unknown category '{raw}'")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    /// Counts in (L, M, H) order.
    pub counts: [usize; 3],
    pub proportions: [f64; 3],
}

impl ClassDistribution {
    pub fn proportion(&self, label: ClassLabel) -> f64 {
        self.proportions[label.index()]
    }
}

pub fn class_distribution(ds: &Dataset) -> Result<ClassDistribution> {
    label_distribution(ds.labels())
}

pub fn label_distribution(labels: &[ClassLabel]) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    let proportions = counts.map(|c| c as f64 / n);
    Ok(ClassDistribution {
        counts,
        proportions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_schema() -> Schema {
        Schema::new(
            "Class",
            vec![
                FeatureSpec {
                    name: "Semester".into(),
                    kind: FeatureKind::Nominal,
                    categories: vec!["F".into(), "S".into()],
                    group: FeatureGroup::Academic,
                },
                FeatureSpec {
                    name: "GradeID".into(),
                    kind: FeatureKind::Ordinal,
                    categories: vec!["G-02".into(), "G-04".into()],
                    group: FeatureGroup::Academic,
                },
                FeatureSpec {
                    name: "raisedhands".into(),
                    kind: FeatureKind::Numeric,
                    categories: vec![],
                    group: FeatureGroup::Behavioral,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn discretize_thresholds() {
        assert_eq!(discretize_mark(0).unwrap(), ClassLabel::L);
        assert_eq!(discretize_mark(69).unwrap(), ClassLabel::L);
        assert_eq!(discretize_mark(70).unwrap(), ClassLabel::M);
        assert_eq!(discretize_mark(89).unwrap(), ClassLabel::M);
        assert_eq!(discretize_mark(90).unwrap(), ClassLabel::H);
        assert_eq!(discretize_mark(100).unwrap(), ClassLabel::H);
        assert!(matches!(discretize_mark(101), Err(Error::MarkOutOfRange(101))));
        assert!(discretize_mark(-1).is_err());
    }

    #[test]
    fn discretize_is_monotone() {
        let mut prev = ClassLabel::L;
        for m in 0..=100 {
            let c = discretize_mark(m).unwrap();
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn label_codes() {
        assert_eq!(ClassLabel::L.code(), -1);
        assert_eq!(ClassLabel::M.code(), 0);
        assert_eq!(ClassLabel::H.code(), 1);
        for l in ClassLabel::ALL {
            assert_eq!(ClassLabel::from_code(l.code()), Some(l));
        }
    }

    #[test]
    fn header_any_order() {
        let csv = "raisedhands,Class,GradeID,Semester\n15,M,G-04,S\n3,L,G-02,F\n";
        let ds = read_csv(csv.as_bytes(), &tiny_schema()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.rows()[0][0], Value::Category(1));
        assert_eq!(ds.rows()[0][1], Value::Category(1));
        assert_eq!(ds.rows()[0][2], Value::Numeric(15.0));
        assert_eq!(ds.labels(), &[ClassLabel::M, ClassLabel::L]);
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let csv = "Semester,GradeID,raisedhands,Class\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &tiny_schema()),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            read_csv("".as_bytes(), &tiny_schema()),
            Err(Error::EmptyDataset) | Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn unknown_category_names_row_and_feature() {
        let csv = "Semester,GradeID,raisedhands,Class\nF,G-02,1,L\nS,G-99,2,M\n";
        match read_csv(csv.as_bytes(), &tiny_schema()) {
            Err(Error::Cell { row, column, message }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "GradeID");
                assert!(message.contains("G-99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_missing_column() {
        let csv = "Semester,GradeID,raisedhands,Class\nF,G-02,abc,L\n";
        let err = read_csv(csv.as_bytes(), &tiny_schema()).unwrap_err();
        assert!(matches!(err, Error::Cell { row: 1, ref column, .. } if column == "raisedhands"));
        let csv = "Semester,raisedhands,Class\nF,1,L\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &tiny_schema()),
            Err(Error::MissingColumn(c)) if c == "GradeID"
        ));
        let csv = "Semester,GradeID,raisedhands,Class\nF,G-02,inf,L\n";
        assert!(read_csv(csv.as_bytes(), &tiny_schema()).is_err());
    }

    #[test]
    fn bad_class_value() {
        let csv = "Semester,GradeID,raisedhands,Class\nF,G-02,1,X\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &tiny_schema()),
            Err(Error::Cell { ref column, .. }) if column == "Class"
        ));
    }

    #[test]
    fn schema_invariants() {
        let bad = FeatureSpec {
            name: "x".into(),
            kind: FeatureKind::Numeric,
            categories: vec!["a".into()],
            group: FeatureGroup::Behavioral,
        };
        assert!(Schema::new("Class", vec![bad]).is_err());
        let dup = FeatureSpec {
            name: "y".into(),
            kind: FeatureKind::Nominal,
            categories: vec!["a".into(), "a".into()],
            group: FeatureGroup::Academic,
        };
        assert!(Schema::new("Class", vec![dup]).is_err());
        assert!(tiny_schema().check_sapdata_shape().is_err());
    }

    #[test]
    fn bundled_schema_shape() {
        let s = Schema::sapdata();
        assert_eq!(s.len(), 16);
        let cards: Vec<(&str, usize)> = s
            .features
            .iter()
            .filter(|f| f.is_categorical())
            .map(|f| (f.name.as_str(), f.categories.len()))
            .collect();
        assert_eq!(
            cards,
            vec![
                ("gender", 2),
                ("NationalITy", 14),
                ("PlaceofBirth", 14),
                ("StageID", 3),
                ("GradeID", 10),
                ("SectionID", 3),
                ("Topic", 12),
                ("Semester", 2),
                ("Relation", 2),
                ("ParentAnsweringSurvey", 2),
                ("ParentschoolSatisfaction", 2),
                ("StudentAbsenceDays", 2),
            ]
        );
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(Schema::from_json_str(&json).unwrap(), s);
    }

    #[test]
    fn distribution() {
        let d = label_distribution(&[ClassLabel::H]).unwrap();
        assert_eq!(d.proportions, [0.0, 0.0, 1.0]);
        let d = label_distribution(&[ClassLabel::L, ClassLabel::M, ClassLabel::M, ClassLabel::H])
            .unwrap();
        assert_eq!(d.counts, [1, 2, 1]);
        assert!((d.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(label_distribution(&[]).is_err());
    }
}
