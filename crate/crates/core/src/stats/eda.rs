//! Exploratory summaries of a dataset: histograms, bar counts, scatter data,
//! correlations, grouped means and the feature-relevance rankings.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hypothesis::{
    pearson_corr, rank_categoricals_chi2, rank_features_anova, RankedFeature,
};
use crate::dataset::{class_distribution, ClassDistribution, ClassLabel, Dataset, FeatureKind};
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 10;

/// Threshold below which pairwise numeric correlation counts as "low".
pub const LOW_CORRELATION: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub feature: String,
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Per-class counts in (L, M, H) order.
    pub counts_by_class: [Vec<usize>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarCounts {
    pub feature: String,
    pub categories: Vec<String>,
    pub counts: Vec<usize>,
    pub counts_by_class: [Vec<usize>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPair {
    pub x_feature: String,
    pub y_feature: String,
    pub points: Vec<(f64, f64, ClassLabel)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub features: Vec<String>,
    /// Row-major; `None` where a column has zero variance.
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn max_off_diagonal_abs(&self) -> Option<f64> {
        let mut max: Option<f64> = None;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    if let Some(r) = v {
                        max = Some(max.map_or(r.abs(), |m: f64| m.max(r.abs())));
                    }
                }
            }
        }
        max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMeans {
    pub group_feature: String,
    pub categories: Vec<String>,
    pub counts: Vec<usize>,
    pub numeric_features: Vec<String>,
    /// `means[c][k]`: mean of numeric `k` within category `c`; `None` if unobserved.
    pub means: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub feature: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
    /// Sample skewness per class (L, M, H); `None` when undefined.
    pub skewness_by_class: [Option<f64>; 3],
    /// Pearson correlation with the class code (L=-1, M=0, H=+1).
    pub corr_with_class: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaReport {
    pub n_rows: usize,
    pub class_distribution: ClassDistribution,
    pub numeric_summaries: Vec<NumericSummary>,
    pub histograms: Vec<Histogram>,
    pub bars: Vec<BarCounts>,
    pub scatter: Vec<ScatterPair>,
    pub correlation: CorrelationMatrix,
    pub grouped_means: Vec<GroupedMeans>,
    pub chi2_ranking: Vec<RankedFeature>,
    pub anova_categorical_ranking: Vec<RankedFeature>,
    pub anova_numeric_ranking: Vec<RankedFeature>,
}

/// Builds the full report. Histograms use [`HISTOGRAM_BINS`] equal-width bins
/// over [0, 100], widened if the data leave that range.
pub fn eda_report(ds: &Dataset, alpha: f64) -> Result<EdaReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = ds.schema();
    let labels = ds.labels();
    let numeric_idx: Vec<usize> = (0..schema.len())
        .filter(|&i| schema.features[i].kind == FeatureKind::Numeric)
        .collect();
    let numeric_cols: Vec<Vec<f64>> = numeric_idx
        .iter()
        .map(|&i| ds.numeric_column(i))
        .collect::<Result<_>>()?;
    let numeric_names: Vec<String> = numeric_idx
        .iter()
        .map(|&i| schema.features[i].name.clone())
        .collect();

    let class_codes: Vec<f64> = labels.iter().map(|l| l.code() as f64).collect();
    let numeric_summaries = numeric_names
        .iter()
        .zip(&numeric_cols)
        .map(|(name, col)| summarize_numeric(name, col, labels, &class_codes))
        .collect();

    let histograms = numeric_names
        .iter()
        .zip(&numeric_cols)
        .map(|(name, col)| histogram(name, col, labels))
        .collect();

    let mut bars = Vec::new();
    for (i, spec) in schema.features.iter().enumerate() {
        if !spec.is_categorical() {
            continue;
        }
        let col = ds.categorical_column(i)?;
        let k = spec.categories.len();
        let mut counts = vec![0; k];
        let mut by_class = [vec![0; k], vec![0; k], vec![0; k]];
        for (&c, &y) in col.iter().zip(labels) {
            counts[c] += 1;
            by_class[y.index()][c] += 1;
        }
        bars.push(BarCounts {
            feature: spec.name.clone(),
            categories: spec.categories.clone(),
            counts,
            counts_by_class: by_class,
        });
    }

    let mut scatter = Vec::new();
    for a in 0..numeric_cols.len() {
        for b in a + 1..numeric_cols.len() {
            scatter.push(ScatterPair {
                x_feature: numeric_names[a].clone(),
                y_feature: numeric_names[b].clone(),
                points: numeric_cols[a]
                    .iter()
                    .zip(&numeric_cols[b])
                    .zip(labels)
                    .map(|((&x, &y), &l)| (x, y, l))
                    .collect(),
            });
        }
    }

    let correlation = CorrelationMatrix {
        features: numeric_names.clone(),
        values: (0..numeric_cols.len())
            .map(|a| {
                (0..numeric_cols.len())
                    .map(|b| pearson_corr(&numeric_cols[a], &numeric_cols[b]).ok())
                    .collect()
            })
            .collect(),
    };

    let mut grouped_means = Vec::new();
    for group in ["Topic", "GradeID"] {
        let Some(gi) = schema.feature_index(group) else {
            continue;
        };
        let spec = &schema.features[gi];
        let col = ds.categorical_column(gi)?;
        let k = spec.categories.len();
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; numeric_cols.len()]; k];
        for (r, &c) in col.iter().enumerate() {
            counts[c] += 1;
            for (s, ncol) in sums[c].iter_mut().zip(&numeric_cols) {
                *s += ncol[r];
            }
        }
        let means = sums
            .into_iter()
            .zip(&counts)
            .map(|(row, &n)| {
                row.into_iter()
                    .map(|s| (n > 0).then(|| s / n as f64))
                    .collect()
            })
            .collect();
        grouped_means.push(GroupedMeans {
            group_feature: group.to_string(),
            categories: spec.categories.clone(),
            counts,
            numeric_features: numeric_names.clone(),
            means,
        });
    }

    Ok(EdaReport {
        n_rows: ds.len(),
        class_distribution: class_distribution(ds)?,
        numeric_summaries,
        histograms,
        bars,
        scatter,
        correlation,
        grouped_means,
        chi2_ranking: rank_categoricals_chi2(ds, alpha)?,
        anova_categorical_ranking: rank_features_anova(
            ds,
            alpha,
            &[FeatureKind::Nominal, FeatureKind::Ordinal],
        )?,
        anova_numeric_ranking: rank_features_anova(ds, alpha, &[FeatureKind::Numeric])?,
    })
}

fn histogram(name: &str, col: &[f64], labels: &[ClassLabel]) -> Histogram {
    let lo = col.iter().copied().fold(0.0_f64, f64::min);
    let hi = col.iter().copied().fold(100.0_f64, f64::max);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0; HISTOGRAM_BINS];
    let mut by_class = [
        vec![0; HISTOGRAM_BINS],
        vec![0; HISTOGRAM_BINS],
        vec![0; HISTOGRAM_BINS],
    ];
    for (&x, &y) in col.iter().zip(labels) {
        let b = (((x - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
        by_class[y.index()][b] += 1;
    }
    Histogram {
        feature: name.to_string(),
        edges,
        counts,
        counts_by_class: by_class,
    }
}

fn summarize_numeric(name: &str, col: &[f64], labels: &[ClassLabel], codes: &[f64]) -> NumericSummary {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut skewness_by_class = [None; 3];
    for class in ClassLabel::ALL {
        let xs: Vec<f64> = col
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(&x, _)| x)
            .collect();
        skewness_by_class[class.index()] = skewness(&xs);
    }
    NumericSummary {
        feature: name.to_string(),
        min: col.iter().copied().fold(f64::INFINITY, f64::min),
        max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        stddev: var.sqrt(),
        skewness_by_class,
        corr_with_class: pearson_corr(col, codes).ok(),
    }
}

/// Population (biased) sample skewness.
fn skewness(xs: &[f64]) -> Option<f64> {
    if xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    (m2 > 0.0).then(|| m3 / m2.powf(1.5))
}

impl EdaReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_histograms_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["feature", "bin_lo", "bin_hi", "count", "count_L", "count_M", "count_H"])?;
        for h in &self.histograms {
            for b in 0..h.counts.len() {
                w.write_record([
                    h.feature.clone(),
                    h.edges[b].to_string(),
                    h.edges[b + 1].to_string(),
                    h.counts[b].to_string(),
                    h.counts_by_class[0][b].to_string(),
                    h.counts_by_class[1][b].to_string(),
                    h.counts_by_class[2][b].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_bars_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["feature", "category", "count", "count_L", "count_M", "count_H"])?;
        for b in &self.bars {
            for (c, cat) in b.categories.iter().enumerate() {
                w.write_record([
                    b.feature.clone(),
                    cat.clone(),
                    b.counts[c].to_string(),
                    b.counts_by_class[0][c].to_string(),
                    b.counts_by_class[1][c].to_string(),
                    b.counts_by_class[2][c].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_scatter_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["x_feature", "y_feature", "x", "y", "class"])?;
        for s in &self.scatter {
            for (x, y, l) in &s.points {
                w.write_record([
                    s.x_feature.clone(),
                    s.y_feature.clone(),
                    x.to_string(),
                    y.to_string(),
                    l.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_correlation_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec![String::new()];
        header.extend(self.correlation.features.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.correlation.features.iter().zip(&self.correlation.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |r| r.to_string())));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Writes `eda.json` plus the plot CSVs into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        write("eda.json", self.to_json()?.into_bytes())?;
        let mut buf = Vec::new();
        self.write_histograms_csv(&mut buf)?;
        write("eda_histograms.csv", std::mem::take(&mut buf))?;
        self.write_bars_csv(&mut buf)?;
        write("eda_bars.csv", std::mem::take(&mut buf))?;
        self.write_scatter_csv(&mut buf)?;
        write("eda_scatter.csv", std::mem::take(&mut buf))?;
        self.write_correlation_csv(&mut buf)?;
        write("eda_correlation.csv", buf)?;
        Ok(())
    }
}
