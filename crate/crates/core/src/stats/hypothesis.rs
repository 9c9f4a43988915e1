use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::special::{beta_reg, gamma_q};
use crate::dataset::{ClassLabel, Dataset, FeatureKind};
use crate::error::{Error, Result};

/// Default significance level for feature selection.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dof {
    One(u64),
    Pair(u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: Dof,
    pub p_value: f64,
    /// Set when the statistic hit a degenerate edge (e.g. zero within-group variance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// Upper tail of the chi-squared distribution with `k` degrees of freedom.
pub fn chi2_sf(x: f64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("chi-squared needs at least one degree of freedom"));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::invalid(format!("chi-squared statistic must be >= 0, got {x}")));
    }
    gamma_q(k as f64 / 2.0, x / 2.0)
}

/// Upper tail of the F distribution with (`d1`, `d2`) degrees of freedom.
pub fn f_sf(x: f64, d1: u64, d2: u64) -> Result<f64> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid("F distribution needs positive degrees of freedom"));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::invalid(format!("F statistic must be >= 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let (d1, d2) = (d1 as f64, d2 as f64);
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))
}

/// Pearson chi-squared test of independence on an r x c table of counts.
pub fn chi_squared_contingency(table: &[Vec<f64>]) -> Result<TestResult> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r < 2 || c < 2 || table.iter().any(|row| row.len() != c) {
        return Err(Error::invalid("contingency table must be at least 2 x 2 and rectangular"));
    }
    let row_sums: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            if expected == 0.0 {
                return Err(Error::Degenerate(format!(
                    "expected count is zero at cell ({i}, {j})"
                )));
            }
            stat += (observed - expected).powi(2) / expected;
        }
    }
    let dof = ((r - 1) * (c - 1)) as u64;
    Ok(TestResult {
        statistic: stat,
        dof: Dof::One(dof),
        p_value: chi2_sf(stat, dof)?,
        flag: None,
    })
}

/// Chi-squared independence test between a categorical column (category
/// indices) and the class labels. Categories and classes that never occur
/// are left out of the table.
pub fn chi_squared_test(feature: &[usize], target: &[ClassLabel]) -> Result<TestResult> {
    if feature.len() != target.len() {
        return Err(Error::Shape {
            expected: feature.len(),
            got: target.len(),
        });
    }
    let n_cat = feature.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![[0.0_f64; 3]; n_cat];
    for (&f, &y) in feature.iter().zip(target) {
        counts[f][y.index()] += 1.0;
    }
    let present_classes: Vec<usize> = (0..3)
        .filter(|&k| counts.iter().any(|row| row[k] > 0.0))
        .collect();
    let table: Vec<Vec<f64>> = counts
        .iter()
        .filter(|row| row.iter().any(|&v| v > 0.0))
        .map(|row| present_classes.iter().map(|&k| row[k]).collect())
        .collect();
    if table.len() < 2 {
        return Err(Error::Degenerate("fewer than 2 observed categories".into()));
    }
    if present_classes.len() < 2 {
        return Err(Error::Degenerate("fewer than 2 observed classes".into()));
    }
    chi_squared_contingency(&table)
}

/// One-way ANOVA F test over pre-grouped samples.
pub fn anova_f_groups(groups: &[Vec<f64>]) -> Result<TestResult> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if k < 2 {
        return Err(Error::Degenerate("ANOVA needs at least 2 non-empty groups".into()));
    }
    if n <= k {
        return Err(Error::Degenerate("ANOVA needs a group with at least 2 observations".into()));
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in &groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let d1 = (k - 1) as u64;
    let d2 = (n - k) as u64;
    let dof = Dof::Pair(d1, d2);
    // Relative cutoff so rounding noise in the sums is treated as zero.
    let scale = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| (x - grand).powi(2))
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let within_zero = ss_within <= 1e-12 * scale;
    let between_zero = ss_between <= 1e-12 * scale;
    match (within_zero, between_zero) {
        (true, true) => Err(Error::Degenerate("all observations identical".into())),
        (true, false) => Ok(TestResult {
            statistic: f64::INFINITY,
            dof,
            p_value: 0.0,
            flag: Some("zero within-group variance".into()),
        }),
        _ => {
            let f = (ss_between / d1 as f64) / (ss_within / d2 as f64);
            Ok(TestResult {
                statistic: f,
                dof,
                p_value: f_sf(f, d1, d2)?,
                flag: None,
            })
        }
    }
}

/// One-way ANOVA F test of a numeric column across the classes.
pub fn anova_f_test(x: &[f64], target: &[ClassLabel]) -> Result<TestResult> {
    if x.len() != target.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: target.len(),
        });
    }
    let mut groups = vec![Vec::new(); 3];
    for (&v, &y) in x.iter().zip(target) {
        groups[y.index()].push(v);
    }
    anova_f_groups(&groups)
}

/// Product-moment correlation coefficient.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ChiSquared,
    AnovaF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub test: TestKind,
    pub result: TestResult,
    pub significant: bool,
}

/// Sorts most relevant first: ascending p-value, ties by descending statistic.
pub fn rank_features(mut ranked: Vec<RankedFeature>) -> Vec<RankedFeature> {
    ranked.sort_by(|a, b| {
        a.result
            .p_value
            .partial_cmp(&b.result.p_value)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                b.result
                    .statistic
                    .partial_cmp(&a.result.statistic)
                    .unwrap_or(Ordering::Equal)
            })
    });
    ranked
}

/// Chi-squared relevance of every categorical feature, most relevant first.
pub fn rank_categoricals_chi2(ds: &Dataset, alpha: f64) -> Result<Vec<RankedFeature>> {
    let mut out = Vec::new();
    for (i, spec) in ds.schema().features.iter().enumerate() {
        if !spec.is_categorical() {
            continue;
        }
        let result = chi_squared_test(&ds.categorical_column(i)?, ds.labels())?;
        out.push(RankedFeature {
            feature: spec.name.clone(),
            test: TestKind::ChiSquared,
            significant: result.p_value <= alpha,
            result,
        });
    }
    Ok(rank_features(out))
}

/// ANOVA F relevance of every feature; categoricals enter label-encoded.
pub fn rank_features_anova(
    ds: &Dataset,
    alpha: f64,
    kinds: &[FeatureKind],
) -> Result<Vec<RankedFeature>> {
    let mut out = Vec::new();
    for (i, spec) in ds.schema().features.iter().enumerate() {
        if !kinds.contains(&spec.kind) {
            continue;
        }
        let x: Vec<f64> = if spec.is_categorical() {
            ds.categorical_column(i)?.into_iter().map(|c| c as f64).collect()
        } else {
            ds.numeric_column(i)?
        };
        let result = anova_f_test(&x, ds.labels())?;
        out.push(RankedFeature {
            feature: spec.name.clone(),
            test: TestKind::AnovaF,
            significant: result.p_value <= alpha,
            result,
        });
    }
    Ok(rank_features(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_sf_boundaries() {
        for k in 1..10 {
            assert_eq!(chi2_sf(0.0, k).unwrap(), 1.0);
        }
        assert!(chi2_sf(-1.0, 1).is_err());
        assert!(chi2_sf(1.0, 0).is_err());
        assert!((chi2_sf(3.841, 1).unwrap() - 0.05).abs() < 1e-4);
        assert!((chi2_sf(6.635, 1).unwrap() - 0.01).abs() < 1e-4);
    }

    #[test]
    fn f_sf_boundaries() {
        assert_eq!(f_sf(0.0, 3, 7).unwrap(), 1.0);
        for d in [1, 2, 5, 30] {
            assert!((f_sf(1.0, d, d).unwrap() - 0.5).abs() < 1e-12);
        }
        assert!((f_sf(161.45, 1, 1).unwrap() - 0.05).abs() < 1e-4);
        assert!(f_sf(-0.1, 1, 1).is_err());
    }

    #[test]
    fn independent_table() {
        let r = chi_squared_contingency(&[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn hand_computed_table() {
        // E = 15 everywhere; each cell contributes 25/15.
        let r = chi_squared_contingency(&[vec![10.0, 20.0], vec![20.0, 10.0]]).unwrap();
        assert!((r.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.dof, Dof::One(1));
    }

    #[test]
    fn zero_expected_count_is_an_error() {
        assert!(matches!(
            chi_squared_contingency(&[vec![0.0, 0.0], vec![3.0, 4.0]]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn chi_squared_from_columns_drops_unobserved() {
        use ClassLabel::*;
        let feature = [0, 0, 2, 2];
        let target = [L, L, H, H];
        let r = chi_squared_test(&feature, &target).unwrap();
        assert_eq!(r.dof, Dof::One(1));
        assert!((r.statistic - 4.0).abs() < 1e-12);
        assert!(chi_squared_test(&[0, 0], &[L, H]).is_err());
    }

    #[test]
    fn anova_hand_table() {
        // grand mean 3.5, group means 2 and 5: SSB = 3*(1.5^2)*2 = 13.5; SSW = 2 + 2 = 4;
        // MSB = 13.5 / 1, MSW = 4 / 4 = 1 -> F = 13.5.
        let r = anova_f_groups(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((r.statistic - 13.5).abs() < 1e-12);
        assert_eq!(r.dof, Dof::Pair(1, 4));
    }

    #[test]
    fn anova_equal_means_and_degenerate() {
        let r = anova_f_groups(&[vec![1.0, 3.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = anova_f_groups(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.flag.is_some());
        assert!(anova_f_groups(&[vec![1.0, 1.0], vec![1.0]]).is_err());
        assert!(anova_f_groups(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_corr(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_corr(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson_corr(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn ranking_ties_by_statistic() {
        let mk = |name: &str, stat: f64, p: f64| RankedFeature {
            feature: name.into(),
            test: TestKind::ChiSquared,
            result: TestResult {
                statistic: stat,
                dof: Dof::One(1),
                p_value: p,
                flag: None,
            },
            significant: p <= DEFAULT_ALPHA,
        };
        let ranked = rank_features(vec![mk("a", 1.0, 0.5), mk("b", 9.0, 0.0), mk("c", 12.0, 0.0)]);
        let names: Vec<&str> = ranked.iter().map(|r| r.feature.as_str()).collect();
        assert_eq!(names, ["c", "b", "a"]);
    }
}
