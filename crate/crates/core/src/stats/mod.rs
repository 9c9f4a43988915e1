//! Statistical tests and exploratory summaries.

pub mod eda;
pub mod hypothesis;
pub mod special;

pub use eda::{eda_report, EdaReport};
pub use hypothesis::{
    anova_f_groups, anova_f_test, chi2_sf, chi_squared_contingency, chi_squared_test, f_sf,
    pearson_corr, rank_categoricals_chi2, rank_features, rank_features_anova, Dof,
    RankedFeature, TestKind, TestResult, DEFAULT_ALPHA,
};
