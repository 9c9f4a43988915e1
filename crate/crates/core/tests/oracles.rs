mod common;

#[test]
fn pvalues_match_high_precision_oracles() {
    common::check_pvalues().unwrap();
}

#[test]
fn quadrature_oracle_agrees_with_frozen_values() {
    for &(x, k, q) in &common::CHI2_ORACLE {
        if k >= 2 {
            assert!((common::chi2_sf_quadrature(x, k) - q).abs() < 1e-10, "x={x} k={k}");
        }
    }
}

#[test]
fn knn_matches_brute_force() {
    common::check_knn_brute_force(100).unwrap();
}

#[test]
fn tree_root_split_matches_exhaustive_search() {
    common::check_tree_root_split(20).unwrap();
}

#[test]
fn naive_bayes_posterior_by_hand() {
    common::check_nb_hand().unwrap();
}

#[test]
fn kernel_shap_equals_exact_at_full_enumeration() {
    common::check_kernel_vs_exact().unwrap();
}
