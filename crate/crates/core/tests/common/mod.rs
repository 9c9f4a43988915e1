//! Oracles and checks shared by the integration suites and the acceptance run.
//! Each check returns a one-line detail on success and the reason on failure.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stuperf::dataset::{load_csv, ClassLabel, Dataset, Schema};
use stuperf::evaluate::{fit_on_split, run_protocol, Protocol, RunOptions, ScalerObserver, SplitPlan};
use stuperf::explain::{exact_shapley, kernel_shap, per_row};
use stuperf::models::mlp::{Activation, Network};
use stuperf::models::svm::solve_dual;
use stuperf::models::tree::{impurity, Criterion, DtParams, Splitter};
use stuperf::models::{self, KnnParams, MlpParams, ModelKind, ModelParams, ModelSpec, NbParams};
use stuperf::preprocess::{build_design_matrix, DesignMatrix, FeatureProtocol, ProtocolName};
use stuperf::stats::hypothesis::{chi2_sf, f_sf};

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `$SAPDATA_CSV`, else `data/xAPI-Edu-Data.csv` at the workspace root.
pub fn dataset_path() -> PathBuf {
    std::env::var_os("SAPDATA_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).expect("workspace root");
            root.join("data").join("xAPI-Edu-Data.csv")
        })
}

pub fn load_sapdata() -> Result<Dataset, String> {
    let path = dataset_path();
    if !path.exists() {
        return Err(format!(
            "dataset not found at {} (set SAPDATA_CSV to the xAPI-Edu-Data CSV)",
            path.display()
        ));
    }
    load_csv(&path, &Schema::sapdata()).map_err(|e| format!("cannot load {}: {e}", path.display()))
}

// High-precision reference values (50-digit arithmetic), (x, k, Q).
pub const CHI2_ORACLE: [(f64, u64, f64); 14] = [
    (0.001, 1, 0.97477287936996038828),
    (0.5, 1, 0.47950012218695346232),
    (3.841, 1, 0.050013683763956699076),
    (6.635, 1, 0.0099994195740425249697),
    (1.0, 2, 0.6065306597126334236),
    (5.991, 2, 0.050011615026579089616),
    (10.0, 3, 0.018566135463043233303),
    (0.2, 4, 0.99532115983955552998),
    (25.0, 10, 0.0053455054871340642993),
    (2.0, 20, 0.99999988857452166128),
    (60.0, 22, 0.000022348775738450593357),
    (120.0, 80, 0.002548192303613322411),
    (7.0, 7, 0.42887985755305471947),
    (35.0, 12, 0.00046830896055150375672),
];

// (x, d1, d2, Q).
pub const F_ORACLE: [(f64, u64, u64, f64); 10] = [
    (161.45, 1, 1, 0.049999635875962893444),
    (1.0, 3, 3, 0.5),
    (0.3, 2, 9, 0.74794686089229767553),
    (2.5, 4, 30, 0.063476439798250794411),
    (4.0, 2, 477, 0.018933405851978160971),
    (10.0, 5, 5, 0.012241916531069724695),
    (0.05, 10, 3, 0.99984883497341399152),
    (3.0, 1, 100, 0.086347933925777719133),
    (1.7, 12, 40, 0.10350070359623967856),
    (50.0, 2, 10, 6.2092132305915517445e-6),
];

fn ln_gamma_half_int(two_a: u64) -> f64 {
    // ln Gamma(two_a / 2) for positive integers two_a, by recurrence.
    let (mut acc, mut a) = if two_a % 2 == 0 {
        (0.0, 1.0)
    } else {
        (0.5 * std::f64::consts::PI.ln(), 0.5)
    };
    while a + 0.5 < two_a as f64 / 2.0 {
        acc += a.ln();
        a += 1.0;
    }
    acc
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, whole: f64, fa: f64, fm: f64, fb: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, eps / 2.0, left, fa, flm, fm, depth - 1) + simpson(f, m, b, eps / 2.0, right, fm, frm, fb, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f((a + b) / 2.0), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, eps, whole, fa, fm, fb, 50)
}

/// Chi-squared upper tail by quadrature of the density from `x` to far in the tail.
pub fn chi2_sf_quadrature(x: f64, k: u64) -> f64 {
    let h = k as f64 / 2.0;
    let ln_norm = -(h * 2f64.ln()) - ln_gamma_half_int(k);
    let pdf = move |t: f64| {
        if t <= 0.0 {
            0.0
        } else {
            ((h - 1.0) * t.ln() - t / 2.0 + ln_norm).exp()
        }
    };
    let upper = x.max(k as f64) + 60.0 * (2.0 * k as f64).sqrt() + 200.0;
    integrate(&pdf, x, upper, 1e-13)
}

pub fn check_pvalues() -> Check {
    let mut worst = 0.0f64;
    for &(x, k, q) in &CHI2_ORACLE {
        let got = chi2_sf(x, k).map_err(|e| e.to_string())?;
        let err = (got - q).abs();
        if err >= 1e-10 {
            return Err(format!("chi2_sf({x}, {k}) = {got:e}, oracle {q:e}"));
        }
        worst = worst.max(err);
    }
    for &(x, d1, d2, q) in &F_ORACLE {
        let got = f_sf(x, d1, d2).map_err(|e| e.to_string())?;
        let err = (got - q).abs();
        if err >= 1e-10 {
            return Err(format!("f_sf({x}, {d1}, {d2}) = {got:e}, oracle {q:e}"));
        }
        worst = worst.max(err);
    }
    for &(x, k) in &[(0.7, 3u64), (4.0, 4), (12.0, 6), (30.0, 15), (9.5, 9)] {
        let got = chi2_sf(x, k).map_err(|e| e.to_string())?;
        let q = chi2_sf_quadrature(x, k);
        let err = (got - q).abs();
        if err >= 1e-10 {
            return Err(format!("chi2_sf({x}, {k}) = {got:e}, quadrature {q:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{} p-values, max abs err {worst:.1e}", CHI2_ORACLE.len() + F_ORACLE.len() + 5))
}

/// Majority vote over `labels` with the toolkit's tie rule: more training
/// rows first, then L < M < H.
fn brute_vote(labels: &[ClassLabel], freq: &[usize; 3]) -> ClassLabel {
    let mut votes = [0usize; 3];
    for l in labels {
        votes[l.index()] += 1;
    }
    let mut best = 0;
    for c in 1..3 {
        if votes[c] > votes[best] || (votes[c] == votes[best] && freq[c] > freq[best]) {
            best = c;
        }
    }
    ClassLabel::ALL[best]
}

fn random_labels(r: &mut ChaCha8Rng, n: usize) -> Vec<ClassLabel> {
    loop {
        let y: Vec<ClassLabel> = (0..n).map(|_| ClassLabel::ALL[r.random_range(0..3)]).collect();
        if y.iter().collect::<BTreeSet<_>>().len() >= 2 {
            return y;
        }
    }
}

/// Integer-valued toy data, so tied distances are exact ties.
fn int_matrix(r: &mut ChaCha8Rng, n: usize, d: usize, lo: i32, hi: i32) -> DesignMatrix<f64> {
    let values = (0..n * d).map(|_| r.random_range(lo..=hi) as f64).collect();
    DesignMatrix::from_rows(values, d, (0..d).map(|j| format!("x{j}")).collect()).unwrap()
}

pub fn check_knn_brute_force(instances: usize) -> Check {
    let mut r = rng(101);
    let mut queries = 0;
    for inst in 0..instances {
        let n = r.random_range(5..40);
        let d = r.random_range(1..5);
        let x = int_matrix(&mut r, n, d, -4, 4);
        let y = random_labels(&mut r, n);
        let k = 2 * r.random_range(0..(n + 1) / 2) + 1;
        let p = [1.0, 2.0, 3.0][inst % 3];
        let model = models::fit(&ModelSpec::new(ModelParams::Knn(KnnParams { k, p }), 0), &x, &y)
            .map_err(|e| e.to_string())?;
        let ModelKind::Knn(knn) = &model.inner else { unreachable!() };
        let mut freq = [0usize; 3];
        for l in &y {
            freq[l.index()] += 1;
        }
        for _ in 0..10 {
            let q: Vec<f64> = (0..d).map(|_| r.random_range(-5..=5) as f64).collect();
            let mut dist: Vec<(f64, usize)> = x
                .rows()
                .enumerate()
                .map(|(i, row)| {
                    let s: f64 = row.iter().zip(&q).map(|(a, b)| (a - b).abs().powf(p)).sum();
                    (s.powf(1.0 / p), i)
                })
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect_nb: Vec<usize> = dist[..k].iter().map(|t| t.1).collect();
            let nb = knn.neighbors(&q);
            if nb != expect_nb {
                return Err(format!("instance {inst}: neighbours {nb:?}, brute force {expect_nb:?}"));
            }
            let labels: Vec<ClassLabel> = expect_nb.iter().map(|&i| y[i]).collect();
            let want = brute_vote(&labels, &freq);
            let got = model.predict_row(&q).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("instance {inst}: predicted {got}, brute force {want}"));
            }
            queries += 1;
        }
    }
    Ok(format!("{instances} instances, {queries} queries identical"))
}

fn counts_of(y: &[ClassLabel], rows: impl Iterator<Item = usize>) -> [usize; 3] {
    let mut c = [0; 3];
    for i in rows {
        c[y[i].index()] += 1;
    }
    c
}

fn weighted_child_gini(l: &[usize; 3], r: &[usize; 3]) -> f64 {
    let nl: usize = l.iter().sum();
    let nr: usize = r.iter().sum();
    (nl as f64 * impurity(Criterion::Gini, l) + nr as f64 * impurity(Criterion::Gini, r)) / (nl + nr) as f64
}

pub fn check_tree_root_split(instances: usize) -> Check {
    let mut r = rng(202);
    let mut split_count = 0;
    for inst in 0..instances {
        let n = r.random_range(8..40);
        let d = r.random_range(1..5);
        let x = int_matrix(&mut r, n, d, 0, 6);
        let y = random_labels(&mut r, n);
        let mut best = f64::INFINITY;
        for j in 0..d {
            let vals: BTreeSet<i64> = x.column(j).iter().map(|v| *v as i64).collect();
            let vals: Vec<i64> = vals.into_iter().collect();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) as f64 / 2.0;
                let l = counts_of(&y, (0..n).filter(|&i| x.get(i, j) <= t));
                let rr = counts_of(&y, (0..n).filter(|&i| x.get(i, j) > t));
                best = best.min(weighted_child_gini(&l, &rr));
            }
        }
        let params = DtParams {
            criterion: Criterion::Gini,
            splitter: Splitter::Best,
            ..DtParams::default()
        };
        let tree = models::tree::fit(&params, &x, &y, inst as u64).map_err(|e| e.to_string())?;
        match (&tree.nodes[0].split, best.is_finite()) {
            (None, false) => {}
            (None, true) => return Err(format!("instance {inst}: no root split, exhaustive best {best}")),
            (Some(_), false) => return Err(format!("instance {inst}: split on constant features")),
            (Some(s), true) => {
                let l = counts_of(&y, (0..n).filter(|&i| x.get(i, s.feature) <= s.threshold));
                let rr = counts_of(&y, (0..n).filter(|&i| x.get(i, s.feature) > s.threshold));
                let got = weighted_child_gini(&l, &rr);
                if (got - best).abs() > 1e-12 || l != tree.nodes[s.left].counts || rr != tree.nodes[s.right].counts {
                    return Err(format!("instance {inst}: root split scores {got}, exhaustive best {best}"));
                }
                split_count += 1;
            }
        }
    }
    Ok(format!("{instances} instances, {split_count} root splits optimal"))
}

pub fn check_nb_hand() -> Check {
    // L rows [2,1] [1,0]; M row [0,3]; H row [1,1]; alpha = 1.
    // P(j|L) = (4/6, 2/6), P(j|M) = (1/5, 4/5), P(j|H) = (1/2, 1/2); priors 1/2, 1/4, 1/4.
    // Query [1, 2]: L 1/2 * 2/3 * 1/9, M 1/4 * 1/5 * 16/25, H 1/4 * 1/8.
    let x = DesignMatrix::from_nested(&[vec![2.0, 1.0], vec![1.0, 0.0], vec![0.0, 3.0], vec![1.0, 1.0]]).unwrap();
    let y = [ClassLabel::L, ClassLabel::L, ClassLabel::M, ClassLabel::H];
    let model = models::fit(&ModelSpec::new(ModelParams::Nb(NbParams { alpha: 1.0 }), 0), &x, &y)
        .map_err(|e| e.to_string())?;
    let joint = [1.0 / 27.0, 0.032, 1.0 / 32.0];
    let z: f64 = joint.iter().sum();
    let got = model.proba_row(&[1.0, 2.0]).map_err(|e| e.to_string())?;
    let err = (0..3).map(|c| (got[c] - joint[c] / z).abs()).fold(0.0, f64::max);
    if err > 1e-12 {
        return Err(format!("posterior {got:?}, hand {:?}", joint.map(|j| j / z)));
    }
    Ok(format!("posterior matches hand arithmetic (max err {err:.1e})"))
}

pub fn check_kernel_vs_exact() -> Check {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for m in [4usize, 7, 10, 12] {
        for rep in 0..2 {
            let bg: Vec<f64> = (0..8 * m).map(|_| r.random_range(-1.0..1.0)).collect();
            let bg = DesignMatrix::from_rows(bg, m, (0..m).map(|j| format!("x{j}")).collect()).unwrap();
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let g = move |row: &[f64]| {
                let lin: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                (lin + row[0] * row[1 % row.len()]).tanh() + (row[row.len() - 1] * 1.3).sin()
            };
            let f = per_row(g);
            let exact = exact_shapley(&f, &bg, &x).map_err(|e| e.to_string())?;
            let kern = kernel_shap(&f, &bg, &x, (1 << m) - 2, rep).map_err(|e| e.to_string())?;
            for (a, b) in exact.values.iter().zip(&kern.values) {
                worst = worst.max((a - b).abs());
            }
            runs += 1;
        }
    }
    if worst >= 1e-6 {
        return Err(format!("max |kernel - exact| = {worst:e}"));
    }
    Ok(format!("{runs} explanations up to 12 columns, max abs diff {worst:.1e}"))
}

/// Weights of `layer` then its biases, as one flat index.
fn param(net: &mut Network<f64>, layer: usize, i: usize) -> &mut f64 {
    let nw = net.weights[layer].len();
    if i < nw {
        &mut net.weights[layer][i]
    } else {
        &mut net.biases[layer][i - nw]
    }
}

/// Relative error per parameter, `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn check_mlp_gradients() -> Check {
    let mut worst = 0.0f64;
    for (activation, seed) in [(Activation::Tanh, 1u64), (Activation::Relu, 2)] {
        let mut r = rng(404 + seed);
        let n = 6;
        let x: Vec<f64> = (0..n * 4).map(|_| r.random_range(-1.5..1.5)).collect();
        let y = [ClassLabel::L, ClassLabel::M, ClassLabel::H, ClassLabel::H, ClassLabel::M, ClassLabel::L];
        let mut net = Network::<f64>::init(vec![4, 5, 3], activation, [true; 3], seed);
        let (_, grad) = net.loss_and_gradients(&x, &y);
        let h = 1e-6;
        for layer in 0..net.weights.len() {
            for i in 0..net.weights[layer].len() + net.biases[layer].len() {
                let is_w = i < net.weights[layer].len();
                let orig = *param(&mut net, layer, i);
                *param(&mut net, layer, i) = orig + h;
                let (up, _) = net.loss_and_gradients(&x, &y);
                *param(&mut net, layer, i) = orig - h;
                let (down, _) = net.loss_and_gradients(&x, &y);
                *param(&mut net, layer, i) = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = if is_w {
                    grad.weights[layer][i]
                } else {
                    grad.biases[layer][i - net.weights[layer].len()]
                };
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                if rel >= 1e-5 {
                    return Err(format!(
                        "{activation:?} layer {layer} param {i}: backprop {analytic:e}, numeric {numeric:e}"
                    ));
                }
                worst = worst.max(rel);
            }
        }
    }
    Ok(format!("tanh and relu 4-5-3 networks, max relative error {worst:.1e}"))
}

/// KKT conditions of the dual solution for an RBF problem with soft margin.
pub fn check_svm_kkt() -> Check {
    let mut r = rng(505);
    let n = 60;
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect();
    let y: Vec<f64> = pts
        .iter()
        .map(|p| if p[0] * p[0] + p[1] * p[1] + r.random_range(-0.5..0.5) < 1.5 { 1.0 } else { -1.0 })
        .collect();
    let gamma = 0.7;
    let mut kmat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
            kmat[i * n + j] = (-gamma * d).exp();
        }
    }
    let (c, tol) = (2.0, 1e-8);
    let (alpha, rho, _, converged) = solve_dual(&kmat, &y, c, tol);
    if !converged {
        return Err("SMO did not converge".into());
    }
    let balance: f64 = alpha.iter().zip(&y).map(|(a, b)| a * b).sum();
    if balance.abs() > 1e-9 {
        return Err(format!("sum alpha_i y_i = {balance:e}"));
    }
    let mut worst = 0.0f64;
    let (mut free, mut bound) = (0, 0);
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * kmat[i * n + j]).sum::<f64>() - rho;
        let g = y[i] * f - 1.0;
        let a = alpha[i];
        let viol = if a < -1e-12 || a > c + 1e-12 {
            f64::INFINITY
        } else if a <= 1e-12 {
            (-g).max(0.0)
        } else if a >= c - 1e-12 {
            bound += 1;
            g.max(0.0)
        } else {
            free += 1;
            g.abs()
        };
        worst = worst.max(viol);
    }
    if worst > 1e-6 {
        return Err(format!("max KKT violation {worst:e}"));
    }
    Ok(format!("{free} free and {bound} bounded SVs, max KKT violation {worst:.1e}"))
}

/// Records every row set a standardizer is fitted on.
#[derive(Default)]
pub struct Recorder(pub Mutex<Vec<(usize, Vec<usize>)>>);

impl ScalerObserver for Recorder {
    fn observe(&self, split_index: usize, rows: &[usize]) {
        self.0.lock().unwrap().push((split_index, rows.to_vec()));
    }
}

/// Instrumented RHO runs for every standardizing family, plus a poisoning
/// probe: corrupting test rows must not change any fitted scaler.
pub fn check_leak_freedom(ds: &Dataset, repeats: usize) -> Check {
    let proto = FeatureProtocol::for_schema(ProtocolName::Sf, ds.schema());
    let plan = SplitPlan::new(
        Protocol::Rho {
            repeats,
            test_fraction: 0.1,
        },
        42,
    );
    let splits = plan.splits(ds.labels()).map_err(|e| e.to_string())?;
    let mut observed = 0;
    let mut test_rows_seen = 0;
    for family in models::Family::ALL {
        if !family.wants_standardized_input() {
            continue;
        }
        let params = match ModelParams::reference(family) {
            // The standardization path does not depend on training length.
            ModelParams::Mlp(p) => ModelParams::Mlp(MlpParams { max_epochs: 3, ..p }),
            p => p,
        };
        let rec = Recorder::default();
        let opts = RunOptions {
            workers: 0,
            observer: Some(&rec),
        };
        run_protocol::<f64>(ds, &proto, &params, &plan, opts).map_err(|e| e.to_string())?;
        let seen = rec.0.into_inner().unwrap();
        if seen.len() != splits.len() {
            return Err(format!("{family}: {} scaler fits for {} splits", seen.len(), splits.len()));
        }
        for (idx, rows) in seen {
            let sp = &splits[idx].split;
            let test: BTreeSet<usize> = sp.test.iter().copied().collect();
            test_rows_seen += rows.iter().filter(|i| test.contains(i)).count();
            if rows != sp.train {
                return Err(format!("{family}: split {idx} scaler rows differ from the training rows"));
            }
            observed += 1;
        }
    }
    if test_rows_seen > 0 {
        return Err(format!("{test_rows_seen} test-row observations"));
    }
    let x = build_design_matrix::<f64>(ds, &proto).map_err(|e| e.to_string())?;
    let params = ModelParams::reference(models::Family::Svm);
    for ps in splits.iter().take(5) {
        let mut poisoned = x.values().to_vec();
        for &i in &ps.split.test {
            for v in &mut poisoned[i * x.n_cols()..(i + 1) * x.n_cols()] {
                *v = 1e6;
            }
        }
        let poisoned = x.with_values(poisoned).map_err(|e| e.to_string())?;
        let clean = fit_on_split(&x, ds.labels(), &params, ps, None).map_err(|e| e.to_string())?;
        let dirty = fit_on_split(&poisoned, ds.labels(), &params, ps, None).map_err(|e| e.to_string())?;
        if clean.scaler != dirty.scaler || clean.model != dirty.model {
            return Err(format!("split {}: poisoned test rows changed the fitted scaler or model", ps.index));
        }
    }
    Ok(format!("{observed} scaler fits over {repeats} splits x 4 families, 0 test-row observations"))
}
