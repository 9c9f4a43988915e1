use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use stuperf::dataset::{class_distribution, load_csv, BEHAVIORAL_FEATURES};
use stuperf::evaluate::{fit_on_split, grid_search, run_protocol, EvaluationReport, GridSearchResult, RunOptions, SplitFit, SplitPlan};
use stuperf::explain::{
    explain_model, group_feature_values, sample_background, shap_summary, ShapExplanation, ShapOptions, ShapSummary,
};
use stuperf::preprocess::{build_design_matrix, FeatureProtocol, SF_DROPPED};
use stuperf::rng::child_seed;
use stuperf::stats::eda_report;
use stuperf::stats::hypothesis::{Dof, RankedFeature};
use stuperf::{ClassLabel, Dataset, Family, ModelParams, ProtocolName};

use crate::config::{Config, ParamSource};
use crate::{table, Failure};

type CmdResult = Result<(), Failure>;

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn load_dataset(cfg: &Config) -> Result<Dataset, Failure> {
    cfg.check_data()?;
    let schema = cfg.schema()?;
    load_csv(&cfg.data, &schema).map_err(|e| Failure::usage(format!("{}: {e}", cfg.data.display())))
}

fn subdir(cfg: &Config, name: &str) -> Result<PathBuf, Failure> {
    let dir = cfg.out.join(name);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(value).context("serializing output")?)
}

fn run_options(cfg: &Config) -> RunOptions<'static> {
    RunOptions::with_workers(cfg.workers)
}

fn print_ranking(title: &str, ranked: &[RankedFeature]) {
    say!("{title}:");
    for r in ranked {
        let dof = match r.result.dof {
            Dof::One(k) => k.to_string(),
            Dof::Pair(a, b) => format!("{a},{b}"),
        };
        let mark = if r.significant { "" } else { "  (not significant)" };
        say!(
            "  {:<26} stat {:>10.4}  dof {:>7}  p {:.4e}{mark}",
            r.feature, r.result.statistic, dof, r.result.p_value
        );
    }
}

pub fn eda(cfg: &Config) -> CmdResult {
    let ds = load_dataset(cfg)?;
    let report = eda_report(&ds, cfg.alpha)?;
    let dir = subdir(cfg, "eda")?;
    report.save(&dir)?;
    let dist = class_distribution(&ds)?;
    say!("{} rows", ds.len());
    let parts: Vec<String> = ClassLabel::ALL
        .iter()
        .map(|&l| format!("{l} {:.2}% ({})", 100.0 * dist.proportion(l), dist.counts[l.index()]))
        .collect();
    say!("class balance: {}", parts.join(", "));
    print_ranking("chi-squared (categorical features)", &report.chi2_ranking);
    print_ranking("ANOVA F (categorical features, label-encoded)", &report.anova_categorical_ranking);
    print_ranking("ANOVA F (numeric features)", &report.anova_numeric_ranking);
    let n = report.chi2_ranking.len();
    let lowest: Vec<&str> = report.chi2_ranking[n.saturating_sub(4)..].iter().map(|r| r.feature.as_str()).collect();
    say!("lowest chi-squared ranks: {}", lowest.join(", "));
    say!("dropped by FS: {}", SF_DROPPED.join(", "));
    if let Some(r) = report.correlation.max_off_diagonal_abs() {
        say!("max |r| between behavioral features: {r:.3}");
    }
    say!("wrote {}", dir.display());
    Ok(())
}

pub fn tune(cfg: &Config) -> CmdResult {
    let ds = load_dataset(cfg)?;
    let families = cfg.families()?;
    let grids: Vec<(Family, Vec<ModelParams>)> =
        families.iter().map(|&f| cfg.grid(f).map(|g| (f, g))).collect::<Result<_, _>>()?;
    let dir = subdir(cfg, "tune")?;
    let mut results = Vec::new();
    for name in cfg.tune_protocols()? {
        let proto = FeatureProtocol::for_schema(name, ds.schema());
        for (family, grid) in &grids {
            eprintln!("tuning {family} on {name}: {} candidates x {} folds", grid.len(), cfg.tune.folds);
            let r = grid_search::<f64>(&ds, &proto, grid, cfg.tune.folds, cfg.seed, run_options(cfg))
                .with_context(|| format!("tuning {family} on {name}"))?;
            write(&dir.join(format!("{family}_{name}.json")), r.to_json()?)?;
            if !r.matches_reference {
                eprintln!("  {family}: selected {} differs from reference {}", r.selected.describe(), r.reference.describe());
            }
            results.push(r);
        }
    }
    let text = table::tuning_text(&results);
    write(&dir.join("tuning_table.txt"), &text)?;
    say!("{text}");
    Ok(())
}

fn tuned_params(cfg: &Config, family: Family, name: ProtocolName) -> Result<ModelParams, Failure> {
    let dir = cfg.out.join("tune");
    let mut candidates = vec![dir.join(format!("{family}_{name}.json"))];
    for p in cfg.tune_protocols()? {
        candidates.push(dir.join(format!("{family}_{p}.json")));
    }
    for path in candidates {
        if path.is_file() {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let r: GridSearchResult =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            return Ok(r.selected);
        }
    }
    Err(Failure::usage(format!(
        "params_from = \"tuned\" but no tuning result for {family} in {}; run `tune` first",
        dir.display()
    )))
}

fn params_for(cfg: &Config, family: Family, name: ProtocolName) -> Result<ModelParams, Failure> {
    if let Some(p) = cfg.fixed_params(family)? {
        return Ok(p);
    }
    match cfg.params_from {
        ParamSource::Reference => Ok(ModelParams::reference(family)),
        ParamSource::Tuned => tuned_params(cfg, family, name),
    }
}

fn fit_file(dir: &Path, stem: &str, split: usize) -> PathBuf {
    dir.join(format!("{stem}_split{split}.json"))
}

fn write_tables(reports: &mut [EvaluationReport], dir: &Path) -> Result<String, Failure> {
    table::sort_reports(reports);
    let text = table::accuracy_text(reports);
    write(&dir.join("accuracy_table.txt"), &text)?;
    write(&dir.join("accuracy_table.csv"), table::accuracy_matrix_csv(reports))?;
    write(&dir.join("accuracy_long.csv"), table::accuracy_long_csv(reports))?;
    Ok(text)
}

pub fn evaluate(cfg: &Config) -> CmdResult {
    let ds = load_dataset(cfg)?;
    let families = cfg.families()?;
    let protocols = cfg.protocols()?;
    let plans = cfg.plans()?;
    let mut jobs = Vec::new();
    for &family in &families {
        for &name in &protocols {
            jobs.push((family, name, params_for(cfg, family, name)?));
        }
    }
    let total_fits: usize = jobs.len() * plans.iter().map(|p| p.n_splits()).sum::<usize>();
    eprintln!("{} runs, {total_fits} model fits", jobs.len() * plans.len());
    let dir = subdir(cfg, "evaluate")?;
    let mut reports = Vec::new();
    for (family, name, params) in &jobs {
        let proto = FeatureProtocol::for_schema(*name, ds.schema());
        let x = build_design_matrix::<f64>(&ds, &proto)?;
        for protocol in &plans {
            let plan = SplitPlan::new(*protocol, cfg.seed);
            eprintln!("evaluating {family} on {name} under {protocol} ({} fits)", protocol.n_splits());
            let report = run_protocol::<f64>(&ds, &proto, params, &plan, run_options(cfg))
                .with_context(|| format!("evaluating {family} on {name} under {protocol}"))?;
            report.save(&dir)?;
            // Split 0 is stored so `explain` can reload the exact model.
            let first = plan.splits(ds.labels())?.remove(0);
            let fit = fit_on_split(&x, ds.labels(), params, &first, None)
                .with_context(|| format!("refitting split 0 of {}", report.stem()))?;
            write(&fit_file(&dir, &report.stem(), 0), to_json(&fit)?)?;
            eprintln!(
                "  avg {:.2}%  std {:.2}  max {:.2}%",
                100.0 * report.accuracy.avg,
                100.0 * report.accuracy.std,
                100.0 * report.accuracy.max
            );
            reports.push(report);
        }
    }
    let text = write_tables(&mut reports, &dir)?;
    say!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct ExplainOutput<'a> {
    run: &'a str,
    split: usize,
    explained_rows: Vec<usize>,
    true_labels: Vec<ClassLabel>,
    predicted: Vec<ClassLabel>,
    features: Vec<String>,
    explanations: Vec<ShapExplanation>,
}

fn empty_summary() -> ShapSummary {
    ShapSummary {
        n_samples: 0,
        mean_abs: Vec::new(),
        ranking: Vec::new(),
        points: Vec::new(),
    }
}

fn save_summary(dir: &Path, stem: &str, s: &ShapSummary) -> Result<(), Failure> {
    write(&dir.join(format!("{stem}.json")), s.to_json()?)?;
    let mut buf = Vec::new();
    s.write_ranking_csv(&mut buf)?;
    write(&dir.join(format!("{stem}_ranking.csv")), std::mem::take(&mut buf))?;
    s.write_points_csv(&mut buf)?;
    write(&dir.join(format!("{stem}_points.csv")), buf)
}

pub fn explain(cfg: &Config) -> CmdResult {
    let run = cfg.explain.run.as_str();
    let eval_dir = cfg.out.join("evaluate");
    let report_path = eval_dir.join(format!("{run}.json"));
    if !report_path.is_file() {
        return Err(Failure::usage(format!(
            "no stored run '{run}' ({} not found); run `evaluate` first",
            report_path.display()
        )));
    }
    let text = std::fs::read_to_string(&report_path).with_context(|| format!("reading {}", report_path.display()))?;
    let report = EvaluationReport::from_json(&text)?;
    let ds = load_dataset(cfg)?;
    if ds.len() != report.n_rows {
        return Err(Failure::usage(format!(
            "run '{run}' was evaluated on {} rows but the dataset has {}",
            report.n_rows,
            ds.len()
        )));
    }
    let proto = FeatureProtocol::for_schema(report.feature_protocol, ds.schema());
    let x = build_design_matrix::<f64>(&ds, &proto)?;
    let idx = cfg.explain.split;
    if idx >= report.n_fits {
        return Err(Failure::usage(format!("run '{run}' has {} splits, no split {idx}", report.n_fits)));
    }
    let stored = fit_file(&eval_dir, run, idx);
    let fit: SplitFit<f64> = if stored.is_file() {
        let text = std::fs::read_to_string(&stored).with_context(|| format!("reading {}", stored.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", stored.display()))?
    } else {
        let split = report.plan.splits(ds.labels())?.swap_remove(idx);
        fit_on_split(&x, ds.labels(), &report.model, &split, None)?
    };
    let train = fit.train_matrix(&x)?;
    let test = fit.test_matrix(&x)?;
    let background = sample_background(&train, cfg.explain.background, child_seed(cfg.seed, 0));
    let opts = ShapOptions {
        method: cfg.explain.method,
        n_coalitions: cfg.explain.coalitions,
        seed: child_seed(cfg.seed, 1),
        workers: cfg.workers,
        ..ShapOptions::default()
    };
    eprintln!(
        "explaining {} test samples of {run} split {idx} against {} background rows",
        test.n_rows(),
        background.n_rows()
    );
    let expls = explain_model(&fit.model, &background, &test, &opts)?;
    let groups = x.feature_groups();
    let names: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();
    let folded: Vec<ShapExplanation> = expls.iter().map(|e| e.fold_groups(&groups)).collect();
    let rows = &fit.split.split.test;
    let raw = x.select_rows(rows);
    let values: Vec<Vec<f64>> = (0..raw.n_rows()).map(|i| group_feature_values(raw.row(i), &groups)).collect();
    let truth: Vec<ClassLabel> = rows.iter().map(|&i| ds.labels()[i]).collect();
    let wrong: Vec<usize> = (0..rows.len()).filter(|&i| truth[i] != fit.test_predictions[i]).collect();
    let top = cfg.explain.top;
    let all = shap_summary(&folded, &names, &values, top)?;
    let miss = if wrong.is_empty() {
        empty_summary()
    } else {
        let pick = |v: &[ShapExplanation]| wrong.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let vals: Vec<Vec<f64>> = wrong.iter().map(|&i| values[i].clone()).collect();
        shap_summary(&pick(&folded), &names, &vals, top)?
    };
    let dir = subdir(cfg, "explain")?;
    let stem = format!("{run}_split{idx}");
    save_summary(&dir, &format!("{stem}_shap"), &all)?;
    save_summary(&dir, &format!("{stem}_shap_misclassified"), &miss)?;
    let detail = ExplainOutput {
        run,
        split: idx,
        explained_rows: rows.clone(),
        true_labels: truth,
        predicted: fit.test_predictions.clone(),
        features: names,
        explanations: folded,
    };
    write(&dir.join(format!("{stem}_explanations.json")), to_json(&detail)?)?;
    let gap = expls.iter().map(|e| e.local_accuracy_gap()).fold(0.0, f64::max);
    say!(
        "{} test samples, {} correctly classified, {} misclassified; max local-accuracy gap {gap:.1e}",
        rows.len(),
        rows.len() - wrong.len(),
        wrong.len()
    );
    say!("top {top} features by mean |SHAP| (all samples):");
    for r in &all.ranking {
        let tag = if BEHAVIORAL_FEATURES.contains(&r.feature.as_str()) { "  behavioral" } else { "" };
        say!("  {:>2}. {:<26} {:.5}{tag}", r.rank, r.feature, r.mean_abs);
    }
    say!("wrote {}", dir.display());
    Ok(())
}

fn read_json_dir<T: serde::de::DeserializeOwned>(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<T>, Failure> {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(_) => return Ok(Vec::new()),
    };
    paths.retain(|p| {
        p.extension().is_some_and(|e| e == "json") && p.file_name().and_then(|n| n.to_str()).is_some_and(&keep)
    });
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        out.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    Ok(out)
}

pub fn report(cfg: &Config) -> CmdResult {
    let eval_dir = cfg.out.join("evaluate");
    let mut reports: Vec<EvaluationReport> = read_json_dir(&eval_dir, |n| !n.contains("_split"))?;
    let tuning: Vec<GridSearchResult> = read_json_dir(&cfg.out.join("tune"), |_| true)?;
    if reports.is_empty() && tuning.is_empty() {
        return Err(Failure::usage(format!(
            "no stored reports under {}; run `evaluate` or `tune` first",
            cfg.out.display()
        )));
    }
    let dir = subdir(cfg, "report")?;
    if !reports.is_empty() {
        let text = write_tables(&mut reports, &dir)?;
        say!("{text}");
    }
    if !tuning.is_empty() {
        let text = table::tuning_text(&tuning);
        write(&dir.join("tuning_table.txt"), &text)?;
        say!("\n{text}");
    }
    Ok(())
}
