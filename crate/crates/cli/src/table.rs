//! Plain-text and CSV tables: accuracy per model and protocol, and tuning results.

use std::cmp::Ordering;
use std::fmt::Write as _;

use stuperf::evaluate::{EvaluationReport, GridSearchResult, Protocol};
use stuperf::{Family, ModelParams, ProtocolName};

fn plan_order(a: &Protocol, b: &Protocol) -> Ordering {
    let key = |p: &Protocol| match *p {
        Protocol::Rho { repeats, test_fraction } => (0, repeats, (test_fraction * 1e6) as usize),
        Protocol::Kfold { k, repeats } => (1, repeats, k),
    };
    key(a).cmp(&key(b))
}

fn family_rank(f: Family) -> usize {
    Family::ALL.iter().position(|&g| g == f).unwrap_or(usize::MAX)
}

/// Sorts reports by model, then plan, then feature protocol.
pub fn sort_reports(reports: &mut [EvaluationReport]) {
    reports.sort_by(|a, b| {
        family_rank(a.model.family())
            .cmp(&family_rank(b.model.family()))
            .then_with(|| plan_order(&a.plan.protocol, &b.plan.protocol))
            .then_with(|| a.feature_protocol.cmp(&b.feature_protocol))
    });
}

/// `avg (std)` for hold-out, `avg (max)` for k-fold, in percent.
pub fn cell(r: &EvaluationReport) -> String {
    let a = &r.accuracy;
    let second = match r.plan.protocol {
        Protocol::Rho { .. } => a.std,
        Protocol::Kfold { .. } => a.max,
    };
    format!("{:.2} ({:.2})", 100.0 * a.avg, 100.0 * second)
}

struct Grid {
    columns: Vec<(Protocol, ProtocolName)>,
    rows: Vec<(Family, Vec<String>)>,
}

fn grid(reports: &[EvaluationReport]) -> Grid {
    let mut columns: Vec<(Protocol, ProtocolName)> = Vec::new();
    for r in reports {
        if !columns.contains(&(r.plan.protocol, r.feature_protocol)) {
            columns.push((r.plan.protocol, r.feature_protocol));
        }
    }
    columns.sort_by(|a, b| plan_order(&a.0, &b.0).then(a.1.cmp(&b.1)));
    let mut families: Vec<Family> = reports.iter().map(|r| r.model.family()).collect();
    families.sort_by_key(|&f| family_rank(f));
    families.dedup();
    let rows = families
        .into_iter()
        .map(|f| {
            let cells = columns
                .iter()
                .map(|(plan, proto)| {
                    reports
                        .iter()
                        .find(|r| r.model.family() == f && r.plan.protocol == *plan && r.feature_protocol == *proto)
                        .map_or_else(|| "-".to_string(), cell)
                })
                .collect();
            (f, cells)
        })
        .collect();
    Grid { columns, rows }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Model by (plan, feature protocol) matrix as CSV.
pub fn accuracy_matrix_csv(reports: &[EvaluationReport]) -> String {
    let g = grid(reports);
    let mut out = String::from("model");
    for (plan, proto) in &g.columns {
        out.push(',');
        out.push_str(&csv_field(&format!("{proto} {plan}")));
    }
    out.push('\n');
    for (f, cells) in &g.rows {
        out.push_str(f.as_str());
        for c in cells {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
    }
    out
}

/// One line per report with every aggregate, fractions rather than percent.
pub fn accuracy_long_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("model,features,plan,params,avg,std,max,max_split,min_split,train_avg,n_fits\n");
    for r in reports {
        let a = &r.accuracy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.model.family(),
            r.feature_protocol,
            r.plan.protocol,
            csv_field(&r.model.describe()),
            a.avg,
            a.std,
            a.max,
            a.max_split,
            a.min_split,
            a.train_avg,
            r.n_fits
        );
    }
    out
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (j, c) in r.iter().enumerate().take(n) {
            width[j] = width[j].max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells.iter().enumerate().map(|(j, c)| format!("{c:<w$}", w = width[j])).collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn accuracy_text(reports: &[EvaluationReport]) -> String {
    let g = grid(reports);
    let mut header = vec!["model".to_string()];
    header.extend(g.columns.iter().map(|(plan, proto)| format!("{proto} {plan}")));
    let rows: Vec<Vec<String>> = g
        .rows
        .iter()
        .map(|(f, cells)| std::iter::once(f.to_string()).chain(cells.iter().cloned()).collect())
        .collect();
    let mut out = String::from("Test accuracy %: avg (std) for hold-out, avg (max) for k-fold, the max being the best repetition mean when repeated\n\n");
    out.push_str(&render(&header, &rows));
    let fits: usize = reports.iter().map(|r| r.n_fits).sum();
    let _ = writeln!(out, "\n{} reports, {fits} fitted models", reports.len());
    out
}

/// Distinct values of every parameter across a grid, in first-seen order.
pub fn search_space(params: &[ModelParams]) -> String {
    let mut keys: Vec<(String, Vec<String>)> = Vec::new();
    for p in params {
        let v = serde_json::to_value(p).unwrap_or_default();
        let Some(obj) = v.get("params").and_then(|o| o.as_object()) else {
            continue;
        };
        for (k, val) in obj {
            let s = val.as_str().map_or_else(|| val.to_string(), str::to_string);
            match keys.iter_mut().find(|(name, _)| name == k) {
                Some((_, vals)) => {
                    if !vals.contains(&s) {
                        vals.push(s);
                    }
                }
                None => keys.push((k.clone(), vec![s])),
            }
        }
    }
    keys.into_iter()
        .filter(|(_, vals)| params.len() == 1 || vals.len() > 1)
        .map(|(k, vals)| format!("{k}: {}", vals.join("|")))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn tuning_text(results: &[GridSearchResult]) -> String {
    let header: Vec<String> = ["model", "features", "grid", "best cv %", "selected", "reference", "agrees"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.family.to_string(),
                r.feature_protocol.to_string(),
                r.candidates.len().to_string(),
                format!("{:.2}", 100.0 * r.best_accuracy()),
                r.selected.describe(),
                r.reference.describe(),
                if r.matches_reference { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    let mut out = render(&header, &rows);
    out.push_str("\nSearch spaces:\n");
    for r in results {
        let params: Vec<ModelParams> = r.candidates.iter().map(|c| c.params.clone()).collect();
        let _ = writeln!(out, "  {} ({}): {}", r.family, params.len(), search_space(&params));
    }
    out
}
