use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalReport, PageTrace};
use crate::error::{CfsError, Result};

/// Picks the plotted value out of a trace.
pub type SeriesField = fn(&PageTrace) -> f64;

/// Series files written by [`write_series`], with the trace field each one plots.
pub const SERIES: [(&str, SeriesField); 3] = [
    ("loss.csv", |t| t.distance),
    ("usage.csv", |t| t.usage as f64),
    ("weighted_usage.csv", |t| t.weighted_usage),
];

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

pub fn render_report(report: &EvalReport) -> String {
    let header = [
        "policy",
        "avg_pairwise_loss",
        "avg_factor_usage",
        "weighted_usage",
        "objective",
        "latency_mean",
        "latency_p99",
    ];
    let rows: Vec<[String; 7]> = report
        .rows()
        .map(|r| {
            [
                r.policy.clone(),
                format!("{:.4}", r.avg_pairwise_loss),
                format!("{:.2}", r.avg_factor_usage),
                format!("{:.2}", r.weighted_factor_usage),
                format!("{:.4}", r.mean_objective),
                cell(r.simulated_mean_latency, 3),
                cell(r.simulated_p99_latency, 3),
            ]
        })
        .collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = width[i]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let _ = writeln!(out, "lambda = {}", report.lambda);
    out
}

/// One row per test page view, one column per policy.
pub fn series_csv(report: &EvalReport, value: SeriesField) -> Result<String> {
    let n = report.evaluations.first().map_or(0, |e| e.traces.len());
    if report.evaluations.iter().any(|e| e.traces.len() != n) {
        return Err(CfsError::State("policies were evaluated on different page view counts".into()));
    }
    let mut out = String::from("page_view,request_id");
    for e in &report.evaluations {
        out.push(',');
        out.push_str(&e.row.policy.replace(',', ";"));
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "{i},{}", report.evaluations[0].traces[i].request_id);
        for e in &report.evaluations {
            let _ = write!(out, ",{}", value(&e.traces[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_series(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CfsError::io(dir, e))?;
    SERIES
        .iter()
        .map(|(name, f)| {
            let path = dir.join(name);
            fs::write(&path, series_csv(report, *f)?).map_err(|e| CfsError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{EvalRow, PolicyEvaluation};

    fn report() -> EvalReport {
        let traces = (0..4)
            .map(|i| PageTrace { request_id: 10 + i, n_items: 5, distance: 0.1 * i as f64, usage: 2, weighted_usage: 3.5 })
            .collect();
        EvalReport {
            lambda: 0.001,
            evaluations: vec![PolicyEvaluation {
                row: EvalRow {
                    policy: "rankcfs".into(),
                    avg_pairwise_loss: 0.15,
                    avg_factor_usage: 2.0,
                    weighted_factor_usage: 3.5,
                    mean_objective: 0.2,
                    simulated_mean_latency: Some(5.2),
                    simulated_p99_latency: None,
                },
                traces,
            }],
        }
    }

    #[test]
    fn one_row_table() {
        let text = render_report(&report());
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("policy"));
        assert!(lines[2].starts_with("rankcfs"));
        assert_eq!(lines[0].len(), lines[2].len());
        assert_eq!(text, render_report(&report()));
    }

    #[test]
    fn series_have_one_row_per_page_view() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_series(&report(), dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let loss = fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(loss.lines().count(), 1 + 4);
        assert_eq!(loss.lines().nth(2).unwrap(), "1,11,0.1");
    }

    #[test]
    fn json_round_trip() {
        let r = report();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }
}
