//! Comma-separated and aligned-text renderings of study output.

use std::fmt::Write as _;

use rpv_core::sim::{AggregateReport, Expected, MethodSummary};
use rpv_core::{Method, Outcome, RunRecord};

pub fn outcome_label(outcome: Outcome, names: &[String]) -> String {
    match outcome {
        Outcome::Winner(i) => format!("winner:{}", names[i]),
        Outcome::Futility => "futility".into(),
        Outcome::TimedOut => "timed-out".into(),
    }
}

/// One row per run record. Loss columns are empty for peeking runs.
pub fn records_csv(records: &[RunRecord], names: &[String]) -> String {
    let mut out = String::from("run_id,method,outcome,duration_days,data_seed,analysis_seed");
    for name in names {
        write!(out, ",loss_{name}").unwrap();
    }
    out.push('\n');
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            r.method.as_str(),
            outcome_label(r.outcome, names),
            r.duration_days,
            r.data_seed,
            r.analysis_seed
        )
        .unwrap();
        for i in 0..names.len() {
            match &r.final_losses {
                Some(losses) => write!(out, ",{:.4}", losses[i]).unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn pct(x: f64) -> String {
    format!("{x:.1}")
}

fn days(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |d| format!("{d:.1}"))
}

/// Metric rows as `(label, peeking, bayesian)`.
pub fn summary_rows(report: &AggregateReport) -> Vec<(String, String, String)> {
    let peek = report.method(Method::Peeking);
    let bayes = report.method(Method::Bayesian);
    let mut rows = Vec::new();
    let mut row = |label: String, f: &dyn Fn(&MethodSummary) -> String| {
        rows.push((label, f(peek), f(bayes)));
    };
    let correct = match report.expected {
        Expected::NoChange => "% Correct (futility / timed out)".to_string(),
        Expected::Winner(w) => format!("% Correctly chose {}", report.variant_names[w]),
    };
    row(correct, &|m| pct(m.correct_pct()));
    row("False positive rate (%)".into(), &|m| pct(m.false_positive_pct()));
    for (i, name) in report.variant_names.iter().enumerate() {
        if i != report.control {
            row(format!("% Chose {name}"), &|m| pct(m.winner_pct(i)));
        }
    }
    row("% Stopped for futility".into(), &|m| pct(m.futility_pct()));
    row("% Timed out".into(), &|m| pct(m.timed_out_pct()));
    row("Average test duration (days)".into(), &|m| days(m.mean_duration_concluded));
    row("Average duration incl. timeouts (days)".into(), &|m| days(Some(m.mean_duration_all)));
    row("Runs".into(), &|m| m.runs.to_string());
    rows
}

pub fn summary_csv(report: &AggregateReport) -> String {
    let mut out = String::from("scenario,metric,peeking,bayesian\n");
    for (label, p, b) in summary_rows(report) {
        writeln!(out, "{},{},{},{}", report.scenario, label, p, b).unwrap();
    }
    out
}

pub fn summary_text(report: &AggregateReport) -> String {
    let rows = summary_rows(report);
    let header = ("Metric", "Peeking", "Bayesian");
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(header.0.len());
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(header.1.len());
    let w2 = rows.iter().map(|r| r.2.len()).max().unwrap_or(0).max(header.2.len());
    let mut out = format!("Scenario: {}\n", report.scenario);
    writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}", header.0, header.1, header.2).unwrap();
    writeln!(out, "{}", "-".repeat(w0 + w1 + w2 + 4)).unwrap();
    for (label, p, b) in rows {
        writeln!(out, "{label:<w0$}  {p:>w1$}  {b:>w2$}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rpv_core::sim::{aggregate, presets};
    use rpv_core::EngineConfig;

    fn record(run_id: u64, method: Method, outcome: Outcome, days: u32) -> RunRecord {
        RunRecord {
            run_id,
            method,
            outcome,
            duration_days: days,
            final_losses: (method == Method::Bayesian).then(|| vec![0.004, 0.23456]),
            data_seed: 1,
            analysis_seed: 2,
        }
    }

    #[test]
    fn csv_layout() {
        let names = vec!["A".to_string(), "B".to_string()];
        let csv = records_csv(
            &[
                record(0, Method::Bayesian, Outcome::Futility, 13),
                record(0, Method::Peeking, Outcome::Winner(1), 3),
            ],
            &names,
        );
        assert_eq!(
            csv,
            "run_id,method,outcome,duration_days,data_seed,analysis_seed,loss_A,loss_B\n\
             0,bayesian,futility,13,1,2,0.0040,0.2346\n\
             0,peeking,winner:B,3,1,2,,\n"
        );
    }

    #[test]
    fn summary_tables() {
        let scenario = presets::revenue_trap();
        let records = [
            record(0, Method::Bayesian, Outcome::Futility, 10),
            record(0, Method::Peeking, Outcome::Winner(1), 4),
            record(1, Method::Bayesian, Outcome::TimedOut, 200),
            record(1, Method::Peeking, Outcome::Winner(1), 6),
        ];
        let report = aggregate(&scenario, &EngineConfig::default(), &records);
        let csv = summary_csv(&report);
        assert!(csv.contains("revenue-trap,% Correct (futility / timed out),0.0,100.0\n"), "{csv}");
        assert!(csv.contains("revenue-trap,% Chose B,100.0,0.0\n"));
        assert!(csv.contains("revenue-trap,Average test duration (days),5.0,10.0\n"));
        assert!(csv.contains("revenue-trap,Average duration incl. timeouts (days),5.0,105.0\n"));
        let text = summary_text(&report);
        assert!(text.lines().nth(1).unwrap().starts_with("Metric"));
    }
}
