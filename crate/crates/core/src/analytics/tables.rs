//! Flat tables derived from a usage report, for CSV or JSON output.

use serde::Serialize;
use thiserror::Error;

use super::annotation::{AnnotationTables, Bloom, Correctness};
use super::report::UsageReport;

pub const TABLE_NAMES: [&str; 10] = [
    "summary",
    "courses",
    "durations",
    "rounds",
    "rounds_by_mode",
    "weekly",
    "hourly",
    "modes",
    "follow_up",
    "annotations",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("unknown report table `{0}`")]
    UnknownTable(String),
    #[error("the annotations table needs imported annotations")]
    MissingAnnotations,
}

fn cells<const N: usize>(values: [String; N]) -> Vec<String> {
    values.into()
}

fn fraction(value: f64) -> String {
    format!("{value:.6}")
}

impl ReportTable {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_owned(), header: header.iter().map(|h| (*h).to_owned()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            writer.write_record(row).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    /// Rows as JSON objects keyed by the header.
    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|row| {
                self.header
                    .iter()
                    .cloned()
                    .zip(row.iter().cloned().map(serde_json::Value::String))
                    .collect::<serde_json::Map<_, _>>()
            })
            .collect::<Vec<_>>()
            .into()
    }
}

pub fn report_table(
    name: &str,
    report: &UsageReport,
    annotations: Option<&AnnotationTables>,
) -> Result<ReportTable, TableError> {
    let mut table;
    match name {
        "summary" => {
            table = ReportTable::new(name, &["metric", "value"]);
            let metrics = [
                ("conversations", report.conversation_count.to_string()),
                ("questions", report.question_count.to_string()),
                ("users", report.user_count.to_string()),
                ("within_ten_minutes_ratio", fraction(report.within_ten_minutes_ratio)),
                ("no_question_ratio", fraction(report.no_question_ratio)),
                ("single_round_ratio", fraction(report.single_round_ratio)),
                ("within_three_rounds_ratio", fraction(report.within_three_rounds_ratio)),
            ];
            table.rows = metrics.into_iter().map(|(k, v)| cells([k.to_owned(), v])).collect();
        }
        "courses" => {
            table = ReportTable::new(name, &["course_id", "users", "conversations", "questions", "conversations_per_user"]);
            table.rows = report
                .courses
                .iter()
                .map(|(id, u)| {
                    cells([
                        id.to_string(),
                        u.user_count.to_string(),
                        u.conversation_count.to_string(),
                        u.question_count.to_string(),
                        fraction(u.conversations_per_user),
                    ])
                })
                .collect();
        }
        "durations" => {
            table = ReportTable::new(name, &["from_minutes", "to_minutes", "count", "cumulative_fraction"]);
            let edges = &report.durations.edges_minutes;
            table.rows = (0..edges.len())
                .map(|i| {
                    cells([
                        edges[i].to_string(),
                        edges.get(i + 1).map(ToString::to_string).unwrap_or_default(),
                        report.durations.counts[i].to_string(),
                        fraction(report.durations.cumulative_fractions[i]),
                    ])
                })
                .collect();
        }
        "rounds" => {
            table = ReportTable::new(name, &["rounds", "count"]);
            table.rows =
                report.rounds_histogram.iter().enumerate().map(|(r, c)| cells([r.to_string(), c.to_string()])).collect();
        }
        "rounds_by_mode" => {
            table = ReportTable::new(name, &["mode", "rounds", "count"]);
            for (mode, histogram) in &report.rounds_by_mode {
                for (r, c) in histogram.iter().enumerate() {
                    table.rows.push(cells([mode.to_string(), r.to_string(), c.to_string()]));
                }
            }
        }
        "weekly" => {
            table = ReportTable::new(name, &["week", "conversations", "questions"]);
            table.rows = report
                .weekly
                .iter()
                .map(|w| cells([w.week.to_string(), w.conversations.to_string(), w.questions.to_string()]))
                .collect();
        }
        "hourly" => {
            table = ReportTable::new(name, &["hour", "conversations", "cdf"]);
            table.rows = (0..24)
                .map(|h| cells([h.to_string(), report.hourly.counts[h].to_string(), fraction(report.hourly.cdf[h])]))
                .collect();
        }
        "modes" => {
            table = ReportTable::new(name, &["mode", "conversations", "share"]);
            table.rows = report
                .mode_shares
                .iter()
                .map(|m| cells([m.mode.to_string(), m.count.to_string(), fraction(m.share)]))
                .collect();
        }
        "follow_up" => {
            table = ReportTable::new(name, &["course_id", "conversations", "emitted", "answered", "emitted_ratio", "answered_ratio"]);
            let overall = std::iter::once(("all".to_owned(), &report.follow_up.overall));
            let courses = report.follow_up.per_course.iter().map(|(id, s)| (id.to_string(), s));
            table.rows = overall
                .chain(courses)
                .map(|(id, s)| {
                    cells([
                        id,
                        s.conversations.to_string(),
                        s.emitted.to_string(),
                        s.answered.to_string(),
                        fraction(s.emitted_ratio),
                        s.answered_ratio.map(fraction).unwrap_or_default(),
                    ])
                })
                .collect();
        }
        "annotations" => {
            let tables = annotations.ok_or(TableError::MissingAnnotations)?;
            table = ReportTable::new(name, &["table", "group", "label", "count", "share"]);
            for (mode, row) in &tables.bloom_by_mode {
                for level in Bloom::ALL {
                    table.rows.push(cells([
                        "bloom_by_mode".into(),
                        mode.to_string(),
                        level.as_str().into(),
                        row.counts[&level].to_string(),
                        fraction(row.shares[&level]),
                    ]));
                }
            }
            let overall = std::iter::once(("all".to_owned(), &tables.correctness_overall));
            let courses = tables.correctness_by_course.iter().map(|(id, r)| (id.to_string(), r));
            for (group, row) in overall.chain(courses) {
                for label in Correctness::ALL {
                    table.rows.push(cells([
                        "correctness".into(),
                        group.clone(),
                        label.as_str().into(),
                        row.counts[&label].to_string(),
                        fraction(row.shares[&label]),
                    ]));
                }
            }
        }
        other => return Err(TableError::UnknownTable(other.to_owned())),
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::analytics::testing::{conversation_with, minutes};
    use crate::analytics::{compute_report, ReportOptions};

    #[test]
    fn every_table_renders_for_empty_report() {
        let report = compute_report(&[], &ReportOptions::new(NaiveDate::from_ymd_opt(2024, 1, 15).unwrap()));
        for name in TABLE_NAMES.iter().filter(|n| **n != "annotations") {
            let table = report_table(name, &report, None).unwrap();
            assert!(table.to_csv().starts_with(&table.header.join(",")));
        }
        assert_eq!(report_table("annotations", &report, None), Err(TableError::MissingAnnotations));
        assert!(report_table("nope", &report, None).is_err());
    }

    #[test]
    fn duration_rows_match_buckets() {
        let convs = vec![conversation_with(1, minutes(3), false, false), conversation_with(2, minutes(200), false, false)];
        let report = compute_report(&convs, &ReportOptions::new(NaiveDate::from_ymd_opt(2024, 1, 15).unwrap()));
        let table = report_table("durations", &report, None).unwrap();
        assert_eq!(table.rows[0], vec!["0", "5", "1", "0.500000"]);
        assert_eq!(table.rows[6], vec!["120", "", "1", "1.000000"]);
        assert_eq!(table.to_json()[0]["count"], "1");
    }
}
