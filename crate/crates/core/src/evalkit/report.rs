use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{MetricReport, PASS_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub index: usize,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RecordOutcome {
    pub fn scored(index: usize, question: &str, report: MetricReport) -> Self {
        Self { index, question: question.to_string(), report: Some(report), error: None }
    }

    pub fn failed(index: usize, question: &str, error: String) -> Self {
        Self { index, question: question.to_string(), report: None, error: Some(error) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub answer_relevancy: f64,
    pub contextual_recall: f64,
    pub contextual_precision: f64,
    pub faithfulness: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scored: usize,
    pub mean: MetricValues,
    /// Fraction of scored records at or above the threshold, per metric.
    pub pass_rate: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub threshold: f64,
    pub records: Vec<RecordOutcome>,
    pub failures: usize,
    /// `None` when no record was scored.
    pub aggregate: Option<Aggregate>,
}

fn values(r: &MetricReport) -> [f64; 5] {
    [r.answer_relevancy, r.contextual_recall, r.contextual_precision, r.faithfulness, r.composite]
}

impl SuiteReport {
    pub fn from_outcomes(mut records: Vec<RecordOutcome>) -> Self {
        records.sort_by_key(|r| r.index);
        let scored: Vec<&MetricReport> = records.iter().filter_map(|r| r.report.as_ref()).collect();
        let aggregate = (!scored.is_empty()).then(|| {
            let n = scored.len() as f64;
            let mut mean = [0.0; 5];
            let mut pass = [0.0; 5];
            for r in &scored {
                for (i, v) in values(r).into_iter().enumerate() {
                    mean[i] += v;
                    if v >= PASS_THRESHOLD {
                        pass[i] += 1.0;
                    }
                }
            }
            let mv = |a: [f64; 5]| MetricValues {
                answer_relevancy: a[0] / n,
                contextual_recall: a[1] / n,
                contextual_precision: a[2] / n,
                faithfulness: a[3] / n,
                composite: a[4] / n,
            };
            Aggregate { scored: scored.len(), mean: mv(mean), pass_rate: mv(pass) }
        });
        let failures = records.iter().filter(|r| r.error.is_some()).count();
        Self { threshold: PASS_THRESHOLD, records, failures, aggregate }
    }

    /// Aligned plain-text table: one row per record, then mean and pass-rate rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = ["#", "AR", "CR", "CP", "F", "Composite", "Status"];
        writeln!(
            out,
            "{:<10}{:>8}{:>8}{:>8}{:>8}{:>11}  {}",
            header[0], header[1], header[2], header[3], header[4], header[5], header[6]
        )
        .unwrap();
        for r in &self.records {
            let label = (r.index + 1).to_string();
            match (&r.report, &r.error) {
                (Some(m), _) => {
                    let passed = [
                        m.passed.answer_relevancy,
                        m.passed.contextual_recall,
                        m.passed.contextual_precision,
                        m.passed.faithfulness,
                    ]
                    .iter()
                    .filter(|p| **p)
                    .count();
                    let v = values(m);
                    writeln!(
                        out,
                        "{label:<10}{:>8.4}{:>8.4}{:>8.4}{:>8.4}{:>11.4}  pass {passed}/4",
                        v[0], v[1], v[2], v[3], v[4]
                    )
                    .unwrap();
                }
                (None, err) => {
                    let dash = "-";
                    writeln!(
                        out,
                        "{label:<10}{dash:>8}{dash:>8}{dash:>8}{dash:>8}{dash:>11}  failed: {}",
                        err.as_deref().unwrap_or("unknown error")
                    )
                    .unwrap();
                }
            }
        }
        match &self.aggregate {
            Some(a) => {
                for (label, m) in [("mean", &a.mean), ("pass rate", &a.pass_rate)] {
                    writeln!(
                        out,
                        "{label:<10}{:>8.4}{:>8.4}{:>8.4}{:>8.4}{:>11.4}",
                        m.answer_relevancy, m.contextual_recall, m.contextual_precision, m.faithfulness, m.composite
                    )
                    .unwrap();
                }
                writeln!(out, "scored {} of {}, threshold {:.2}", a.scored, self.records.len(), self.threshold)
                    .unwrap();
            }
            None => writeln!(out, "aggregate undefined: no scored records").unwrap(),
        }
        out
    }
}
