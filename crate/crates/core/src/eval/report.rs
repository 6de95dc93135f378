//! Result tables in plain text and as JSON lines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub task: String,
    pub metric: String,
    pub mean: f64,
    /// Absent for single-run metrics.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn push(&mut self, model: &str, task: &str, metric: &str, mean: f64, std: Option<f64>) {
        self.rows.push(ReportRow {
            model: model.to_string(),
            task: task.to_string(),
            metric: metric.to_string(),
            mean,
            std,
        });
    }

    pub fn to_table(&self) -> String {
        let w_model = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let w_task = self
            .rows
            .iter()
            .map(|r| r.task.len())
            .max()
            .unwrap_or(0)
            .max(4);
        let w_metric = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w_model$}  {:<w_task$}  {:<w_metric$}  value",
            "model", "task", "metric"
        );
        for r in &self.rows {
            let value = match r.std {
                Some(s) => format!("{:.4} ± {:.4}", r.mean, s),
                None => format!("{:.4}", r.mean),
            };
            let _ = writeln!(
                out,
                "{:<w_model$}  {:<w_task$}  {:<w_metric$}  {value}",
                r.model, r.task, r.metric
            );
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_per_row() {
        let mut r = Report::default();
        r.push("contr-cf-g", "playlist", "nDCG@100", 0.5, None);
        r.push("contr-cf-g", "genre", "accuracy", 0.75, Some(0.01));
        assert_eq!(r.to_table().lines().count(), 3);
        assert!(r.to_table().contains("0.7500 ± 0.0100"));
        let lines: Vec<ReportRow> = r
            .to_json_lines()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, r.rows);
    }
}
