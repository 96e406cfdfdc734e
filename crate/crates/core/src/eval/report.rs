use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::{Error, Result};

pub const CSV_HEADER: &str = "condition,detector,dataset,auroc,acc95tpr,n_id,n_ood,status";

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Scored { auroc: f64, acc95tpr: f64 },
    /// The detector could not be fitted or scored; holds the error text.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub condition: String,
    pub detector: String,
    pub dataset: String,
    pub n_id: usize,
    pub n_ood: usize,
    pub outcome: Outcome,
}

impl EvalRow {
    pub fn auroc(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Scored { auroc, .. } => Some(auroc),
            Outcome::Failed(_) => None,
        }
    }

    pub fn acc95tpr(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Scored { acc95tpr, .. } => Some(acc95tpr),
            Outcome::Failed(_) => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, Outcome::Scored { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        Self { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn find(&self, condition: &str, detector: &str, dataset: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.detector == detector && r.dataset == dataset)
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        render_csv(self)
    }

    pub fn to_markdown(&self) -> String {
        render_markdown(self)
    }
}

fn push_unique<T: PartialEq + Clone>(v: &mut Vec<T>, item: &T) {
    if !v.contains(item) {
        v.push(item.clone());
    }
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}", 100.0 * x),
        None => "error".to_string(),
    }
}

/// Detectors × (condition, dataset) grid with values in percent.
pub fn render_markdown(r: &EvalReport) -> String {
    let mut detectors: Vec<&str> = Vec::new();
    let mut columns: Vec<(&str, &str)> = Vec::new();
    for row in &r.rows {
        push_unique(&mut detectors, &row.detector.as_str());
        push_unique(&mut columns, &(row.condition.as_str(), row.dataset.as_str()));
    }
    let mut out = String::from("| Detector |");
    for (c, d) in &columns {
        let _ = write!(out, " {c} / {d} AUROC↑ | {c} / {d} ACC95TPR↑ |");
    }
    out.push_str("\n|---|");
    for _ in &columns {
        out.push_str("---:|---:|");
    }
    out.push('\n');
    for det in &detectors {
        let _ = write!(out, "| {det} |");
        for (c, d) in &columns {
            match r.find(c, det, d) {
                Some(row) => {
                    let _ = write!(out, " {} | {} |", percent(row.auroc()), percent(row.acc95tpr()));
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(out: &mut String, s: &str) {
    if s.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&s.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(s);
    }
}

/// One line per row; floats use the shortest representation that parses
/// back to the same value.
pub fn render_csv(r: &EvalReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &r.rows {
        csv_field(&mut out, &row.condition);
        out.push(',');
        csv_field(&mut out, &row.detector);
        out.push(',');
        csv_field(&mut out, &row.dataset);
        match &row.outcome {
            Outcome::Scored { auroc, acc95tpr } => {
                let _ = write!(out, ",{auroc:?},{acc95tpr:?},{},{},ok", row.n_id, row.n_ood);
            }
            Outcome::Failed(msg) => {
                let _ = write!(out, ",,,{},{},", row.n_id, row.n_ood);
                csv_field(&mut out, &format!("error: {msg}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Splits CSV text into records, honouring double-quoted fields.
fn csv_records(text: &str) -> Result<Vec<Vec<String>>> {
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut field = String::new();
    let mut chars = text.chars().peekable();
    let mut quoted = false;
    let mut at_field_start = true;
    while let Some(ch) = chars.next() {
        if quoted {
            match ch {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => quoted = false,
                _ => field.push(ch),
            }
            continue;
        }
        match ch {
            '"' if at_field_start => {
                quoted = true;
                at_field_start = false;
            }
            ',' => {
                record.push(core::mem::take(&mut field));
                at_field_start = true;
            }
            '\n' => {
                record.push(core::mem::take(&mut field));
                records.push(core::mem::take(&mut record));
                at_field_start = true;
            }
            '\r' if chars.peek() == Some(&'\n') => {}
            _ => {
                field.push(ch);
                at_field_start = false;
            }
        }
    }
    if quoted {
        return Err(Error::Parse("unterminated quoted CSV field".into()));
    }
    if !field.is_empty() || !record.is_empty() {
        record.push(field);
        records.push(record);
    }
    Ok(records)
}

fn parse_num<T: core::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} {s:?}")))
}

/// Inverse of [`render_csv`].
pub fn parse_csv(text: &str) -> Result<EvalReport> {
    let records = csv_records(text)?;
    let mut it = records.into_iter();
    match it.next() {
        Some(h) if h.join(",") == CSV_HEADER => {}
        _ => return Err(Error::Parse(format!("expected header {CSV_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (k, rec) in it.enumerate() {
        let line = k + 2;
        let [condition, detector, dataset, auroc, acc, n_id, n_ood, status]: [String; 8] =
            rec.try_into().map_err(|r: Vec<String>| {
                Error::Parse(format!("line {line}: expected 8 fields, found {}", r.len()))
            })?;
        let outcome = if status == "ok" {
            Outcome::Scored {
                auroc: parse_num(&auroc, "auroc", line)?,
                acc95tpr: parse_num(&acc, "acc95tpr", line)?,
            }
        } else if let Some(msg) = status.strip_prefix("error: ") {
            Outcome::Failed(msg.to_string())
        } else {
            return Err(Error::Parse(format!("line {line}: bad status {status:?}")));
        };
        rows.push(EvalRow {
            condition,
            detector,
            dataset,
            n_id: parse_num(&n_id, "n_id", line)?,
            n_ood: parse_num(&n_ood, "n_ood", line)?,
            outcome,
        });
    }
    Ok(EvalReport { rows })
}

/// Index of the best value, the earliest one winning ties.
fn best(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn condition_of(report: &EvalReport) -> Result<&str> {
    let first = report.rows.first().ok_or(Error::Empty)?;
    if report.rows.iter().any(|r| r.condition != first.condition) {
        return Err(Error::AxisMismatch(
            "each compared report must hold a single condition".into(),
        ));
    }
    Ok(&first.condition)
}

/// Side-by-side table of several conditions over the same detector and
/// dataset axes, with the best value of each row in bold.
pub fn compare_conditions(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Empty);
    }
    let conditions = reports.iter().map(condition_of).collect::<Result<Vec<_>>>()?;
    let mut cells: Vec<(&str, &str)> = Vec::new();
    for r in reports {
        for row in &r.rows {
            push_unique(&mut cells, &(row.dataset.as_str(), row.detector.as_str()));
        }
    }
    let mut missing = Vec::new();
    for (r, cond) in reports.iter().zip(&conditions) {
        for (ds, det) in &cells {
            if r.find(cond, det, ds).is_none() {
                missing.push(format!("{cond}/{det}/{ds}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::AxisMismatch(format!(
            "missing cells: {}",
            missing.join(", ")
        )));
    }

    let mut out = String::from("| Dataset | Detector |");
    for metric in ["AUROC↑", "ACC95TPR↑"] {
        for c in &conditions {
            let _ = write!(out, " {c} {metric} |");
        }
    }
    out.push_str("\n|---|---|");
    for _ in 0..2 * conditions.len() {
        out.push_str("---:|");
    }
    out.push('\n');
    for (ds, det) in &cells {
        let _ = write!(out, "| {ds} | {det} |");
        let rows: Vec<&EvalRow> = reports
            .iter()
            .zip(&conditions)
            .filter_map(|(r, c)| r.find(c, det, ds))
            .collect();
        let metrics: [fn(&EvalRow) -> Option<f64>; 2] = [EvalRow::auroc, EvalRow::acc95tpr];
        for metric in metrics {
            let values: Vec<Option<f64>> = rows.iter().map(|r| metric(r)).collect();
            let winner = best(&values);
            for (i, v) in values.iter().enumerate() {
                if winner == Some(i) {
                    let _ = write!(out, " **{}** |", percent(*v));
                } else {
                    let _ = write!(out, " {} |", percent(*v));
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}
