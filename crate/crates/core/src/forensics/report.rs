//! Evaluation reports and their JSON / CSV forms.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Clustering,
    Verification,
    Trace,
    Niqe,
    L1,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Classification,
        Task::Clustering,
        Task::Verification,
        Task::Trace,
        Task::Niqe,
        Task::L1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Clustering => "clustering",
            Task::Verification => "verification",
            Task::Trace => "trace",
            Task::Niqe => "niqe",
            Task::L1 => "l1",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::data(format!("unknown task `{s}`")))
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data("cannot summarise zero values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Summary { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub task: Task,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
    /// Per-camera means, keyed by camera type.
    pub per_camera: BTreeMap<String, f64>,
}

pub const REPORT_CSV_HEADER: &str = "method,task,camera,mean,std,repeats";

impl EvaluationReport {
    pub fn new(method: &str, task: Task, summary: Summary, repeats: usize, per_camera: BTreeMap<String, f64>) -> Self {
        EvaluationReport {
            method: method.to_string(),
            task,
            mean: summary.mean,
            std: summary.std,
            repeats: repeats.max(1),
            per_camera,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 || !(self.std >= 0.0) || !self.mean.is_finite() {
            return Err(Error::data(format!("invalid {} report for {}", self.task, self.method)));
        }
        if self.per_camera.values().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite per-camera value in {} report", self.task)));
        }
        Ok(())
    }

    /// One row for the aggregate (`camera = all`) and one per camera.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = vec![format!("{},{},all,{},{},{}", self.method, self.task, self.mean, self.std, self.repeats)];
        for (cam, v) in &self.per_camera {
            rows.push(format!("{},{},{cam},{v},0,{}", self.method, self.task, self.repeats));
        }
        rows
    }
}

pub fn reports_to_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for row in r.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

pub fn reports_from_csv(text: &str, origin: &Path) -> Result<Vec<EvaluationReport>> {
    let bad = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_CSV_HEADER) {
        return Err(bad(format!("expected header `{REPORT_CSV_HEADER}`")));
    }
    let mut out: Vec<EvaluationReport> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("malformed row `{line}`")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        let task: Task = f[1].parse()?;
        let repeats = f[5].parse::<usize>().map_err(|_| bad(format!("bad count `{}`", f[5])))?;
        if f[2] == "all" {
            out.push(EvaluationReport {
                method: f[0].to_string(),
                task,
                mean: num(f[3])?,
                std: num(f[4])?,
                repeats,
                per_camera: BTreeMap::new(),
            });
        } else {
            let last = out
                .last_mut()
                .filter(|r| r.method == f[0] && r.task == task)
                .ok_or_else(|| bad(format!("per-camera row before its aggregate: `{line}`")))?;
            last.per_camera.insert(f[2].to_string(), num(f[3])?);
        }
    }
    Ok(out)
}

/// Method-by-metric table: rows are methods, columns accuracy / clustering
/// accuracy / PCE / NIQE / L1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub values: BTreeMap<Task, Summary>,
}

pub const TABLE_COLUMNS: [Task; 6] = Task::ALL;

pub fn merge_table(reports: &[EvaluationReport]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = Vec::new();
    for r in reports {
        let idx = match rows.iter().position(|row| row.method == r.method) {
            Some(i) => i,
            None => {
                rows.push(TableRow {
                    method: r.method.clone(),
                    values: BTreeMap::new(),
                });
                rows.len() - 1
            }
        };
        rows[idx].values.insert(r.task, Summary { mean: r.mean, std: r.std });
    }
    rows
}

/// CSV with a `mean` and `std` column per task present in any row. Missing
/// cells are left empty.
pub fn table_to_csv(rows: &[TableRow]) -> String {
    let tasks: Vec<Task> = TABLE_COLUMNS
        .into_iter()
        .filter(|t| rows.iter().any(|r| r.values.contains_key(t)))
        .collect();
    let mut out = String::from("method");
    for t in &tasks {
        out.push_str(&format!(",{t},{t}_std"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.method);
        for t in &tasks {
            match row.values.get(t) {
                Some(s) => out.push_str(&format!(",{},{}", s.mean, s.std)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn table_from_csv(text: &str, origin: &Path) -> Result<Vec<TableRow>> {
    let bad = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty table".into()))?.split(',').collect();
    if header.first() != Some(&"method") || header.len() % 2 != 1 {
        return Err(bad("table header must be `method` followed by mean/std pairs".into()));
    }
    let tasks = header[1..]
        .chunks(2)
        .map(|c| c[0].parse::<Task>())
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(bad(format!("malformed row `{line}`")));
        }
        let mut values = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            let (m, s) = (f[1 + 2 * i], f[2 + 2 * i]);
            if m.is_empty() {
                continue;
            }
            let p = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}`")));
            values.insert(*t, Summary { mean: p(m)?, std: p(s)? });
        }
        rows.push(TableRow {
            method: f[0].to_string(),
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EvaluationReport> {
        let mut per = BTreeMap::new();
        per.insert("cam_a".to_string(), 0.75);
        per.insert("cam_b".to_string(), 0.5);
        vec![
            EvaluationReport::new("ori", Task::Classification, Summary { mean: 0.625, std: 0.01 }, 10, per),
            EvaluationReport::new("mf5", Task::L1, Summary { mean: 3.2, std: 0.0 }, 1, BTreeMap::new()),
        ]
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!(Summary::of(&[4.0]).unwrap().std, 0.0);
        assert!(Summary::of(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let reports = sample();
        let text = reports_to_csv(&reports);
        assert_eq!(reports_from_csv(&text, Path::new("r.csv")).unwrap(), reports);
        let json = serde_json::to_string(&reports).unwrap();
        let back: Vec<EvaluationReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn table_round_trip() {
        let rows = merge_table(&sample());
        assert_eq!(rows.len(), 2);
        let text = table_to_csv(&rows);
        assert!(text.starts_with("method,classification,classification_std,l1,l1_std\n"));
        assert_eq!(table_from_csv(&text, Path::new("t.csv")).unwrap(), rows);
    }
}
