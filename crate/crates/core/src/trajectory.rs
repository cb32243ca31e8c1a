//! Column-oriented simulation logs with a stable CSV form.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cbf::StepDiagnostics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The QP had no solution; the previous input was held.
    QpInfeasible,
    /// The filtered input left the admissible box and was saturated.
    InputClipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub t: f64,
    pub kind: EventKind,
    pub message: String,
}

/// One row per integrator step, `t_end / dt + 1` rows in total.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub events: Vec<LogEvent>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl TrajectoryLog {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn event(&mut self, t: f64, kind: EventKind, message: impl Into<String>) {
        self.events.push(LogEvent {
            t,
            kind,
            message: message.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn require_column(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)
            .ok_or_else(|| Error::MisalignedLogs(format!("log has no `{name}` column")))
    }

    pub fn times(&self) -> Vec<f64> {
        self.column("t").unwrap_or_default()
    }

    pub fn count_events(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format_value(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::MisalignedLogs("empty trajectory file".into()))?;
        let mut log = TrajectoryLog::new(&header.split(',').map(str::trim).collect::<Vec<_>>());
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MisalignedLogs(format!("row {}: {e}", n + 2)))?;
            if row.len() != log.columns.len() {
                return Err(Error::MisalignedLogs(format!(
                    "row {} has {} fields, header has {}",
                    n + 2,
                    row.len(),
                    log.columns.len()
                )));
            }
            log.rows.push(row);
        }
        Ok(log)
    }
}

/// Integers print bare, everything else in shortest round-trip scientific
/// form, so files are stable across runs and parse back exactly.
fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}
