use serde::{Deserialize, Serialize};

use crate::error::{AttackError, Result};
use crate::perturbation::TorquePerturbation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub actuator: String,
    pub delta: f64,
    /// Signed, two decimals.
    pub display: String,
}

/// The best perturbation, one row per actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTable {
    pub eps: f64,
    pub rows: Vec<TableRow>,
}

/// `+0.09`, `-0.01`; negative zero prints as `+0.00`.
pub fn format_signed(x: f64) -> String {
    let s = format!("{x:+.2}");
    if s == "-0.00" {
        "+0.00".to_owned()
    } else {
        s
    }
}

pub fn best_perturbation_table(best: &TorquePerturbation, labels: &[String]) -> Result<PerturbationTable> {
    if labels.len() != best.len() {
        return Err(AttackError::Dimension {
            expected: best.len(),
            got: labels.len(),
        });
    }
    let rows = labels
        .iter()
        .zip(best.as_slice())
        .map(|(l, &d)| TableRow {
            actuator: l.clone(),
            delta: d,
            display: format_signed(d),
        })
        .collect();
    Ok(PerturbationTable { eps: best.eps(), rows })
}

impl PerturbationTable {
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.actuator.len())
            .max()
            .unwrap_or(0)
            .max("actuator".len());
        let mut out = format!("{:<width$}  perturbation (eps = {})\n", "actuator", self.eps);
        for r in &self.rows {
            out.push_str(&format!("{:<width$}  {}\n", r.actuator, r.display));
        }
        out
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.delta).collect()
    }
}
