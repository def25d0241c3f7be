//! Table rendering: seed-aggregated accuracy (and mFID) per strategy row,
//! with the analytic relative cost. Missing grid cells render as explicit
//! gaps and are reported, never silently dropped.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::{average_accuracy_sem, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    T1,
    T2,
}

impl TableId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "T1" | "t1" => Ok(TableId::T1),
            "T2" | "t2" => Ok(TableId::T2),
            other => Err(Error::config(format!("unknown table id '{other}' (expected T1 or T2)"))),
        }
    }

    fn with_mfid(&self) -> bool {
        matches!(self, TableId::T2)
    }
}

#[derive(Debug, Clone)]
pub struct TableRow {
    pub architecture: String,
    pub strategy_label: String,
    pub relative_cost: f64,
    pub mfid: Option<f64>,
    pub accuracy_mean: f64,
    pub accuracy_sem: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub id: TableId,
    pub rows: Vec<TableRow>,
    pub warnings: Vec<String>,
}

/// Aggregate results into per-(architecture, strategy) rows. Rows are
/// ordered per architecture with the baseline first, then by descending
/// relative cost.
pub fn emit_table(results: &[RunResult], id: TableId) -> Result<Table> {
    if results.is_empty() {
        return Err(Error::input("no results to tabulate"));
    }
    let mut groups: BTreeMap<(String, String), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.architecture.clone(), r.strategy_label.clone()))
            .or_default()
            .push(r);
    }
    let mut warnings = Vec::new();
    let expected_seeds = groups.values().map(|v| v.len()).max().unwrap_or(0);
    let mut rows = Vec::new();
    for ((arch, label), runs) in &groups {
        if runs.len() < expected_seeds {
            warnings.push(format!(
                "cell ({arch}, {label}) has {} of {expected_seeds} seeds",
                runs.len()
            ));
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.average_accuracy).collect();
        let (mean, sem) = average_accuracy_sem(&accs);
        let mfids: Vec<f64> = runs.iter().filter_map(|r| r.mfid).collect();
        let mfid = if mfids.is_empty() {
            if id.with_mfid() {
                warnings.push(format!("cell ({arch}, {label}) has no mFID values"));
            }
            None
        } else {
            Some(mfids.iter().sum::<f64>() / mfids.len() as f64)
        };
        rows.push(TableRow {
            architecture: arch.clone(),
            strategy_label: label.clone(),
            relative_cost: runs[0].relative_cost,
            mfid,
            accuracy_mean: mean,
            accuracy_sem: sem,
            seeds: runs.len(),
        });
    }
    rows.sort_by(|a, b| {
        a.architecture.cmp(&b.architecture).then_with(|| {
            let a_ir = a.strategy_label == "IR";
            let b_ir = b.strategy_label == "IR";
            b_ir.cmp(&a_ir)
                .then(b.relative_cost.partial_cmp(&a.relative_cost).unwrap())
                .then(a.strategy_label.cmp(&b.strategy_label))
        })
    });
    Ok(Table { id, rows, warnings })
}

fn accuracy_cell(row: &TableRow) -> String {
    match row.accuracy_sem {
        Some(sem) => format!("{:.1}% ± {:.1}%", row.accuracy_mean * 100.0, sem * 100.0),
        None => format!("{:.1}%", row.accuracy_mean * 100.0),
    }
}

impl Table {
    pub fn to_text(&self) -> String {
        let with_mfid = self.id.with_mfid();
        let mut out = String::new();
        let header = if with_mfid {
            format!(
                "{:<14} {:<22} {:>8} {:>8} {:>18}\n",
                "Architecture", "Strategy", "R", "mFID", "Accuracy"
            )
        } else {
            format!("{:<14} {:<22} {:>8} {:>18}\n", "Architecture", "Strategy", "R", "Accuracy")
        };
        out.push_str(&header);
        out.push_str(&"-".repeat(header.len().saturating_sub(1)));
        out.push('\n');
        for row in &self.rows {
            let r = format!("{:.1}%", row.relative_cost * 100.0);
            if with_mfid {
                let mfid = row.mfid.map(|m| format!("{m:.0}")).unwrap_or_else(|| "—".into());
                out.push_str(&format!(
                    "{:<14} {:<22} {:>8} {:>8} {:>18}\n",
                    row.architecture,
                    row.strategy_label,
                    r,
                    mfid,
                    accuracy_cell(row)
                ));
            } else {
                out.push_str(&format!(
                    "{:<14} {:<22} {:>8} {:>18}\n",
                    row.architecture,
                    row.strategy_label,
                    r,
                    accuracy_cell(row)
                ));
            }
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.id.with_mfid() {
            "architecture,strategy,relative_cost,mfid,accuracy_mean,accuracy_sem,seeds\n"
        } else {
            "architecture,strategy,relative_cost,accuracy_mean,accuracy_sem,seeds\n"
        });
        for row in &self.rows {
            let sem = row.accuracy_sem.map(|s| format!("{s:.6}")).unwrap_or_default();
            let strategy = if row.strategy_label.contains(',') {
                format!("\"{}\"", row.strategy_label)
            } else {
                row.strategy_label.clone()
            };
            if self.id.with_mfid() {
                let mfid = row.mfid.map(|m| format!("{m:.4}")).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{:.6},{},{:.6},{},{}\n",
                    row.architecture, strategy, row.relative_cost, mfid, row.accuracy_mean, sem, row.seeds
                ));
            } else {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{},{}\n",
                    row.architecture, strategy, row.relative_cost, row.accuracy_mean, sem, row.seeds
                ));
            }
        }
        out
    }
}
