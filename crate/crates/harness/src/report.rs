//! Comparison tables over metric reports, with the best and second-best
//! value of every column marked. MAE ranks ascending, every other column
//! descending.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sodkit_eval::{pr_plot_svg, MetricReport, PRCurve};

use crate::error::{HarnessError, Result};

/// Column order of the comparison table.
pub const COLUMNS: [&str; 5] = ["meanF", "E", "S", "maxF", "MAE"];

pub fn lower_is_better(column: &str) -> bool {
    column == "MAE"
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub values: BTreeMap<String, f64>,
}

impl ReportRow {
    pub fn from_report(label: impl Into<String>, r: &MetricReport) -> Self {
        let values = [
            ("meanF", r.mean_f),
            ("E", r.e_measure),
            ("S", r.s_measure),
            ("maxF", r.max_f),
            ("MAE", r.mae),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ReportRow {
            label: label.into(),
            values,
        }
    }
}

/// Label of a report file: its stem, or the parent directory name when the
/// stem is the generic `report`.
pub fn report_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    if stem != "report" {
        return stem.to_string();
    }
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .unwrap_or(stem)
        .to_string()
}

/// Reads the numeric metric fields of a report JSON file. Only the metric
/// columns present in the file are kept, so mismatches surface in
/// [`build_table`].
pub fn read_report_row(path: &Path) -> Result<ReportRow> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| HarnessError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut values = BTreeMap::new();
    for col in COLUMNS {
        if let Some(v) = json.get(col).and_then(|v| v.as_f64()) {
            values.insert(col.to_string(), v);
        }
    }
    Ok(ReportRow {
        label: report_label(path),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub value: f64,
    /// 1 for the best value of the column, 2 for the second best.
    pub rank: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Cell>)>,
}

/// Ranks each column. Rows tied on a value share its rank; the second rank
/// goes to the next distinct value.
pub fn build_table(rows: &[ReportRow]) -> Result<Table> {
    let first = rows.first().ok_or(HarnessError::NoReports)?;
    let columns: Vec<String> = first.values.keys().cloned().collect();
    for r in rows {
        let cols: Vec<&String> = r.values.keys().collect();
        if cols != columns.iter().collect::<Vec<_>>() {
            return Err(HarnessError::ColumnMismatch(format!(
                "`{}` has {:?}, `{}` has {:?}",
                first.label, columns, r.label, cols
            )));
        }
    }
    let ordered: Vec<String> = COLUMNS
        .iter()
        .map(|c| c.to_string())
        .filter(|c| columns.contains(c))
        .collect();
    let mut table_rows: Vec<(String, Vec<Cell>)> = rows
        .iter()
        .map(|r| {
            let cells = ordered
                .iter()
                .map(|c| Cell {
                    value: r.values[c],
                    rank: None,
                })
                .collect();
            (r.label.clone(), cells)
        })
        .collect();
    for (j, col) in ordered.iter().enumerate() {
        let mut distinct: Vec<f64> = table_rows.iter().map(|(_, cells)| cells[j].value).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if !lower_is_better(col) {
            distinct.reverse();
        }
        for (_, cells) in table_rows.iter_mut() {
            let v = cells[j].value;
            cells[j].rank = distinct.iter().take(2).position(|&d| d == v).map(|p| p as u8 + 1);
        }
    }
    Ok(Table {
        columns: ordered,
        rows: table_rows,
    })
}

impl Table {
    /// Markdown table: best in bold, second best in italics.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Method | {} |", self.columns.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(self.columns.len()));
        for (label, cells) in &self.rows {
            let body: Vec<String> = cells
                .iter()
                .map(|c| match c.rank {
                    Some(1) => format!("**{:.3}**", c.value),
                    Some(2) => format!("*{:.3}*", c.value),
                    _ => format!("{:.3}", c.value),
                })
                .collect();
            let _ = writeln!(out, "| {label} | {} |", body.join(" | "));
        }
        out
    }

    /// One value column and one rank column (`1`, `2` or empty) per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for c in &self.columns {
            let _ = write!(out, ",{c},{c}_rank");
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(&label.replace(',', ";"));
            for c in cells {
                let rank = c.rank.map(|r| r.to_string()).unwrap_or_default();
                let _ = write!(out, ",{},{rank}", c.value);
            }
            out.push('\n');
        }
        out
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Builds the comparison from report files and writes `comparison.csv`,
/// `comparison.md` and, when `<stem>_pr.csv` files sit beside the reports,
/// `pr.svg` with one curve per report.
pub fn report(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = inputs.iter().map(|p| read_report_row(p)).collect::<Result<Vec<_>>>()?;
    let table = build_table(&rows)?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let csv = out_dir.join("comparison.csv");
    let md = out_dir.join("comparison.md");
    write(&csv, &table.to_csv())?;
    write(&md, &table.to_markdown())?;
    let mut written = vec![csv, md];
    let mut curves = Vec::new();
    for (p, row) in inputs.iter().zip(&rows) {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let pr = p.with_file_name(format!("{stem}_pr.csv"));
        if pr.exists() {
            curves.push((row.label.clone(), PRCurve::read_csv(&pr)?));
        }
    }
    if !curves.is_empty() {
        let refs: Vec<(&str, &PRCurve)> = curves.iter().map(|(l, c)| (l.as_str(), c)).collect();
        let svg = out_dir.join("pr.svg");
        write(&svg, &pr_plot_svg(&refs))?;
        written.push(svg);
    }
    Ok(written)
}
