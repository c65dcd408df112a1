use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::metrics::{MetricsTable, RegistrationResult};
use super::{EvalError, Result};

pub const METRIC_COLUMNS: [&str; 6] = ["MSE(R)", "RMSE(R)", "MAE(R)", "MSE(t)", "RMSE(t)", "MAE(t)"];

/// Published full-scale numbers, reproduced verbatim for side-by-side reading.
/// None of these are produced by this code.
const REFERENCE_ROWS: [(&str, [&str; 6]); 3] = [
    (
        "SCR decoder, unsupervised",
        ["1.154405", "1.074432", "0.830864", "0.000444", "0.020904", "0.014533"],
    ),
    (
        "Direct optimization",
        ["406.131713", "16.454065", "13.932246", "0.087263", "0.295404", "0.253658"],
    ),
    (
        "ICP",
        ["894.897339", "29.914835", "23.544817", "0.084643", "0.290935", "0.248755"],
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(EvalError::InvalidArgument(format!("unknown report format {s:?} (csv, markdown)"))),
        }
    }
}

pub fn render_csv(table: &MetricsTable) -> String {
    let mut s = format!("method,{}\n", METRIC_COLUMNS.join(","));
    for row in &table.rows {
        s.push_str(&row.method);
        for v in row.values() {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

pub fn render_markdown(table: &MetricsTable) -> String {
    let mut s = String::from("## Registration error\n\n");
    let _ = writeln!(s, "| Method | {} |", METRIC_COLUMNS.join(" | "));
    let _ = writeln!(s, "|---|{}", "---:|".repeat(6));
    for row in &table.rows {
        let cells: Vec<String> = row.values().iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "| {} | {} |", row.method, cells.join(" | "));
    }
    s.push_str("\n### Reference values (published, not reproduced)\n\n");
    s.push_str("Full-scale ModelNet40, unseen shapes. Quoted for comparison only.\n\n");
    let _ = writeln!(s, "| Method | {} |", METRIC_COLUMNS.join(" | "));
    let _ = writeln!(s, "|---|{}", "---:|".repeat(6));
    for (name, vals) in REFERENCE_ROWS {
        let _ = writeln!(s, "| {name} | {} |", vals.join(" | "));
    }
    s
}

pub fn emit_report(table: &MetricsTable, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(table),
        ReportFormat::Markdown => render_markdown(table),
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// One line per pair. Wall time is left out so reruns compare byte for byte.
pub fn render_pair_csv(results: &[RegistrationResult]) -> String {
    let mut s = String::from("pair_id,pred_ax,pred_ay,pred_az,pred_tx,pred_ty,pred_tz,gt_ax,gt_ay,gt_az,gt_tx,gt_ty,gt_tz,initial_chamfer,final_chamfer\n");
    for r in results {
        s.push_str(&r.pair_id);
        let p = r.predicted.angles_deg();
        let g = r.ground_truth.angles_deg();
        for v in p
            .iter()
            .chain(&r.predicted.translation)
            .chain(&g)
            .chain(&r.ground_truth.translation)
            .chain([&r.initial_chamfer, &r.final_chamfer])
        {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}
