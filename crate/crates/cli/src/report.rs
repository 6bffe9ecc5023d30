//! Evaluation report rendering: a comma-separated table and an aligned
//! plain-text table, one row per evaluated phase. Numeric cells use a fixed
//! 4-decimal format so reports are diffable.

use detkit_core::metrics::EvalReport;

pub const COLUMNS: [&str; 6] = ["Phase", "Precision", "Recall", "mAP50", "mAP50-95", "IoU"];

fn cells(name: &str, r: &EvalReport) -> [String; 6] {
    [
        name.to_string(),
        format!("{:.4}", r.precision),
        format!("{:.4}", r.recall),
        format!("{:.4}", r.map50),
        format!("{:.4}", r.map50_95),
        format!("{:.4}", r.mean_iou),
    ]
}

pub fn render_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for (name, report) in rows {
        out.push_str(&cells(name, report).join(","));
        out.push('\n');
    }
    out
}

pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
    let all_cells: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, report)| cells(name, report))
        .collect();
    for row in &all_cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |row: &[String]| {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    push_row(&COLUMNS.map(String::from));
    for row in &all_cells {
        push_row(row);
    }
    out
}
