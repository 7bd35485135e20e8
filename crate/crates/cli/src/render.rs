//! Report rendering. Every artifact is carried as a serde value plus a CSV
//! string; `table` is the CSV re-laid-out with aligned columns, which works
//! because none of our cells contain commas.

use aqa_core::metrics::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

pub fn print(format: Format, json: &serde_json::Value, csv: &str) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(json).expect("finite values")),
        Format::Csv => print!("{csv}"),
        Format::Table => print!("{}", csv_to_table(csv)),
    }
}

fn csv_to_table(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .map(|line| line.split(',').collect())
        .collect();
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for (r, row) in rows.iter().enumerate() {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            if i + 1 < row.len() {
                for _ in cell.len()..widths[i] {
                    out.push(' ');
                }
            }
        }
        out.push('\n');
        if r == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (columns.saturating_sub(1));
            out.extend(std::iter::repeat('-').take(total));
            out.push('\n');
        }
    }
    out
}

/// `metric,value` lines for every populated field of an evaluation report.
pub fn eval_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("spearman,{:.6}\n", report.spearman));
    let named = [
        ("acc_position", report.acc_position),
        ("acc_armstand", report.acc_armstand),
        ("acc_rotation", report.acc_rotation),
        ("acc_somersaults", report.acc_somersaults),
        ("acc_twists", report.acc_twists),
        ("bleu1", report.bleu1),
        ("bleu2", report.bleu2),
        ("bleu3", report.bleu3),
        ("bleu4", report.bleu4),
        ("rouge_l", report.rouge_l),
        ("cider", report.cider),
    ];
    for (name, value) in named {
        if let Some(v) = value {
            out.push_str(&format!("{name},{v:.6}\n"));
        }
    }
    out
}

/// `key,value` lines for a flat JSON object (used for path listings and run
/// summaries).
pub fn object_csv(value: &serde_json::Value) -> String {
    let mut out = String::from("key,value\n");
    if let Some(map) = value.as_object() {
        for (key, v) in map {
            let rendered = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{key},{rendered}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_align_columns_under_a_header_rule() {
        let table = csv_to_table("tasks,c3d_avg,mscadc\naqa,0.5,0.25\naqa+cls,-0.125,1.0\n");
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("tasks    "));
        assert!(lines[1].chars().all(|c| c == '-'));
        assert!(lines[2].starts_with("aqa      "));
    }

    #[test]
    fn eval_csv_skips_absent_metrics() {
        let report = EvalReport {
            spearman: 0.5,
            bleu1: Some(0.25),
            ..EvalReport::default()
        };
        let csv = eval_report_csv(&report);
        assert!(csv.contains("spearman,0.500000"));
        assert!(csv.contains("bleu1,0.250000"));
        assert!(!csv.contains("acc_position"));
        assert!(!csv.contains("cider"));
    }
}
