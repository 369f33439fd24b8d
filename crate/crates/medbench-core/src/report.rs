//! Human- and plot-facing run artifacts: the console/file tee log, the
//! aggregate CSV, the Markdown summary, and per-metric plot data files.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use crate::eval::{CodeClass, RunAggregate};

/// Writes every line to both standard output and a log file, flushing per
/// line so a killed run still leaves a complete prefix on disk.
pub struct TeeLog {
    file: File,
}

impl TeeLog {
    pub fn create(path: &Path) -> io::Result<TeeLog> {
        Ok(TeeLog { file: File::create(path)? })
    }

    pub fn line(&mut self, text: &str) -> io::Result<()> {
        println!("{text}");
        writeln!(self.file, "{text}")?;
        self.file.flush()
    }
}

/// The fixed order in which code classes appear in tables and CSV columns.
const CLASS_ORDER: [CodeClass; 6] = [
    CodeClass::Correct,
    CodeClass::PartiallyCorrect,
    CodeClass::ValidButWrong,
    CodeClass::LooksLikeCode,
    CodeClass::NotCodeLike,
    CodeClass::Blank,
];

fn fmt_rate(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_rate).unwrap_or_default()
}

fn fmt_percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",")
}

/// One row per (model, strategy) cell with every aggregate measurement.
pub fn write_aggregate_csv(agg: &RunAggregate, path: &Path) -> io::Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = [
        "model",
        "strategy",
        "responses",
        "strict_json_rate",
        "recovered_rate",
        "mean_similarity",
        "similarity_n",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(CLASS_ORDER.iter().map(|c| c.name().to_string()));
    header.extend(
        [
            "correct_rate",
            "diag_matched",
            "diag_missed",
            "diag_spurious",
            "diag_precision",
            "diag_recall",
            "runtime_mean_s",
            "runtime_min_s",
            "runtime_max_s",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    out.push_str(&csv_line(&header));
    out.push('\n');
    for cell in &agg.cells {
        let mut row = vec![
            cell.model.clone(),
            cell.strategy.clone(),
            cell.responses.to_string(),
            fmt_rate(cell.strict_json_rate),
            fmt_rate(cell.recovered_rate),
            fmt_opt(cell.mean_similarity),
            cell.similarity_n.to_string(),
        ];
        for class in CLASS_ORDER {
            row.push(cell.class_counts.get(class.name()).copied().unwrap_or(0).to_string());
        }
        row.extend([
            fmt_rate(cell.correct_rate),
            cell.diag_matched.to_string(),
            cell.diag_missed.to_string(),
            cell.diag_spurious.to_string(),
            fmt_opt(cell.diag_precision),
            fmt_opt(cell.diag_recall),
            fmt_rate(cell.runtime_mean_s),
            fmt_rate(cell.runtime_min_s),
            fmt_rate(cell.runtime_max_s),
        ]);
        out.push_str(&csv_line(&row));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Markdown summary: headline table plus the code-class breakdown.
pub fn write_summary(agg: &RunAggregate, diagnosis_threshold: f64, path: &Path) -> io::Result<()> {
    let mut out = String::new();
    out.push_str("# Run summary\n\n");
    out.push_str(&format!("Diagnosis match threshold: {diagnosis_threshold:.2}\n\n"));

    out.push_str("| model | strategy | n | strict JSON | recovered | mean similarity | correct codes | diag precision | diag recall | mean time (s) |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for cell in &agg.cells {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.3} |\n",
            cell.model,
            cell.strategy,
            cell.responses,
            fmt_percent(cell.strict_json_rate),
            fmt_percent(cell.recovered_rate),
            cell.mean_similarity.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".to_string()),
            fmt_percent(cell.correct_rate),
            cell.diag_precision.map(fmt_percent).unwrap_or_else(|| "-".to_string()),
            cell.diag_recall.map(fmt_percent).unwrap_or_else(|| "-".to_string()),
            cell.runtime_mean_s,
        ));
    }

    out.push_str("\n## Code verdict classes\n\n");
    out.push_str("| model | strategy |");
    for class in CLASS_ORDER {
        out.push_str(&format!(" {} |", class.name()));
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in CLASS_ORDER {
        out.push_str("---|");
    }
    out.push('\n');
    for cell in &agg.cells {
        out.push_str(&format!("| {} | {} |", cell.model, cell.strategy));
        for class in CLASS_ORDER {
            out.push_str(&format!(
                " {} |",
                cell.class_counts.get(class.name()).copied().unwrap_or(0)
            ));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// One small CSV per metric family, ready for any plotting tool.
pub fn write_plot_data(agg: &RunAggregate, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut json = String::from("model,strategy,strict_json_rate,recovered_rate\n");
    let mut sim = String::from("model,strategy,mean_similarity,similarity_n\n");
    let mut classes = String::from("model,strategy,class,count\n");
    let mut diag = String::from("model,strategy,matched,missed,spurious,precision,recall\n");
    let mut runtimes = String::from("model,strategy,mean_s,min_s,max_s\n");

    for cell in &agg.cells {
        let key = [cell.model.clone(), cell.strategy.clone()];
        json.push_str(&csv_line(
            &[key.to_vec(), vec![fmt_rate(cell.strict_json_rate), fmt_rate(cell.recovered_rate)]]
                .concat(),
        ));
        json.push('\n');
        sim.push_str(&csv_line(
            &[key.to_vec(), vec![fmt_opt(cell.mean_similarity), cell.similarity_n.to_string()]]
                .concat(),
        ));
        sim.push('\n');
        for class in CLASS_ORDER {
            classes.push_str(&csv_line(
                &[
                    key.to_vec(),
                    vec![
                        class.name().to_string(),
                        cell.class_counts.get(class.name()).copied().unwrap_or(0).to_string(),
                    ],
                ]
                .concat(),
            ));
            classes.push('\n');
        }
        diag.push_str(&csv_line(
            &[
                key.to_vec(),
                vec![
                    cell.diag_matched.to_string(),
                    cell.diag_missed.to_string(),
                    cell.diag_spurious.to_string(),
                    fmt_opt(cell.diag_precision),
                    fmt_opt(cell.diag_recall),
                ],
            ]
            .concat(),
        ));
        diag.push('\n');
        runtimes.push_str(&csv_line(
            &[
                key.to_vec(),
                vec![
                    fmt_rate(cell.runtime_mean_s),
                    fmt_rate(cell.runtime_min_s),
                    fmt_rate(cell.runtime_max_s),
                ],
            ]
            .concat(),
        ));
        runtimes.push('\n');
    }

    std::fs::write(dir.join("json_compliance.csv"), json)?;
    std::fs::write(dir.join("similarity.csv"), sim)?;
    std::fs::write(dir.join("code_classes.csv"), classes)?;
    std::fs::write(dir.join("diagnosis_accuracy.csv"), diag)?;
    std::fs::write(dir.join("runtimes.csv"), runtimes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::eval::CellAggregate;

    fn three_of_twentyfive() -> RunAggregate {
        let mut class_counts = BTreeMap::new();
        class_counts.insert("correct".to_string(), 3);
        class_counts.insert("valid_but_wrong".to_string(), 22);
        RunAggregate {
            cells: vec![CellAggregate {
                model: "mistral".to_string(),
                strategy: "zero_shot".to_string(),
                responses: 25,
                strict_json_rate: 1.0,
                recovered_rate: 0.0,
                mean_similarity: Some(0.9875),
                similarity_n: 25,
                class_counts,
                correct_rate: 3.0 / 25.0,
                diag_matched: 6,
                diag_missed: 44,
                diag_spurious: 2,
                diag_precision: Some(0.75),
                diag_recall: Some(0.12),
                runtime_mean_s: 1.25,
                runtime_min_s: 0.5,
                runtime_max_s: 2.0,
            }],
        }
    }

    #[test]
    fn summary_formats_the_correct_rate_as_a_percentage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.md");
        write_summary(&three_of_twentyfive(), 0.8, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("12.0%"), "{text}");
        assert!(text.contains("Diagnosis match threshold: 0.80"));
        assert!(text.contains("| mistral | zero_shot | 25 |"));
    }

    #[test]
    fn aggregate_csv_has_one_row_per_cell_and_fixed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aggregate.csv");
        write_aggregate_csv(&three_of_twentyfive(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let header_cols = lines[0].split(',').count();
        assert_eq!(lines[1].split(',').count(), header_cols);
        assert!(lines[0].starts_with("model,strategy,responses,"));
        assert!(lines[1].contains("0.120000"));
    }

    #[test]
    fn plot_data_covers_every_metric_family() {
        let dir = tempfile::tempdir().unwrap();
        write_plot_data(&three_of_twentyfive(), dir.path()).unwrap();
        for name in [
            "json_compliance.csv",
            "similarity.csv",
            "code_classes.csv",
            "diagnosis_accuracy.csv",
            "runtimes.csv",
        ] {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(text.lines().count() >= 2, "{name} is empty");
        }
        // Class counts come out in long form: one row per class.
        let classes = std::fs::read_to_string(dir.path().join("code_classes.csv")).unwrap();
        assert_eq!(classes.lines().count(), 1 + 6);
    }

    #[test]
    fn tee_log_keeps_a_complete_flushed_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let mut log = TeeLog::create(&path).unwrap();
        log.line("first").unwrap();
        log.line("").unwrap();
        log.line("third").unwrap();
        // Read while the log is still open: every line must already be there.
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "first\n\nthird\n");
        drop(log);
    }
}
