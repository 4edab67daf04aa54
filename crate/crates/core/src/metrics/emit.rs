use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use super::MetricsReport;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round3).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Three decimals, or `n/a` for an undefined value.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        Some(x) => format!("{:.3}", round3(x)),
        None => "n/a".into(),
    }
}

/// Pretty JSON with every float rounded to three decimals.
pub fn render_json(report: &MetricsReport) -> String {
    let mut v = serde_json::to_value(report).expect("report serializes");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

pub fn emit_json(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<PathBuf, EmitError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("report.json");
    std::fs::write(&path, render_json(report)).map_err(io_err(&path))?;
    Ok(path)
}

fn write_table(dir: &Path, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf, EmitError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Writes the report as a set of CSV tables and returns their paths.
pub fn emit_csv(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, EmitError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n = |x: f64| fmt_num(Some(x));
    let mut files = Vec::new();

    let mut rows = Vec::new();
    for c in &report.overall {
        for pr in [&c.human_positive, &c.ai_positive] {
            let class = serde_json::to_value(pr.positive_class).expect("enum serializes");
            rows.push(vec![
                c.judges.clone(),
                c.n_judgments.to_string(),
                fmt_num(c.strict_accuracy),
                n(report.random_baseline),
                class.as_str().unwrap_or_default().to_owned(),
                fmt_num(pr.precision),
                fmt_num(pr.recall),
                pr.confusion.tp.to_string(),
                pr.confusion.fp.to_string(),
                pr.confusion.fn_.to_string(),
                pr.confusion.tn.to_string(),
            ]);
        }
    }
    files.push(write_table(
        dir,
        "accuracy.csv",
        &[
            "judges",
            "n_judgments",
            "strict_accuracy",
            "random_baseline",
            "positive_class",
            "precision",
            "recall",
            "tp",
            "fp",
            "fn",
            "tn",
        ],
        rows,
    )?);

    let rows = report
        .accuracy_by_llm
        .iter()
        .flat_map(|(judges, models)| {
            models.iter().map(move |(m, a)| {
                vec![
                    judges.clone(),
                    m.clone(),
                    a.n_targets.to_string(),
                    n(a.per_target),
                    a.n_judgments.to_string(),
                    n(a.per_room_strict),
                ]
            })
        })
        .collect();
    files.push(write_table(
        dir,
        "accuracy_by_llm.csv",
        &["judges", "model", "n_targets", "per_target_accuracy", "n_judgments", "per_room_strict_accuracy"],
        rows,
    )?);

    let rows = report
        .accuracy_by_background
        .iter()
        .map(|(g, a)| vec![g.clone(), a.n.to_string(), a.n_judgments.to_string(), n(a.accuracy)])
        .collect();
    files.push(write_table(
        dir,
        "accuracy_by_background.csv",
        &["background", "n", "n_judgments", "accuracy"],
        rows,
    )?);

    let rows = report
        .words_per_message
        .iter()
        .map(|(c, s)| vec![c.clone(), s.messages.to_string(), n(s.mean), n(s.std)])
        .collect();
    files.push(write_table(dir, "words_per_message.csv", &["cohort", "messages", "mean", "std"], rows)?);

    let rows = report
        .words_per_message
        .iter()
        .flat_map(|(c, s)| s.histogram.iter().map(move |(w, k)| vec![c.clone(), w.to_string(), k.to_string()]))
        .collect();
    files.push(write_table(dir, "words_histogram.csv", &["cohort", "words", "messages"], rows)?);

    let rows = report
        .message_share
        .rooms
        .iter()
        .map(|r| {
            vec![
                r.room_id.clone(),
                r.human_members.to_string(),
                r.ai_members.to_string(),
                r.human_messages.to_string(),
                r.ai_messages.to_string(),
                fmt_num(r.human_share),
                fmt_num(r.ai_share),
            ]
        })
        .collect();
    files.push(write_table(
        dir,
        "message_share_rooms.csv",
        &["room_id", "human_members", "ai_members", "human_messages", "ai_messages", "human_share", "ai_share"],
        rows,
    )?);

    let share = &report.message_share;
    let rows = share
        .per_capita
        .iter()
        .map(|r| ("coarse", r))
        .chain(share.per_model_per_capita.iter().map(|r| ("per_model", r)))
        .map(|(table, (c, p))| {
            vec![
                table.to_owned(),
                c.clone(),
                p.members.to_string(),
                p.messages.to_string(),
                fmt_num(p.per_capita),
                fmt_num(p.share),
            ]
        })
        .collect();
    files.push(write_table(
        dir,
        "message_share_per_capita.csv",
        &["table", "cohort", "members", "messages", "per_capita", "normalized_share"],
        rows,
    )?);

    let rows = report
        .spelling_error_rate
        .iter()
        .map(|(c, s)| vec![c.clone(), s.messages.to_string(), s.flagged.to_string(), fmt_num(s.rate)])
        .collect();
    files.push(write_table(dir, "spelling.csv", &["cohort", "messages", "flagged", "rate"], rows)?);

    Ok(files)
}
