//! Plain-text and CSV renderings of evaluation results.

use super::{Attribution, AttributionCounts, MetricReport, SweepRow};

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x))
        .unwrap_or_else(|| "-".into())
}

/// Left-align the first column, right-align the rest.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// One row per labelled report; percentages for the bounded metrics.
pub fn render_metric_table(rows: &[(String, MetricReport)]) -> String {
    let mut table = vec![[
        "run",
        "n",
        "accuracy",
        "bleu",
        "rouge_l",
        "retrieval %",
        "retr. calls",
        "llm calls",
        "errors",
    ]
    .map(String::from)
    .to_vec()];
    for (label, r) in rows {
        table.push(vec![
            label.clone(),
            r.n.to_string(),
            pct(r.accuracy),
            pct(r.bleu),
            pct(r.rouge_l),
            pct(Some(r.retrieval_rate)),
            format!("{:.2}", r.avg_retrieval_calls),
            format!("{:.2}", r.avg_llm_calls),
            r.errors.to_string(),
        ]);
    }
    align(&table)
}

pub fn render_attribution(counts: &AttributionCounts) -> String {
    let mut table = vec![vec!["label".to_string(), "count".into(), "percent".into()]];
    for a in Attribution::ALL {
        table.push(vec![
            a.as_str().to_string(),
            counts.get(a).to_string(),
            format!("{:.1}", counts.percent(a)),
        ]);
    }
    table.push(vec![
        "total".into(),
        counts.total().to_string(),
        if counts.total() > 0 { "100.0" } else { "0.0" }.into(),
    ]);
    align(&table)
}

/// Average retrieval calls per question: one row per method, one column
/// per dataset.
pub fn render_call_table(datasets: &[String], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(datasets.iter().cloned());
    let mut table = vec![header];
    for (method, values) in rows {
        let mut row = vec![method.clone()];
        row.extend(
            values
                .iter()
                .map(|v| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())),
        );
        table.push(row);
    }
    align(&table)
}

pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let axis = rows.first().map(|r| r.axis.as_str()).unwrap_or("value");
    let mut table = vec![[
        axis,
        "n",
        "accuracy",
        "bleu",
        "rouge_l",
        "retrieval %",
        "retr. calls",
        "llm calls",
        "backend calls",
        "status",
    ]
    .map(String::from)
    .to_vec()];
    for row in rows {
        match &row.report {
            Some(r) => table.push(vec![
                row.value.clone(),
                r.n.to_string(),
                pct(r.accuracy),
                pct(r.bleu),
                pct(r.rouge_l),
                pct(Some(r.retrieval_rate)),
                format!("{:.2}", r.avg_retrieval_calls),
                format!("{:.2}", r.avg_llm_calls),
                row.backend_calls.to_string(),
                "ok".into(),
            ]),
            None => {
                let mut cells = vec![row.value.clone()];
                cells.extend(std::iter::repeat_n("-".to_string(), 8));
                cells.push(format!(
                    "error: {}",
                    row.error.as_deref().unwrap_or("unknown")
                ));
                table.push(cells);
            }
        }
    }
    align(&table)
}

/// Machine-readable sweep output.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "axis",
        "value",
        "n",
        "accuracy",
        "bleu",
        "rouge_l",
        "retrieval_rate",
        "avg_retrieval_calls",
        "avg_llm_calls",
        "backend_calls",
        "error",
    ])
    .expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        let r = row.report.as_ref();
        w.write_record([
            row.axis.as_str().to_string(),
            row.value.clone(),
            r.map(|r| r.n.to_string()).unwrap_or_default(),
            opt(r.and_then(|r| r.accuracy)),
            opt(r.and_then(|r| r.bleu)),
            opt(r.and_then(|r| r.rouge_l)),
            opt(r.map(|r| r.retrieval_rate)),
            opt(r.map(|r| r.avg_retrieval_calls)),
            opt(r.map(|r| r.avg_llm_calls)),
            row.backend_calls.to_string(),
            row.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}
