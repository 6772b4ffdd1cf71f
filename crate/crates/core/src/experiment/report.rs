//! Report files: metric tables, the p-value matrix, ROC curves and
//! training histories.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use super::{Evaluation, PairComparison};
use crate::eval::{roc_points, MetricCi, RocPoint, ScoreSet};
use crate::nn::History;

/// `0.983 [0.979 - 0.987]`
pub fn format_ci(m: &MetricCi) -> String {
    format!("{:.3} [{:.3} - {:.3}]", m.point, m.ci_low, m.ci_high)
}

/// Three decimals, or `<0.001` below that.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn csv_bytes(rows: &[Vec<String>]) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> io::Result<()> {
    crate::io::write_atomic(path, &csv_bytes(rows)?)
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

/// Numeric per-variant metrics, three decimals.
pub fn table1_csv(eval: &Evaluation) -> Vec<Vec<String>> {
    let mut rows = vec![[
        "model",
        "roi",
        "method",
        "auroc",
        "auroc_lo",
        "auroc_hi",
        "accuracy",
        "accuracy_lo",
        "accuracy_hi",
        "sensitivity",
        "sensitivity_lo",
        "sensitivity_hi",
        "specificity",
        "specificity_lo",
        "specificity_hi",
        "n_pos",
        "n_neg",
        "threshold",
        "youden_threshold",
        "youden_accuracy",
        "youden_sensitivity",
        "youden_specificity",
    ]
    .map(String::from)
    .to_vec()];
    for v in &eval.variants {
        let r = &v.report;
        let mut row = vec![
            v.name.clone(),
            v.kind.name().to_string(),
            v.method.map_or("-", |m| m.name()).to_string(),
        ];
        for m in [&r.auroc, &r.accuracy, &r.sensitivity, &r.specificity] {
            row.extend([f3(m.point), f3(m.ci_low), f3(m.ci_high)]);
        }
        row.extend([
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            f3(r.threshold),
            f3(r.youden.threshold),
            f3(r.youden.accuracy),
            f3(r.youden.sensitivity),
            f3(r.youden.specificity),
        ]);
        rows.push(row);
    }
    rows
}

pub fn table1_md(eval: &Evaluation) -> String {
    let mut s = String::new();
    let threshold = eval.variants.first().map_or(0.5, |v| v.report.threshold);
    let _ = writeln!(s, "| Model | AUROC | Accuracy | Sensitivity | Specificity |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for v in &eval.variants {
        let r = &v.report;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            v.name,
            format_ci(&r.auroc),
            format_ci(&r.accuracy),
            format_ci(&r.sensitivity),
            format_ci(&r.specificity)
        );
    }
    let _ = writeln!(
        s,
        "\nAccuracy, sensitivity and specificity at threshold {threshold:.3}; stratified bootstrap percentile intervals in brackets.\n"
    );
    let _ = writeln!(s, "Secondary: Youden-optimal threshold (chosen on the test set)\n");
    let _ = writeln!(s, "| Model | Threshold | Accuracy | Sensitivity | Specificity |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for v in &eval.variants {
        let y = &v.report.youden;
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} |",
            v.name, y.threshold, y.accuracy, y.sensitivity, y.specificity
        );
    }
    s
}

/// Upper-triangular p-value matrix: row `i`, column `j > i`.
pub fn table2_csv(names: &[String], comparisons: &[PairComparison]) -> Vec<Vec<String>> {
    let mut header = vec!["model".to_string()];
    header.extend(names.iter().skip(1).cloned());
    let mut rows = vec![header];
    for (i, a) in names.iter().enumerate().take(names.len().saturating_sub(1)) {
        let mut row = vec![a.clone()];
        for b in names.iter().skip(1) {
            let cell = comparisons
                .iter()
                .find(|c| &c.a == a && &c.b == b)
                .map(|c| format_p(c.result.p_value))
                .unwrap_or_default();
            row.push(cell);
        }
        debug_assert_eq!(row.len(), names.len(), "row {i}");
        rows.push(row);
    }
    rows
}

/// Long form: one row per pair.
pub fn comparisons_csv(comparisons: &[PairComparison]) -> Vec<Vec<String>> {
    let mut rows = vec![[
        "model_a",
        "model_b",
        "auroc_a",
        "auroc_b",
        "z",
        "p_value",
        "significant",
        "mode",
    ]
        .map(String::from)
        .to_vec()];
    for c in comparisons {
        let r = &c.result;
        rows.push(vec![
            c.a.clone(),
            c.b.clone(),
            format!("{:.6}", r.auroc_a),
            format!("{:.6}", r.auroc_b),
            if r.z.abs() == f64::MAX {
                format!("{}inf", if r.z < 0.0 { "-" } else { "" })
            } else {
                format!("{:.6}", r.z)
            },
            format!("{:.6e}", r.p_value),
            (r.p_value < 0.05).to_string(),
            match r.mode {
                crate::eval::DelongMode::Paired => "paired",
                crate::eval::DelongMode::Unpaired => "unpaired",
            }
            .to_string(),
        ]);
    }
    rows
}

pub fn roc_csv(points: &[RocPoint]) -> Vec<Vec<String>> {
    let mut rows = vec![["fpr", "tpr", "threshold"].map(String::from).to_vec()];
    for p in points {
        rows.push(vec![p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()]);
    }
    rows
}

pub fn write_history(path: &Path, history: &History) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &history.epochs {
        w.serialize(e)?;
    }
    if history.epochs.is_empty() {
        w.write_record(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Overlay of ROC curves with axes, chance diagonal and legend.
pub fn roc_svg(curves: &[(String, f64, Vec<RocPoint>)]) -> String {
    let (w, h) = (560.0, 480.0);
    let (left, top, size) = (60.0, 20.0, 400.0);
    let x = |f: f64| left + f * size;
    let y = |t: f64| top + (1.0 - t) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            y(0.0),
            x(v),
            y(0.0) + 5.0,
            x(v),
            y(0.0) + 18.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            x(0.0) - 5.0,
            y(v),
            x(0.0),
            y(v),
            x(0.0) - 8.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        x(0.5),
        y(0.0) + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">True positive rate</text>"#,
        y(0.5),
        y(0.5)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for (i, (name, auc, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 10.0 + i as f64 * 16.0;
        let lx = left + size + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{name} ({auc:.3})</text>"#,
            lx + 14.0,
            lx + 18.0,
            ly + 3.5
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write every report file under `dir` and return their paths.
pub fn emit_report(
    eval: &Evaluation,
    scores: &[(String, ScoreSet)],
    histories: &[(String, History)],
    dir: &Path,
) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> io::Result<()> {
        let p = dir.join(name);
        crate::io::write_atomic(&p, &bytes)?;
        out.push(p);
        Ok(())
    };
    put("table1.csv".into(), csv_bytes(&table1_csv(eval))?)?;
    put("table1.md".into(), table1_md(eval).into_bytes())?;
    let names: Vec<String> = eval.variants.iter().map(|v| v.name.clone()).collect();
    put("table2.csv".into(), csv_bytes(&table2_csv(&names, &eval.comparisons))?)?;
    put("comparisons.csv".into(), csv_bytes(&comparisons_csv(&eval.comparisons))?)?;
    let mut curves = Vec::new();
    for (name, set) in scores {
        let pts = roc_points(set).map_err(|e| io::Error::other(e.to_string()))?;
        put(format!("roc_{name}.csv"), csv_bytes(&roc_csv(&pts))?)?;
        let auc = eval.auroc(name).unwrap_or(f64::NAN);
        curves.push((name.clone(), auc, pts));
    }
    put("roc.svg".into(), roc_svg(&curves).into_bytes())?;
    for (name, h) in histories {
        let p = dir.join(format!("history_{name}.csv"));
        write_history(&p, h)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_and_p_formatting() {
        let m = MetricCi {
            point: 0.983,
            ci_low: 0.979,
            ci_high: 0.987,
        };
        assert_eq!(format_ci(&m), "0.983 [0.979 - 0.987]");
        assert_eq!(format_p(0.0004), "<0.001");
        assert_eq!(format_p(0.001), "0.001");
        assert_eq!(format_p(0.0456), "0.046");
    }

    #[test]
    fn single_variant_matrix_is_header_only() {
        let rows = table2_csv(&["img".to_string()], &[]);
        assert_eq!(rows, vec![vec!["model".to_string()]]);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let pts = vec![
            RocPoint {
                fpr: 0.0,
                tpr: 0.0,
                threshold: f64::INFINITY,
            },
            RocPoint {
                fpr: 1.0,
                tpr: 1.0,
                threshold: 0.1,
            },
        ];
        let svg = roc_svg(&[("img".into(), 0.5, pts)]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("img (0.500)"));
    }
}
