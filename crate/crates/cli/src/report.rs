//! Evaluation outputs: the per-case metrics CSV and a static SVG plot.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub case_id: String,
    pub class: usize,
    pub dice: f64,
    pub assd_mm: f64,
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> anyhow::Result<()> {
    let mut text = String::from("case_id,class,dice,assd_mm\n");
    for r in rows {
        writeln!(text, "{},{},{:.6},{:.6}", r.case_id, r.class, r.dice, r.assd_mm)?;
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Per-case Dice bars (foreground mean), one group per case, cohort mean as
/// a horizontal rule.
pub fn write_dice_plot_svg(cases: &[(String, f64)], path: &Path) -> anyhow::Result<()> {
    let width = 80 + cases.len().max(1) * 36;
    let height = 260;
    let chart_h = 180.0f64;
    let mean = if cases.is_empty() {
        0.0
    } else {
        cases.iter().map(|(_, d)| d).sum::<f64>() / cases.len() as f64
    };
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )?;
    writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#)?;
    writeln!(
        svg,
        r#"<text x="10" y="20" font-family="monospace" font-size="13">per-case Dice (foreground mean), cohort mean = {mean:.4}</text>"#
    )?;
    for (i, (case_id, dice)) in cases.iter().enumerate() {
        let x = 50 + i * 36;
        let bar_h = (dice.clamp(0.0, 1.0) * chart_h).round();
        let y = 40.0 + chart_h - bar_h;
        writeln!(
            svg,
            r##"<rect x="{x}" y="{y:.0}" width="24" height="{bar_h:.0}" fill="#4878a8"/>"##
        )?;
        writeln!(
            svg,
            r#"<text x="{tx}" y="{ty}" font-family="monospace" font-size="9" transform="rotate(45 {tx} {ty})">{case_id}</text>"#,
            tx = x,
            ty = 235
        )?;
    }
    let mean_y = 40.0 + chart_h - mean.clamp(0.0, 1.0) * chart_h;
    writeln!(
        svg,
        r##"<line x1="45" y1="{mean_y:.0}" x2="{x2}" y2="{mean_y:.0}" stroke="#c04040" stroke-dasharray="4 3"/>"##,
        x2 = width - 10
    )?;
    writeln!(svg, r#"<line x1="45" y1="40" x2="45" y2="220" stroke="black"/>"#)?;
    writeln!(svg, r#"<line x1="45" y1="220" x2="{x2}" y2="220" stroke="black"/>"#, x2 = width - 10)?;
    writeln!(svg, "</svg>")?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
