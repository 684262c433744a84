//! Report rendering: results/aggregate CSVs, projection CSVs, and
//! template-generated SVG line charts. CSVs are the contract; SVGs are a
//! convenience.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EhError, Result};
use crate::metrics::steps_to_threshold;
use crate::trainer::strategy::{aggregate, RunRecord};

pub const SMOOTH_WINDOW: usize = 20;

/// File stem for one record's artifacts.
pub fn record_stem(r: &RunRecord) -> String {
    format!("{}_{}_seed{}", r.plan.strategy.name(), r.plan.task, r.plan.seed)
}

/// Stage-1 and stage-2 losses concatenated in step order.
pub fn full_loss_curve(r: &RunRecord) -> Vec<f32> {
    let mut curve = r.stage1.as_ref().map(|s| s.losses.clone()).unwrap_or_default();
    curve.extend_from_slice(&r.stage2.losses);
    curve
}

/// Convergence step of the full-finetune (or only) stage, counted from the
/// stage start, with τ = 0.5 · that stage's first loss.
pub fn record_steps_to_threshold(r: &RunRecord) -> Option<usize> {
    let first = *r.stage2.losses.first()?;
    steps_to_threshold(&r.stage2.losses, 0.5 * first, SMOOTH_WINDOW)
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: &str = "strategy,task,seed,final_metric,metric_name,\
feature_change_pre_final,feature_change_stage1_final,param_distance_final,\
steps_to_threshold,grad_ratio_window,stage1_steps,stage2_steps";

/// One row per record, columns fixed by RESULTS_HEADER.
pub fn results_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.plan.strategy.name(),
            r.plan.task,
            r.plan.seed,
            r.final_metric,
            r.metric_name,
            fmt_opt(r.feature_changes.get("pretrained_to_final")),
            fmt_opt(r.feature_changes.get("stage1_end_to_final")),
            r.param_distance_final,
            fmt_opt(record_steps_to_threshold(r)),
            fmt_opt(r.grad_ratio_window),
            r.stage1.as_ref().map(|s| s.steps).unwrap_or(0),
            r.stage2.steps,
        );
    }
    out
}

/// Mean/sd per (strategy, task) over seeds.
pub fn aggregate_csv(records: &[RunRecord]) -> Result<String> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.plan.strategy.name().to_string(), r.plan.task.clone()))
            .or_default()
            .push(r);
    }
    let mut out = String::from(
        "strategy,task,n_seeds,mean_metric,sd_metric,mean_param_distance_final,\
mean_feature_change_pre_final,mean_feature_change_stage1_final\n",
    );
    for group in groups.values() {
        let owned: Vec<RunRecord> = group.iter().map(|r| (*r).clone()).collect();
        let a = aggregate(&owned)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            a.strategy,
            a.task,
            a.n_seeds,
            a.mean_metric,
            a.sd_metric,
            a.mean_param_distance_final,
            fmt_opt(a.mean_feature_changes.get("pretrained_to_final")),
            fmt_opt(a.mean_feature_changes.get("stage1_end_to_final")),
        );
    }
    Ok(out)
}

/// x, y, label, split — one row per probe point per snapshot tag.
pub fn projection_csv(r: &RunRecord) -> String {
    let mut out = String::from("x,y,label,split\n");
    for (tag, points) in &r.projections {
        for (pt, label) in points.iter().zip(&r.probe_labels) {
            let _ = writeln!(out, "{},{},{},{}", pt[0], pt[1], label, tag);
        }
    }
    out
}

const SVG_W: f32 = 640.0;
const SVG_H: f32 = 360.0;
const MARGIN: f32 = 45.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Minimal multi-series line chart. Series are (name, y-values) drawn
/// against their index; axes are annotated with data min/max.
pub fn line_chart_svg(title: &str, series: &[(&str, &[f32])]) -> Result<String> {
    if series.is_empty() || series.iter().all(|(_, ys)| ys.is_empty()) {
        return Err(EhError::Contract("line chart with no data".into()));
    }
    let max_len = series.iter().map(|(_, ys)| ys.len()).max().unwrap();
    let mut y_min = f32::INFINITY;
    let mut y_max = f32::NEG_INFINITY;
    for (_, ys) in series {
        for &y in *ys {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if y_min == y_max {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let px = |i: usize| MARGIN + plot_w * i as f32 / (max_len.max(2) - 1) as f32;
    let py = |y: f32| MARGIN + plot_h * (1.0 - (y - y_min) / (y_max - y_min));

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        SVG_W / 2.0,
        xml_escape(title)
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{y_max:.4}</text>\n\
<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{y_min:.4}</text>\n\
<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
        2.0,
        MARGIN + 4.0,
        2.0,
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        SVG_H - MARGIN + 14.0,
        max_len.saturating_sub(1)
    );
    for (si, (name, ys)) in series.iter().enumerate() {
        if ys.is_empty() {
            continue;
        }
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> =
            ys.iter().enumerate().map(|(i, &y)| format!("{:.2},{:.2}", px(i), py(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            MARGIN + 6.0,
            MARGIN + 14.0 + 14.0 * si as f32,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render every report artifact for a set of records into `out`.
pub fn render_report(records: &[RunRecord], out: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(EhError::Config("no run records to report".into()));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("results.csv"), results_csv(records))?;
    std::fs::write(out.join("aggregate.csv"), aggregate_csv(records)?)?;
    for r in records {
        let stem = record_stem(r);
        if !r.projections.is_empty() {
            std::fs::write(out.join(format!("{stem}_projection.csv")), projection_csv(r))?;
        }
        let loss = full_loss_curve(r);
        if !loss.is_empty() {
            let svg = line_chart_svg(&format!("train loss: {stem}"), &[("loss", &loss)])?;
            std::fs::write(out.join(format!("{stem}_loss.svg")), svg)?;
        }
        if !r.param_distance_curve.is_empty() {
            let ys: Vec<f32> = r.param_distance_curve.iter().map(|(_, d)| *d).collect();
            let svg = line_chart_svg(
                &format!("param distance: {stem}"),
                &[("||theta - theta0||^2", &ys)],
            )?;
            std::fs::write(out.join(format!("{stem}_distance.svg")), svg)?;
        }
    }
    Ok(())
}
