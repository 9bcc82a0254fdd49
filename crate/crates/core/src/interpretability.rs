//! Post-processing of attention traces into heatmaps, importance statistics
//! and temporal weight curves, with CSV and SVG export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::AttentionTrace;
use crate::tensor::Tensor;

/// Which spatial attention pass a heatmap shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialLayer {
    #[default]
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduce {
    /// The trace at this position.
    Single(usize),
    /// Cell-wise mean over all traces.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Row and column labels, in network order.
    pub labels: Vec<String>,
    /// Row `i` holds the weights variable `i` puts on every variable.
    pub values: Tensor,
    /// Origin of the first trace used.
    pub origin: NaiveDateTime,
}

fn layer_mean(trace: &AttentionTrace, layer: SpatialLayer) -> Result<Tensor> {
    let mats = match layer {
        SpatialLayer::First => &trace.spatial_first,
        SpatialLayer::Second => &trace.spatial_second,
    };
    let first = mats.first().ok_or_else(|| Error::State("trace holds no spatial matrices".into()))?;
    let mut acc = Tensor::zeros(first.rows(), first.cols());
    for m in mats {
        acc.add_assign(m);
    }
    acc.scale_in_place(1.0 / mats.len() as f64);
    Ok(acc)
}

/// Spatial attention averaged over the history steps of each trace, then
/// picked or averaged across traces.
pub fn spatial_heatmap(
    traces: &[AttentionTrace],
    labels: &[String],
    layer: SpatialLayer,
    reduce: Reduce,
) -> Result<Heatmap> {
    if traces.is_empty() {
        return Err(Error::State("no attention traces to summarise".into()));
    }
    let (values, origin) = match reduce {
        Reduce::Single(i) => {
            let t = traces
                .get(i)
                .ok_or_else(|| Error::State(format!("trace {i} requested, {} available", traces.len())))?;
            (layer_mean(t, layer)?, t.origin)
        }
        Reduce::Mean => {
            let mats: Vec<Tensor> = traces.par_iter().map(|t| layer_mean(t, layer)).collect::<Result<_>>()?;
            let mut acc = Tensor::zeros(mats[0].rows(), mats[0].cols());
            for m in &mats {
                acc.add_assign(m);
            }
            acc.scale_in_place(1.0 / mats.len() as f64);
            (acc, traces[0].origin)
        }
    };
    if values.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} labels for a {}x{} heatmap",
            labels.len(),
            values.rows(),
            values.cols()
        )));
    }
    Ok(Heatmap {
        labels: labels.to_vec(),
        values,
        origin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceStats {
    pub variable: String,
    pub mean: f64,
    pub std: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

/// Encoder selection weights of one trace averaged over its history steps.
pub fn window_importance(trace: &AttentionTrace) -> Vec<f64> {
    let steps = &trace.vsn_encoder_weights;
    let p = steps.first().map_or(0, Vec::len);
    let mut out = vec![0.0; p];
    for s in steps {
        for (o, w) in out.iter_mut().zip(s) {
            *o += w;
        }
    }
    out.iter_mut().for_each(|o| *o /= steps.len() as f64);
    out
}

/// Linear interpolation between order statistics (type 7).
pub fn quantile_of(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    quantile_of(&values, 0.5)
}

/// Per-variable statistics across traces of the step-averaged encoder
/// selection weights. `std` is the population standard deviation.
pub fn variable_importance(traces: &[AttentionTrace], labels: &[String]) -> Vec<ImportanceStats> {
    let per_window: Vec<Vec<f64>> = traces.par_iter().map(window_importance).collect();
    labels
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut v: Vec<f64> = per_window.iter().map(|w| w[k]).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            ImportanceStats {
                variable: name.clone(),
                mean,
                std,
                q10: quantile_of(&v, 0.1),
                q50: quantile_of(&v, 0.5),
                q90: quantile_of(&v, 0.9),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCurves {
    pub history: usize,
    pub horizon: usize,
    /// Column offsets `-B+1..=tau`; offset 0 is the forecast origin.
    pub offsets: Vec<i64>,
    /// `curves[k-1][i]` is the median weight that forecast step `k` puts on
    /// offset `offsets[i]`.
    pub curves: Vec<Vec<f64>>,
}

/// Median over traces of the decoder attention row of every forecast step.
pub fn temporal_weight_curves(traces: &[AttentionTrace], history: usize, horizon: usize) -> Result<TemporalCurves> {
    let n = history + horizon;
    if let Some(t) = traces.iter().find(|t| t.temporal_decoder.shape() != (n, n)) {
        return Err(Error::shape(format!(
            "decoder attention {:?}, expected {n}x{n}",
            t.temporal_decoder.shape()
        )));
    }
    let offsets: Vec<i64> = (-(history as i64) + 1..=horizon as i64).collect();
    let curves = (1..=horizon)
        .into_par_iter()
        .map(|k| {
            let row = history + k - 1;
            (0..n)
                .map(|col| median(traces.iter().map(|t| t.temporal_decoder.get(row, col)).collect()))
                .collect()
        })
        .collect();
    Ok(TemporalCurves {
        history,
        horizon,
        offsets,
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub timestamp: NaiveDateTime,
    pub importance: f64,
    pub observation: f64,
}

/// Selection weight of `variable` at the last history step of each window
/// next to its raw value at that hour. `traces[i]` must come from
/// `windows.windows[i]`.
pub fn importance_timeline(traces: &[AttentionTrace], windows: &WindowSet, variable: &str) -> Result<Vec<TimelinePoint>> {
    let k = windows
        .variables
        .iter()
        .position(|v| v == variable)
        .ok_or_else(|| Error::config(format!("unknown variable {variable:?}")))?;
    if traces.len() != windows.len() {
        return Err(Error::shape(format!(
            "{} traces for {} windows",
            traces.len(),
            windows.len()
        )));
    }
    let last = windows.history - 1;
    traces
        .iter()
        .zip(&windows.windows)
        .map(|(t, w)| {
            let weights = t
                .vsn_encoder_weights
                .last()
                .ok_or_else(|| Error::State("trace holds no selection weights".into()))?;
            Ok(TimelinePoint {
                timestamp: w.origin,
                importance: weights[k],
                observation: windows.stats.denormalize(k, w.x.get(last, k)),
            })
        })
        .collect()
}

/// `<artifact>_<YYYYmmddTHH>.svg`
pub fn artifact_file_name(artifact: &str, timestamp: &NaiveDateTime, ext: &str) -> String {
    format!("{artifact}_{}.{ext}", timestamp.format("%Y%m%dT%H"))
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| io(path, e))
}

/// Matrix CSV: header `row,<labels...>`, one row per variable.
pub fn write_heatmap_csv(h: &Heatmap, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["row".to_string()];
    header.extend(h.labels.iter().cloned());
    w.write_record(&header).map_err(|e| io(path, e))?;
    for (i, label) in h.labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(h.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| io(path, e))?;
    }
    finish(path, w)
}

/// Columns `variable,mean,std,q10,q50,q90`.
pub fn write_importance_csv(stats: &[ImportanceStats], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in stats {
        w.serialize(s).map_err(|e| io(path, e))?;
    }
    finish(path, w)
}

/// Columns `offset,k1..k_tau`.
pub fn write_curves_csv(c: &TemporalCurves, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["offset".to_string()];
    header.extend((1..=c.horizon).map(|k| format!("k{k}")));
    w.write_record(&header).map_err(|e| io(path, e))?;
    for (i, t) in c.offsets.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(c.curves.iter().map(|curve| curve[i].to_string()));
        w.write_record(&rec).map_err(|e| io(path, e))?;
    }
    finish(path, w)
}

/// Columns `timestamp,importance,observation`.
pub fn write_timeline_csv(points: &[TimelinePoint], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["timestamp", "importance", "observation"])
        .map_err(|e| io(path, e))?;
    for p in points {
        w.write_record([
            p.timestamp.format(crate::data::TIMESTAMP_FORMAT).to_string(),
            p.importance.to_string(),
            p.observation.to_string(),
        ])
        .map_err(|e| io(path, e))?;
    }
    finish(path, w)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Monotone white to dark blue ramp over `[0, 1]`.
pub fn ramp(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

const CELL: usize = 28;
const MARGIN: usize = 110;

/// Heatmap as SVG 1.1. Cell colour scales linearly from the smallest value
/// (white) to the largest (dark blue); both are printed below the legend.
pub fn heatmap_svg(h: &Heatmap, title: &str) -> String {
    let p = h.labels.len();
    let (lo, hi) = h
        .values
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let size = MARGIN + p * CELL;
    let width = size + 90;
    let height = size + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title));
    for (i, label) in h.labels.iter().enumerate() {
        let c = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{c}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            MARGIN - 4,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate({c},{}) rotate(-60)">{}</text>"#,
            MARGIN - 4,
            escape(label)
        );
    }
    for i in 0..p {
        for j in 0..p {
            let v = h.values.get(i, j);
            let (r, g, b) = ramp((v - lo) / span);
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})" stroke="#ccc" stroke-width="0.5"><title>{} to {}: {v:.6}</title></rect>""##,
                MARGIN + j * CELL,
                MARGIN + i * CELL,
                escape(&h.labels[i]),
                escape(&h.labels[j])
            );
        }
    }
    let lx = size + 20;
    let steps = 20;
    let bar = p * CELL;
    for k in 0..steps {
        let (r, g, b) = ramp(1.0 - k as f64 / (steps - 1) as f64);
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="14" height="{}" fill="rgb({r},{g},{b})"/>"#,
            MARGIN + k * bar / steps,
            bar / steps + 1
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">max {hi:.4}</text>"#, lx + 18, MARGIN + 8);
    let _ = writeln!(s, r#"<text x="{}" y="{}">min {lo:.4}</text>"#, lx + 18, MARGIN + bar);
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line chart as SVG 1.1. Every series shares the x values.
pub fn line_svg(title: &str, x: &[f64], series: &[(String, Vec<f64>)], x_label: &str) -> String {
    let (w, h, m) = (640.0, 320.0, 50.0);
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (ymin, ymax) = series
        .iter()
        .flat_map(|(_, ys)| ys.iter())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let px = |v: f64| m + (v - xmin) / xspan * (w - 2.0 * m);
    let py = |v: f64| h - m - (v - ymin) / yspan * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        w + 120.0,
        h
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{m} {m},{} {},{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="4" y="{m}">{ymax:.4}</text>"#);
    let _ = writeln!(s, r#"<text x="4" y="{}">{ymin:.4}</text>"#, h - m);
    let _ = writeln!(s, r#"<text x="{m}" y="{}" text-anchor="middle">{xmin}</text>"#, h - m + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xmax}</text>"#, w - m, h - m + 14.0);
    for (i, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            w - m + 20.0,
            m + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn curves_svg(c: &TemporalCurves) -> String {
    let x: Vec<f64> = c.offsets.iter().map(|t| *t as f64).collect();
    let series: Vec<(String, Vec<f64>)> = c
        .curves
        .iter()
        .enumerate()
        .map(|(k, ys)| (format!("k={}", k + 1), ys.clone()))
        .collect();
    line_svg("median decoder attention per forecast step", &x, &series, "offset from origin (hours)")
}

pub fn timeline_svg(variable: &str, points: &[TimelinePoint]) -> String {
    let x: Vec<f64> = (0..points.len()).map(|i| i as f64).collect();
    let obs: Vec<f64> = points.iter().map(|p| p.observation).collect();
    let (lo, hi) = obs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    // observations rescaled onto [0, 1] so both lines share the axis
    let scaled = obs.iter().map(|v| (v - lo) / span).collect();
    let series = vec![
        ("importance".to_string(), points.iter().map(|p| p.importance).collect()),
        (format!("{variable} (min-max scaled)"), scaled),
    ];
    line_svg(&format!("importance of {variable}"), &x, &series, "window")
}

/// Files written by one export call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

pub fn export_heatmap(h: &Heatmap, artifact: &str, dir: &Path) -> Result<Artifacts> {
    let csv_path = dir.join(artifact_file_name(artifact, &h.origin, "csv"));
    let svg_path = dir.join(artifact_file_name(artifact, &h.origin, "svg"));
    write_heatmap_csv(h, &csv_path)?;
    write_text(&svg_path, &heatmap_svg(h, &format!("{artifact} at {}", h.origin)))?;
    Ok(Artifacts {
        files: vec![csv_path, svg_path],
    })
}

pub fn export_importance(stats: &[ImportanceStats], origin: &NaiveDateTime, dir: &Path) -> Result<Artifacts> {
    let path = dir.join(artifact_file_name("importance", origin, "csv"));
    write_importance_csv(stats, &path)?;
    let json = dir.join(artifact_file_name("importance", origin, "json"));
    let text = serde_json::to_string_pretty(stats).map_err(|e| io(&json, e))?;
    write_text(&json, &text)?;
    Ok(Artifacts { files: vec![path, json] })
}

pub fn export_curves(c: &TemporalCurves, origin: &NaiveDateTime, dir: &Path) -> Result<Artifacts> {
    let csv_path = dir.join(artifact_file_name("temporal", origin, "csv"));
    let svg_path = dir.join(artifact_file_name("temporal", origin, "svg"));
    write_curves_csv(c, &csv_path)?;
    write_text(&svg_path, &curves_svg(c))?;
    Ok(Artifacts {
        files: vec![csv_path, svg_path],
    })
}

pub fn export_timeline(variable: &str, points: &[TimelinePoint], dir: &Path) -> Result<Artifacts> {
    let origin = points
        .first()
        .map(|p| p.timestamp)
        .ok_or_else(|| Error::State("empty importance timeline".into()))?;
    let artifact = format!("timeline-{variable}");
    let csv_path = dir.join(artifact_file_name(&artifact, &origin, "csv"));
    let svg_path = dir.join(artifact_file_name(&artifact, &origin, "svg"));
    write_timeline_csv(points, &csv_path)?;
    write_text(&svg_path, &timeline_svg(variable, points))?;
    Ok(Artifacts {
        files: vec![csv_path, svg_path],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{spatial_mask, NetworkConfig};
    use crate::data::synth::{synth_generate, SynthSpec, TARGET};
    use crate::data::make_windows;
    use crate::model::{CausalForecaster, ModelConfig};

    fn traced(n: usize) -> (CausalForecaster, WindowSet, Vec<AttentionTrace>) {
        let (ds, _) = synth_generate(5, 200, &SynthSpec::default()).unwrap();
        let net = crate::causal::build_network(&SynthSpec::network()).unwrap();
        let stats = crate::data::NormStats::fit(&ds).unwrap();
        let ds = ds.with_stats(stats.clone()).unwrap();
        let cfg = ModelConfig {
            history: 8,
            horizon: 3,
            ..ModelConfig::default()
        };
        let model = CausalForecaster::new(cfg, net, 2).unwrap().with_stats(stats).unwrap();
        let mut ws = make_windows(&ds, TARGET, 8, 3, 7).unwrap();
        ws.windows.truncate(n);
        let traces = ws.windows.iter().map(|w| model.forward(w).unwrap().1).collect();
        (model, ws, traces)
    }

    fn trace_with(p: usize, b: usize, tau: usize, weights: Vec<Vec<f64>>) -> AttentionTrace {
        let n = b + tau;
        AttentionTrace {
            origin: crate::data::tests::ts(1, 0),
            spatial_first: vec![Tensor::filled(p, p, 1.0 / p as f64); b],
            spatial_second: vec![Tensor::filled(p, p, 1.0 / p as f64); b],
            temporal_encoder: Tensor::zeros(b, b),
            temporal_decoder: Tensor::from_fn(n, n, |i, j| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 }),
            vsn_compress_weights: weights.clone(),
            vsn_encoder_weights: weights,
            vsn_global_weights: vec![1.0 / b as f64; b],
            vsn_local_weights: vec![vec![1.0 / 3.0; 3]; tau],
        }
    }

    #[test]
    fn heatmap_respects_mask() {
        let (model, _, traces) = traced(4);
        let labels = model.network().variables();
        let mask = spatial_mask(model.network());
        for layer in [SpatialLayer::First, SpatialLayer::Second] {
            for reduce in [Reduce::Single(1), Reduce::Mean] {
                let h = spatial_heatmap(&traces, &labels, layer, reduce).unwrap();
                for i in 0..labels.len() {
                    for j in 0..labels.len() {
                        if !mask.permits(i, j) {
                            assert_eq!(h.values.get(i, j), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mean_of_identical_traces() {
        let (model, _, traces) = traced(1);
        let labels = model.network().variables();
        let copies = vec![traces[0].clone(); 5];
        let single = spatial_heatmap(&copies, &labels, SpatialLayer::First, Reduce::Single(0)).unwrap();
        let mean = spatial_heatmap(&copies, &labels, SpatialLayer::First, Reduce::Mean).unwrap();
        assert!(single.values.max_abs_diff(&mean.values) < 1e-15);
        assert!(matches!(
            spatial_heatmap(&[], &labels, SpatialLayer::First, Reduce::Mean),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn importance_examples() {
        let one = vec![trace_with(1, 4, 2, vec![vec![1.0]; 4]); 3];
        let s = variable_importance(&one, &["a".into()]);
        assert_eq!((s[0].mean, s[0].q10, s[0].q50, s[0].q90), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(s[0].std, 0.0);

        let uniform = vec![trace_with(4, 4, 2, vec![vec![0.25; 4]; 4]); 6];
        let labels: Vec<String> = (0..4).map(|i| format!("v{i}")).collect();
        for s in variable_importance(&uniform, &labels) {
            assert!((s.mean - 0.25).abs() < 1e-15);
            assert!(s.std < 1e-15);
        }
    }

    #[test]
    fn importance_sums_to_one() {
        let (model, ws, traces) = traced(6);
        for t in &traces {
            assert!((window_importance(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let vars = model.network().variables();
        let timelines: Vec<Vec<TimelinePoint>> = vars
            .iter()
            .map(|v| importance_timeline(&traces, &ws, v).unwrap())
            .collect();
        for i in 0..traces.len() {
            let total: f64 = timelines.iter().map(|tl| tl[i].importance).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
        let rain = &timelines[0];
        for (p, w) in rain.iter().zip(&ws.windows) {
            let raw = ws.stats.denormalize(0, w.x.get(ws.history - 1, 0));
            assert_eq!(p.observation, raw);
            assert_eq!(p.timestamp, w.origin);
        }
        assert!(matches!(importance_timeline(&traces, &ws, "nope"), Err(Error::Config(_))));
    }

    #[test]
    fn constant_weights_give_flat_timeline() {
        let (_, ws, _) = traced(3);
        let traces = vec![trace_with(6, 8, 3, vec![vec![1.0 / 6.0; 6]; 8]); 3];
        let tl = importance_timeline(&traces, &ws, "tide").unwrap();
        assert!(tl.iter().all(|p| p.importance == 1.0 / 6.0));
    }

    #[test]
    fn curves_are_masked() {
        let (_, _, traces) = traced(5);
        let c = temporal_weight_curves(&traces, 8, 3).unwrap();
        assert_eq!(c.offsets.first(), Some(&-7));
        assert_eq!(c.offsets.last(), Some(&3));
        for (k, curve) in c.curves.iter().enumerate() {
            for (t, v) in c.offsets.iter().zip(curve) {
                if *t > (k + 1) as i64 {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn uniform_attention_gives_flat_curves() {
        let traces = vec![trace_with(2, 4, 2, vec![vec![0.5; 2]; 4]); 3];
        let c = temporal_weight_curves(&traces, 4, 2).unwrap();
        for (k, curve) in c.curves.iter().enumerate() {
            let permitted: Vec<f64> = c
                .offsets
                .iter()
                .zip(curve)
                .filter(|(t, _)| **t <= (k + 1) as i64)
                .map(|(_, v)| *v)
                .collect();
            assert!(permitted.iter().all(|v| *v == permitted[0]));
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_of(&v, 0.5), 3.0);
        assert!((quantile_of(&v, 0.1) - 1.4).abs() < 1e-12);
        assert_eq!(quantile_of(&v, 1.0), 5.0);
    }

    #[test]
    fn exports_are_svg_and_csv() {
        let (model, ws, traces) = traced(3);
        let dir = tempfile::tempdir().unwrap();
        let labels = model.network().variables();
        let h = spatial_heatmap(&traces, &labels, SpatialLayer::First, Reduce::Mean).unwrap();
        let a = export_heatmap(&h, "heatmap", dir.path()).unwrap();
        let svg = std::fs::read_to_string(&a.files[1]).unwrap();
        assert!(svg.starts_with("<?xml") && svg.contains(r#"version="1.1""#) && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("max ") && svg.contains("min "));
        assert!(a.files[1].file_name().unwrap().to_str().unwrap().starts_with("heatmap_"));
        let csv_text = std::fs::read_to_string(&a.files[0]).unwrap();
        assert_eq!(csv_text.lines().count(), labels.len() + 1);

        let c = temporal_weight_curves(&traces, 8, 3).unwrap();
        export_curves(&c, &h.origin, dir.path()).unwrap();
        let s = variable_importance(&traces, &labels);
        export_importance(&s, &h.origin, dir.path()).unwrap();
        let tl = importance_timeline(&traces, &ws, "rain").unwrap();
        let files = export_timeline("rain", &tl, dir.path()).unwrap();
        assert!(std::fs::read_to_string(&files.files[1]).unwrap().contains("</svg>"));
    }

    #[test]
    fn heatmap_on_han_river_labels() {
        let net = crate::causal::build_network(&NetworkConfig::han_river()).unwrap();
        let labels = net.variables();
        let p = labels.len();
        let t = trace_with(p, 2, 1, vec![vec![1.0 / p as f64; p]; 2]);
        let h = spatial_heatmap(&[t], &labels, SpatialLayer::Second, Reduce::Mean).unwrap();
        assert_eq!(h.values.shape(), (16, 16));
        let wrong = spatial_heatmap(&[trace_with(3, 2, 1, vec![vec![1.0 / 3.0; 3]; 2])], &labels, SpatialLayer::First, Reduce::Mean);
        assert!(matches!(wrong, Err(Error::Shape(_))));
    }
}
