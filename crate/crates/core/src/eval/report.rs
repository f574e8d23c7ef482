//! CSV tables and static SVG line plots.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AblationRow, PrCurve, RobustnessSeries};
use crate::train::CurvePoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub series: String,
    pub mode: String,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub kind: String,
    pub setting: String,
    pub trial: usize,
    pub iou: f64,
}

pub fn write_pr_csv<W: Write>(curves: &[(String, PrCurve)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (name, c) in curves {
        for &(recall, precision) in &c.points {
            w.serialize(PrRow { series: name.clone(), mode: format!("{:?}", c.mode), recall, precision })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pr_csv<R: Read>(input: R) -> csv::Result<Vec<PrRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_robustness_csv<W: Write>(series: &[RobustnessSeries], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        for (trial, &iou) in s.values.iter().enumerate() {
            w.serialize(RobustnessRow { kind: s.kind.clone(), setting: s.setting.clone(), trial, iou })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_robustness_csv<R: Read>(input: R) -> csv::Result<Vec<RobustnessRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// One row per series: `kind,setting,count,mean,p10,p25,median,p75,p90,fraction_below_0_7`.
pub fn write_robustness_summary_csv<W: Write>(series: &[RobustnessSeries], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "setting", "count", "mean", "p10", "p25", "median", "p75", "p90", "fraction_below_0_7"])?;
    for s in series {
        let m = &s.summary;
        let mut rec = vec![s.kind.clone(), s.setting.clone(), m.count.to_string()];
        rec.extend([m.mean, m.p10, m.p25, m.median, m.p75, m.p90, m.fraction_below_0_7].iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ablation_csv<R: Read>(input: R) -> csv::Result<Vec<AblationRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Groups rows by key while keeping first-seen order.
pub fn group_rows<T, K: PartialEq + Clone>(rows: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut out: Vec<(K, Vec<&T>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => out.push((k, vec![r])),
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A plain line chart with axes, ticks and a legend.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64), series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
    let sx = |x: f64| left + (x - x_range.0) / span(x_range) * pw;
    let sy = |y: f64| top + ph - (y - y_range.0) / span(y_range) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = x_range.0 + t * span(x_range);
        let yv = y_range.0 + t * span(y_range);
        let _ = writeln!(s, r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#ddd"/>"##, sx(xv), top, top + ph);
        let _ = writeln!(s, r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#ddd"/>"##, left, sy(yv), left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#, sx(xv), top + ph + 16.0, xv);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, left - 6.0, sy(yv) + 4.0, yv);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Empirical CDF as a step polyline.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut pts = vec![(0.0, 0.0)];
    for (i, x) in v.iter().enumerate() {
        pts.push((*x, i as f64 / n));
        pts.push((*x, (i + 1) as f64 / n));
    }
    if !v.is_empty() {
        pts.push((1.0, 1.0));
    }
    pts
}

pub fn pr_plot(rows: &[PrRow]) -> String {
    let series: Vec<Series> = group_rows(rows, |r| format!("{} ({})", r.series, r.mode))
        .into_iter()
        .map(|(name, rs)| Series { name, points: rs.iter().map(|r| (r.recall, r.precision)).collect() })
        .collect();
    svg_line_plot("Precision-recall", "recall", "precision", (0.0, 1.0), (0.0, 1.0), &series)
}

pub fn robustness_plot(rows: &[RobustnessRow]) -> String {
    let series: Vec<Series> = group_rows(rows, |r| format!("{}: {}", r.kind, r.setting))
        .into_iter()
        .map(|(name, rs)| Series { name, points: empirical_cdf(&rs.iter().map(|r| r.iou).collect::<Vec<_>>()) })
        .collect();
    svg_line_plot("IoU distribution (CDF)", "IoU with ground truth", "fraction of boxes", (0.0, 1.0), (0.0, 1.0), &series)
}

pub fn ablation_plot(rows: &[AblationRow]) -> String {
    let hs: Vec<f64> = rows.iter().map(|r| r.h as f64).collect();
    let lo = hs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_range = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, hi.max(1.0)) };
    let series = [
        Series { name: "mean IoU".into(), points: rows.iter().map(|r| (r.h as f64, r.mean_iou)).collect() },
        Series { name: "recall".into(), points: rows.iter().map(|r| (r.h as f64, r.recall)).collect() },
    ];
    svg_line_plot("Angle partitions", "h", "metric", x_range, (0.0, 1.0), &series)
}

/// Total and every nonzero loss term against epoch.
pub fn curve_plot(title: &str, curve: &[CurvePoint]) -> String {
    let columns: [(&str, fn(&CurvePoint) -> f64); 7] = [
        ("total", |p| p.total),
        ("offset", |p| p.terms.offset),
        ("centerness", |p| p.terms.centerness),
        ("implicit", |p| p.terms.implicit),
        ("classification", |p| p.terms.classification),
        ("box_refine", |p| p.terms.box_refine),
        ("direction", |p| p.terms.direction),
    ];
    let series: Vec<Series> = columns
        .iter()
        .filter(|(_, f)| curve.iter().any(|p| f(p) != 0.0))
        .map(|(name, f)| Series { name: name.to_string(), points: curve.iter().map(|p| (p.epoch as f64, f(p))).collect() })
        .collect();
    let last = curve.last().map_or(1.0, |p| p.epoch.max(1) as f64);
    let top = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|v| v.is_finite()).fold(0.0, f64::max);
    svg_line_plot(title, "epoch", "loss", (0.0, last), (0.0, if top > 0.0 { top * 1.05 } else { 1.0 }), &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ApMode;

    #[test]
    fn pr_csv_round_trip() {
        let c = PrCurve { mode: ApMode::R40, points: vec![(0.5, 1.0), (1.0, 0.5)], ap: 0.75 };
        let mut buf = Vec::new();
        write_pr_csv(&[("run".into(), c)], &mut buf).unwrap();
        let rows = read_pr_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].precision, 0.5);
        let svg = pr_plot(&rows);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn ablation_csv_round_trip() {
        let rows = vec![AblationRow { h: 3, mean_iou: 0.8, recall: 0.9, boxes: 10 }, AblationRow { h: 7, mean_iou: 0.86, recall: 0.95, boxes: 10 }];
        let mut buf = Vec::new();
        write_ablation_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("h,mean_iou,recall,boxes\n"));
        assert_eq!(read_ablation_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn curve_csv_round_trip_and_plot() {
        use crate::train::{read_curve_csv, write_curve_csv, LossTerms};
        let curve: Vec<CurvePoint> =
            (0..3).map(|e| CurvePoint { epoch: e, terms: LossTerms { implicit: 1.0 / (e + 1) as f64, ..Default::default() }, total: 0.1 * e as f64 }).collect();
        let mut buf = Vec::new();
        write_curve_csv(&curve, &mut buf).unwrap();
        assert_eq!(read_curve_csv(buf.as_slice()).unwrap(), curve);
        let svg = curve_plot("loss", &curve);
        assert!(svg.contains(">implicit<") && !svg.contains(">offset<"));
    }

    #[test]
    fn cdf_ends_at_one() {
        let c = empirical_cdf(&[0.3, 0.9, 0.5]);
        assert_eq!(*c.last().unwrap(), (1.0, 1.0));
        assert!(c.windows(2).all(|w| w[1].1 >= w[0].1));
    }
}
