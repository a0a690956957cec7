//! Diagnostic figures: raw tables as CSV plus a plain SVG rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::metrics::MetricsRecord;
use crate::error::{Error, Result};
use crate::objectives::{critic_loss_mse, critic_loss_twohot};
use crate::value_codec::BinSpace;

/// Critic losses as a function of relative prediction error, per target scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleAnalysis {
    pub scales: Vec<f64>,
    pub rel_errors: Vec<f64>,
    /// `mse[s][e]` for scale `s` and relative error `e`.
    pub mse: Vec<Vec<f64>>,
    pub twohot: Vec<Vec<f64>>,
}

/// Bin distribution of a classifier predicting `y_hat`: a discretized
/// Gaussian in transformed space, one bin wide, centered on `y_hat`.
pub fn smooth_prediction(bins: &BinSpace, y_hat: f64) -> Vec<f64> {
    let c = bins.centers();
    let width = c[1] - c[0];
    let m = bins.transform(y_hat);
    let logits: Vec<f64> = c.iter().map(|x| -0.5 * ((x - m) / width).powi(2)).collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Tabulates both critic losses for target `y = scale` and prediction
/// `y * (1 + rel_error)`.
pub fn plot_scale_analysis(bins: &BinSpace, scales: &[f64], rel_errors: &[f64]) -> Result<ScaleAnalysis> {
    if bins.num_bins() < 2 {
        return Err(Error::Domain("scale analysis needs at least two bins".into()));
    }
    let mut mse = Vec::with_capacity(scales.len());
    let mut twohot = Vec::with_capacity(scales.len());
    for &y in scales {
        let mut m_row = Vec::with_capacity(rel_errors.len());
        let mut t_row = Vec::with_capacity(rel_errors.len());
        for &e in rel_errors {
            let y_hat = y + e * y;
            m_row.push(critic_loss_mse(y_hat, y));
            t_row.push(critic_loss_twohot(&smooth_prediction(bins, y_hat), y, bins)?);
        }
        mse.push(m_row);
        twohot.push(t_row);
    }
    Ok(ScaleAnalysis { scales: scales.to_vec(), rel_errors: rel_errors.to_vec(), mse, twohot })
}

impl ScaleAnalysis {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scale,rel_error,mse,twohot\n");
        for (i, scale) in self.scales.iter().enumerate() {
            for (j, e) in self.rel_errors.iter().enumerate() {
                let _ = writeln!(s, "{scale},{e},{},{}", self.mse[i][j], self.twohot[i][j]);
            }
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let series = |table: &[Vec<f64>]| -> Vec<Series> {
            self.scales
                .iter()
                .zip(table)
                .map(|(s, row)| Series { label: format!("y = {s}"), points: self.rel_errors.iter().cloned().zip(row.iter().cloned()).collect() })
                .collect()
        };
        let left = line_panel("MSE critic loss", "relative error", &series(&self.mse));
        let right = line_panel("two-hot critic loss", "relative error", &series(&self.twohot));
        two_panels(&left, &right)
    }

    /// Writes `scale_analysis.csv` and `scale_analysis.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scale_analysis.csv"), self.to_csv())?;
        fs::write(dir.join("scale_analysis.svg"), self.to_svg())?;
        Ok(())
    }
}

/// Argmax-bin histograms over training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinUsage {
    pub steps: Vec<u64>,
    pub histograms: Vec<Vec<u64>>,
}

pub fn plot_bin_usage(records: &[MetricsRecord]) -> Result<BinUsage> {
    let (steps, histograms) = records.iter().filter_map(|r| r.bin_usage.as_ref().map(|h| (r.step, h.clone()))).unzip::<_, _, Vec<_>, Vec<_>>();
    if histograms.is_empty() {
        return Err(Error::NotApplicable("no bin usage recorded; the critic is not a classifier".into()));
    }
    Ok(BinUsage { steps, histograms })
}

impl BinUsage {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,bin,count\n");
        for (step, h) in self.steps.iter().zip(&self.histograms) {
            for (b, c) in h.iter().enumerate() {
                if *c > 0 {
                    let _ = writeln!(s, "{step},{b},{c}");
                }
            }
        }
        s
    }

    /// Heat map, steps left to right, bins bottom to top.
    pub fn to_svg(&self) -> String {
        let bins = self.histograms.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let cols = self.histograms.len().max(1);
        let (w, h) = (640.0, 360.0);
        let (cw, ch) = (w / cols as f64, h / bins as f64);
        let mut s = svg_open(w + 80.0, h + 60.0);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">argmax bin frequency</text>"#, 40.0 + w / 2.0);
        for (i, hist) in self.histograms.iter().enumerate() {
            let total = hist.iter().sum::<u64>().max(1) as f64;
            for (b, c) in hist.iter().enumerate() {
                if *c == 0 {
                    continue;
                }
                let shade = 255.0 * (1.0 - *c as f64 / total);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade:.0},{shade:.0},255)"/>"#,
                    40.0 + i as f64 * cw,
                    30.0 + h - (b + 1) as f64 * ch,
                    cw,
                    ch
                );
            }
        }
        let _ = writeln!(s, r#"<rect x="40" y="30" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">logging step</text>"#, 40.0 + w / 2.0, h + 55.0);
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("bin_usage.csv"), self.to_csv())?;
        fs::write(dir.join("bin_usage.svg"), self.to_svg())?;
        Ok(())
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    )
}

/// One line panel (an SVG group, 400x300), y divided by its largest value.
fn line_panel(title: &str, xlabel: &str, series: &[Series]) -> String {
    let (w, h, ml, mt) = (320.0, 220.0, 50.0, 30.0);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let ymax = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax } else { 1.0 };
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| mt + h - (y / ymax) * h;
    let mut s = String::new();
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{title}</text>"#, ml + w / 2.0);
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, ml + w / 2.0, mt + h + 30.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x0}</text>"#, ml, mt + h + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x1}</text>"#, ml + w, mt + h + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1</text>"#, ml - 4.0, mt + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, ml - 4.0, mt + h);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, ml + 8.0, mt + 14.0 + 14.0 * i as f64, ser.label);
    }
    s
}

fn two_panels(left: &str, right: &str) -> String {
    let mut s = svg_open(840.0, 300.0);
    let _ = writeln!(s, "<g>\n{left}</g>");
    let _ = writeln!(s, "<g transform=\"translate(420,0)\">\n{right}</g>");
    s.push_str("</svg>\n");
    s
}
