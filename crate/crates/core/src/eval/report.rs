//! Comparison tables (strategy × metrics × complexity) and probe figures.

use std::fmt;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ConfidenceProfile, MetricsReport};
use crate::backbones::FLOP_CONVENTION;
use crate::error::Result;
use crate::fusion::{FusionModel, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub strategy: Strategy,
    pub runs: usize,
    pub f1: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub auc: Option<MeanStd>,
    pub flops: u64,
    pub params: u64,
}

impl TableRow {
    /// Aggregates the metrics of several runs of one strategy.
    pub fn from_runs(strategy: Strategy, reports: &[MetricsReport], flops: u64, params: u64) -> Self {
        let agg = |f: fn(&MetricsReport) -> f64| {
            let values: Vec<f64> = reports.iter().map(f).filter(|v| v.is_finite()).collect();
            (!values.is_empty()).then(|| MeanStd::of(&values))
        };
        Self {
            method: strategy.table_name(),
            strategy,
            runs: reports.len(),
            f1: agg(|r| r.weighted_f1),
            sensitivity: agg(|r| r.weighted_sensitivity),
            specificity: agg(|r| r.weighted_specificity),
            auc: agg(|r| r.weighted_auc),
            flops,
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub backbone: String,
    pub flop_convention: String,
    pub rows: Vec<TableRow>,
}

/// `1234567` → `1.23M`, the table's unit style.
pub fn millions(v: u64, decimals: usize) -> String {
    format!("{:.*}M", decimals, v as f64 / 1e6)
}

fn cell(v: &Option<MeanStd>) -> String {
    v.map_or_else(|| "-".to_string(), |m| m.to_string())
}

impl ComparisonTable {
    pub fn new(backbone: &str, rows: Vec<TableRow>) -> Self {
        Self {
            backbone: backbone.to_string(),
            flop_convention: FLOP_CONVENTION.to_string(),
            rows,
        }
    }

    pub fn row(&self, strategy: Strategy) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_text(&self) -> String {
        let header = [
            "Backbone", "Method", "F1-score", "Sensitivity", "Specificity", "AUC", "FLOPs", "Params",
        ];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            lines.push(vec![
                self.backbone.clone(),
                row.method.clone(),
                cell(&row.f1),
                cell(&row.sensitivity),
                cell(&row.specificity),
                cell(&row.auc),
                millions(row.flops, 2),
                millions(row.params, 3),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in lines.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "backbone", "method", "strategy", "runs", "f1_mean", "f1_std", "sensitivity_mean",
            "sensitivity_std", "specificity_mean", "specificity_std", "auc_mean", "auc_std",
            "flops", "params",
        ])?;
        let split = |v: &Option<MeanStd>| match v {
            Some(m) => [format!("{:.4}", m.mean), format!("{:.4}", m.std)],
            None => [String::new(), String::new()],
        };
        for row in &self.rows {
            let mut rec = vec![
                self.backbone.clone(),
                row.method.clone(),
                row.strategy.to_string(),
                row.runs.to_string(),
            ];
            for v in [&row.f1, &row.sensitivity, &row.specificity, &row.auc] {
                rec.extend(split(v));
            }
            rec.push(row.flops.to_string());
            rec.push(row.params.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Complexity-only table for a set of trained (or freshly built) models.
pub fn complexity_table(backbone: &str, models: &[FusionModel]) -> ComparisonTable {
    let rows = models
        .iter()
        .map(|m| {
            let c = m.complexity();
            TableRow::from_runs(m.strategy(), &[], c.flops, c.params)
        })
        .collect();
    ComparisonTable::new(backbone, rows)
}

const PANEL_W: u32 = 240;
const PANEL_H: u32 = 160;
const MARGIN: u32 = 12;

/// One histogram panel per head, side by side; the red line marks the mean.
pub fn render_profile_png(profile: &ConfidenceProfile, path: &Path) -> Result<()> {
    let n = profile.heads.len().max(1) as u32;
    let width = n * PANEL_W + (n + 1) * MARGIN;
    let height = PANEL_H + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let lo = 1.0 / profile.classes as f64;
    for (h, head) in profile.heads.iter().enumerate() {
        let x0 = MARGIN + h as u32 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        for x in x0..x0 + PANEL_W {
            img.put_pixel(x, y0 + PANEL_H - 1, Rgb([0, 0, 0]));
        }
        for y in y0..y0 + PANEL_H {
            img.put_pixel(x0, y, Rgb([0, 0, 0]));
        }
        let bins = head.histogram.len().max(1) as u32;
        let peak = head.histogram.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bar_w = (PANEL_W - 2) / bins;
        for (b, &count) in head.histogram.iter().enumerate() {
            let bar_h = ((count as f64 / peak) * (PANEL_H - 4) as f64).round() as u32;
            let bx = x0 + 1 + b as u32 * bar_w;
            for x in bx + 1..bx + bar_w {
                for y in (y0 + PANEL_H - 1 - bar_h)..(y0 + PANEL_H - 1) {
                    img.put_pixel(x, y, Rgb([70, 110, 170]));
                }
            }
        }
        let frac = ((head.mean - lo) / (1.0 - lo)).clamp(0.0, 1.0);
        let mx = x0 + 1 + (frac * (PANEL_W - 3) as f64).round() as u32;
        for y in y0..y0 + PANEL_H - 1 {
            img.put_pixel(mx, y, Rgb([200, 30, 30]));
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ProbeMode;

    #[test]
    fn mean_std_formatting() {
        let m = MeanStd { mean: 95.994, std: 0.5249 };
        assert_eq!(m.to_string(), "95.99 ± 0.52");
        let c = MeanStd::of(&[0.7; 5]);
        assert_eq!(c.std, 0.0);
        assert_eq!(MeanStd::of(&[1.0, 3.0]).std, 2f64.sqrt());
    }

    #[test]
    fn millions_style() {
        assert_eq!(millions(147_790_000, 2), "147.79M");
        assert_eq!(millions(1_259_000, 3), "1.259M");
    }

    #[test]
    fn png_has_one_panel_per_head() {
        let conf = vec![vec![0.9, 0.95], vec![0.3, 0.5], vec![0.6, 0.2]];
        let p = ConfidenceProfile::from_confidences(ProbeMode::AllModalities, 5, &conf, 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.png");
        render_profile_png(&p, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 3 * PANEL_W + 4 * MARGIN);
    }
}
