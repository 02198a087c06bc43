//! Objective evaluation: timbre-embedding cosine similarity, F0 frame
//! error, comparison figures, and the metric report schema.

use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::{invalid_input, Result};

/// Gross-pitch-error bound in cents: a voiced frame whose predicted pitch
/// deviates by more than this counts as an error frame.
pub const FFE_CENTS_THRESHOLD: f64 = 50.0;

/// Cosine similarity of two embeddings, evaluated in f64.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    let av: Vec<f64> = a.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let bv: Vec<f64> = b.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    if av.len() != bv.len() {
        return Err(crate::shape_mismatch!("embeddings of {} vs {} dims", av.len(), bv.len()));
    }
    let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Err(invalid_input!("cosine of a zero vector is undefined"));
    }
    let dot: f64 = av.iter().zip(&bv).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// F0 frame error: the fraction of frames whose voicing decision mismatches
/// or whose pitch, when both sides are voiced, deviates by more than
/// [`FFE_CENTS_THRESHOLD`] cents.
pub fn ffe(f0_pred: &[f32], uv_pred: &[u8], f0_gt: &[f32], uv_gt: &[u8]) -> Result<f64> {
    let n = f0_gt.len();
    if f0_pred.len() != n || uv_pred.len() != n || uv_gt.len() != n {
        return Err(crate::shape_mismatch!(
            "contour lengths {} / {} / {} / {}",
            f0_pred.len(),
            uv_pred.len(),
            n,
            uv_gt.len()
        ));
    }
    if n == 0 {
        return Err(invalid_input!("no frames to score"));
    }
    let mut errors = 0usize;
    for i in 0..n {
        let vp = uv_pred[i] != 0;
        let vg = uv_gt[i] != 0;
        if vp != vg {
            errors += 1;
        } else if vp && vg {
            let fp = f0_pred[i] as f64;
            let fg = f0_gt[i] as f64;
            if fp <= 0.0 || fg <= 0.0 {
                errors += 1;
                continue;
            }
            let cents = 1200.0 * (fp / fg).log2();
            if cents.abs() > FFE_CENTS_THRESHOLD {
                errors += 1;
            }
        }
    }
    Ok(errors as f64 / n as f64)
}

/// One panel of a comparison figure.
pub struct PlotPanel<'a> {
    pub label: &'a str,
    pub mel: &'a MelSpectrogram,
    pub f0: &'a [f32],
}

/// Vertical pixels per mel bin.
const CELL: usize = 2;
/// Pixel rows separating panels.
const MARGIN: usize = 6;
/// Side length of the label tag square in a panel's top-left corner.
const TAG: usize = 8;
const BACKGROUND: [u8; 3] = [16, 16, 16];
const SEPARATOR: [u8; 3] = [40, 40, 40];
const CONTOUR: [u8; 3] = [255, 0, 0];
/// Three-stop heatmap gradient, low to high.
const STOPS: [[u8; 3]; 3] = [[13, 8, 135], [237, 121, 83], [240, 249, 33]];

fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let (lo, hi, t) =
        if v < 0.5 { (STOPS[0], STOPS[1], v * 2.0) } else { (STOPS[1], STOPS[2], v * 2.0 - 1.0) };
    let mut c = [0u8; 3];
    for i in 0..3 {
        c[i] = (lo[i] as f64 + (hi[i] as f64 - lo[i] as f64) * t).round() as u8;
    }
    c
}

fn label_tag(label: &str) -> [u8; 3] {
    // Stable FNV-1a hash of the label, spread over the color cube.
    let mut h: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    [(h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40, h as u8 | 0x40]
}

/// Pixel row (from the panel top) of an f0 value: linear in `log2(f0)`
/// between [`crate::dsp::F0_MIN`] and [`crate::dsp::F0_MAX`], higher pitch
/// higher on the panel.
pub fn contour_row(f0_hz: f64, panel_height: usize) -> usize {
    let lo = crate::dsp::F0_MIN.log2();
    let hi = crate::dsp::F0_MAX.log2();
    let norm = ((f0_hz.max(1.0).log2() - lo) / (hi - lo)).clamp(0.0, 1.0);
    (panel_height - 1) - (norm * (panel_height - 1) as f64).round() as usize
}

/// Render labeled mel heatmaps with overlaid pitch contours, stacked
/// vertically in input order, to a PNG. Identical inputs produce identical
/// bytes; each panel carries a color tag derived from its label.
pub fn plot_comparison(panels: &[PlotPanel], path: &Path) -> Result<()> {
    if panels.is_empty() {
        return Err(invalid_input!("no panels to plot"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in panels {
        if p.f0.len() != p.mel.frames() {
            return Err(crate::shape_mismatch!(
                "panel {:?}: {} f0 frames vs {} mel frames",
                p.label,
                p.f0.len(),
                p.mel.frames()
            ));
        }
        if p.mel.frames() == 0 {
            return Err(invalid_input!("panel {:?} is empty", p.label));
        }
        for &v in p.mel.raw() {
            lo = lo.min(v as f64);
            hi = hi.max(v as f64);
        }
    }
    let range = (hi - lo).max(1e-9);

    let width = panels.iter().map(|p| p.mel.frames()).max().unwrap();
    let panel_h = panels[0].mel.bins() * CELL;
    let height = panels.len() * panel_h + (panels.len() - 1) * MARGIN;
    let mut img = image::RgbImage::from_pixel(
        width as u32,
        height as u32,
        image::Rgb(BACKGROUND),
    );

    for (pi, p) in panels.iter().enumerate() {
        let top = pi * (panel_h + MARGIN);
        if pi > 0 {
            for dy in 0..MARGIN {
                for x in 0..width {
                    img.put_pixel(x as u32, (top - MARGIN + dy) as u32, image::Rgb(SEPARATOR));
                }
            }
        }
        let bins = p.mel.bins();
        for frame in 0..p.mel.frames() {
            for bin in 0..bins {
                let v = (p.mel.at(frame, bin) as f64 - lo) / range;
                let color = heat_color(v);
                // Low bins at the bottom of the panel.
                let y0 = top + (bins - 1 - bin) * CELL;
                for dy in 0..CELL {
                    img.put_pixel(frame as u32, (y0 + dy) as u32, image::Rgb(color));
                }
            }
        }
        for (frame, &hz) in p.f0.iter().enumerate() {
            if hz > 0.0 {
                let row = contour_row(hz as f64, panel_h);
                img.put_pixel(frame as u32, (top + row) as u32, image::Rgb(CONTOUR));
                if row + 1 < panel_h {
                    img.put_pixel(frame as u32, (top + row + 1) as u32, image::Rgb(CONTOUR));
                }
            }
        }
        let tag = label_tag(p.label);
        for dy in 0..TAG.min(panel_h) {
            for dx in 0..TAG.min(width) {
                img.put_pixel(dx as u32, (top + dy) as u32, image::Rgb(tag));
            }
        }
    }

    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| invalid_input!("writing figure {path:?}: {e}"))?;
    Ok(())
}

/// Per-sample metric row in a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub cos: f64,
    pub ffe: f64,
}

/// Evaluation report written by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub checkpoint: String,
    pub split: String,
    pub cos: f64,
    pub ffe: f64,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.cos) {
            return Err(invalid_input!("cos {} outside [-1, 1]", self.cos));
        }
        if !(0.0..=1.0).contains(&self.ffe) {
            return Err(invalid_input!("ffe {} outside [0, 1]", self.ffe));
        }
        for s in &self.per_sample {
            if !(-1.0..=1.0).contains(&s.cos) || !(0.0..=1.0).contains(&s.ffe) {
                return Err(invalid_input!("sample {} metrics out of range", s.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: MetricReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }
}
