//! Minimal raster charts (no text) for experiment artifacts.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
pub const SERIES: [Rgb<u8>; 4] = [Rgb([31, 119, 180]), Rgb([214, 39, 40]), Rgb([44, 160, 44]), Rgb([148, 103, 189])];

/// Grayscale-to-heat colormap for `v` in `[0, 1]`.
fn heat(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (v * 2.0).min(1.0)) as u8;
    let g = (255.0 * (v * 2.0 - 1.0).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (1.0 - v) * 0.6) as u8;
    Rgb([r, g, b])
}

/// Heatmap of a row-major `rows x cols` matrix, normalized by its maximum.
pub fn heatmap(path: &Path, values: &[f64], rows: usize, cols: usize, cell: u32) -> Result<()> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut img = RgbImage::from_pixel(cols as u32 * cell, rows as u32 * cell, BG);
    for (k, &v) in values.iter().enumerate() {
        let (r, c) = ((k / cols) as u32, (k % cols) as u32);
        let color = heat(if max > 0.0 { v / max } else { 0.0 });
        for y in 0..cell {
            for x in 0..cell {
                img.put_pixel(c * cell + x, r * cell + y, color);
            }
        }
    }
    img.save(path)?;
    Ok(())
}

fn frame(w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(w, h, BG);
    for x in 10..w - 10 {
        img.put_pixel(x, h - 10, AXIS);
    }
    for y in 10..h - 10 {
        img.put_pixel(10, y, AXIS);
    }
    img
}

/// Grouped bar chart: `series[s][k]` is the height of bar `k` in series `s`.
pub fn bar_chart(path: &Path, series: &[Vec<f64>]) -> Result<()> {
    let groups = series.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    let per = series.len().max(1) as u32;
    let bar = 12u32;
    let w = 20 + groups as u32 * (per * bar + 8) + 10;
    let h = 220u32;
    let mut img = frame(w.max(40), h);
    let max = series.iter().flatten().cloned().fold(0.0, f64::max);
    for (s, vals) in series.iter().enumerate() {
        for (k, &v) in vals.iter().enumerate() {
            let x0 = 14 + k as u32 * (per * bar + 8) + s as u32 * bar;
            let height = if max > 0.0 { ((v / max) * (h - 30) as f64) as u32 } else { 0 };
            for x in x0..x0 + bar - 2 {
                for y in (h - 10 - height)..(h - 10) {
                    img.put_pixel(x, y, SERIES[s % SERIES.len()]);
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// Scatter with connecting lines; every series shares the axes.
pub fn line_chart(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let (w, h) = (320u32, 240u32);
    let mut img = frame(w, h);
    let pts: Vec<(f64, f64)> = series.iter().flatten().cloned().collect();
    if pts.is_empty() {
        img.save(path)?;
        return Ok(());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let to_px = |x: f64, y: f64| {
        let px = 14.0 + (x - x0) / span(x0, x1) * (w - 28) as f64;
        let py = (h - 14) as f64 - (y - y0) / span(y0, y1) * (h - 28) as f64;
        (px, py)
    };
    for (s, line) in series.iter().enumerate() {
        let color = SERIES[s % SERIES.len()];
        for win in line.windows(2) {
            let (a, b) = (to_px(win[0].0, win[0].1), to_px(win[1].0, win[1].1));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                img.put_pixel((a.0 + t * (b.0 - a.0)) as u32, (a.1 + t * (b.1 - a.1)) as u32, color);
            }
        }
        for &(x, y) in line {
            let (px, py) = to_px(x, y);
            for dy in 0..5 {
                for dx in 0..5 {
                    img.put_pixel(px as u32 + dx - 2, py as u32 + dy - 2, color);
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}
