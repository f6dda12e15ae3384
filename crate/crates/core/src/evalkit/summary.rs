//! Score-versus-drift curves and per-category comparison tables.

use std::io::Write;
use std::path::Path;

use crate::correct::ProjectionParams;
use crate::error::{Error, Result};
use crate::numkit::GaussianStats;
use crate::pipeline::{mean, Evaluation, Pipeline, Variant};
use crate::plot::line_chart;
use crate::synthworld::SceneSpec;

use super::fid::fid_proxy_against;

#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffPoint {
    pub tau_fraction: f64,
    pub mean_score: f64,
    pub fid_proxy: f64,
    pub n: usize,
}

/// Sweeps the Switch-Off step in the given order with the same seeds at every
/// point. `reference` holds statistics of clean renders.
pub fn tradeoff_curve(
    pipeline: &Pipeline,
    projection: &ProjectionParams,
    fractions: &[f64],
    scenes: &[SceneSpec],
    seeds: usize,
    base_seed: u64,
    reference: &GaussianStats,
) -> Result<Vec<TradeoffPoint>> {
    if fractions.is_empty() {
        return Err(Error::Empty("tau fractions"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::OutOfRange {
            what: "tau fraction",
            value: f.to_string(),
        });
    }
    fractions
        .iter()
        .map(|&f| {
            let variant = Variant::SwitchOff(projection.clone(), f);
            let eval = pipeline.evaluate(&variant, scenes, seeds, base_seed)?;
            Ok(TradeoffPoint {
                tau_fraction: f,
                mean_score: eval.mean(),
                fid_proxy: fid_proxy_against(&eval.images, reference)?,
                n: eval.scores.len(),
            })
        })
        .collect()
}

pub fn write_tradeoff_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "tau_fraction,mean_score,fid_proxy,n")?;
    for p in points {
        writeln!(f, "{},{:.6},{:.6},{}", p.tau_fraction, p.mean_score, p.fid_proxy, p.n)?;
    }
    f.flush()?;
    Ok(())
}

/// Score (first series) and FID-proxy scaled into [0, 1] (second series).
pub fn plot_tradeoff(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let top = points.iter().map(|p| p.fid_proxy).fold(0.0, f64::max);
    let scale = if top > 0.0 { top } else { 1.0 };
    let score = points.iter().map(|p| (p.tau_fraction, p.mean_score)).collect();
    let fid = points.iter().map(|p| (p.tau_fraction, p.fid_proxy / scale)).collect();
    line_chart(path, &[score, fid])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    /// Both attributes of an object must match.
    All,
    Color,
    Shape,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::All, Category::Color, Category::Shape];

    pub fn name(self) -> &'static str {
        match self {
            Category::All => "all",
            Category::Color => "color",
            Category::Shape => "shape",
        }
    }

    /// Mean per-image score under this category.
    pub fn score(self, eval: &Evaluation) -> f64 {
        mean(eval.scores.iter().map(|s| {
            let hit = s
                .objects
                .iter()
                .filter(|o| match self {
                    Category::All => o.bound(),
                    Category::Color => o.color_match,
                    Category::Shape => o.shape_match,
                })
                .count();
            hit as f64 / s.objects.len().max(1) as f64
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub model_tag: String,
    pub category: Category,
    pub mean_score: f64,
    pub n: usize,
}

/// One row per (model, category), models in the order given.
pub fn comparison_table(
    pipeline: &Pipeline,
    models: &[(String, Variant)],
    scenes: &[SceneSpec],
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<TableRow>> {
    let mut rows = Vec::with_capacity(models.len() * 3);
    for (tag, variant) in models {
        let eval = pipeline.evaluate(variant, scenes, seeds, base_seed)?;
        for cat in Category::ALL {
            rows.push(TableRow {
                model_tag: tag.clone(),
                category: cat,
                mean_score: cat.score(&eval),
                n: eval.scores.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "model_tag,category,mean_score,n")?;
    for r in rows {
        writeln!(f, "{},{},{:.6},{}", r.model_tag, r.category.name(), r.mean_score, r.n)?;
    }
    f.flush()?;
    Ok(())
}
