//! Zero-shot attention logit reweighting through a slot-derived bias matrix.

use std::io::Write;
use std::path::Path;

use crate::encoder::BiasMatrix;
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, Variant};
use crate::synthworld::{PromptTemplate, SceneSpec};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ReweightParams {
    pub neg_big: f32,
    pub pos: f32,
    pub neg_small: f32,
    /// Encoder layers receiving the bias.
    pub layers: Vec<usize>,
}

impl ReweightParams {
    pub fn new(neg_big: f32, pos: f32, neg_small: f32, layers: Vec<usize>) -> Result<Self> {
        let p = Self {
            neg_big,
            pos,
            neg_small,
            layers,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.neg_big <= self.neg_small && self.neg_small <= 0.0 && 0.0 <= self.pos) {
            return Err(Error::Config(format!(
                "reweighting needs neg_big <= neg_small <= 0 <= pos, got ({}, {}, {})",
                self.neg_big, self.pos, self.neg_small
            )));
        }
        if !(self.neg_big.is_finite() && self.pos.is_finite()) {
            return Err(Error::Config("reweighting values must be finite".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.neg_big == 0.0 && self.pos == 0.0 && self.neg_small == 0.0
    }
}

/// The last two layers of an `num_layers`-layer encoder.
pub fn default_layers(num_layers: usize) -> Vec<usize> {
    (num_layers.saturating_sub(2)..num_layers).collect()
}

/// `M[o2,a1] = M[a2,a1] = neg_big`, `M[o2,a2] = M[o1,a1] = pos`,
/// `M[o2,o1] = neg_small`, zero elsewhere.
pub fn build_bias_matrix(template: &PromptTemplate, params: &ReweightParams, n: usize) -> Result<BiasMatrix> {
    params.validate()?;
    let s = template.slots.pair()?;
    if s.o2 >= n {
        return Err(Error::Shape(format!("slot {} outside a {n}-token sequence", s.o2)));
    }
    let mut m = Tensor::zeros(&[n, n]);
    m.set(s.o2, s.a1, params.neg_big);
    m.set(s.a2, s.a1, params.neg_big);
    m.set(s.o2, s.a2, params.pos);
    m.set(s.o1, s.a1, params.pos);
    m.set(s.o2, s.o1, params.neg_small);
    BiasMatrix::new(m, params.layers.clone())
}

/// `neg_big in {-2,-5,-10}`, `pos in {0,1,2}`, `neg_small in {0,-0.5,-1}`.
pub fn default_grid(layers: &[usize]) -> Vec<ReweightParams> {
    let mut out = Vec::with_capacity(27);
    for nb in [-2.0, -5.0, -10.0] {
        for pos in [0.0, 1.0, 2.0] {
            for ns in [0.0, -0.5, -1.0] {
                out.push(ReweightParams::new(nb, pos, ns, layers.to_vec()).expect("grid values are ordered"));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub params: ReweightParams,
    pub mean_score: f64,
    pub n_images: usize,
}

/// Evaluates each candidate on `tuning` (fixed seeds) and returns the best
/// one. Ties go to the smallest `|neg_big|`, then `|pos|`, then `|neg_small|`.
pub fn grid_search_params(
    candidates: &[ReweightParams],
    tuning: &[SceneSpec],
    pipeline: &Pipeline,
    seeds: usize,
    base_seed: u64,
) -> Result<(ReweightParams, Vec<GridRow>)> {
    if candidates.is_empty() {
        return Err(Error::Empty("reweighting candidates"));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for p in candidates {
        let eval = pipeline.evaluate(&Variant::Reweight(p.clone()), tuning, seeds, base_seed)?;
        table.push(GridRow {
            params: p.clone(),
            mean_score: eval.mean(),
            n_images: eval.scores.len(),
        });
    }
    let key = |r: &GridRow| (r.params.neg_big.abs(), r.params.pos.abs(), r.params.neg_small.abs());
    let best = table
        .iter()
        .fold(None::<&GridRow>, |best, r| match best {
            None => Some(r),
            Some(b) if r.mean_score > b.mean_score => Some(r),
            Some(b) if r.mean_score == b.mean_score && key(r) < key(b) => Some(r),
            Some(b) => Some(b),
        })
        .expect("non-empty table");
    Ok((best.params.clone(), table))
}

pub fn write_score_table_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "neg_big,pos,neg_small,mean_score,n_images")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.params.neg_big, r.params.pos, r.params.neg_small, r.mean_score, r.n_images
        )?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReweightEvaluation {
    pub baseline: f64,
    pub reweighted: f64,
    pub n_images: usize,
}

impl ReweightEvaluation {
    pub fn delta(&self) -> f64 {
        self.reweighted - self.baseline
    }
}

/// Paired-seed comparison of reweighted against baseline generation.
pub fn evaluate_reweighting(
    params: &ReweightParams,
    heldout: &[SceneSpec],
    pipeline: &Pipeline,
    seeds: usize,
    base_seed: u64,
) -> Result<ReweightEvaluation> {
    let base = pipeline.evaluate(&Variant::Baseline, heldout, seeds, base_seed)?;
    let rew = pipeline.evaluate(&Variant::Reweight(params.clone()), heldout, seeds, base_seed)?;
    Ok(ReweightEvaluation {
        baseline: base.mean(),
        reweighted: rew.mean(),
        n_images: base.scores.len(),
    })
}
