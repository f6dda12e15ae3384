//! Distribution drift between image sets via pooled-color features.

use crate::error::{Error, Result};
use crate::numkit::{frechet_gaussian_distance, GaussianStats};
use crate::synthworld::{Image, CANVAS};

/// Side of the pooled feature grid.
pub const POOL: usize = 4;
pub const FEATURE_DIM: usize = POOL * POOL * 3;
pub const MIN_IMAGES: usize = 16;

/// Mean RGB over each cell of a 4x4 grid, flattened row-major.
pub fn pooled_features(image: &Image) -> Vec<f64> {
    let cell = CANVAS / POOL;
    let mut out = vec![0.0; FEATURE_DIM];
    for r in 0..CANVAS {
        for c in 0..CANVAS {
            let px = image.pixel(r, c);
            let base = ((r / cell) * POOL + c / cell) * 3;
            for ch in 0..3 {
                out[base + ch] += px[ch] as f64;
            }
        }
    }
    let norm = (cell * cell) as f64;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

pub fn feature_stats(images: &[Image]) -> Result<GaussianStats> {
    if images.len() < MIN_IMAGES {
        return Err(Error::Config(format!(
            "need at least {MIN_IMAGES} images per set, got {}",
            images.len()
        )));
    }
    let feats: Vec<Vec<f64>> = images.iter().map(pooled_features).collect();
    GaussianStats::fit(&feats)
}

/// Fréchet distance between Gaussian fits of pooled features.
pub fn fid_proxy(generated: &[Image], reference: &[Image]) -> Result<f64> {
    fid_proxy_against(generated, &feature_stats(reference)?)
}

/// Same as [`fid_proxy`] with precomputed reference statistics.
pub fn fid_proxy_against(generated: &[Image], reference: &GaussianStats) -> Result<f64> {
    frechet_gaussian_distance(&feature_stats(generated)?, reference)
}
