//! Deterministic attribute-binding detector standing in for a VQA judge.

use crate::error::Result;
use crate::synthworld::{Color, Image, ObjectSpec, SceneSpec, Shape, BACKGROUND, BOX, BOX_LEFT, BOX_TOP, CANVAS, PALETTE};

/// Detector thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Minimum Euclidean RGB distance from the background for a foreground pixel.
    pub color_distance: f32,
    pub min_pixels: usize,
    pub min_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            color_distance: 0.15,
            min_pixels: 8,
            min_iou: 0.6,
        }
    }
}

/// What the detector found in one half of the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Detection {
    pub color: Option<Color>,
    pub shape: Option<Shape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectMatch {
    pub expected: ObjectSpec,
    pub detected: Detection,
    pub color_match: bool,
    pub shape_match: bool,
}

impl ObjectMatch {
    pub fn bound(&self) -> bool {
        self.color_match && self.shape_match
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositionScore {
    /// Fraction of objects whose color and shape both match.
    pub value: f64,
    pub objects: Vec<ObjectMatch>,
}

const HALF: usize = CANVAS / 2;

fn nearest_color(rgb: [f32; 3]) -> Color {
    let mut best = (f32::INFINITY, Color::Red);
    for (c, p) in PALETTE {
        let d: f32 = rgb.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Classifies the object in half `side` (0 left, 1 right).
pub fn detect_half(image: &Image, side: usize, cfg: &DetectorConfig) -> Detection {
    let c0 = side * HALF;
    let mut fg = [[false; HALF]; CANVAS];
    let mut votes = [0usize; 8];
    let mut count = 0;
    for (r, row) in fg.iter_mut().enumerate() {
        for (dc, cell) in row.iter_mut().enumerate() {
            let px = image.pixel(r, c0 + dc);
            let dist = px.iter().map(|v| (v - BACKGROUND) * (v - BACKGROUND)).sum::<f32>().sqrt();
            if dist > cfg.color_distance {
                *cell = true;
                count += 1;
                votes[nearest_color(px).index()] += 1;
            }
        }
    }
    if count < cfg.min_pixels {
        return Detection { color: None, shape: None };
    }
    // ties go to the earlier palette entry
    let best = (0..8).fold(0, |b, i| if votes[i] > votes[b] { i } else { b });
    let color = Color::ALL[best];
    let left = BOX_LEFT[side] - c0;
    let mut shape = None;
    let mut best_iou = cfg.min_iou;
    for s in Shape::ALL {
        let (mut inter, mut union) = (0usize, 0usize);
        for (r, row) in fg.iter().enumerate() {
            for (c, &f) in row.iter().enumerate() {
                let inside = (BOX_TOP..BOX_TOP + BOX).contains(&r)
                    && (left..left + BOX).contains(&c)
                    && s.covers(r - BOX_TOP, c - left);
                inter += (f && inside) as usize;
                union += (f || inside) as usize;
            }
        }
        let iou = inter as f64 / union as f64;
        if iou >= best_iou && (shape.is_none() || iou > best_iou) {
            best_iou = iou;
            shape = Some(s);
        }
    }
    Detection {
        color: Some(color),
        shape,
    }
}

/// Scores `image` against `spec` with the default thresholds.
pub fn composition_score(image: &Image, spec: &SceneSpec) -> Result<CompositionScore> {
    composition_score_with(image, spec, &DetectorConfig::default())
}

pub fn composition_score_with(image: &Image, spec: &SceneSpec, cfg: &DetectorConfig) -> Result<CompositionScore> {
    if let Some(bad) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(crate::Error::OutOfRange {
            what: "pixel value",
            value: bad.to_string(),
        });
    }
    let objects: Vec<ObjectMatch> = spec
        .objects()
        .into_iter()
        .enumerate()
        .map(|(side, expected)| {
            let detected = detect_half(image, side, cfg);
            ObjectMatch {
                expected,
                detected,
                color_match: detected.color == Some(expected.color),
                shape_match: detected.shape == Some(expected.shape),
            }
        })
        .collect();
    let value = objects.iter().filter(|o| o.bound()).count() as f64 / objects.len() as f64;
    Ok(CompositionScore { value, objects })
}
