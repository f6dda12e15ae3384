use std::path::Path;

use crate::error::{Error, Result};
use crate::synthworld::scene::{SceneSpec, BACKGROUND, CANVAS};

pub const CHANNELS: usize = 3;
pub const PIXELS: usize = CANVAS * CANVAS * CHANNELS;

/// `16 x 16 x 3` image, row-major, channels last, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    data: Vec<f32>,
}

impl Image {
    pub fn filled(v: f32) -> Self {
        Self {
            data: vec![v; PIXELS],
        }
    }

    pub fn gray() -> Self {
        Self::filled(BACKGROUND)
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != PIXELS {
            return Err(Error::Shape(format!("image needs {PIXELS} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * CANVAS + c) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        let i = (r * CANVAS + c) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// 8-bit PNG, `round(255 * v)` after clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            CANVAS as u32,
            CANVAS as u32,
            image::ColorType::Rgb8,
        )?;
        Ok(())
    }
}

/// Deterministic raster of a scene on the gray background.
pub fn render_scene(spec: &SceneSpec) -> Image {
    let mut img = Image::gray();
    for (side, obj) in spec.objects().into_iter().enumerate() {
        let mask = obj.shape.mask(side);
        let rgb = obj.color.rgb();
        for (p, &on) in mask.iter().enumerate() {
            if on {
                img.set_pixel(p / CANVAS, p % CANVAS, rgb);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::scene::*;

    fn count_color(img: &Image, side: usize, rgb: [f32; 3]) -> usize {
        let cols = side * CANVAS / 2..(side + 1) * CANVAS / 2;
        (0..CANVAS)
            .flat_map(|r| cols.clone().map(move |c| (r, c)))
            .filter(|&(r, c)| img.pixel(r, c) == rgb)
            .count()
    }

    #[test]
    fn red_square_blue_circle() {
        let spec = SceneSpec::pair(
            ObjectSpec::new(Color::Red, Shape::Square),
            ObjectSpec::new(Color::Blue, Shape::Circle),
        )
        .unwrap();
        let img = render_scene(&spec);
        // left half: exactly the 6x6 box rows 5..=10, cols 1..=6 is red
        for r in 0..CANVAS {
            for c in 0..CANVAS / 2 {
                let inside = (5..=10).contains(&r) && (1..=6).contains(&c);
                let expected = if inside { [1.0, 0.0, 0.0] } else { [0.5; 3] };
                assert_eq!(img.pixel(r, c), expected, "pixel ({r}, {c})");
            }
        }
        assert_eq!(count_color(&img, 0, [1.0, 0.0, 0.0]), 36);
        assert_eq!(count_color(&img, 1, [0.0, 0.0, 1.0]), 24);
        assert_eq!(img, render_scene(&spec));
    }

    #[test]
    fn every_object_has_enough_pixels() {
        for obj in ObjectSpec::all() {
            let img = render_scene(&SceneSpec::single(obj));
            assert!(count_color(&img, 0, obj.color.rgb()) >= 12, "{obj}");
        }
    }

    #[test]
    fn shape_pixel_counts() {
        let count = |s: Shape| s.mask(0).iter().filter(|&&b| b).count();
        assert_eq!(count(Shape::Square), 36);
        assert_eq!(count(Shape::Circle), 24);
        assert_eq!(count(Shape::Triangle), 24);
    }
}
