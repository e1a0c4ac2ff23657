//! Procedural grayscale scenes for fixtures: a tilted gradient background
//! with overlapping discs, rectangles and a faint sinusoidal texture.

use rand::Rng;

use crate::error::Result;
use crate::imageio::Image;
use crate::rng::{keyed_stream, Domain};

/// Scenes are generated on this intensity scale, like an 8-bit image.
pub const SCENE_PEAK: f64 = 255.0;

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => (x0..=x1).contains(&x) && (y0..=y1).contains(&y),
        }
    }
}

/// Scene number `index` of the family seeded by `seed`.
pub fn scene(seed: u64, index: u64, width: usize, height: usize) -> Result<Image> {
    let mut rng = keyed_stream(seed, Domain::PatchAnchors, index ^ 0x5ce0_e000_0000_0000);
    let (w, h) = (width as f64, height as f64);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let base: f64 = rng.random_range(40.0..120.0);
    let slope: f64 = rng.random_range(30.0..100.0);
    let n_shapes = rng.random_range(3..8);
    let shapes: Vec<(Shape, f64)> = (0..n_shapes)
        .map(|_| {
            let level = rng.random_range(20.0..235.0);
            let shape = if rng.random_bool(0.5) {
                Shape::Disc {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    r: rng.random_range(0.08..0.3) * w.min(h),
                }
            } else {
                let (x0, y0) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.1..0.5) * w,
                    y1: y0 + rng.random_range(0.1..0.5) * h,
                }
            };
            (shape, level)
        })
        .collect();
    let freq: f64 = rng.random_range(0.05..0.25);
    let amp: f64 = rng.random_range(0.0..12.0);
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let (x, y) = (col as f64, row as f64);
            let t = (x / w - 0.5) * gx + (y / h - 0.5) * gy;
            let mut v = base + slope * t;
            for (shape, level) in &shapes {
                if shape.contains(x, y) {
                    v = *level;
                }
            }
            v += amp * (freq * x).sin() * (freq * 0.7 * y).cos();
            pixels.push(v.clamp(0.0, SCENE_PEAK));
        }
    }
    Image::new(width, height, pixels, SCENE_PEAK)
}

/// `count` named scenes, `scene-0000`, `scene-0001`, ...
pub fn corpus(seed: u64, first: u64, count: usize, width: usize, height: usize) -> Result<Vec<(String, Image)>> {
    (first..first + count as u64)
        .map(|i| Ok((format!("scene-{i:04}"), scene(seed, i, width, height)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_varied() {
        let a = scene(1, 0, 48, 32).unwrap();
        assert_eq!(a, scene(1, 0, 48, 32).unwrap());
        assert_ne!(a, scene(1, 1, 48, 32).unwrap());
        assert_eq!((a.width(), a.height()), (48, 32));
        assert!(a.pixels().iter().all(|&v| (0.0..=SCENE_PEAK).contains(&v)));
        let mean = a.pixels().iter().sum::<f64>() / a.pixels().len() as f64;
        let var = a.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.pixels().len() as f64;
        assert!(var > 1.0);
        let c = corpus(1, 5, 3, 16, 16).unwrap();
        assert_eq!(c[0].0, "scene-0005");
        assert_eq!(c[2].1, scene(1, 7, 16, 16).unwrap());
    }
}
