//! Procedural image classes for runs without a downloaded dataset.
//!
//! Class `i` pairs shape `i % shapes` with fill pattern `i / shapes`, so
//! every primitive appears in several classes and features learned on one
//! class subset carry over to the rest. Colors carry no class information:
//! foreground and background colors, position, size, stripe phase and pixel
//! noise are drawn per image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageDataset;
use crate::error::{Error, Result};
use crate::seed;

pub const SHAPES: [&str; 6] = ["disk", "square", "triangle", "cross", "ring", "diamond"];
pub const PATTERNS: [&str; 4] = ["solid", "hstripes", "vstripes", "checker"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub classes: usize,
    pub per_class: usize,
    /// Side length of the square images.
    pub size: usize,
    /// Number of distinct shapes cycled through by the class index.
    pub shapes: usize,
    /// Amplitude of the uniform per-pixel noise, in [0, 1].
    pub noise: f32,
    /// Fraction by which unlit pattern cells dim the foreground.
    pub pattern_contrast: f32,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            classes: 12,
            per_class: 120,
            size: 16,
            shapes: 4,
            noise: 0.1,
            pattern_contrast: 0.4,
            seed: 0,
        }
    }
}

/// Images ordered class by class.
pub fn generate(opts: &SyntheticOptions) -> Result<ImageDataset> {
    if opts.shapes == 0 || opts.shapes > SHAPES.len() {
        return Err(Error::Config(format!("shapes must be in 1..={}", SHAPES.len())));
    }
    if opts.classes == 0 || opts.classes > 255 || opts.classes > opts.shapes * PATTERNS.len() {
        return Err(Error::Config(format!(
            "at most {} distinct classes with {} shapes",
            opts.shapes * PATTERNS.len(),
            opts.shapes
        )));
    }
    if opts.size < 8 {
        return Err(Error::Config("synthetic images need size >= 8".into()));
    }
    let names = (0..opts.classes)
        .map(|i| {
            format!(
                "{}-{}",
                PATTERNS[i / opts.shapes],
                SHAPES[i % opts.shapes]
            )
        })
        .collect();
    let mut ds = ImageDataset::new(names, [3, opts.size, opts.size]);
    let mut buf = vec![0u8; 3 * opts.size * opts.size];
    for class in 0..opts.classes {
        let mut rng = seed::rng(opts.seed, &[0x5359, class as u64]);
        for _ in 0..opts.per_class {
            render(class, opts, &mut rng, &mut buf);
            ds.push(class as u8, &buf);
        }
    }
    Ok(ds)
}

fn inside(shape: usize, dx: f32, dy: f32, r: f32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => ax <= r * 0.85 && ay <= r * 0.85,
        2 => dy <= r * 0.8 && dy >= -r && ax <= (dy + r) * 0.55,
        3 => ax <= r && ay <= r && (ax < r * 0.35 || ay < r * 0.35),
        4 => {
            let d = (dx * dx + dy * dy).sqrt();
            d <= r && d >= r * 0.55
        }
        _ => ax + ay <= r * 1.1,
    }
}

fn lit(pattern: usize, x: f32, y: f32, phase: f32) -> bool {
    let band = |v: f32| ((v + phase) / 2.0).floor() as i32 % 2 == 0;
    match pattern {
        0 => true,
        1 => band(y),
        2 => band(x),
        _ => band(x) == band(y),
    }
}

fn render<R: Rng>(class: usize, opts: &SyntheticOptions, rng: &mut R, out: &mut [u8]) {
    let size = opts.size;
    let s = size as f32;
    let shape = class % opts.shapes;
    let pattern = class / opts.shapes;
    let fg: Vec<f32> = (0..3).map(|_| rng.gen_range(0.45..1.0)).collect();
    let bg: Vec<f32> = (0..3).map(|_| rng.gen_range(0.0..0.35)).collect();
    let r = s * rng.gen_range(0.26..0.36);
    let cx = s / 2.0 + rng.gen_range(-0.14..0.14) * s;
    let cy = s / 2.0 + rng.gen_range(-0.14..0.14) * s;
    let phase = rng.gen_range(0.0..4.0f32);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let on = inside(shape, px - cx, py - cy, r);
            let dim = if lit(pattern, px, py, phase) { 1.0 } else { 1.0 - opts.pattern_contrast };
            for c in 0..3 {
                let v = if on { fg[c] * dim } else { bg[c] };
                let v = v + opts.noise * rng.gen_range(-1.0f32..1.0);
                out[(c * size + y) * size + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let o = SyntheticOptions {
            per_class: 5,
            ..Default::default()
        };
        let a = generate(&o).unwrap();
        assert_eq!(a, generate(&o).unwrap());
        assert_eq!(a.len(), 60);
        assert_eq!(a.class_count(), 12);
        assert_eq!(a.indices_by_class()[3].len(), 5);
        assert_ne!(a, generate(&SyntheticOptions { seed: 1, ..o }).unwrap());
    }

    #[test]
    fn rejects_too_many_classes() {
        let o = SyntheticOptions {
            classes: 30,
            ..Default::default()
        };
        assert!(generate(&o).is_err());
    }
}
