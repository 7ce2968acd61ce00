//! Paired scenes with six factors: floor, wall and object colors (drawn
//! independently per image) plus object scale, shape and orientation
//! (shared by both images of a pair).

use super::{pixel_rng, Rgb};
use rand::Rng;

pub const FACTOR_NAMES: [&str; 6] = ["floor_color", "wall_color", "object_color", "scale", "shape", "orientation"];
pub const CARDINALITIES: [usize; 6] = [10, 10, 10, 8, 4, 15];
pub const SHARED: [bool; 6] = [false, false, false, true, true, true];

const ORIENTATION_STEP_DEG: f32 = 6.0;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Bar,
    Triangle,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Square, Shape::Bar, Shape::Triangle, Shape::Cross];

    /// Whether the point `(u, v)` in the shape's own frame lies inside a
    /// shape of half-size `s`.
    fn contains(self, u: f32, v: f32, s: f32) -> bool {
        match self {
            Shape::Square => u.abs() <= s && v.abs() <= s,
            Shape::Bar => u.abs() <= s && v.abs() <= 0.55 * s,
            Shape::Cross => {
                let w = 0.35 * s;
                (u.abs() <= s && v.abs() <= w) || (v.abs() <= s && u.abs() <= w)
            }
            Shape::Triangle => {
                // equilateral, circumradius 1.2 s, so the inradius is 0.6 s
                let r_in = 0.6 * s;
                [150.0f32, 270.0, 30.0].iter().all(|deg| {
                    let (sn, cs) = deg.to_radians().sin_cos();
                    u * cs + v * sn <= r_in
                })
            }
        }
    }
}

/// Half-size in pixels for scale index `k` (32-pixel images).
fn half_size(k: usize, size: usize) -> f32 {
    (3.0 + 0.8 * k as f32) * size as f32 / 32.0
}

pub fn floor_palette() -> Vec<Rgb> {
    (0..10).map(|i| super::hsv(i as f32 * 36.0, 0.75, 0.5)).collect()
}

pub fn wall_palette() -> Vec<Rgb> {
    (0..10).map(|i| super::hsv(i as f32 * 36.0 + 18.0, 0.4, 0.95)).collect()
}

pub fn object_palette() -> Vec<Rgb> {
    (0..10).map(|i| super::hsv(i as f32 * 36.0, 1.0, 1.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGridConfig {
    pub size: usize,
    pub seed: u64,
}

impl Default for FactorGridConfig {
    fn default() -> Self {
        FactorGridConfig { size: 32, seed: 0 }
    }
}

/// Fraction of each pixel covered by the object, row-major `size * size`.
pub fn object_coverage(size: usize, scale: usize, shape: usize, orientation: usize) -> Vec<f32> {
    let shape = Shape::ALL[shape];
    let s = half_size(scale, size);
    let (sn, cs) = (orientation as f32 * ORIENTATION_STEP_DEG).to_radians().sin_cos();
    let center = size as f32 / 2.0 - 0.5;
    let samples = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    let mut cov = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let py = r as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32 - center;
                    let px = c as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32 - center;
                    // rotate into the shape frame
                    let u = cs * px + sn * py;
                    let v = -sn * px + cs * py;
                    hits += shape.contains(u, v, s) as usize;
                }
            }
            cov.push(hits as f32 / samples);
        }
    }
    cov
}

/// Row where the floor band starts.
pub fn horizon(size: usize) -> usize {
    size * 11 / 16
}

/// Blends the object over the floor and wall bands.
pub fn compose_scene(size: usize, coverage: &[f32], floor: Rgb, wall: Rgb, object: Rgb) -> Vec<f32> {
    let mut img = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        let bg = if r >= horizon(size) { floor } else { wall };
        for c in 0..size {
            let a = coverage[r * size + c];
            for ch in 0..3 {
                img.push(a * object[ch] + (1.0 - a) * bg[ch]);
            }
        }
    }
    img
}

/// Renders one scene from its six factor labels.
pub fn render_scene(size: usize, labels: &[i32; 6]) -> Vec<f32> {
    let [floor, wall, object, scale, shape, orient] = labels.map(|v| v as usize);
    let cov = object_coverage(size, scale, shape, orient);
    compose_scene(size, &cov, floor_palette()[floor], wall_palette()[wall], object_palette()[object])
}

pub fn gen_factor_pair(config: &FactorGridConfig, index: u64) -> (Vec<f32>, Vec<f32>, [i32; 6], [i32; 6]) {
    let mut rng = pixel_rng(config.seed, index);
    let mut draw = |k: usize| rng.gen_range(0..CARDINALITIES[k] as i32);
    let shared = [draw(3), draw(4), draw(5)];
    let mut one = || [draw(0), draw(1), draw(2), shared[0], shared[1], shared[2]];
    let lx = one();
    let ly = one();
    (render_scene(config.size, &lx), render_scene(config.size, &ly), lx, ly)
}
