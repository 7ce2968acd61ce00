//! Paired glyph images: the glyph identity is shared, the background color
//! (first image) and the glyph color (second image) are exclusive.
//!
//! Each image draws its own position, so the two
//! images of a pair are distinct instances of the same glyph.

use super::{pixel_rng, Rgb};
use rand::Rng;

pub const NUM_GLYPHS: usize = 10;
pub const NUM_COLORS: usize = 12;
const MASK: usize = 8;

#[rustfmt::skip]
const GLYPH_ROWS: [[&str; MASK]; NUM_GLYPHS] = [
    ["..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"],
    ["...##...", "..###...", "...##...", "...##...", "...##...", "...##...", ".######.", "........"],
    ["..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"],
    [".#####..", ".....##.", ".....##.", "..####..", ".....##.", ".....##.", ".#####..", "........"],
    ["....##..", "...###..", "..#.##..", ".#..##..", ".######.", "....##..", "....##..", "........"],
    [".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"],
    ["..####..", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"],
    [".######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "........"],
    ["..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"],
    ["..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", "..###...", "........"],
];

/// The 8x8 binary mask of glyph `g`, row-major.
pub fn glyph_mask(g: usize) -> [[bool; MASK]; MASK] {
    let mut m = [[false; MASK]; MASK];
    for (r, row) in GLYPH_ROWS[g].iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            m[r][c] = ch == b'#';
        }
    }
    m
}

/// Twelve evenly spaced hues; none is black or white.
pub fn glyph_palette() -> Vec<Rgb> {
    (0..NUM_COLORS)
        .map(|i| super::hsv(i as f32 * 30.0, 0.85, 0.9))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphPairConfig {
    pub size: usize,
    pub seed: u64,
    /// Render both images like the first one (glyph on colored background),
    /// so one encoder can serve both domains.
    pub single_domain: bool,
}

impl Default for GlyphPairConfig {
    fn default() -> Self {
        GlyphPairConfig {
            size: 32,
            seed: 0,
            single_domain: false,
        }
    }
}

/// Where a glyph lands: each mask cell becomes a `scale x scale` block and
/// the mask's top-left corner sits at `(top, left)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub scale: usize,
    pub top: usize,
    pub left: usize,
}

impl Placement {
    /// Mask filling three quarters of the image, centered.
    pub fn centered(size: usize) -> Self {
        let scale = (size * 3 / 4 / MASK).max(1);
        let offset = size.saturating_sub(MASK * scale) / 2;
        Placement {
            scale,
            top: offset,
            left: offset,
        }
    }

    /// Every placement the generator can draw for `size`-pixel images: the
    /// centered cell size at any position that keeps the mask inside.
    pub fn all(size: usize) -> Vec<Placement> {
        let scale = Placement::centered(size).scale;
        let room = size.saturating_sub(MASK * scale);
        let mut out = Vec::new();
        for top in 0..=room {
            for left in 0..=room {
                out.push(Placement { scale, top, left });
            }
        }
        out
    }

    fn sample(size: usize, rng: &mut impl Rng) -> Self {
        let scale = Placement::centered(size).scale;
        let room = size.saturating_sub(MASK * scale);
        Placement {
            scale,
            top: rng.gen_range(0..=room),
            left: rng.gen_range(0..=room),
        }
    }
}

/// Labels per image: `[glyph, color]`.
pub fn gen_glyph_pair(config: &GlyphPairConfig, index: u64) -> (Vec<f32>, Vec<f32>, [i32; 2], [i32; 2]) {
    let mut rng = pixel_rng(config.seed, index);
    let glyph = rng.gen_range(0..NUM_GLYPHS);
    let cx = rng.gen_range(0..NUM_COLORS);
    let cy = rng.gen_range(0..NUM_COLORS);
    let px = Placement::sample(config.size, &mut rng);
    let py = Placement::sample(config.size, &mut rng);
    let palette = glyph_palette();
    let white = [1.0, 1.0, 1.0];
    let black = [0.0, 0.0, 0.0];
    let x = render_glyph(config.size, glyph, white, palette[cx], px);
    let y = if config.single_domain {
        render_glyph(config.size, glyph, white, palette[cy], py)
    } else {
        render_glyph(config.size, glyph, palette[cy], black, py)
    };
    (x, y, [glyph as i32, cx as i32], [glyph as i32, cy as i32])
}

pub fn render_glyph(size: usize, glyph: usize, fg: Rgb, bg: Rgb, at: Placement) -> Vec<f32> {
    let mask = glyph_mask(glyph);
    let cell = |v: usize, origin: usize| (v >= origin && (v - origin) / at.scale < MASK).then(|| (v - origin) / at.scale);
    let mut img = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        for c in 0..size {
            let on = match (cell(r, at.top), cell(c, at.left)) {
                (Some(i), Some(j)) => mask[i][j],
                _ => false,
            };
            img.extend_from_slice(if on { &fg } else { &bg });
        }
    }
    img
}
