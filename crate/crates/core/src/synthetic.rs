//! Seeded generator for a small digit-style image dataset (8x8 pixels, ten
//! classes). Each example is a 5x7 glyph placed at a random offset with
//! random stroke intensity, dropped stroke pixels, background noise, and a
//! fraction of random labels. Pixels are bytes so the set can be written as
//! IDX files.

use crate::data::Dataset;
use crate::error::Result;
use crate::random::{Rng, Stream};
use crate::tensor::Matrix;

pub const SIDE: usize = 8;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

#[rustfmt::skip]
const GLYPHS: [[&str; GLYPH_H]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

#[derive(Debug, Clone, PartialEq)]
pub struct DigitsConfig {
    pub examples: usize,
    /// Upper bound of the uniform background noise, as a fraction of full intensity.
    pub noise: f64,
    /// Probability that a stroke pixel is dropped.
    pub stroke_dropout: f64,
    /// Probability that the label is replaced by a uniformly random class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for DigitsConfig {
    fn default() -> Self {
        Self {
            examples: 1000,
            noise: 0.3,
            stroke_dropout: 0.25,
            label_noise: 0.3,
            seed: 0,
        }
    }
}

/// Raw images (row-major bytes, `SIDE * SIDE` per example) and labels.
pub struct Digits {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Digits {
    pub fn generate(cfg: &DigitsConfig) -> Self {
        let mut images = Vec::with_capacity(cfg.examples * SIDE * SIDE);
        let mut labels = Vec::with_capacity(cfg.examples);
        for i in 0..cfg.examples {
            let mut rng = Rng::for_stream(cfg.seed, Stream::Data { index: i as u64 });
            let class = rng.below(10);
            let dx = rng.below(SIDE - GLYPH_W + 1);
            let dy = rng.below(SIDE - GLYPH_H + 1);
            let intensity = rng.uniform(0.5, 1.0);
            let mut img = [0.0f64; SIDE * SIDE];
            for (r, row) in GLYPHS[class].iter().enumerate() {
                for (c, ch) in row.bytes().enumerate() {
                    if ch == b'#' && !rng.bernoulli(cfg.stroke_dropout) {
                        img[(r + dy) * SIDE + c + dx] = intensity;
                    }
                }
            }
            for px in &mut img {
                *px += rng.uniform(0.0, cfg.noise);
            }
            images.extend(img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            let label = if rng.bernoulli(cfg.label_noise) { rng.below(10) } else { class };
            labels.push(label as u8);
        }
        Self { images, labels }
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let n = self.labels.len();
        Dataset::new(
            Matrix::from_vec(n, SIDE * SIDE, self.images.iter().map(|&p| f64::from(p)).collect())?,
            self.labels.iter().map(|&l| usize::from(l)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_well_formed() {
        for g in GLYPHS {
            assert!(g.iter().all(|row| row.len() == GLYPH_W));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DigitsConfig { examples: 50, ..Default::default() };
        let a = Digits::generate(&cfg);
        let b = Digits::generate(&cfg);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        let ds = a.to_dataset().unwrap();
        assert_eq!((ds.len(), ds.num_features()), (50, 64));
        assert!(ds.labels.iter().all(|&l| l < 10));
        let c = Digits::generate(&DigitsConfig { seed: 1, ..cfg });
        assert_ne!(a.images, c.images);
    }
}
