//! Seeded randomness: the generator, Glorot-uniform init and Bernoulli masks.
//!
//! The generator is ChaCha8 (via `rand_chacha`). Every consumer draws from
//! its own [`Stream`]: the root seed is the ChaCha key, the stream tag picks
//! the ChaCha stream (purpose, layer, branch), and an optional per-example
//! counter selects a disjoint window of 2^32 words inside that stream. Adding
//! a layer or reordering consumers therefore never shifts anyone else's draws,
//! and ChaCha's output is identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Identifies an independent random stream derived from a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// General-purpose default stream.
    Root,
    /// Weight initialization of one branch of one layer.
    Init { layer: u32, branch: u32 },
    /// Noise masks of one branch of one layer for one training example.
    /// For STE layers, `branch == A` addresses the output-dropout mask.
    Mask { layer: u32, branch: u32, example: u64 },
    /// Per-epoch shuffle of the training set.
    Shuffle { epoch: u64 },
    /// Train/validation split.
    Split,
    /// Random probe inputs (collapse verification, analysis).
    Probe { index: u64 },
    /// Synthetic data generation.
    Data { index: u64 },
}

const WORDS_PER_COUNTER_SHIFT: u32 = 32;
const MAX_COUNTER: u64 = 1 << 36;

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Root => 0,
            Stream::Init { .. } => 1,
            Stream::Mask { .. } => 2,
            Stream::Shuffle { .. } => 3,
            Stream::Split => 4,
            Stream::Probe { .. } => 5,
            Stream::Data { .. } => 6,
        }
    }

    /// ChaCha stream id and word offset for this stream.
    fn position(self) -> (u64, u128) {
        let (layer, branch, counter) = match self {
            Stream::Root | Stream::Split => (0, 0, 0),
            Stream::Init { layer, branch } => (layer, branch, 0),
            Stream::Mask {
                layer,
                branch,
                example,
            } => (layer, branch, example),
            Stream::Shuffle { epoch } => (0, 0, epoch),
            Stream::Probe { index } | Stream::Data { index } => (0, 0, index),
        };
        assert!(layer < (1 << 24), "layer index too large for stream id");
        assert!(counter < MAX_COUNTER, "stream counter overflow");
        let id = (self.tag() << 56) | (u64::from(layer) << 32) | u64::from(branch);
        (id, u128::from(counter) << WORDS_PER_COUNTER_SHIFT)
    }
}

/// Deterministic random number generator (ChaCha8, 64-bit seed).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: Stream,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::for_stream(seed, Stream::Root)
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        let (id, word_pos) = stream.position();
        inner.set_stream(id);
        inner.set_word_pos(word_pos);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer on `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Half-width of the Glorot-uniform interval.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `fan_out x fan_in` matrix with i.i.d. entries uniform on
/// `[-sqrt(6 / (fan_in + fan_out)), sqrt(6 / (fan_in + fan_out))]`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "glorot_uniform: fan_in and fan_out must be positive, got {fan_in} and {fan_out}"
        )));
    }
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Matrix::from_vec(fan_out, fan_in, data)
}

fn check_keep(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "keep probability must be in (0, 1], got {p}"
        )))
    }
}

/// 0/1 matrix whose entries are 1 with probability `p` (the keep probability).
pub fn bernoulli_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Result<Matrix> {
    check_keep(p)?;
    let data = (0..rows * cols)
        .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Vector form of [`bernoulli_mask`].
pub fn bernoulli_vector(len: usize, p: f64, rng: &mut Rng) -> Result<Vector> {
    check_keep(p)?;
    Ok(Vector::from_vec(
        (0..len)
            .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_small_fan_bound_is_one() {
        let mut rng = Rng::new(3);
        let w = glorot_uniform(2, 4, &mut rng).unwrap();
        assert_eq!((w.rows(), w.cols()), (4, 2));
        assert_eq!(glorot_bound(2, 4), 1.0);
        assert!(w.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn glorot_mlp_bound() {
        // sqrt(6 / 5120) evaluated independently: 0.034232659844072...
        assert!((glorot_bound(3072, 2048) - 0.034_232_659_844_072_9).abs() < 1e-15);
    }

    #[test]
    fn glorot_variance_matches_uniform() {
        let mut rng = Rng::new(11);
        let bound = glorot_bound(3, 3);
        let n = 1_000_000;
        let samples: Vec<f64> = (0..n / 9)
            .flat_map(|_| glorot_uniform(3, 3, &mut rng).unwrap().into_vec())
            .collect();
        assert!(samples.iter().all(|v| v.abs() <= bound));
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        let expected = bound * bound / 3.0;
        assert!((var - expected).abs() / expected < 0.02, "var {var} vs {expected}");
    }

    #[test]
    fn glorot_rejects_zero_fan() {
        let mut rng = Rng::new(0);
        assert!(glorot_uniform(0, 3, &mut rng).is_err());
        assert!(glorot_uniform(3, 0, &mut rng).is_err());
    }

    #[test]
    fn keep_all_mask_is_ones() {
        let mut rng = Rng::new(5);
        let m = bernoulli_mask(7, 9, 1.0, &mut rng).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_mask_mean_within_three_standard_errors() {
        let mut rng = Rng::new(17);
        let n = 100_000;
        let m = bernoulli_vector(n, 0.5, &mut rng).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 1.0));
        let mean = m.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn invalid_keep_probabilities() {
        let mut rng = Rng::new(0);
        for p in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(bernoulli_mask(2, 2, p, &mut rng).is_err(), "{p}");
            assert!(bernoulli_vector(2, p, &mut rng).is_err(), "{p}");
        }
    }

    #[test]
    fn equal_seeds_give_identical_sequences() {
        let mut a = Rng::for_stream(9, Stream::Init { layer: 1, branch: 3 });
        let mut b = Rng::for_stream(9, Stream::Init { layer: 1, branch: 3 });
        let wa = glorot_uniform(5, 6, &mut a).unwrap();
        let wb = glorot_uniform(5, 6, &mut b).unwrap();
        assert_eq!(wa.as_slice(), wb.as_slice());
        let ma = bernoulli_mask(5, 6, 0.5, &mut a).unwrap();
        let mb = bernoulli_mask(5, 6, 0.5, &mut b).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn streams_are_distinct() {
        let draw = |s| {
            let mut r = Rng::for_stream(1, s);
            (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        let a = draw(Stream::Init { layer: 0, branch: 0 });
        let b = draw(Stream::Init { layer: 0, branch: 1 });
        let c = draw(Stream::Init { layer: 1, branch: 0 });
        let d = draw(Stream::Mask { layer: 0, branch: 0, example: 0 });
        let e = draw(Stream::Mask { layer: 0, branch: 0, example: 1 });
        let all = [a, b, c, d, e];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j], "{i} {j}");
            }
        }
    }

    #[test]
    fn chacha_output_is_pinned() {
        // Freezes the generator choice: a change of algorithm or key layout
        // would silently change every seeded result in the crate.
        let mut r = Rng::new(0);
        let first = r.next_u64();
        let mut again = Rng::new(0);
        assert_eq!(first, again.next_u64());
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&0u64.to_le_bytes());
        let mut raw = ChaCha8Rng::from_seed(key);
        assert_eq!(first, raw.next_u64());
    }
}
