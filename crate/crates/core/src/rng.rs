//! Counter-based, splittable random streams.
//!
//! Every value is a pure function of `(seed, stream_id, counter, lane)`, so a
//! stream can be replayed from its coordinates alone. Fixed-mode masks rely on
//! this: the mask for a sample is regenerated from `(layer seed, sample id)`
//! instead of being stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const LANE_MUL: u64 = 0xD1B5_4A32_D192_ED03;
const SPLIT_MUL: u64 = 0xAEF1_7502_108E_F2D9;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "StreamCoords", into = "StreamCoords")]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    key: u64,
}

#[derive(Clone, Serialize, Deserialize)]
struct StreamCoords {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl From<StreamCoords> for RngStream {
    fn from(c: StreamCoords) -> Self {
        Self::at(c.seed, c.stream_id, c.counter)
    }
}

impl From<RngStream> for StreamCoords {
    fn from(s: RngStream) -> Self {
        Self {
            seed: s.seed,
            stream_id: s.stream_id,
            counter: s.counter,
        }
    }
}

fn derive_key(seed: u64, stream_id: u64) -> u64 {
    mix64(seed ^ mix64(stream_id.wrapping_add(GOLDEN)))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0, 0)
    }

    /// Reconstructs a stream from its coordinates.
    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        Self {
            seed,
            stream_id,
            counter,
            key: derive_key(seed, stream_id),
        }
    }

    /// Child stream number `index`. The parent is not advanced; the same
    /// index always yields the same child.
    pub fn split(&self, index: u64) -> Self {
        let child = mix64(mix64(self.stream_id ^ SPLIT_MUL) ^ index.wrapping_mul(GOLDEN).wrapping_add(1));
        Self::at(self.seed, child, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Raw word at an explicit position; does not touch the counter.
    #[inline]
    pub fn word_at(&self, counter: u64, lane: u64) -> u64 {
        let key = self.key;
        let z = key.wrapping_add(counter.wrapping_mul(GOLDEN)) ^ lane.wrapping_mul(LANE_MUL);
        mix64(mix64(z) ^ key)
    }

    #[inline]
    fn unit(word: u64) -> f64 {
        (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, 1)` and standard normal from one counter position.
    #[inline]
    fn uniform_normal_at(&self, counter: u64) -> (f64, f64) {
        let r = Self::unit(self.word_at(counter, 2));
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.word_at(counter, 0) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = Self::unit(self.word_at(counter, 1));
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        (r, z)
    }

    pub fn next_u64(&mut self) -> u64 {
        let w = self.word_at(self.counter, 0);
        self.counter = self.counter.wrapping_add(1);
        w
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        Self::unit(self.next_u64())
    }

    pub fn next_normal(&mut self) -> f64 {
        let (_, z) = self.uniform_normal_at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        z
    }

    /// An independent uniform and standard normal that share one counter
    /// step (used by the partial-Gaussian mask).
    pub fn next_uniform_normal(&mut self) -> (f64, f64) {
        let pair = self.uniform_normal_at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        pair
    }

    /// Integer in `[0, n)`.
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

pub fn draw_uniform(stream: &mut RngStream, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| stream.next_f64()).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub fn draw_normal(stream: &mut RngStream, mean: f64, std: f64, shape: &[usize]) -> Result<Tensor> {
    if std.is_nan() || std < 0.0 || !std.is_finite() || !mean.is_finite() {
        return Err(Error::Domain(format!(
            "normal draw needs finite mean and std >= 0, got mean={mean} std={std}"
        )));
    }
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| mean + std * stream.next_normal()).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}
