//! Deterministic weight streams.
//!
//! Every replicate owns a ChaCha8 stream selected by `(master_seed,
//! replicate_id)`; each observation consumes exactly one 64-bit word, so the
//! weight for step `n` sits at a fixed counter position and can be replayed or
//! resumed without regard to execution order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Distribution of the random multipliers applied to replicate gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistribution {
    /// Exp(1): mean 1, variance 1.
    Exponential1,
    /// Poisson(1): mean 1, variance 1.
    Poisson1,
    /// Constant 1. Every replicate then reproduces the main path.
    DegenerateOne,
}

impl WeightDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            WeightDistribution::Exponential1 => "exp1",
            WeightDistribution::Poisson1 => "poisson1",
            WeightDistribution::DegenerateOne => "one",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp1" | "exp" | "exponential" | "exponential1" => Some(WeightDistribution::Exponential1),
            "poisson1" | "poisson" => Some(WeightDistribution::Poisson1),
            "one" | "degenerate" | "degenerate_one" => Some(WeightDistribution::DegenerateOne),
            _ => None,
        }
    }

    /// Maps one open-interval uniform to a weight.
    pub fn from_uniform(&self, u: f64) -> f64 {
        match self {
            WeightDistribution::Exponential1 => -u.ln(),
            WeightDistribution::Poisson1 => poisson1_inverse_cdf(u),
            WeightDistribution::DegenerateOne => 1.0,
        }
    }
}

fn poisson1_inverse_cdf(u: f64) -> f64 {
    let mut k = 0u32;
    let mut pmf = (-1.0f64).exp();
    let mut cdf = pmf;
    while u > cdf && k < 40 {
        k += 1;
        pmf /= k as f64;
        cdf += pmf;
    }
    k as f64
}

/// Uniform on the open interval (0, 1) from the top 52 bits of a word.
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Per-replicate weight generator.
#[derive(Debug, Clone)]
pub struct WeightStream {
    rng: ChaCha8Rng,
}

impl WeightStream {
    pub fn new(master_seed: u64, replicate_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(replicate_id);
        WeightStream { rng }
    }

    /// Positions the stream so the next draw is the weight for 1-based `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(2 * u128::from(step.saturating_sub(1)));
    }

    /// Counter position in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    pub fn next_uniform(&mut self) -> f64 {
        open_unit(self.rng.next_u64())
    }

    pub fn draw(&mut self, dist: WeightDistribution) -> f64 {
        dist.from_uniform(self.next_uniform())
    }
}

pub fn draw_weight(dist: WeightDistribution, stream: &mut WeightStream) -> f64 {
    stream.draw(dist)
}

/// SplitMix64 finalizer over `(seed, a, b)`; used to derive independent seeds
/// for repetitions and data streams.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(dist: WeightDistribution, n: usize) -> (f64, f64, f64) {
        let mut s = WeightStream::new(2024, 1);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut zeros = 0usize;
        for i in 0..n {
            let w = s.draw(dist);
            if w == 0.0 {
                zeros += 1;
            }
            let d = w - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (w - mean);
        }
        (mean, m2 / (n - 1) as f64, zeros as f64 / n as f64)
    }

    #[test]
    fn degenerate_is_one() {
        let mut s = WeightStream::new(1, 1);
        assert!((0..100).all(|_| draw_weight(WeightDistribution::DegenerateOne, &mut s) == 1.0));
    }

    #[test]
    fn exponential_moments() {
        let (mean, var, _) = moments(WeightDistribution::Exponential1, 1_000_000);
        assert!((0.995..=1.005).contains(&mean), "{mean}");
        assert!((0.99..=1.01).contains(&var), "{var}");
    }

    #[test]
    fn poisson_moments() {
        let (mean, var, p0) = moments(WeightDistribution::Poisson1, 1_000_000);
        assert!((0.99..=1.01).contains(&mean), "{mean}");
        assert!((0.99..=1.01).contains(&var), "{var}");
        assert!((0.366..=0.370).contains(&p0), "{p0}");
    }

    #[test]
    fn poisson_inverse_cdf_edges() {
        assert_eq!(poisson1_inverse_cdf(1e-300), 0.0);
        assert_eq!(poisson1_inverse_cdf(0.5), 1.0);
        let top = open_unit(u64::MAX);
        assert!(top < 1.0);
        assert!(poisson1_inverse_cdf(top) <= 40.0);
        assert!(open_unit(0) > 0.0);
    }

    #[test]
    fn seek_replays_counter_position() {
        let mut a = WeightStream::new(9, 4);
        let seq: Vec<f64> = (0..10).map(|_| a.draw(WeightDistribution::Exponential1)).collect();
        let mut b = WeightStream::new(9, 4);
        b.seek(7);
        assert_eq!(b.draw(WeightDistribution::Exponential1), seq[6]);
        assert_eq!(a.word_pos(), 20);
    }

    #[test]
    fn streams_differ_by_replicate_and_seed() {
        let mut a = WeightStream::new(9, 1);
        let mut b = WeightStream::new(9, 2);
        let mut c = WeightStream::new(10, 1);
        let (x, y, z) = (a.next_uniform(), b.next_uniform(), c.next_uniform());
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
    }
}
