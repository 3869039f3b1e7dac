//! Counter-based random streams.
//!
//! A variate is addressed by `(seed, purpose, particle, step, component)`
//! rather than by its position in a sequence, so any evaluation order
//! (sequential, parallel, partial) sees the same numbers.
//!
//! Layout: the seed keys a ChaCha8 generator, `(purpose, particle)` selects
//! the 64-bit stream id and `(step, component)` selects a 4-word slot inside
//! that stream. Normals use Box–Muller (cosine branch) on the two 64-bit
//! words of the slot:
//!
//! ```text
//! u1 = 1 - (w0 >> 11) * 2^-53        in (0, 1]
//! u2 =     (w1 >> 11) * 2^-53        in [0, 1)
//! z  = sqrt(-2 ln u1) * cos(2 pi u2)
//! ```

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::scalar::Real;

const UNIT: f64 = 1.0 / (1u64 << 53) as f64;
const WORDS_PER_SLOT: u128 = 4;
const MAX_PARTICLE: u64 = (1 << 56) - 1;

/// What a variate is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    InitPosition = 1,
    InitVelocity = 2,
    Brownian = 3,
    Weights = 4,
    Selection = 5,
    Coefficients = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub purpose: Purpose,
    pub particle: u64,
    pub step: u32,
    pub component: u32,
}

impl Tag {
    pub fn new(purpose: Purpose, particle: u64, step: u32, component: u32) -> Self {
        Self {
            purpose,
            particle,
            step,
            component,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    proto: ChaCha8Rng,
}

impl PartialEq for SeededStream {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
    }
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            proto: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for an independent sub-experiment (an iteration, a
    /// repetition, ...). Deterministic in `(seed, label)`.
    pub fn derive(&self, label: u64) -> Self {
        Self::new(splitmix64(
            self.seed ^ splitmix64(label.wrapping_add(0x51_7cc1_b727_220a)),
        ))
    }

    fn cursor(&self, purpose: Purpose, particle: u64, step: u32, component: u32) -> ChaCha8Rng {
        debug_assert!(particle <= MAX_PARTICLE);
        let mut rng = self.proto.clone();
        rng.set_stream(((purpose as u64) << 56) | (particle & MAX_PARTICLE));
        let slot = ((step as u128) << 32) | component as u128;
        rng.set_word_pos(slot * WORDS_PER_SLOT);
        rng
    }

    fn uniform_from(rng: &mut ChaCha8Rng) -> f64 {
        let w0 = rng.next_u64();
        let _ = rng.next_u64();
        (w0 >> 11) as f64 * UNIT
    }

    fn normal_from(rng: &mut ChaCha8Rng) -> f64 {
        let w0 = rng.next_u64();
        let w1 = rng.next_u64();
        let u1 = 1.0 - (w0 >> 11) as f64 * UNIT;
        let u2 = (w1 >> 11) as f64 * UNIT;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&self, tag: Tag) -> f64 {
        let mut rng = self.cursor(tag.purpose, tag.particle, tag.step, tag.component);
        Self::uniform_from(&mut rng)
    }

    /// Standard normal.
    pub fn normal(&self, tag: Tag) -> f64 {
        let mut rng = self.cursor(tag.purpose, tag.particle, tag.step, tag.component);
        Self::normal_from(&mut rng)
    }

    /// Fills `out[c]` with the uniform for component `c` of the given slot
    /// row. Identical to calling [`uniform`](Self::uniform) per component.
    pub fn fill_uniform<T: Real>(&self, purpose: Purpose, particle: u64, step: u32, out: &mut [T]) {
        let mut rng = self.cursor(purpose, particle, step, 0);
        for o in out {
            *o = T::lit(Self::uniform_from(&mut rng));
        }
    }

    /// Fills `out[c]` with `scale * Z` for component `c`.
    pub fn fill_normal<T: Real>(
        &self,
        purpose: Purpose,
        particle: u64,
        step: u32,
        scale: T,
        out: &mut [T],
    ) {
        let mut rng = self.cursor(purpose, particle, step, 0);
        for o in out {
            *o = scale * T::lit(Self::normal_from(&mut rng));
        }
    }
}

/// Brownian increment `sqrt(h) Z` in `R^d` for one particle and step.
pub fn gaussian_increment<T: Real>(
    stream: &SeededStream,
    particle: u64,
    step: u32,
    h: T,
    d: usize,
) -> Result<Vec<T>> {
    if h < T::zero() || !h.is_finite() {
        return Err(Error::invalid(
            "h",
            format!("step size {h} must be finite and >= 0"),
        ));
    }
    let mut out = vec![T::zero(); d];
    if h == T::zero() {
        return Ok(out);
    }
    stream.fill_normal(Purpose::Brownian, particle, step, h.sqrt(), &mut out);
    Ok(out)
}
