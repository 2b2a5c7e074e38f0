//! Seeded pseudo-randomness with named, independent streams.
//!
//! The generator is xoshiro256** (Blackman & Vigna), seeded by running
//! SplitMix64 over a 64-bit key. A stream key is derived from the experiment
//! seed and a stream name (FNV-1a hashed), so draws taken from the `"mixup"`
//! stream never shift the sequence seen by `"data"` or `"init"`.
//!
//! Derived quantities:
//!
//! * `uniform()` takes the top 53 bits: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! * `uniform_open()` centres the grid: `((x >> 11) + 0.5) * 2^-53`, in `(0, 1)`.
//! * `normal()` is Box-Muller from two `uniform_open()` draws (no cached spare).
//! * `gamma(a)` is Marsaglia-Tsang for `a >= 1`; for `a < 1` it draws
//!   `Gamma(a + 1) * U^(1/a)`.
//! * `beta(b)` is `X / (X + Y)` with `X, Y ~ Gamma(b, 1)`, clamped into the
//!   open interval.

use crate::error::{Error, Result};

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// xoshiro256** state. Single owner; clone it to fork an identical sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { seed, s }
    }

    /// Generator for the named stream of an experiment seed.
    pub fn stream(seed: u64, name: &str) -> Self {
        let mut k = seed ^ fnv1a(name);
        Rng::new(splitmix64(&mut k))
    }

    /// Generator for the `index`-th sub-stream of a named stream, e.g. one per
    /// Monte-Carlo draw or one per epoch.
    pub fn substream(seed: u64, name: &str, index: u64) -> Self {
        let mut k = seed ^ fnv1a(name);
        let base = splitmix64(&mut k);
        let mut k2 = base ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
        Rng::new(splitmix64(&mut k2))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            let u = self.uniform_open();
            return g * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let (x, v) = loop {
                let x = self.normal();
                let v = 1.0 + c * x;
                if v > 0.0 {
                    break (x, v * v * v);
                }
            };
            let u = self.uniform_open();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Symmetric `Beta(b, b)` draw, strictly inside `(0, 1)`.
    pub fn beta(&mut self, b: f64) -> Result<f64> {
        if b.is_nan() || b <= 0.0 || b.is_infinite() {
            return Err(Error::InvalidHyperparameter(format!(
                "beta must be positive and finite, got {b}"
            )));
        }
        let x = self.gamma(b);
        let y = self.gamma(b);
        let lam = x / (x + y);
        // both gammas can underflow for small shapes; keep the draw interior
        Ok(if lam.is_nan() {
            0.5
        } else {
            lam.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
        })
    }

    /// Fisher-Yates shuffle, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Free-function form of [`Rng::beta`].
pub fn sample_beta(rng: &mut Rng, beta: f64) -> Result<f64> {
    rng.beta(beta)
}
