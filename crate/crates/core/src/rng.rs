//! Counter-based randomness.
//!
//! Every random quantity is a pure function of a [`Key`] and some integer
//! coordinates, so replicas, coupled objects and thread schedules never share
//! hidden state.

use rand::RngCore;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const ODD_A: u64 = 0xD1B5_4A32_D192_ED03;
const ODD_B: u64 = 0xAEF1_7502_108E_F2D9;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Map 64 random bits to a double in `[0, 1)`.
#[inline]
pub fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A splittable key. Deriving children never collides in practice and never
/// consumes state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key(pub u64);

impl Key {
    pub fn new(seed: u64) -> Self {
        Key(mix64(seed ^ 0x5851_F42D_4C95_7F2D))
    }

    #[inline]
    pub fn derive(self, index: u64) -> Key {
        Key(mix64(
            self.0.wrapping_add(GOLDEN) ^ mix64(index.wrapping_mul(ODD_A).wrapping_add(ODD_B)),
        ))
    }

    /// Derive a child from a textual stream tag.
    pub fn tag(self, name: &str) -> Key {
        // FNV-1a
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.derive(h)
    }

    /// Random bits attached to a pair of integer coordinates.
    #[inline]
    pub fn bits2(self, a: i64, b: i64) -> u64 {
        let h = mix64(self.0 ^ (a as u64).wrapping_mul(ODD_A));
        mix64(h.wrapping_add(GOLDEN) ^ (b as u64).wrapping_mul(ODD_B))
    }

    #[inline]
    pub fn unit2(self, a: i64, b: i64) -> f64 {
        to_unit(self.bits2(a, b))
    }

    /// A sequential generator seeded from this key.
    pub fn stream(self) -> StreamRng {
        StreamRng { state: self.0 }
    }

    pub fn seed_value(self) -> u64 {
        self.0
    }
}

/// SplitMix64 sequential generator. Implements [`RngCore`] so the
/// distributions of `rand_distr` can draw from it.
#[derive(Clone, Debug)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    #[inline]
    pub fn unit(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Exp(1) variate by inversion.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        -(1.0 - self.unit()).ln()
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Uniform variates indexed by absolute space-time points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformField {
    key: Key,
}

impl UniformField {
    pub fn new(key: Key) -> Self {
        UniformField { key }
    }

    #[inline]
    pub fn at(&self, x: i64, n: i64) -> f64 {
        self.key.unit2(x, n)
    }

    pub fn key(&self) -> Key {
        self.key
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_is_deterministic() {
        let f = UniformField::new(Key::new(7));
        assert_eq!(f.at(3, 11), f.at(3, 11));
        assert_ne!(f.at(3, 11), f.at(11, 3));
    }

    #[test]
    fn stream_moments() {
        let mut r = Key::new(1).stream();
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u = r.unit();
            s += u;
            s2 += u * u;
        }
        let m = s / n as f64;
        assert!((m - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
        assert!((s2 / n as f64 - 1.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn derived_keys_differ() {
        let k = Key::new(0);
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000u64 {
            assert!(seen.insert(k.derive(i)));
        }
    }
}
