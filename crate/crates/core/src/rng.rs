// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counter-based random streams.
//!
//! Every random draw in the toolkit (fixtures, splits, subsampling) comes from
//! Philox4x32-10 (Salmon et al., SC'11) so that outputs are a pure function of
//! `(seed, stream, index)` and do not depend on platform RNG defaults.
//!
//! Key = (low 32 bits of seed, high 32 bits of seed).
//! Counter = (block index low, block index high, stream, 0).
//! Uniforms join two consecutive u32 words into a u64, keep the top 53 bits
//! and map them to `(bits + 0.5) * 2^-53`, which lies strictly inside (0, 1).
//! Normals are `Φ⁻¹(u)` of one uniform (inverse CDF, no rejection).

use statrs::distribution::{ContinuousCDF, Normal};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Sequential reader over one Philox stream.
#[derive(Debug, Clone)]
pub struct PhiloxStream {
    key: [u32; 2],
    stream: u32,
    block: u64,
    buf: [u32; 4],
    pos: usize,
}

impl PhiloxStream {
    pub fn new(seed: u64, stream: u32) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            stream,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.pos == 4 {
            self.buf = philox4x32_10(
                [self.block as u32, (self.block >> 32) as u32, self.stream, 0],
                self.key,
            );
            self.block += 1;
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    /// Uniform in the open interval (0, 1) with 53 random bits.
    pub fn next_open01(&mut self) -> f64 {
        let hi = u64::from(self.next_u32());
        let lo = u64::from(self.next_u32());
        let bits = ((hi << 32) | lo) >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via inverse CDF.
    pub fn next_normal(&mut self) -> f64 {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        std.inverse_cdf(self.next_open01())
    }

    /// Uniform integer in `0..bound` (bound > 0).
    pub fn next_below(&mut self, bound: usize) -> usize {
        let idx = (self.next_open01() * bound as f64) as usize;
        idx.min(bound - 1)
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i + 1);
            p.swap(i, j);
        }
        p
    }
}
