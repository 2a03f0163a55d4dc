//! Counter-based random streams.
//!
//! Every draw is a pure function of `(base_seed, stream_id, index)`: the
//! Philox4x32-10 block cipher is keyed with the seed and applied to a counter
//! holding the stream id and the draw index. Transcendentals go through
//! `libm` so normal variates are bit-identical across platforms.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
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

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// A deterministic random stream addressed by `(base_seed, stream_id)`.
///
/// The stream is a plain value; `position` is the index of the next draw.
/// Parallel consumers should [`derive`](RngStream::derive) their own stream
/// rather than share one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_id: u64,
    position: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self {
            base_seed,
            stream_id,
            position: 0,
        }
    }

    /// A child stream, disjoint from this one, identified by `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        let id = splitmix64(splitmix64(self.stream_id) ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::new(self.base_seed, id)
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// The raw 128-bit block at `index`, without advancing.
    pub fn block_at(&self, index: u64) -> [u32; 4] {
        philox4x32_10(
            [
                index as u32,
                (index >> 32) as u32,
                self.stream_id as u32,
                (self.stream_id >> 32) as u32,
            ],
            [self.base_seed as u32, (self.base_seed >> 32) as u32],
        )
    }

    fn next_block(&mut self) -> [u32; 4] {
        let b = self.block_at(self.position);
        self.position += 1;
        b
    }

    pub fn next_u64(&mut self) -> u64 {
        let b = self.next_block();
        u64::from(b[0]) | (u64::from(b[1]) << 32)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        // 128-bit multiply-shift; bias is below 2^-64 · bound.
        ((u128::from(self.next_u64()) * bound as u128) >> 64) as usize
    }

    /// Standard normal by Box–Muller on a single counter block.
    pub fn normal(&mut self) -> f64 {
        let b = self.next_block();
        let a = u64::from(b[0]) | (u64::from(b[1]) << 32);
        let c = u64::from(b[2]) | (u64::from(b[3]) << 32);
        let u1 = ((a >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (c >> 11) as f64 * TWO_POW_M53;
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// A uniformly random unit vector in `ℝⁿ`.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v = self.normal_vec(n);
            let len = super::norm(&v);
            if len > 1e-12 {
                return v.into_iter().map(|x| x / len).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(42, 9);
        let mut b = RngStream::new(42, 9);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        let mut c = RngStream::new(43, 9);
        assert_ne!(RngStream::new(42, 9).next_u64(), c.next_u64());
    }

    #[test]
    fn derived_streams_differ() {
        let root = RngStream::new(1, 0);
        let mut a = root.derive(0);
        let mut b = root.derive(1);
        assert_ne!(a.stream_id, b.stream_id);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(root.derive(5), root.derive(5));
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(2024, 1);
        let n = 200_000;
        let xs = rng.normal_vec(n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.015, "{var}");
    }

    #[test]
    fn uniform_range_and_below() {
        let mut rng = RngStream::new(3, 3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.below(7) < 7);
        }
    }
}
