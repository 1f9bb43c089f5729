//! Counter-based random numbers for reproducible, partition-invariant simulation.
//!
//! Every trigger gets its own random stream derived from (seed, trigger index) with a
//! Philox4x32-10 block cipher: the 128-bit counter holds (trigger, draw block) and the
//! 64-bit key holds the seed. Draws for trigger t are therefore bit-identical no matter
//! how a run is split into partitions, and a trigger can consume any number of draws
//! without colliding with its neighbours.

const PHILOX_M0: u64 = 0xD251_1F53;
const PHILOX_M1: u64 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// One Philox4x32-10 block: 128-bit counter plus 64-bit key into 128 output bits.
#[inline]
pub fn philox4x32_10(ctr: [u32; 4], key: u64) -> [u32; 4] {
    let mut x = ctr;
    let mut k0 = key as u32;
    let mut k1 = (key >> 32) as u32;
    for _ in 0..10 {
        let p0 = PHILOX_M0 * x[0] as u64;
        let p1 = PHILOX_M1 * x[2] as u64;
        x = [
            (p1 >> 32) as u32 ^ x[1] ^ k0,
            p1 as u32,
            (p0 >> 32) as u32 ^ x[3] ^ k1,
            p0 as u32,
        ];
        k0 = k0.wrapping_add(PHILOX_W0);
        k1 = k1.wrapping_add(PHILOX_W1);
    }
    x
}

/// Random stream for a single trigger.
///
/// Block j of trigger t under seed s is `philox4x32_10([lo(t), hi(t), lo(j), hi(j)], s)`
/// read out as two u64 words `x0 | x1 << 32` then `x2 | x3 << 32`.
#[derive(Clone, Debug)]
pub struct PulseRng {
    key: u64,
    trigger: u64,
    block: u64,
    buf: [u64; 2],
    remaining: u8,
}

impl PulseRng {
    #[inline]
    pub fn new(seed: u64, trigger: u64) -> Self {
        PulseRng {
            key: seed,
            trigger,
            block: 0,
            buf: [0; 2],
            remaining: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        if self.remaining == 0 {
            let ctr = [
                self.trigger as u32,
                (self.trigger >> 32) as u32,
                self.block as u32,
                (self.block >> 32) as u32,
            ];
            let x = philox4x32_10(ctr, self.key);
            self.buf = [
                x[0] as u64 | (x[1] as u64) << 32,
                x[2] as u64 | (x[3] as u64) << 32,
            ];
            self.block += 1;
            self.remaining = 2;
        }
        let word = self.buf[2 - self.remaining as usize];
        self.remaining -= 1;
        word
    }

    /// Uniform double in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n) by the multiply-shift method.
    ///
    /// The modulo bias is below 2^-32 for any n that fits a bin count, which is
    /// orders of magnitude under the statistical resolution of any run here.
    #[inline]
    pub fn below(&mut self, n: u32) -> u32 {
        (((self.next_u64() as u128) * n as u128) >> 64) as u32
    }
}

/// SplitMix64 finalizer, used to derive decorrelated seeds.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Seed for sweep point `index` derived from a master seed.
///
/// Distinct indices give unrelated Philox keys, so sweep points are statistically
/// independent yet fully reproducible from the master seed alone.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}
