//! Reproducible random streams.
//!
//! A stream is addressed by `(seed, stream_id)`, and work is split into
//! fixed-size chunks. Each chunk's Xoshiro256++ state is hashed from
//! `(seed, stream_id, chunk)` with SplitMix64, so results depend only on the
//! addressing and the chunk partition, never on thread scheduling. Normals come from the ziggurat
//! sampler of `rand_distr`; Wichura's AS241 quantile is kept for inversion.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Address of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A derived stream; used to give sub-tasks of one job disjoint randomness.
    pub fn substream(&self, tag: u64) -> Self {
        let mut s = self.stream_id ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        Self {
            seed: self.seed,
            stream_id: splitmix64(&mut s),
        }
    }

    fn state(&self, chunk: u64) -> [u8; 32] {
        let mut a = self.seed ^ 0x5851_F42D_4C95_7F2D;
        let mut b = self.stream_id;
        let mut c = chunk ^ 0x2545_F491_4F6C_DD1D;
        let mut out = [0u8; 32];
        for (i, word) in out.chunks_exact_mut(8).enumerate() {
            let x = splitmix64(&mut a) ^ splitmix64(&mut b).rotate_left(17 * i as u32 + 5);
            let mut y = x ^ splitmix64(&mut c).rotate_left(29 * i as u32 + 11);
            word.copy_from_slice(&splitmix64(&mut y).to_le_bytes());
        }
        out
    }

    /// Generator for chunk `chunk` of this stream.
    pub fn generator(&self, chunk: u64) -> NormalGen {
        NormalGen {
            rng: Xoshiro256PlusPlus::from_seed(self.state(chunk)),
        }
    }
}

/// Uniform and standard normal draws from one chunk generator.
pub struct NormalGen {
    rng: Xoshiro256PlusPlus,
}

impl NormalGen {
    /// Uniform on the open interval (0,1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

/// Standard normal quantile, Wichura (1988) algorithm AS241 (PPND16).
///
/// Relative accuracy is about 1e-16 over (0,1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;

    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    #[inline]
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]
    }

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= SPLIT2 {
        let r = r - CONST2;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - SPLIT2;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let sf = |x: f64| 0.5 * libm::erfc(x / std::f64::consts::SQRT_2);
        for &p in &[1e-8, 0.001, 0.02, 0.3, 0.5, 0.7, 0.975, 0.999_999] {
            let x = inverse_normal_cdf(p);
            let back = if p < 0.5 { cdf(x) } else { 1.0 - sf(x) };
            assert!((back - p).abs() <= 1e-13 * p.min(1.0 - p).max(1e-3), "p={p} x={x} back={back}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn quantile_reference_values() {
        // High-precision reference quantiles.
        let cases = [
            (0.975, 1.959_963_984_540_054),
            (1e-20, -9.262_340_089_798_408),
            (1e-300, -37.047_096_299_361_2),
            (0.25, -0.674_489_750_196_081_7),
        ];
        for (p, x) in cases {
            let got = inverse_normal_cdf(p);
            assert!((got - x).abs() <= 1e-14 * x.abs(), "p={p} got={got}");
        }
    }

    #[test]
    fn quantile_is_odd() {
        for &p in &[0.25, 0.125, 0.0625, 2f64.powi(-30)] {
            assert_eq!(inverse_normal_cdf(p), -inverse_normal_cdf(1.0 - p));
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = RngStream::new(7, 3);
        let a: Vec<f64> = {
            let mut g = s.generator(0);
            (0..16).map(|_| g.normal()).collect()
        };
        let b: Vec<f64> = {
            let mut g = s.generator(0);
            (0..16).map(|_| g.normal()).collect()
        };
        assert_eq!(a, b);
        let mut g = RngStream::new(7, 4).generator(0);
        let c: Vec<f64> = (0..16).map(|_| g.normal()).collect();
        assert_ne!(a, c);
        let mut g = s.generator(1);
        let d: Vec<f64> = (0..16).map(|_| g.normal()).collect();
        assert_ne!(a, d);
    }

    #[test]
    fn uniform_stays_open() {
        let mut g = RngStream::new(0, 0).generator(0);
        for _ in 0..100_000 {
            let u = g.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut g = RngStream::new(11, 0).generator(0);
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| g.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
