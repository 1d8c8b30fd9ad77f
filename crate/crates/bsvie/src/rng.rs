//! Counter-based random number generation.
//!
//! Every draw is a pure function of `(seed, stream, indices...)`, so path
//! generation is reproducible regardless of thread count or evaluation
//! order. Uniforms come from chained splitmix64 finalizer rounds; normals
//! from the Wichura AS241 inverse CDF (deterministic, no rejection step).

/// splitmix64 finalizer: a well-mixed 64-bit permutation.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Keyed hash of up to four counter words.
#[inline]
pub fn hash_counters(seed: u64, stream: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix(seed);
    h = mix(h ^ stream.wrapping_mul(0xd1342543de82ef95));
    h = mix(h ^ a);
    h = mix(h ^ b);
    mix(h ^ c)
}

/// Uniform in the open interval (0, 1): top 53 bits, offset by half an ulp.
#[inline]
pub fn u64_to_open01(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal quantile, Wichura's algorithm AS241 (PPND16).
/// Relative accuracy about 1e-16 over (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0,1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(r, &A_CENTRAL) / horner(r, &B_CENTRAL);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(r, &A_TAIL) / horner(r, &B_TAIL)
    } else {
        let r = r - 5.0;
        horner(r, &A_FAR) / horner(r, &B_FAR)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn horner(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[allow(clippy::excessive_precision)]
const A_CENTRAL: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const B_CENTRAL: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const A_TAIL: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const B_TAIL: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const A_FAR: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const B_FAR: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Standard normal draw for counter tuple `(stream, a, b, c)` under `seed`.
#[inline]
pub fn normal_at(seed: u64, stream: u64, a: u64, b: u64, c: u64) -> f64 {
    inverse_normal_cdf(u64_to_open01(hash_counters(seed, stream, a, b, c)))
}

/// Uniform in [lo, hi) for counter tuple `(stream, a, b, c)` under `seed`.
#[inline]
pub fn uniform_at(seed: u64, stream: u64, a: u64, b: u64, c: u64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * u64_to_open01(hash_counters(seed, stream, a, b, c))
}

/// Reserved stream ids. Training, validation and evaluation paths never
/// share a stream.
pub mod streams {
    pub const TRAIN: u64 = 0;
    pub const VALIDATION: u64 = 1;
    pub const EVALUATION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const STABILITY: u64 = 5;
}

/// Deterministic Fisher-Yates permutation of `0..n`, keyed by (seed, tag).
pub fn permutation(seed: u64, tag: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let r = hash_counters(seed, streams::SHUFFLE, tag, i as u64, 0);
        let j = (r % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_counters_same_value() {
        assert_eq!(normal_at(7, 0, 1, 2, 3).to_bits(), normal_at(7, 0, 1, 2, 3).to_bits());
        assert_ne!(normal_at(7, 0, 1, 2, 3).to_bits(), normal_at(8, 0, 1, 2, 3).to_bits());
        assert_ne!(normal_at(7, 0, 1, 2, 3).to_bits(), normal_at(7, 1, 1, 2, 3).to_bits());
    }

    #[test]
    fn quantile_matches_known_points() {
        // Reference values of the standard normal quantile.
        assert!((inverse_normal_cdf(0.5) - 0.0).abs() < 1e-15);
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((inverse_normal_cdf(0.025) + 1.959_963_984_540_054).abs() < 1e-9);
        assert!((inverse_normal_cdf(0.841_344_746_068_543) - 1.0).abs() < 1e-9);
        assert!((inverse_normal_cdf(1e-10) + 6.361_340_902_404_056).abs() < 1e-6);
    }

    #[test]
    fn sample_moments_match_standard_normal() {
        let n = 200_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let z = normal_at(42, 9, i, 0, 0);
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn permutation_is_bijective_and_seeded() {
        let p = permutation(3, 0, 1000);
        let mut seen = vec![false; 1000];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert_eq!(p, permutation(3, 0, 1000));
        assert_ne!(p, permutation(3, 1, 1000));
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn open01_stays_strictly_inside_the_unit_interval(bits in any::<u64>()) {
                let u = u64_to_open01(bits);
                prop_assert!(u > 0.0 && u < 1.0);
            }

            #[test]
            fn quantile_is_monotone(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
                prop_assume!(a < 1.0 - 1e-12 && b < 1.0 - 1e-12);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(inverse_normal_cdf(lo) <= inverse_normal_cdf(hi));
            }

            #[test]
            fn permutations_are_bijections(seed in any::<u64>(), tag in any::<u64>(), n in 1usize..500) {
                let p = permutation(seed, tag, n);
                let mut seen = vec![false; n];
                for &i in &p {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
    }

    #[test]
    fn two_seeds_same_law_kolmogorov_smirnov() {
        // Empirical CDFs from two seeds should agree within the KS bound.
        let n = 20_000usize;
        let mut a: Vec<f64> = (0..n).map(|i| normal_at(1, 0, i as u64, 0, 0)).collect();
        let mut b: Vec<f64> = (0..n).map(|i| normal_at(2, 0, i as u64, 0, 0)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut d: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / n as f64).abs());
        }
        // 99.9% two-sample KS critical value: 1.949 * sqrt(2/n)
        let crit = 1.949 * (2.0 / n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} exceeds {crit}");
    }
}
