//! Branch-free hyperbolic tangent.
//!
//! The network spends most of its non-GEMM time in `tanh`; this version
//! compiles to straight-line SIMD code and stays within a few ulp of libm.
//! Small arguments use the rational approximation from Cephes, larger ones
//! `(e - 1) / (e + 1)` with `e = exp(2|x|)` from a range-reduced polynomial.

#![allow(clippy::excessive_precision)]

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const ROUND_SHIFT: f64 = 6_755_399_441_055_744.0;

/// `exp(v)` for `v` in `[0, 45]`.
#[inline(always)]
fn exp_bounded(v: f64) -> f64 {
    let shifted = v * std::f64::consts::LOG2_E + ROUND_SHIFT;
    let n = shifted - ROUND_SHIFT;
    let r = v - n * LN2_HI - n * LN2_LO;
    // Taylor series to degree 13; |r| <= ln2 / 2.
    let mut p: f64 = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p.mul_add(r, c);
    }
    p * f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52)
}

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs().min(22.0);
    let z = a * a;
    let p = (-9.643_991_794_250_522_386_28e-1 * z - 9.928_772_310_019_185_865_64e1) * z
        - 1.614_687_684_417_084_479_52e3;
    let q = ((z + 1.128_116_784_916_329_314_02e2) * z + 2.235_488_390_601_004_485_83e3) * z
        + 4.844_063_053_251_254_860_48e3;
    let e = exp_bounded(2.0 * a);
    let small = a < 0.625;
    let num = if small { (a * z).mul_add(p, a * q) } else { e - 1.0 };
    let den = if small { q } else { e + 1.0 };
    let t = num / den;
    if x.is_nan() {
        x
    } else {
        t.copysign(x)
    }
}

pub fn tanh_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = tanh(*x);
    }
}
