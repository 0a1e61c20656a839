//! Scalar math that works with and without `std`.

use num_traits::Float;

#[inline(always)]
pub fn sin(x: f32) -> f32 {
    Float::sin(x)
}

#[inline(always)]
pub fn cos(x: f32) -> f32 {
    Float::cos(x)
}

#[inline(always)]
pub fn sin_cos(x: f32) -> (f32, f32) {
    Float::sin_cos(x)
}

#[inline(always)]
pub fn exp(x: f32) -> f32 {
    Float::exp(x)
}

#[inline(always)]
pub fn ln(x: f32) -> f32 {
    Float::ln(x)
}

#[inline(always)]
pub fn ln_1p(x: f32) -> f32 {
    Float::ln_1p(x)
}

#[inline(always)]
pub fn sqrt(x: f32) -> f32 {
    Float::sqrt(x)
}

#[inline(always)]
pub fn floor(x: f32) -> f32 {
    Float::floor(x)
}

#[inline(always)]
pub fn ceil(x: f32) -> f32 {
    Float::ceil(x)
}

#[inline(always)]
pub fn round(x: f32) -> f32 {
    Float::round(x)
}

#[inline(always)]
pub fn tan(x: f32) -> f32 {
    Float::tan(x)
}

#[inline(always)]
pub fn log10(x: f64) -> f64 {
    Float::log10(x)
}

#[inline(always)]
pub fn cbrt(x: f64) -> f64 {
    Float::cbrt(x)
}

#[inline(always)]
pub fn exp_m1_f64(x: f64) -> f64 {
    Float::exp_m1(x)
}

#[inline]
pub fn dot(a: crate::Vec3, b: crate::Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn sub(a: crate::Vec3, b: crate::Vec3) -> crate::Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn cross(a: crate::Vec3, b: crate::Vec3) -> crate::Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn length(a: crate::Vec3) -> f32 {
    sqrt(dot(a, a))
}

#[inline]
pub fn normalize(a: crate::Vec3) -> crate::Vec3 {
    let l = length(a);
    [a[0] / l, a[1] / l, a[2] / l]
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        exp(x)
    } else {
        ln_1p(exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + exp(-x))
}

/// Branch-free sine: Cody-Waite reduction by π and an odd polynomial on
/// `[-π/2, π/2]`. Absolute error stays around 1e-7 for `|x| < 1e4`.
#[inline(always)]
pub fn fast_sin(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0; // 1.5 · 2^23
    const PI_HI: f32 = 3.140_625;
    const PI_MID: f32 = 9.675_026e-4;
    const PI_LO: f32 = 1.509_957_9e-7;
    let shifted = x * core::f32::consts::FRAC_1_PI + MAGIC;
    let odd = shifted.to_bits() & 1;
    let k = shifted - MAGIC;
    let r = ((x - k * PI_HI) - k * PI_MID) - k * PI_LO;
    let r2 = r * r;
    let p = -2.505_210_8e-8f32;
    let p = p * r2 + 2.755_731_4e-6;
    let p = p * r2 - 1.984_127e-4;
    let p = p * r2 + 8.333_333e-3;
    let p = p * r2 - 1.666_666_7e-1;
    let s = r + r * r2 * p;
    f32::from_bits(s.to_bits() ^ (odd << 31))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_sin_accuracy() {
        let mut worst = 0.0f64;
        let mut x = -200.0f32;
        while x < 200.0 {
            worst = worst.max((fast_sin(x) as f64 - (x as f64).sin()).abs());
            x += 0.001_37;
        }
        assert!(worst < 3e-7, "max error {worst}");
        assert_eq!(fast_sin(0.0), 0.0);
    }
}
