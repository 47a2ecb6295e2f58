//! Exact distances over a restricted fixed-point domain.
//!
//! Every value produced by [`component`] is `m · 2⁻⁴⁴` with `|m| < 2⁵⁵`,
//! so differences, squares and dot products of up to [`MAX_DIM`]
//! components are exact in `i128`. The only roundings happen in the final
//! conversion to `f64` and one square root.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;

pub const SCALE_BITS: i32 = 44;
pub const MAX_DIM: usize = 512;

/// A random `f32` in the exact domain: 24-bit mantissa, magnitude < 2¹¹,
/// about one in sixteen exactly zero.
pub fn component(rng: &mut impl Rng) -> f32 {
    if rng.random_range(0..16) == 0 {
        return 0.0;
    }
    let m = rng.random_range(-(1i32 << 24) + 1..(1i32 << 24));
    let e = rng.random_range(-SCALE_BITS..=-13);
    m as f32 * 2f32.powi(e)
}

pub fn vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| component(rng)).collect()
}

/// The integer `x · 2⁴⁴`; panics when `x` is outside the exact domain.
pub fn to_fixed(x: f32) -> i128 {
    let scaled = f64::from(x) * 2f64.powi(SCALE_BITS);
    assert!(scaled.fract() == 0.0 && scaled.abs() < 2f64.powi(55), "{x} outside the exact domain");
    scaled as i128
}

fn fixed(v: &[f32]) -> Vec<i128> {
    assert!(v.len() <= MAX_DIM);
    v.iter().copied().map(to_fixed).collect()
}

fn unscale(x: f64, power: i32) -> f64 {
    x * 2f64.powi(-SCALE_BITS * power)
}

pub fn l1(a: &[f32], b: &[f32]) -> f64 {
    let (a, b) = (fixed(a), fixed(b));
    let sum: i128 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    unscale(sum as f64, 1)
}

pub fn l2_squared_fixed(a: &[f32], b: &[f32]) -> i128 {
    let (a, b) = (fixed(a), fixed(b));
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l2(a: &[f32], b: &[f32]) -> f64 {
    unscale((l2_squared_fixed(a, b) as f64).sqrt(), 1)
}

/// `1 − cos θ`, with the small-angle case taken from the Lagrange identity
/// `‖a‖²‖b‖² − (a·b)² ≥ 0` evaluated exactly. `None` for a zero vector.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Option<f64> {
    let (a, b) = (fixed(a), fixed(b));
    let dot: i128 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na: i128 = a.iter().map(|x| x * x).sum();
    let nb: i128 = b.iter().map(|x| x * x).sum();
    if na == 0 || nb == 0 {
        return None;
    }
    let product = BigInt::from(na) * BigInt::from(nb);
    let norm = product.to_f64().unwrap().sqrt();
    if dot <= 0 {
        return Some(1.0 + (-dot) as f64 / norm);
    }
    let gap = product - BigInt::from(dot) * BigInt::from(dot);
    assert!(!gap.is_negative());
    if gap.is_zero() {
        return Some(0.0);
    }
    // 1 − d/n = (n² − d²) / (n (n + d))
    Some(gap.to_f64().unwrap() / (norm * (norm + dot as f64)))
}

pub fn relative_error(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        (value - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(l1(&[1.0, -2.0], &[0.5, 1.0]), 3.5);
        assert_eq!(l2(&[3.0, 0.0], &[0.0, 4.0]), 5.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 2.0]), Some(1.0));
        assert_eq!(cosine_distance(&[1.0, 1.0], &[-1.0, -1.0]), Some(2.0));
        assert_eq!(cosine_distance(&[1.0, 2.0], &[2.0, 4.0]), Some(0.0));
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]), None);
        // 60°: cos = 1/2
        let d = cosine_distance(&[1.0, 0.0], &[0.5, 0.75f32.sqrt()]).unwrap();
        assert!((d - 0.5).abs() < 1e-7);
    }

    #[test]
    fn components_are_in_domain() {
        let mut rng = crate::rng(1);
        for _ in 0..10_000 {
            to_fixed(component(&mut rng));
        }
    }
}
