//! Exact rational statistics.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn mean_exact(values: &[f64]) -> BigRational {
    let sum = values.iter().fold(BigRational::zero(), |acc, v| acc + exact(*v));
    sum / BigRational::from_integer(BigInt::from(values.len()))
}

fn sum_sq_dev(values: &[f64], mean: &BigRational) -> BigRational {
    values.iter().fold(BigRational::zero(), |acc, v| {
        let d = exact(*v) - mean;
        acc + &d * &d
    })
}

/// Mean and sample (n − 1) standard deviation, exact until the final
/// square root.
pub fn mean_sample_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let mean = mean_exact(values);
    let std = if values.len() == 1 {
        0.0
    } else {
        let var = sum_sq_dev(values, &mean) / BigRational::from_integer(BigInt::from(values.len() - 1));
        var.to_f64().unwrap().sqrt()
    };
    (mean.to_f64().unwrap(), std)
}

/// Population (n) standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let mean = mean_exact(values);
    let var = sum_sq_dev(values, &mean) / BigRational::from_integer(BigInt::from(values.len()));
    var.to_f64().unwrap().sqrt()
}

/// Decimal string of `x` rounded half-up (away from zero on ties) to
/// `decimals` places, computed on the exact binary value of `x`.
pub fn round_half_up(x: f64, decimals: u32) -> String {
    let scale = BigInt::from(10).pow(decimals);
    let scaled = exact(x.abs()) * BigRational::from_integer(scale.clone());
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let n = (scaled + half).floor().to_integer();
    let int = &n / &scale;
    let frac = (&n % &scale).to_string();
    let sign = if x < 0.0 && !n.is_zero() { "-" } else { "" };
    if decimals == 0 {
        return format!("{sign}{int}");
    }
    format!("{sign}{int}.{frac:0>width$}", width = decimals as usize)
}
