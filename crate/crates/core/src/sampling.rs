//! Small sampling primitives shared by the Gibbs samplers.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

/// Draws an index proportional to `weights` given their precomputed `total`.
///
/// A single-option draw consumes no randomness.
#[inline]
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    // Rounding can leave `u` marginally above the last weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Writes `(left[k] + left_prior) * (right[k] + right_prior) * scale[k]` into
/// `out` and returns the sum, accumulated in index order.
#[inline]
pub fn product_weights(
    out: &mut [f64],
    left: &[u32],
    left_prior: f64,
    right: &[u32],
    right_prior: f64,
    scale: &[f64],
) -> f64 {
    for (((o, &a), &b), &c) in out.iter_mut().zip(left).zip(right).zip(scale) {
        *o = (a as f64 + left_prior) * (b as f64 + right_prior) * c;
    }
    out.iter().sum()
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    Beta::new(a, b)
        .expect("beta parameters must be positive and finite")
        .sample(rng)
}

/// Draws from Dirichlet(`params`) by normalizing independent gamma variates.
///
/// Zero parameters yield zero coordinates. Tiny parameters can underflow every
/// gamma draw to zero; the draw is then repeated.
pub fn sample_dirichlet<R: Rng + ?Sized>(params: &[f64], rng: &mut R) -> Vec<f64> {
    assert!(params.iter().any(|&a| a > 0.0), "dirichlet needs a positive parameter");
    loop {
        let draws: Vec<f64> = params
            .iter()
            .map(|&a| if a > 0.0 { sample_gamma(a, 1.0, rng) } else { 0.0 })
            .collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

/// Number of occupied tables after seating `customers` in a Chinese restaurant
/// with concentration `concentration` (the Antoniak distribution).
pub fn sample_table_count<R: Rng + ?Sized>(customers: u32, concentration: f64, rng: &mut R) -> u32 {
    if customers == 0 {
        return 0;
    }
    // The first customer always opens a table.
    let mut tables = 1;
    for seated in 1..customers {
        if rng.random::<f64>() * (concentration + seated as f64) < concentration {
            tables += 1;
        }
    }
    tables
}
