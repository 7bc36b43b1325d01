//! Concentration-parameter resampling with the auxiliary-variable scheme of
//! Escobar & West, extended to grouped data as in Teh et al.'s HDP sampler.
//!
//! All concentrations share a `Gamma(shape, rate)` hyperprior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::{sample_beta, sample_gamma, sample_table_count};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 1.0 }
    }
}

impl GammaPrior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_gamma(self.shape, self.rate, rng)
    }
}

/// One Gibbs step for a group-level concentration `current` given the number
/// of data points in each group and the total table count across groups.
///
/// Empty groups carry no evidence and are skipped.
pub fn resample_group_concentration<R: Rng + ?Sized>(
    current: f64,
    group_totals: &[u32],
    tables: u64,
    prior: GammaPrior,
    rng: &mut R,
) -> f64 {
    let mut shape = prior.shape + tables as f64;
    let mut rate = prior.rate;
    for &n in group_totals.iter().filter(|&&n| n > 0) {
        let n = n as f64;
        let w = sample_beta(current + 1.0, n, rng);
        rate -= w.ln();
        if rng.random::<f64>() * (n + current) < n {
            shape -= 1.0;
        }
    }
    sample_gamma(shape, rate, rng)
}

/// Resamples the total mass of a symmetric Dirichlet prior shared by all groups
/// of a Dirichlet-multinomial layer with `dim` components.
///
/// `cells` holds every (group, component) count in any order; `group_totals`
/// holds the per-group sums. Each iteration redraws the table counts under the
/// current mass before updating it.
pub fn resample_symmetric_mass<R: Rng + ?Sized>(
    mass: f64,
    dim: usize,
    cells: &[u32],
    group_totals: &[u32],
    prior: GammaPrior,
    iterations: usize,
    rng: &mut R,
) -> f64 {
    let mut mass = mass;
    for _ in 0..iterations {
        let per_component = mass / dim as f64;
        let tables: u64 = cells
            .iter()
            .map(|&n| sample_table_count(n, per_component, rng) as u64)
            .sum();
        mass = resample_group_concentration(mass, group_totals, tables, prior, rng);
    }
    mass
}

/// Escobar & West's update for a top-level Dirichlet-process concentration
/// with `clusters` occupied components among `observations` draws.
pub fn resample_dp_concentration<R: Rng + ?Sized>(
    current: f64,
    clusters: usize,
    observations: u64,
    prior: GammaPrior,
    rng: &mut R,
) -> f64 {
    if observations == 0 {
        return prior.sample(rng);
    }
    let aux = sample_beta(current + 1.0, observations as f64, rng);
    let rate = prior.rate - aux.ln();
    let k = clusters as f64;
    let odds = (prior.shape + k - 1.0) / (observations as f64 * rate);
    let mut shape = if rng.random::<f64>() * (1.0 + odds) < odds {
        prior.shape + k
    } else {
        prior.shape + k - 1.0
    };
    if shape <= 0.0 {
        shape = prior.shape + k;
    }
    sample_gamma(shape, rate, rng)
}
