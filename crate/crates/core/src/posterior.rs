//! Smoothed parameter estimates and their running averages.

use crate::table::{Matrix, Tensor3};

/// Resource-over-topic (`phi`), user-over-interest (`psi`) and
/// interest-topic-over-tag (`theta`, indexed `[x][z][t]`) estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub phi: Matrix,
    pub psi: Matrix,
    pub theta: Tensor3,
    pub n_samples_averaged: usize,
}

impl Posterior {
    /// Largest deviation from one over every row of `phi`, `psi` and slice of `theta`.
    pub fn max_normalization_error(&self) -> f64 {
        self.phi
            .max_row_sum_error()
            .max(self.psi.max_row_sum_error())
            .max(self.theta.max_slice_sum_error())
    }
}

/// `sum[g][k] += (counts[g][k] + mass/cols) / (totals[g] + mass)` for every group `g`.
pub(crate) fn add_smoothed_rows(sum: &mut [f64], counts: &[u32], totals: &[u32], cols: usize, mass: f64) {
    let prior = mass / cols as f64;
    for (g, &total) in totals.iter().enumerate() {
        let denom = total as f64 + mass;
        let row = &counts[g * cols..(g + 1) * cols];
        for (s, &c) in sum[g * cols..(g + 1) * cols].iter_mut().zip(row) {
            *s += (c as f64 + prior) / denom;
        }
    }
}

/// Adds the smoothed tag distributions of every group `p` to `sum[p][t]`,
/// reading counts laid out tag-major as `counts[t][p]`.
pub(crate) fn add_smoothed_tag_slices(
    sum: &mut [f64],
    counts: &[u32],
    group_totals: &[u32],
    n_tags: usize,
    eta: f64,
) {
    let n_groups = group_totals.len();
    let prior = eta / n_tags as f64;
    for (p, &total) in group_totals.iter().enumerate() {
        let denom = total as f64 + eta;
        let out = &mut sum[p * n_tags..(p + 1) * n_tags];
        for (t, s) in out.iter_mut().enumerate() {
            *s += (counts[t * n_groups + p] as f64 + prior) / denom;
        }
    }
}

/// Running sum of per-iteration estimates for the finite models.
#[derive(Debug, Clone)]
pub(crate) struct PosteriorSum {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    pub samples: usize,
}

impl PosteriorSum {
    pub fn new(phi_len: usize, psi_len: usize, theta_len: Option<usize>) -> Self {
        Self {
            phi: vec![0.0; phi_len],
            psi: vec![0.0; psi_len],
            theta: theta_len.map(|n| vec![0.0; n]),
            samples: 0,
        }
    }

    pub fn mean(v: Vec<f64>, samples: usize) -> Vec<f64> {
        let n = samples as f64;
        v.into_iter().map(|s| s / n).collect()
    }
}
