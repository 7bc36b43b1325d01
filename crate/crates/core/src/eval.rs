//! Jensen-Shannon divergence, the pairwise-distance deviation between learned
//! and actual resource profiles, and similarity ranking.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::table::Matrix;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

fn plogp(v: f64) -> f64 {
    if v > 0.0 {
        v * v.log2()
    } else {
        0.0
    }
}

/// Base-2 Jensen-Shannon divergence without input checks.
///
/// Per-component terms are summed in sorted order, which makes the value
/// exactly symmetric and exactly invariant under a common permutation of
/// the components.
pub fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut terms: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| 0.5 * (plogp(a) + plogp(b)) - plogp(0.5 * (a + b)))
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>().clamp(0.0, 1.0)
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    for d in [p, q] {
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE || d.iter().any(|&v| v < 0.0) {
            return Err(Error::NotNormalized(sum));
        }
    }
    Ok(jsd_unchecked(p, q))
}

fn check_rows(m: &Matrix) -> Result<()> {
    for row in m.iter_rows() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized(sum));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DeltaScale {
    /// Sum over all unordered resource pairs.
    #[default]
    Sum,
    /// Sum divided by the number of pairs.
    MeanPerPair,
}

/// Sum over resource pairs of `|JSD(learned_r, learned_r') - JSD(actual_r, actual_r')|`.
///
/// Only pairwise distances enter, so the topic labelings of the two matrices
/// need not correspond and the column counts may differ.
pub fn deviation_delta(learned: &Matrix, actual: &Matrix) -> Result<f64> {
    deviation_delta_scaled(learned, actual, DeltaScale::Sum)
}

pub fn deviation_delta_scaled(learned: &Matrix, actual: &Matrix, scale: DeltaScale) -> Result<f64> {
    if learned.rows() != actual.rows() {
        return Err(Error::Shape(format!(
            "learned has {} resources, actual has {}",
            learned.rows(),
            actual.rows()
        )));
    }
    check_rows(learned)?;
    check_rows(actual)?;
    let n = learned.rows();
    // Per-row partial sums, reduced in row order so the result is independent of scheduling.
    let partial: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| {
            ((r + 1)..n)
                .map(|s| {
                    (jsd_unchecked(learned.row(r), learned.row(s)) - jsd_unchecked(actual.row(r), actual.row(s))).abs()
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = partial.iter().sum();
    Ok(match scale {
        DeltaScale::Sum => total,
        DeltaScale::MeanPerPair => {
            let pairs = n * n.saturating_sub(1) / 2;
            if pairs == 0 {
                0.0
            } else {
                total / pairs as f64
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub seed: usize,
    /// `(resource, divergence)`, ascending by divergence then resource id.
    pub entries: Vec<(usize, f64)>,
}

impl RankedList {
    pub const CSV_HEADER: &'static str = "rank,resource,divergence";

    /// CSV rows for the first `top` entries, with resources rendered by `name`.
    pub fn to_csv<'a>(&self, top: usize, name: impl Fn(usize) -> &'a str) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (rank, &(r, d)) in self.entries.iter().take(top).enumerate() {
            out.push_str(&format!("{},{},{}\n", rank + 1, name(r), d));
        }
        out
    }
}

/// Ranks every other resource by divergence of its topic profile from the seed's.
pub fn rank_by_similarity(phi: &Matrix, seed: usize) -> Result<RankedList> {
    if seed >= phi.rows() {
        return Err(Error::UnknownResource(seed.to_string()));
    }
    let target = phi.row(seed);
    let mut entries: Vec<(usize, f64)> = (0..phi.rows())
        .filter(|&r| r != seed)
        .map(|r| (r, jsd_unchecked(target, phi.row(r))))
        .collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(RankedList { seed, entries })
}

/// Cumulative number of relevant resources within the top `k`, for `k = 1..=k_max`
/// (truncated to the list length).
pub fn precision_curve(ranked: &RankedList, relevant: &HashSet<usize>, k_max: usize) -> Vec<(usize, usize)> {
    let mut hits = 0;
    ranked
        .entries
        .iter()
        .take(k_max)
        .enumerate()
        .map(|(k, (r, _))| {
            hits += relevant.contains(r) as usize;
            (k + 1, hits)
        })
        .collect()
}

pub fn precision_curve_csv(curve: &[(usize, usize)]) -> String {
    let mut out = String::from("k,relevant\n");
    for (k, hits) in curve {
        out.push_str(&format!("{k},{hits}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsd_reference_values() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        // H(0.75, 0.25) - 0.5 * (H(0.5, 0.5) + H(1, 0))
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        let v = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - (h - 0.5)).abs() < 1e-15);
        assert!((v - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn jsd_rejects_bad_input() {
        assert!(matches!(jsd(&[1.0], &[0.5, 0.5]), Err(Error::Shape(_))));
        assert!(matches!(jsd(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn delta_of_identical_and_permuted_profiles_is_zero() {
        let actual = Matrix::from_rows(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.3, 0.3, 0.4],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(deviation_delta(&actual, &actual).unwrap(), 0.0);
        let permuted = actual.permute_columns(&[2, 0, 1]);
        assert_eq!(deviation_delta(&permuted, &actual).unwrap(), 0.0);
    }

    #[test]
    fn delta_brute_force_three_resources() {
        let learned = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let actual = Matrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // learned pairs: (0,1)=h, (0,2)=1, (1,2)=h with h = JSD((1,0),(.5,.5)); actual: 0, 1, 1
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2()) - 0.5;
        let expected = (h - 0.0).abs() + (1.0f64 - 1.0).abs() + (h - 1.0).abs();
        let got = deviation_delta(&learned, &actual).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 1.0).abs() < 1e-12);
        let mean = deviation_delta_scaled(&learned, &actual, DeltaScale::MeanPerPair).unwrap();
        assert!((mean - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn delta_row_mismatch() {
        let a = Matrix::from_rows(vec![vec![1.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(deviation_delta(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn ranking_ties_and_duplicates() {
        let phi = Matrix::from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let ranked = rank_by_similarity(&phi, 0).unwrap();
        assert_eq!(ranked.entries, vec![(3, 0.0), (1, 1.0), (2, 1.0)]);
        assert!(matches!(rank_by_similarity(&phi, 4), Err(Error::UnknownResource(_))));
        let csv = ranked.to_csv(2, |r| ["a", "b", "c", "d"][r]);
        assert_eq!(csv, "rank,resource,divergence\n1,d,0\n2,b,1\n");
    }

    #[test]
    fn precision_curves() {
        let ranked = RankedList { seed: 0, entries: vec![(3, 0.0), (1, 0.1), (2, 0.2), (4, 0.3)] };
        let none = precision_curve(&ranked, &HashSet::new(), 100);
        assert!(none.iter().all(|&(_, h)| h == 0));
        let all: HashSet<usize> = [1, 2, 3, 4].into();
        assert_eq!(precision_curve(&ranked, &all, 100), vec![(1, 1), (2, 2), (3, 3), (4, 4)]);
        let some: HashSet<usize> = [1, 4].into();
        assert_eq!(precision_curve(&ranked, &some, 3), vec![(1, 0), (2, 1), (3, 1)]);
    }
}
