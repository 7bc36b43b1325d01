//! Gibbs chains on a tiny corpus against the enumerated exact posterior.

mod common;

use common::*;

#[test]
fn exact_posteriors_are_distributions_with_label_symmetry() {
    let corpus = oracle_corpus();
    let itm = exact_itm_posterior(&corpus, 2, 2, 1.0, 1.0, 1.0);
    assert_eq!(itm.len(), 4096);
    assert!((itm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Swapping both topic labels maps every labeling to one of equal probability.
    for s in 0..itm.len() {
        let swapped = (0..6).fold(0, |acc, i| {
            let d = s / 4usize.pow(i) % 4;
            let (z, x) = (d / 2, d % 2);
            acc + ((1 - z) * 2 + x) * 4usize.pow(i)
        });
        assert!((itm[s] - itm[swapped]).abs() < 1e-15);
    }
    let lda = exact_lda_posterior(&corpus, 2, 1.0, 1.0);
    assert_eq!(lda.len(), 64);
    assert!((lda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn single_interest_posterior_marginalizes_to_lda() {
    // With one interest the x layer is a constant factor, so the ITM joint is the LDA joint.
    let corpus = oracle_corpus();
    let itm = exact_itm_posterior(&corpus, 2, 1, 1.0, 1.0, 1.0);
    let lda = exact_lda_posterior(&corpus, 2, 1.0, 1.0);
    for (a, b) in itm.iter().zip(&lda) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn itm_chain_converges_to_enumerated_posterior() {
    let corpus = oracle_corpus();
    let exact = exact_itm_posterior(&corpus, 2, 2, 1.0, 1.0, 1.0);
    // 4096 joint states: enough samples that the estimator's own bias stays small.
    let long = ChainSchedule { sweeps: 2_000_000, burn_in: 10_000, thin: 1 };
    let tv = total_variation(&exact, &itm_chain_distribution(&corpus, 2, 2, 17, &long));
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn thinned_itm_chain_sits_at_the_sampling_noise_floor() {
    let corpus = oracle_corpus();
    let exact = exact_itm_posterior(&corpus, 2, 2, 1.0, 1.0, 1.0);
    let floor = sampling_noise_floor(&exact, retained_samples(&ORACLE_SCHEDULE));
    let tv = total_variation(&exact, &itm_chain_distribution(&corpus, 2, 2, 17, &ORACLE_SCHEDULE));
    assert!(tv < 1.25 * floor, "total variation {tv}, independent-draw floor {floor}");
}

#[test]
fn lda_chain_matches_enumerated_posterior() {
    let corpus = oracle_corpus();
    let exact = exact_lda_posterior(&corpus, 2, 1.0, 1.0);
    let empirical = lda_chain_distribution(&corpus, 2, 17, &ORACLE_SCHEDULE);
    let tv = total_variation(&exact, &empirical);
    assert!(tv < 0.05, "total variation {tv}");
}
