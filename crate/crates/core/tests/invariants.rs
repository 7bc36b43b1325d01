//! Count, normalization and structural invariants of every sampler on
//! generated data.

use tagmodel::eval::deviation_delta;
use tagmodel::hdpitm::{train_two_phase, HdpConfig, HdpMode, HdpState, Phase};
use tagmodel::hyper::GammaPrior;
use tagmodel::itm::{train, ItmConfig, ItmState};
use tagmodel::lda::{train_lda, LdaConfig, LdaState};
use tagmodel::synth::{generate_corpus, generate_ground_truth, SynthConfig};
use tagmodel::Corpus;

fn synthetic(seed: u64, resources: usize, users: usize) -> Corpus {
    let config = SynthConfig { n_resources: resources, n_users: users, seed, ..SynthConfig::default() };
    let truth = generate_ground_truth(&config).unwrap();
    generate_corpus(&truth, &config).unwrap().corpus
}

#[test]
fn itm_counts_stay_consistent_and_estimates_normalized() {
    let corpus = synthetic(1, 15, 30);
    let config = ItmConfig { seed: 4, ..ItmConfig::new(6, 3) };
    let mut state = ItmState::new(&corpus, &config).unwrap();
    assert!(state.counts_consistent());
    for _ in 0..30 {
        state.sweep();
        assert!(state.counts_consistent());
        state.resample_hyperparameters(GammaPrior::default(), 1);
        assert!(state.estimate_parameters().max_normalization_error() < 1e-12);
    }
}

#[test]
fn lda_counts_stay_consistent() {
    let corpus = synthetic(2, 15, 30);
    let mut state = LdaState::new(&corpus, &LdaConfig { seed: 5, ..LdaConfig::new(6) }).unwrap();
    for _ in 0..30 {
        state.sweep();
        assert!(state.counts_consistent());
        assert!(state.estimate_parameters().max_normalization_error() < 1e-12);
    }
}

#[test]
fn relabeling_topics_permutes_phi_and_keeps_likelihood() {
    let corpus = synthetic(3, 12, 25);
    let mut state = ItmState::new(&corpus, &ItmConfig { seed: 1, ..ItmConfig::new(4, 2) }).unwrap();
    for _ in 0..5 {
        state.sweep();
    }
    let before = state.estimate_parameters();
    let ll = state.log_likelihood();
    let perm = [2, 0, 3, 1];
    state.permute_topics(&perm).unwrap();
    let after = state.estimate_parameters();
    assert_eq!(state.log_likelihood(), ll);
    for r in 0..corpus.n_resources() {
        for (z, &p) in perm.iter().enumerate() {
            assert_eq!(after.phi.get(r, p), before.phi.get(r, z));
        }
    }
    // The deviation only sees pairwise distances, so it cannot tell the labelings apart.
    assert_eq!(deviation_delta(&after.phi, &before.phi).unwrap(), 0.0);
}

#[test]
fn single_interest_itm_is_bit_identical_to_lda() {
    let corpus = synthetic(4, 20, 40);
    for seed in [0, 9, 1234] {
        let itm = ItmConfig { seed, n_iterations: 60, averaging_window: 10, ..ItmConfig::new(7, 1) };
        let lda = LdaConfig { seed, n_iterations: 60, averaging_window: 10, ..LdaConfig::new(7) };
        let (a, da) = train(&corpus, &itm).unwrap();
        let (b, db) = train_lda(&corpus, &lda).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(da.log_likelihoods(), db.log_likelihoods());
    }
}

#[test]
fn hdp_globals_stay_normalized_through_every_move() {
    let corpus = synthetic(5, 15, 30);
    for mode in [HdpMode::HdpLda, HdpMode::HdpItm] {
        let config = HdpConfig { seed: 8, ..HdpConfig::synthetic(mode) };
        let mut state = HdpState::new(&corpus, &config).unwrap();
        assert!(state.globals().max_mass_error() < 1e-12);
        for sweep in 0..40 {
            state.sweep(true);
            assert!(state.counts_consistent());
            assert!(state.globals().max_mass_error() < 1e-12);
            state.prune();
            assert!(state.globals().max_mass_error() < 1e-12);
            state.resample_globals(GammaPrior::default(), sweep > 10);
            assert!(state.globals().max_mass_error() < 1e-12);
            if sweep % 10 == 0 {
                state.instantiate_topic();
                assert!(state.globals().max_mass_error() < 1e-12);
                if mode.has_interests() {
                    state.instantiate_interest();
                    assert!(state.globals().max_mass_error() < 1e-12);
                }
            }
            assert!(state.counts_consistent());
            assert!(state.estimate_parameters().max_normalization_error() < 1e-12);
        }
    }
}

#[test]
fn frozen_phase_never_adds_components() {
    let corpus = synthetic(6, 20, 40);
    let mut config = HdpConfig { seed: 2, ..HdpConfig::synthetic(HdpMode::HdpItm) };
    config.policy.grow_iterations = 20;
    config.policy.min_iterations = 80;
    config.policy.max_iterations = 80;
    config.policy.averaging_window = 10;
    let run = train_two_phase(&corpus, &config).unwrap();
    let trace = &run.diagnostics.trace;
    assert_eq!(run.diagnostics.grow_ended_at, Some(20));
    for pair in trace.windows(2).filter(|w| w[0].phase == Phase::Frozen) {
        assert_eq!(pair[1].phase, Phase::Frozen);
        assert!(pair[1].n_topics <= pair[0].n_topics);
        assert!(pair[1].n_interests <= pair[0].n_interests);
    }
    assert!(trace.iter().all(|row| row.n_topics <= config.policy.max_topics));
    assert!(run.posterior.max_normalization_error() < 1e-12);
}

#[test]
fn frozen_state_sweeps_never_add_components() {
    let corpus = synthetic(7, 15, 30);
    let config = HdpConfig { seed: 3, ..HdpConfig::synthetic(HdpMode::HdpItm) };
    let mut state = HdpState::new(&corpus, &config).unwrap();
    let (mut k, mut j) = (state.n_topics(), state.n_interests());
    for _ in 0..30 {
        let outcome = state.sweep(false);
        assert_eq!((outcome.new_topics, outcome.new_interests), (0, 0));
        state.prune();
        assert!(state.n_topics() <= k && state.n_interests() <= j);
        (k, j) = (state.n_topics(), state.n_interests());
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = synthetic(8, 15, 30);
    let config = ItmConfig { seed: 77, n_iterations: 40, averaging_window: 5, ..ItmConfig::new(5, 2) };
    assert_eq!(train(&corpus, &config).unwrap().0, train(&corpus, &config).unwrap().0);
    let mut hdp = HdpConfig { seed: 77, ..HdpConfig::synthetic(HdpMode::HdpItm) };
    hdp.policy.min_iterations = 30;
    hdp.policy.max_iterations = 30;
    hdp.policy.grow_iterations = 15;
    hdp.policy.averaging_window = 5;
    assert_eq!(train_two_phase(&corpus, &hdp).unwrap().posterior, train_two_phase(&corpus, &hdp).unwrap().posterior);
}
