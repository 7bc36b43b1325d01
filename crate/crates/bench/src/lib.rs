//! Fixtures shared by the sampler benchmarks.

use tagmodel::synth::{generate_corpus, generate_ground_truth, SynthConfig};
use tagmodel::Corpus;

/// A synthetic corpus from the default generator with `n_resources`
/// resources and `n_users` users; everything else at its defaults.
pub fn synthetic_corpus(n_resources: usize, n_users: usize, seed: u64) -> Corpus {
    let config = SynthConfig {
        n_resources,
        n_users,
        ambiguity: 0.1,
        variation: 0.1,
        resource_groups: 5.min(n_resources),
        seed,
        ..SynthConfig::default()
    };
    let truth = generate_ground_truth(&config).expect("valid generator config");
    generate_corpus(&truth, &config).expect("non-empty corpus").corpus
}
