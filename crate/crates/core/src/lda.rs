//! Collapsed Gibbs LDA baseline: resources are documents, tags are words and
//! users are ignored.
//!
//! Priors use the same total-mass convention as the ITM sampler and the chain
//! draws from identically named random streams, so an ITM chain with a single
//! interest reproduces this sampler exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hyper::{resample_symmetric_mass, GammaPrior};
use crate::itm::{normalize, validate_masses, validate_schedule, Diagnostics, HyperSchedule, ThetaEstimate, TraceRow};
use crate::posterior::{add_smoothed_rows, add_smoothed_tag_slices, Posterior, PosteriorSum};
use crate::rng::{substream, ChainRng};
use crate::sampling::{product_weights, sample_index};
use crate::table::{Matrix, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub n_topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub n_iterations: usize,
    pub averaging_window: usize,
    pub seed: u64,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub hyper: HyperSchedule,
    pub theta: ThetaEstimate,
}

impl LdaConfig {
    pub fn new(n_topics: usize) -> Self {
        Self {
            n_topics,
            alpha: 1.0,
            eta: 1.0,
            n_iterations: 1000,
            averaging_window: 100,
            seed: 0,
            convergence_window: 10,
            convergence_threshold: 0.02,
            hyper: HyperSchedule::default(),
            theta: ThetaEstimate::Averaged,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 {
            return Err(Error::Config("number of topics must be at least 1".into()));
        }
        validate_masses(&[("alpha", self.alpha), ("eta", self.eta)])?;
        validate_schedule(self.n_iterations, self.averaging_window)
    }
}

#[derive(Debug, Clone)]
pub struct LdaState<'c> {
    corpus: &'c Corpus,
    n_topics: usize,
    n_tags: usize,
    alpha: f64,
    eta: f64,
    topics: Vec<u32>,
    /// `[r][z]`
    resource_topic: Vec<u32>,
    /// `[t][z]`
    tag_topic: Vec<u32>,
    topic_totals: Vec<u32>,
    resource_totals: Vec<u32>,
    rng: ChainRng,
    alpha_rng: ChainRng,
    eta_rng: ChainRng,
    weights: Vec<f64>,
}

impl<'c> LdaState<'c> {
    pub fn new(corpus: &'c Corpus, config: &LdaConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut init_rng = substream(config.seed, "init/topic");
        let topics = (0..corpus.len())
            .map(|_| init_rng.random_range(0..config.n_topics as u32))
            .collect();
        Self::from_assignments(corpus, config.n_topics, config.alpha, config.eta, topics, config.seed)
    }

    pub fn from_assignments(
        corpus: &'c Corpus,
        n_topics: usize,
        alpha: f64,
        eta: f64,
        topics: Vec<u32>,
        seed: u64,
    ) -> Result<Self> {
        if n_topics == 0 {
            return Err(Error::Config("number of topics must be at least 1".into()));
        }
        validate_masses(&[("alpha", alpha), ("eta", eta)])?;
        if topics.len() != corpus.len() {
            return Err(Error::Shape("one topic label per tuple".into()));
        }
        if topics.iter().any(|&z| z as usize >= n_topics) {
            return Err(Error::Config("label out of range".into()));
        }
        let mut state = Self {
            corpus,
            n_topics,
            n_tags: corpus.n_tags(),
            alpha,
            eta,
            topics,
            resource_topic: vec![0; corpus.n_resources() * n_topics],
            tag_topic: vec![0; corpus.n_tags() * n_topics],
            topic_totals: vec![0; n_topics],
            resource_totals: corpus.resource_totals(),
            rng: substream(seed, "sweep"),
            alpha_rng: substream(seed, "hyper/alpha"),
            eta_rng: substream(seed, "hyper/eta"),
            weights: vec![0.0; n_topics],
        };
        for i in 0..corpus.len() {
            state.add(i);
        }
        Ok(state)
    }

    pub fn topics(&self) -> &[u32] {
        &self.topics
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    #[inline]
    fn add(&mut self, i: usize) {
        let tr = self.corpus.triples()[i];
        let z = self.topics[i] as usize;
        self.resource_topic[tr.resource as usize * self.n_topics + z] += 1;
        self.tag_topic[tr.tag as usize * self.n_topics + z] += 1;
        self.topic_totals[z] += 1;
    }

    #[inline]
    fn remove(&mut self, i: usize) {
        let tr = self.corpus.triples()[i];
        let z = self.topics[i] as usize;
        self.resource_topic[tr.resource as usize * self.n_topics + z] -= 1;
        self.tag_topic[tr.tag as usize * self.n_topics + z] -= 1;
        self.topic_totals[z] -= 1;
    }

    /// Full conditional of tuple `i`'s topic with its own assignment excluded.
    pub fn lda_conditional(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.corpus.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.corpus.len() });
        }
        let tr = self.corpus.triples()[i];
        let (r, t, zi) = (tr.resource as usize, tr.tag as usize, self.topics[i] as usize);
        let left_denom = self.resource_totals[r] as f64 + self.alpha - 1.0;
        let mut p: Vec<f64> = (0..self.n_topics)
            .map(|k| {
                let own = (k == zi) as u32;
                let n_rk = self.resource_topic[r * self.n_topics + k] - own;
                let n_kt = self.tag_topic[t * self.n_topics + k] - own;
                let n_k = self.topic_totals[k] - own;
                (n_rk as f64 + self.alpha / self.n_topics as f64) / left_denom
                    * ((n_kt as f64 + self.eta / self.n_tags as f64) / (n_k as f64 + self.eta))
            })
            .collect();
        normalize(&mut p);
        Ok(p)
    }

    pub fn sweep(&mut self) {
        let n_topics = self.n_topics;
        let topic_prior = self.alpha / n_topics as f64;
        let tag_prior = self.eta / self.n_tags as f64;
        let eta = self.eta;
        let triples = self.corpus.triples();
        let mut inv: Vec<f64> = self.topic_totals.iter().map(|&n| 1.0 / (n as f64 + eta)).collect();
        for i in 0..triples.len() {
            let old = self.topics[i] as usize;
            self.remove(i);
            inv[old] = 1.0 / (self.topic_totals[old] as f64 + eta);
            let tr = triples[i];
            let (r, t) = (tr.resource as usize, tr.tag as usize);
            let rt = &self.resource_topic[r * n_topics..(r + 1) * n_topics];
            let tc = &self.tag_topic[t * n_topics..(t + 1) * n_topics];
            let total = product_weights(&mut self.weights, rt, topic_prior, tc, tag_prior, &inv);
            let z = sample_index(&self.weights, total, &mut self.rng);
            self.topics[i] = z as u32;
            self.add(i);
            inv[z] = 1.0 / (self.topic_totals[z] as f64 + eta);
        }
    }

    pub fn log_likelihood(&self) -> f64 {
        let tag_prior = self.eta / self.n_tags as f64;
        self.corpus
            .triples()
            .iter()
            .zip(&self.topics)
            .map(|(tr, &z)| {
                let z = z as usize;
                let n_zt = self.tag_topic[tr.tag as usize * self.n_topics + z];
                ((n_zt as f64 + tag_prior) / (self.topic_totals[z] as f64 + self.eta)).ln()
            })
            .sum()
    }

    pub fn resample_hyperparameters(&mut self, prior: GammaPrior, iterations: usize) -> (f64, f64) {
        self.alpha = resample_symmetric_mass(
            self.alpha,
            self.n_topics,
            &self.resource_topic,
            &self.resource_totals,
            prior,
            iterations,
            &mut self.alpha_rng,
        );
        self.eta = resample_symmetric_mass(
            self.eta,
            self.n_tags,
            &self.tag_topic,
            &self.topic_totals,
            prior,
            iterations,
            &mut self.eta_rng,
        );
        (self.alpha, self.eta)
    }

    /// `phi` (resource x topic) and the topic-tag distributions as a single-interest `theta`.
    pub fn estimate_parameters(&self) -> Posterior {
        let mut sum = self.new_sum(ThetaEstimate::Averaged);
        self.accumulate(&mut sum);
        self.finish(sum)
    }

    fn new_sum(&self, theta: ThetaEstimate) -> PosteriorSum {
        let theta_len = (theta == ThetaEstimate::Averaged).then_some(self.tag_topic.len());
        PosteriorSum::new(self.resource_topic.len(), self.corpus.n_users(), theta_len)
    }

    fn accumulate(&self, sum: &mut PosteriorSum) {
        add_smoothed_rows(&mut sum.phi, &self.resource_topic, &self.resource_totals, self.n_topics, self.alpha);
        sum.psi.iter_mut().for_each(|p| *p += 1.0);
        if let Some(theta) = sum.theta.as_mut() {
            add_smoothed_tag_slices(theta, &self.tag_topic, &self.topic_totals, self.n_tags, self.eta);
        }
        sum.samples += 1;
    }

    fn finish(&self, sum: PosteriorSum) -> Posterior {
        let n = sum.samples;
        let theta = match sum.theta {
            Some(theta) => PosteriorSum::mean(theta, n),
            None => {
                let mut theta = vec![0.0; self.tag_topic.len()];
                add_smoothed_tag_slices(&mut theta, &self.tag_topic, &self.topic_totals, self.n_tags, self.eta);
                theta
            }
        };
        Posterior {
            phi: Matrix::from_vec(self.corpus.n_resources(), self.n_topics, PosteriorSum::mean(sum.phi, n))
                .expect("phi shape"),
            psi: Matrix::from_vec(self.corpus.n_users(), 1, PosteriorSum::mean(sum.psi, n)).expect("psi shape"),
            theta: Tensor3::from_vec([1, self.n_topics, self.n_tags], theta).expect("theta shape"),
            n_samples_averaged: n,
        }
    }

    pub fn counts_consistent(&self) -> bool {
        let mut fresh = self.clone();
        fresh.resource_topic.iter_mut().for_each(|c| *c = 0);
        fresh.tag_topic.iter_mut().for_each(|c| *c = 0);
        fresh.topic_totals.iter_mut().for_each(|c| *c = 0);
        for i in 0..self.corpus.len() {
            fresh.add(i);
        }
        fresh.resource_topic == self.resource_topic
            && fresh.tag_topic == self.tag_topic
            && fresh.topic_totals == self.topic_totals
    }
}

pub fn train_lda(corpus: &Corpus, config: &LdaConfig) -> Result<(Posterior, Diagnostics)> {
    let mut state = LdaState::new(corpus, config)?;
    let mut sum = state.new_sum(config.theta);
    let mut diagnostics = Diagnostics::default();
    let first_averaged = config.n_iterations - config.averaging_window + 1;
    for iteration in 1..=config.n_iterations {
        state.sweep();
        if config.hyper.active_at(iteration) {
            state.resample_hyperparameters(config.hyper.prior, config.hyper.iterations);
        }
        diagnostics.record(
            TraceRow {
                iteration,
                log_likelihood: state.log_likelihood(),
                alpha: state.alpha,
                beta: None,
                eta: state.eta,
            },
            config.convergence_window,
            config.convergence_threshold,
        )?;
        if iteration >= first_averaged {
            state.accumulate(&mut sum);
        }
    }
    Ok((state.finish(sum), diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::itm::{Hyperparameters, ItmState};

    fn corpus(rows: &[(&str, &str, &str)]) -> Corpus {
        let mut b = Corpus::builder();
        for (r, u, t) in rows {
            b.push_triple(r, u, t);
        }
        b.build().unwrap()
    }

    #[test]
    fn single_tuple_is_uniform() {
        let c = corpus(&[("r", "u", "t")]);
        let s = LdaState::from_assignments(&c, 5, 1.0, 1.0, vec![3], 0).unwrap();
        for p in s.lda_conditional(0).unwrap() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn two_tuples_by_hand() {
        let c = corpus(&[("r", "u", "t"), ("r", "u", "t")]);
        let s = LdaState::from_assignments(&c, 2, 1.0, 1.0, vec![1, 0], 0).unwrap();
        let p = s.lda_conditional(0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matches_the_single_interest_itm_conditional() {
        let c = corpus(&[("a", "u", "x"), ("a", "v", "y"), ("b", "u", "x"), ("b", "v", "z"), ("a", "w", "z")]);
        let topics = vec![0, 2, 1, 1, 0];
        let lda = LdaState::from_assignments(&c, 3, 0.7, 1.3, topics.clone(), 0).unwrap();
        let hyper = Hyperparameters { alpha: 0.7, beta: 1.0, eta: 1.3 };
        let itm = ItmState::from_assignments(&c, 3, 1, hyper, topics, vec![0; 5], 0).unwrap();
        for i in 0..c.len() {
            assert_eq!(lda.lda_conditional(i).unwrap(), itm.conditional_topic_distribution(i).unwrap());
        }
        assert_eq!(lda.log_likelihood(), itm.log_likelihood());
    }

    #[test]
    fn training_is_deterministic_and_normalized() {
        let c = corpus(&[("a", "u", "x"), ("a", "v", "y"), ("b", "u", "x"), ("b", "v", "z")]);
        let config = LdaConfig { n_iterations: 20, averaging_window: 5, seed: 2, ..LdaConfig::new(3) };
        let (p1, d1) = train_lda(&c, &config).unwrap();
        let (p2, _) = train_lda(&c, &config).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.max_normalization_error() < 1e-12);
        assert_eq!(p1.theta.dims(), [1, 3, 3]);
        assert!(d1.trace.iter().all(|r| r.beta.is_none()));
        let mut s = LdaState::new(&c, &config).unwrap();
        s.sweep();
        assert!(s.counts_consistent());
    }
}
