//! Finite Interest Topic Model: collapsed Gibbs sampling of a topic `z` and an
//! interest `x` for every `<resource, user, tag>` tuple.
//!
//! The resource topic profiles, user interest profiles and per-(interest,
//! topic) tag distributions are integrated out; only the labels and their
//! count tables are kept.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hyper::{resample_symmetric_mass, GammaPrior};
use crate::posterior::{add_smoothed_rows, add_smoothed_tag_slices, Posterior, PosteriorSum};
use crate::rng::{substream, ChainRng};
use crate::sampling::{product_weights, sample_index};
use crate::table::{Matrix, Tensor3};

/// When and how the Dirichlet masses are re-estimated during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperSchedule {
    pub enabled: bool,
    /// Sweeps before the first resampling step.
    pub warmup: usize,
    pub prior: GammaPrior,
    /// Auxiliary-variable iterations per resampling step.
    pub iterations: usize,
}

impl Default for HyperSchedule {
    fn default() -> Self {
        Self { enabled: true, warmup: 10, prior: GammaPrior::default(), iterations: 1 }
    }
}

impl HyperSchedule {
    pub fn fixed() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub(crate) fn active_at(&self, iteration: usize) -> bool {
        self.enabled && iteration > self.warmup
    }
}

/// Whether `theta` is averaged like `phi` or taken from the final sweep.
///
/// Averaging needs a second interest x topic x tag buffer, which matters on
/// large vocabularies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaEstimate {
    #[default]
    Averaged,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItmConfig {
    pub n_topics: usize,
    pub n_interests: usize,
    /// Total Dirichlet masses; each component receives `mass / dimension`.
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub n_iterations: usize,
    pub averaging_window: usize,
    pub seed: u64,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub hyper: HyperSchedule,
    pub theta: ThetaEstimate,
}

impl ItmConfig {
    pub fn new(n_topics: usize, n_interests: usize) -> Self {
        Self {
            n_topics,
            n_interests,
            alpha: 1.0,
            beta: 1.0,
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
        if self.n_topics == 0 || self.n_interests == 0 {
            return Err(Error::Config("numbers of topics and interests must be at least 1".into()));
        }
        validate_masses(&[("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta)])?;
        validate_schedule(self.n_iterations, self.averaging_window)
    }

    pub(crate) fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters { alpha: self.alpha, beta: self.beta, eta: self.eta }
    }
}

pub(crate) fn validate_masses(masses: &[(&str, f64)]) -> Result<()> {
    for (name, m) in masses {
        if !(m.is_finite() && *m > 0.0) {
            return Err(Error::Config(format!("{name} must be positive and finite, got {m}")));
        }
    }
    Ok(())
}

pub(crate) fn validate_schedule(n_iterations: usize, averaging_window: usize) -> Result<()> {
    if n_iterations == 0 {
        return Err(Error::Config("at least one iteration is required".into()));
    }
    if averaging_window == 0 || averaging_window > n_iterations {
        return Err(Error::Config(format!(
            "averaging window {averaging_window} must lie in 1..={n_iterations}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

/// Labels and sufficient statistics of one ITM chain.
#[derive(Debug, Clone)]
pub struct ItmState<'c> {
    corpus: &'c Corpus,
    n_topics: usize,
    n_interests: usize,
    n_tags: usize,
    hyper: Hyperparameters,
    topics: Vec<u32>,
    interests: Vec<u32>,
    /// `[r][z]`
    resource_topic: Vec<u32>,
    /// `[u][x]`
    user_interest: Vec<u32>,
    /// `[t][x][z]`: contiguous over topics for a fixed (tag, interest).
    tag_counts: Vec<u32>,
    /// `[x][z]`
    interest_topic: Vec<u32>,
    resource_totals: Vec<u32>,
    user_totals: Vec<u32>,
    rng: ChainRng,
    hyper_rngs: [ChainRng; 3],
    topic_weights: Vec<f64>,
    interest_weights: Vec<f64>,
}

impl<'c> ItmState<'c> {
    /// Random initial assignment drawn from the seeded `init/*` streams.
    pub fn new(corpus: &'c Corpus, config: &ItmConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut topic_rng = substream(config.seed, "init/topic");
        let mut interest_rng = substream(config.seed, "init/interest");
        let topics = (0..corpus.len())
            .map(|_| topic_rng.random_range(0..config.n_topics as u32))
            .collect();
        let interests = (0..corpus.len())
            .map(|_| interest_rng.random_range(0..config.n_interests as u32))
            .collect();
        Self::from_assignments(
            corpus,
            config.n_topics,
            config.n_interests,
            config.hyperparameters(),
            topics,
            interests,
            config.seed,
        )
    }

    /// Builds a state from explicit labels.
    pub fn from_assignments(
        corpus: &'c Corpus,
        n_topics: usize,
        n_interests: usize,
        hyper: Hyperparameters,
        topics: Vec<u32>,
        interests: Vec<u32>,
        seed: u64,
    ) -> Result<Self> {
        if n_topics == 0 || n_interests == 0 {
            return Err(Error::Config("numbers of topics and interests must be at least 1".into()));
        }
        validate_masses(&[("alpha", hyper.alpha), ("beta", hyper.beta), ("eta", hyper.eta)])?;
        if topics.len() != corpus.len() || interests.len() != corpus.len() {
            return Err(Error::Shape("one topic and one interest label per tuple".into()));
        }
        if topics.iter().any(|&z| z as usize >= n_topics)
            || interests.iter().any(|&x| x as usize >= n_interests)
        {
            return Err(Error::Config("label out of range".into()));
        }
        let n_tags = corpus.n_tags();
        let mut state = Self {
            corpus,
            n_topics,
            n_interests,
            n_tags,
            hyper,
            topics,
            interests,
            resource_topic: vec![0; corpus.n_resources() * n_topics],
            user_interest: vec![0; corpus.n_users() * n_interests],
            tag_counts: vec![0; n_tags * n_interests * n_topics],
            interest_topic: vec![0; n_interests * n_topics],
            resource_totals: corpus.resource_totals(),
            user_totals: corpus.user_totals(),
            rng: substream(seed, "sweep"),
            hyper_rngs: [
                substream(seed, "hyper/alpha"),
                substream(seed, "hyper/beta"),
                substream(seed, "hyper/eta"),
            ],
            topic_weights: vec![0.0; n_topics],
            interest_weights: vec![0.0; n_interests],
        };
        for i in 0..corpus.len() {
            state.add(i);
        }
        Ok(state)
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn n_interests(&self) -> usize {
        self.n_interests
    }

    pub fn topics(&self) -> &[u32] {
        &self.topics
    }

    pub fn interests(&self) -> &[u32] {
        &self.interests
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyper
    }

    pub fn set_hyperparameters(&mut self, hyper: Hyperparameters) -> Result<()> {
        validate_masses(&[("alpha", hyper.alpha), ("beta", hyper.beta), ("eta", hyper.eta)])?;
        self.hyper = hyper;
        Ok(())
    }

    pub fn resource_topic_count(&self, r: usize, z: usize) -> u32 {
        self.resource_topic[r * self.n_topics + z]
    }

    pub fn user_interest_count(&self, u: usize, x: usize) -> u32 {
        self.user_interest[u * self.n_interests + x]
    }

    pub fn tag_count(&self, x: usize, z: usize, t: usize) -> u32 {
        self.tag_counts[self.tag_index(t, x, z)]
    }

    pub fn interest_topic_count(&self, x: usize, z: usize) -> u32 {
        self.interest_topic[x * self.n_topics + z]
    }

    #[inline]
    fn tag_index(&self, t: usize, x: usize, z: usize) -> usize {
        (t * self.n_interests + x) * self.n_topics + z
    }

    #[inline]
    fn tuple(&self, i: usize) -> (usize, usize, usize, usize, usize) {
        let tr = self.corpus.triples()[i];
        (
            tr.resource as usize,
            tr.user as usize,
            tr.tag as usize,
            self.topics[i] as usize,
            self.interests[i] as usize,
        )
    }

    #[inline]
    fn add(&mut self, i: usize) {
        let (r, u, t, z, x) = self.tuple(i);
        let ti = self.tag_index(t, x, z);
        self.resource_topic[r * self.n_topics + z] += 1;
        self.user_interest[u * self.n_interests + x] += 1;
        self.tag_counts[ti] += 1;
        self.interest_topic[x * self.n_topics + z] += 1;
    }

    #[inline]
    fn remove(&mut self, i: usize) {
        let (r, u, t, z, x) = self.tuple(i);
        let ti = self.tag_index(t, x, z);
        self.resource_topic[r * self.n_topics + z] -= 1;
        self.user_interest[u * self.n_interests + x] -= 1;
        self.tag_counts[ti] -= 1;
        self.interest_topic[x * self.n_topics + z] -= 1;
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.corpus.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.corpus.len() });
        }
        Ok(())
    }

    /// Full conditional of tuple `i`'s topic given every other label, with
    /// tuple `i`'s own contribution excluded from the counts.
    pub fn conditional_topic_distribution(&self, i: usize) -> Result<Vec<f64>> {
        self.check_index(i)?;
        let (r, _, t, zi, xi) = self.tuple(i);
        let Hyperparameters { alpha, eta, .. } = self.hyper;
        let left_denom = self.resource_totals[r] as f64 + alpha - 1.0;
        let mut p: Vec<f64> = (0..self.n_topics)
            .map(|k| {
                let own = (k == zi) as u32;
                let n_rk = self.resource_topic[r * self.n_topics + k] - own;
                let n_kxt = self.tag_counts[self.tag_index(t, xi, k)] - own;
                let n_kx = self.interest_topic[xi * self.n_topics + k] - own;
                (n_rk as f64 + alpha / self.n_topics as f64) / left_denom
                    * ((n_kxt as f64 + eta / self.n_tags as f64) / (n_kx as f64 + eta))
            })
            .collect();
        normalize(&mut p);
        Ok(p)
    }

    /// Full conditional of tuple `i`'s interest; mirror of the topic case.
    pub fn conditional_interest_distribution(&self, i: usize) -> Result<Vec<f64>> {
        self.check_index(i)?;
        let (_, u, t, zi, xi) = self.tuple(i);
        let Hyperparameters { beta, eta, .. } = self.hyper;
        let left_denom = self.user_totals[u] as f64 + beta - 1.0;
        let mut p: Vec<f64> = (0..self.n_interests)
            .map(|j| {
                let own = (j == xi) as u32;
                let n_uj = self.user_interest[u * self.n_interests + j] - own;
                let n_jzt = self.tag_counts[self.tag_index(t, j, zi)] - own;
                let n_jz = self.interest_topic[j * self.n_topics + zi] - own;
                (n_uj as f64 + beta / self.n_interests as f64) / left_denom
                    * ((n_jzt as f64 + eta / self.n_tags as f64) / (n_jz as f64 + eta))
            })
            .collect();
        normalize(&mut p);
        Ok(p)
    }

    /// One systematic-scan sweep in corpus order: each tuple is removed,
    /// relabeled from its topic then its interest conditional, and re-added.
    pub fn sweep(&mut self) {
        let n_topics = self.n_topics;
        let n_interests = self.n_interests;
        let Hyperparameters { alpha, beta, eta } = self.hyper;
        let topic_prior = alpha / n_topics as f64;
        let interest_prior = beta / n_interests as f64;
        let tag_prior = eta / self.n_tags as f64;
        let triples = self.corpus.triples();
        // Reciprocals of the tag-layer denominators; a relabel changes two entries.
        let mut inv: Vec<f64> = self.interest_topic.iter().map(|&n| 1.0 / (n as f64 + eta)).collect();
        for i in 0..triples.len() {
            let old = self.interests[i] as usize * n_topics + self.topics[i] as usize;
            self.remove(i);
            inv[old] = 1.0 / (self.interest_topic[old] as f64 + eta);
            let tr = triples[i];
            let (r, u, t) = (tr.resource as usize, tr.user as usize, tr.tag as usize);

            // The left denominators are constant across labels and cancel.
            let x = self.interests[i] as usize;
            let rt = &self.resource_topic[r * n_topics..(r + 1) * n_topics];
            let tag_base = (t * n_interests + x) * n_topics;
            let tc = &self.tag_counts[tag_base..tag_base + n_topics];
            let it = &inv[x * n_topics..(x + 1) * n_topics];
            let total = product_weights(&mut self.topic_weights, rt, topic_prior, tc, tag_prior, it);
            let z = sample_index(&self.topic_weights, total, &mut self.rng);

            let ui = &self.user_interest[u * n_interests..(u + 1) * n_interests];
            let mut total = 0.0;
            for j in 0..n_interests {
                let n_jzt = self.tag_counts[(t * n_interests + j) * n_topics + z];
                let w = (ui[j] as f64 + interest_prior) * (n_jzt as f64 + tag_prior) * inv[j * n_topics + z];
                self.interest_weights[j] = w;
                total += w;
            }
            let x = sample_index(&self.interest_weights, total, &mut self.rng);

            self.topics[i] = z as u32;
            self.interests[i] = x as u32;
            self.add(i);
            let new = x * n_topics + z;
            inv[new] = 1.0 / (self.interest_topic[new] as f64 + eta);
        }
    }

    /// Sum over tuples of the log tag likelihood, counts including the tuple itself.
    pub fn log_likelihood(&self) -> f64 {
        let eta = self.hyper.eta;
        let tag_prior = eta / self.n_tags as f64;
        (0..self.corpus.len())
            .map(|i| {
                let (_, _, t, z, x) = self.tuple(i);
                let n_xzt = self.tag_counts[self.tag_index(t, x, z)];
                let n_xz = self.interest_topic[x * self.n_topics + z];
                ((n_xzt as f64 + tag_prior) / (n_xz as f64 + eta)).ln()
            })
            .sum()
    }

    /// One auxiliary-variable update of each Dirichlet mass; returns the new values.
    pub fn resample_hyperparameters(&mut self, prior: GammaPrior, iterations: usize) -> Hyperparameters {
        let [alpha_rng, beta_rng, eta_rng] = &mut self.hyper_rngs;
        let h = self.hyper;
        self.hyper = Hyperparameters {
            alpha: resample_symmetric_mass(
                h.alpha,
                self.n_topics,
                &self.resource_topic,
                &self.resource_totals,
                prior,
                iterations,
                alpha_rng,
            ),
            beta: resample_symmetric_mass(
                h.beta,
                self.n_interests,
                &self.user_interest,
                &self.user_totals,
                prior,
                iterations,
                beta_rng,
            ),
            eta: resample_symmetric_mass(
                h.eta,
                self.n_tags,
                &self.tag_counts,
                &self.interest_topic,
                prior,
                iterations,
                eta_rng,
            ),
        };
        self.hyper
    }

    /// Smoothed point estimates from the current counts.
    pub fn estimate_parameters(&self) -> Posterior {
        let mut sum = PosteriorSum::new(
            self.resource_topic.len(),
            self.user_interest.len(),
            Some(self.tag_counts.len()),
        );
        self.accumulate(&mut sum);
        self.finish(sum)
    }

    fn accumulate(&self, sum: &mut PosteriorSum) {
        let Hyperparameters { alpha, beta, eta } = self.hyper;
        add_smoothed_rows(&mut sum.phi, &self.resource_topic, &self.resource_totals, self.n_topics, alpha);
        add_smoothed_rows(&mut sum.psi, &self.user_interest, &self.user_totals, self.n_interests, beta);
        if let Some(theta) = sum.theta.as_mut() {
            add_smoothed_tag_slices(theta, &self.tag_counts, &self.interest_topic, self.n_tags, eta);
        }
        sum.samples += 1;
    }

    fn finish(&self, sum: PosteriorSum) -> Posterior {
        let n = sum.samples;
        let theta = match sum.theta {
            Some(theta) => PosteriorSum::mean(theta, n),
            None => {
                let mut theta = vec![0.0; self.tag_counts.len()];
                add_smoothed_tag_slices(&mut theta, &self.tag_counts, &self.interest_topic, self.n_tags, self.hyper.eta);
                theta
            }
        };
        Posterior {
            phi: Matrix::from_vec(self.corpus.n_resources(), self.n_topics, PosteriorSum::mean(sum.phi, n))
                .expect("phi shape"),
            psi: Matrix::from_vec(self.corpus.n_users(), self.n_interests, PosteriorSum::mean(sum.psi, n))
                .expect("psi shape"),
            theta: Tensor3::from_vec([self.n_interests, self.n_topics, self.n_tags], theta).expect("theta shape"),
            n_samples_averaged: n,
        }
    }

    /// Recounts every table from the labels and compares with the maintained counts.
    pub fn counts_consistent(&self) -> bool {
        let mut fresh = self.clone();
        fresh.resource_topic.iter_mut().for_each(|c| *c = 0);
        fresh.user_interest.iter_mut().for_each(|c| *c = 0);
        fresh.tag_counts.iter_mut().for_each(|c| *c = 0);
        fresh.interest_topic.iter_mut().for_each(|c| *c = 0);
        for i in 0..self.corpus.len() {
            fresh.add(i);
        }
        let margins_ok = (0..self.corpus.n_resources()).all(|r| {
            self.resource_topic[r * self.n_topics..(r + 1) * self.n_topics].iter().sum::<u32>()
                == self.resource_totals[r]
        }) && (0..self.corpus.n_users()).all(|u| {
            self.user_interest[u * self.n_interests..(u + 1) * self.n_interests].iter().sum::<u32>()
                == self.user_totals[u]
        }) && self.interest_topic.iter().map(|&c| c as usize).sum::<usize>() == self.corpus.len();
        margins_ok
            && fresh.resource_topic == self.resource_topic
            && fresh.user_interest == self.user_interest
            && fresh.tag_counts == self.tag_counts
            && fresh.interest_topic == self.interest_topic
    }

    /// Relabels topics: tuples with topic `k` move to `perm[k]`.
    pub fn permute_topics(&mut self, perm: &[usize]) -> Result<()> {
        check_permutation(perm, self.n_topics)?;
        for z in &mut self.topics {
            *z = perm[*z as usize] as u32;
        }
        self.recount();
        Ok(())
    }

    fn recount(&mut self) {
        self.resource_topic.iter_mut().for_each(|c| *c = 0);
        self.user_interest.iter_mut().for_each(|c| *c = 0);
        self.tag_counts.iter_mut().for_each(|c| *c = 0);
        self.interest_topic.iter_mut().for_each(|c| *c = 0);
        for i in 0..self.corpus.len() {
            self.add(i);
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || !perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Config(format!("not a permutation of 0..{n}")));
    }
    Ok(())
}

pub(crate) fn normalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
}

/// True iff the mean relative change over the last `window` successive pairs
/// of `history` is below `threshold`.
pub fn check_converged(history: &[f64], window: usize, threshold: f64) -> Result<bool> {
    if window == 0 || history.len() < window + 1 {
        return Err(Error::InsufficientHistory { need: window.max(1) + 1, have: history.len() });
    }
    let tail = &history[history.len() - window - 1..];
    let mean_change = tail
        .windows(2)
        .map(|w| {
            let diff = (w[1] - w[0]).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / w[0].abs()
            }
        })
        .sum::<f64>()
        / window as f64;
    Ok(mean_change < threshold)
}

/// One row of the per-iteration training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub alpha: f64,
    /// Absent for models without an interest layer.
    pub beta: Option<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub trace: Vec<TraceRow>,
    /// First iteration at which the likelihood stopping rule held.
    pub converged_at: Option<usize>,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str = "iteration,log_likelihood,alpha,beta,eta";

    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.log_likelihood).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.trace {
            let beta = r.beta.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.iteration, r.log_likelihood, r.alpha, beta, r.eta));
        }
        out
    }

    pub(crate) fn record(&mut self, row: TraceRow, window: usize, threshold: f64) -> Result<()> {
        if !row.log_likelihood.is_finite() {
            return Err(Error::Numerical(format!(
                "log likelihood is {} at iteration {}",
                row.log_likelihood, row.iteration
            )));
        }
        self.trace.push(row);
        if self.converged_at.is_none() && self.trace.len() > window {
            if check_converged(&self.log_likelihoods(), window, threshold)? {
                self.converged_at = Some(row.iteration);
            }
        }
        Ok(())
    }
}

/// Runs `n_iterations` sweeps from a random start and averages the per-sweep
/// estimates over the final `averaging_window` sweeps.
pub fn train(corpus: &Corpus, config: &ItmConfig) -> Result<(Posterior, Diagnostics)> {
    let mut state = ItmState::new(corpus, config)?;
    let theta_len = match config.theta {
        ThetaEstimate::Averaged => Some(state.tag_counts.len()),
        ThetaEstimate::Final => None,
    };
    let mut sum = PosteriorSum::new(state.resource_topic.len(), state.user_interest.len(), theta_len);
    let mut diagnostics = Diagnostics::default();
    let first_averaged = config.n_iterations - config.averaging_window + 1;
    for iteration in 1..=config.n_iterations {
        state.sweep();
        if config.hyper.active_at(iteration) {
            state.resample_hyperparameters(config.hyper.prior, config.hyper.iterations);
        }
        let h = state.hyper;
        diagnostics.record(
            TraceRow {
                iteration,
                log_likelihood: state.log_likelihood(),
                alpha: h.alpha,
                beta: Some(h.beta),
                eta: h.eta,
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
    use crate::corpus::CorpusBuilder;
    use statrs::function::gamma::ln_gamma;

    fn corpus(rows: &[(&str, &str, &str)]) -> Corpus {
        builder(rows).build().unwrap()
    }

    fn builder(rows: &[(&str, &str, &str)]) -> CorpusBuilder {
        let mut b = Corpus::builder();
        for (r, u, t) in rows {
            b.push_triple(r, u, t);
        }
        b
    }

    fn unit_hyper() -> Hyperparameters {
        Hyperparameters { alpha: 1.0, beta: 1.0, eta: 1.0 }
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn single_tuple_conditionals_are_uniform() {
        let c = corpus(&[("r", "u", "t")]);
        let s = ItmState::from_assignments(&c, 4, 3, unit_hyper(), vec![2], vec![1], 0).unwrap();
        assert_close(&s.conditional_topic_distribution(0).unwrap(), &[0.25; 4]);
        assert_close(&s.conditional_interest_distribution(0).unwrap(), &[1.0 / 3.0; 3]);
        assert!(matches!(s.conditional_topic_distribution(1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn two_tuple_conditionals_by_hand() {
        // Left factors (1 + 1/2) / 2 and (0 + 1/2) / 2; both tag factors equal 1 with one tag.
        let c = corpus(&[("r", "u", "t"), ("r", "u", "t")]);
        let s = ItmState::from_assignments(&c, 2, 2, unit_hyper(), vec![1, 0], vec![0, 0], 0).unwrap();
        assert_close(&s.conditional_topic_distribution(0).unwrap(), &[0.75, 0.25]);
        let s = ItmState::from_assignments(&c, 2, 2, unit_hyper(), vec![0, 0], vec![1, 0], 0).unwrap();
        assert_close(&s.conditional_interest_distribution(0).unwrap(), &[0.75, 0.25]);
    }

    #[test]
    fn conditionals_are_permutation_equivariant() {
        let c = corpus(&[("a", "u", "x"), ("a", "v", "y"), ("b", "u", "x"), ("b", "v", "z"), ("a", "u", "z")]);
        let mut s = ItmState::from_assignments(&c, 3, 2, unit_hyper(), vec![0, 1, 2, 2, 0], vec![0, 1, 1, 0, 0], 0)
            .unwrap();
        let before = s.conditional_topic_distribution(1).unwrap();
        let ll = s.log_likelihood();
        let phi = s.estimate_parameters().phi;
        let perm = [2, 0, 1];
        s.permute_topics(&perm).unwrap();
        let after = s.conditional_topic_distribution(1).unwrap();
        for k in 0..3 {
            assert!((before[k] - after[perm[k]]).abs() < 1e-15);
        }
        assert_eq!(s.log_likelihood(), ll);
        let permuted = s.estimate_parameters().phi;
        for r in 0..phi.rows() {
            for k in 0..3 {
                assert_eq!(phi.get(r, k), permuted.get(r, perm[k]));
            }
        }
        assert!(s.permute_topics(&[0, 0, 1]).is_err());
    }

    #[test]
    fn likelihood_by_hand() {
        let c = corpus(&[("r", "u", "t")]);
        let s = ItmState::from_assignments(&c, 1, 1, unit_hyper(), vec![0], vec![0], 0).unwrap();
        assert_eq!(s.log_likelihood(), 0.0);
        let mut b = builder(&[("r", "u", "t")]);
        b.intern_tag("unused");
        let c = b.build().unwrap();
        let s = ItmState::from_assignments(&c, 1, 1, unit_hyper(), vec![0], vec![0], 0).unwrap();
        assert!((s.log_likelihood() - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn estimates_by_hand() {
        let rows: Vec<(String, String, String)> =
            (0..10).map(|i| ("r".to_string(), format!("u{i}"), format!("t{i}"))).collect();
        let refs: Vec<(&str, &str, &str)> = rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect();
        let c = corpus(&refs);
        let topics = vec![0, 0, 0, 0, 0, 1, 2, 3, 4, 5];
        let s = ItmState::from_assignments(&c, 10, 2, unit_hyper(), topics, vec![0; 10], 0).unwrap();
        let p = s.estimate_parameters();
        assert!((p.phi.get(0, 0) - 5.1 / 11.0).abs() < 1e-15);
        assert!(p.max_normalization_error() < 1e-12);
        assert!(p.psi.iter_rows().all(|r| r.iter().all(|&v| v > 0.0)));

        let mut sum = vec![0.0; 4];
        add_smoothed_rows(&mut sum, &[0, 0, 0, 0], &[0], 4, 1.0);
        assert_eq!(sum, vec![0.25; 4]);
    }

    #[test]
    fn init_is_forced_with_single_labels_and_consistent_otherwise() {
        let c = corpus(&[("r", "u", "t")]);
        let s = ItmState::new(&c, &ItmConfig::new(1, 1)).unwrap();
        assert_eq!((s.topics(), s.interests()), (&[0u32][..], &[0u32][..]));
        assert_eq!(s.resource_topic_count(0, 0), 1);

        let rows: Vec<(String, String, String)> = (0..1000)
            .map(|i| (format!("r{}", i % 37), format!("u{}", i % 53), format!("t{}", i % 71)))
            .collect();
        let refs: Vec<(&str, &str, &str)> = rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect();
        let c = corpus(&refs);
        let config = ItmConfig { seed: 5, ..ItmConfig::new(10, 4) };
        let mut s = ItmState::new(&c, &config).unwrap();
        assert!(s.counts_consistent());
        let again = ItmState::new(&c, &config).unwrap();
        assert_eq!(s.topics(), again.topics());
        assert_eq!(s.interests(), again.interests());
        for _ in 0..3 {
            s.sweep();
            assert!(s.counts_consistent());
        }
    }

    #[test]
    fn single_label_state_is_a_fixed_point() {
        let c = corpus(&[("a", "u", "x"), ("b", "v", "y"), ("a", "v", "x")]);
        let mut s = ItmState::new(&c, &ItmConfig::new(1, 1)).unwrap();
        let ll = s.log_likelihood();
        s.sweep();
        assert_eq!(s.topics(), &[0, 0, 0]);
        assert_eq!(s.log_likelihood(), ll);
    }

    #[test]
    fn convergence_rule() {
        assert!(check_converged(&[-5.0; 11], 10, 1e-9).unwrap());
        let growing: Vec<f64> = (0..11).map(|i| 1.1f64.powi(i)).collect();
        assert!(!check_converged(&growing, 10, 0.02).unwrap());
        assert!(matches!(check_converged(&[1.0; 3], 10, 0.02), Err(Error::InsufficientHistory { .. })));

        // Mean relative change over the last two steps, evaluated independently.
        let history = [-100.0, -99.0, -98.9, -98.89, -98.889];
        let rule = |h: &[f64]| {
            let n = h.len();
            ((h[n - 2] - h[n - 3]).abs() / h[n - 3].abs() + (h[n - 1] - h[n - 2]).abs() / h[n - 2].abs()) / 2.0 < 0.005
        };
        let flips = (3..=history.len()).find(|&n| rule(&history[..n])).unwrap();
        assert_eq!(flips, 4);
        for n in 3..=history.len() {
            assert_eq!(check_converged(&history[..n], 2, 0.005).unwrap(), n >= flips);
        }
    }

    /// `log p(η | counts)` up to a constant under a Gamma(1, 1) prior for a
    /// symmetric Dirichlet of total mass `η` over `dim` components.
    fn log_mass_posterior(eta: f64, groups: &[Vec<u32>], dim: usize) -> f64 {
        let per = eta / dim as f64;
        -eta + groups
            .iter()
            .map(|g| {
                let n: u32 = g.iter().sum();
                ln_gamma(eta) - ln_gamma(n as f64 + eta)
                    + g.iter().map(|&c| ln_gamma(c as f64 + per) - ln_gamma(per)).sum::<f64>()
            })
            .sum::<f64>()
    }

    #[test]
    fn concentrated_counts_pull_eta_down() {
        // Three (interest, topic) groups, each using a single tag out of 20.
        let mut rows = Vec::new();
        for g in 0..3 {
            for _ in 0..30 {
                rows.push((format!("r{g}"), "u".to_string(), format!("t{g}")));
            }
        }
        let refs: Vec<(&str, &str, &str)> = rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect();
        let mut b = builder(&refs);
        for t in 3..20 {
            b.intern_tag(&format!("t{t}"));
        }
        let c = b.build().unwrap();
        let topics: Vec<u32> = (0..90).map(|i| (i / 30) as u32).collect();

        let groups: Vec<Vec<u32>> = (0..3)
            .map(|g| (0..20).map(|t| if t == g { 30 } else { 0 }).collect())
            .collect();
        let (mut below, mut total) = (0.0, 0.0);
        let step = 1e-4;
        let mut eta = step / 2.0;
        while eta < 60.0 {
            let d = log_mass_posterior(eta, &groups, 20).exp();
            total += d;
            if eta < 1.0 {
                below += d;
            }
            eta += step;
        }
        let exact = below / total;
        assert!(exact > 0.9, "{exact}");

        let draws = 100;
        let hits = (0..draws)
            .filter(|&seed| {
                let mut s =
                    ItmState::from_assignments(&c, 3, 1, unit_hyper(), topics.clone(), vec![0; 90], seed).unwrap();
                s.resample_hyperparameters(GammaPrior::default(), 30).eta < 1.0
            })
            .count();
        assert!(hits >= 90, "{hits}");
        assert!((hits as f64 / draws as f64 - exact).abs() < 0.08, "{hits} vs {exact}");
    }

    #[test]
    fn training_is_deterministic_and_normalized() {
        let c = corpus(&[("a", "u", "x"), ("a", "v", "y"), ("b", "u", "x"), ("b", "v", "z"), ("c", "w", "z")]);
        let config = ItmConfig { n_iterations: 30, averaging_window: 10, seed: 3, ..ItmConfig::new(3, 2) };
        let (p1, d1) = train(&c, &config).unwrap();
        let (p2, d2) = train(&c, &config).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(d1, d2);
        assert_eq!(p1.n_samples_averaged, 10);
        assert!(p1.max_normalization_error() < 1e-12);
        assert_eq!(d1.trace.len(), 30);
        assert_eq!(d1.to_csv().lines().next(), Some(Diagnostics::CSV_HEADER));

        let last = ItmConfig { averaging_window: 1, ..config.clone() };
        let (p, _) = train(&c, &last).unwrap();
        let mut state = ItmState::new(&c, &last).unwrap();
        for it in 1..=last.n_iterations {
            state.sweep();
            if last.hyper.active_at(it) {
                state.resample_hyperparameters(last.hyper.prior, last.hyper.iterations);
            }
        }
        let direct = state.estimate_parameters();
        assert_eq!(p.phi, direct.phi);
        assert_eq!(p.theta, direct.theta);
    }

    #[test]
    fn config_validation() {
        assert!(ItmConfig::new(0, 1).validate().is_err());
        assert!(ItmConfig { alpha: 0.0, ..ItmConfig::new(2, 2) }.validate().is_err());
        assert!(ItmConfig { averaging_window: 2000, ..ItmConfig::new(2, 2) }.validate().is_err());
        let c = corpus(&[("r", "u", "t")]);
        assert!(ItmState::new(&c, &ItmConfig::new(1, 0)).is_err());
    }
}
