//! Nonparametric ITM: hierarchical Dirichlet process priors over topics and
//! interests, sampled in the direct-assignment representation.
//!
//! Every resource draws topics from a Dirichlet process whose base measure is
//! a global topic distribution `(α_1..α_k, α_u)`, where `α_u` is the lumped
//! weight of all topics not yet instantiated. Users and interests mirror this
//! with `(β_1..β_j, β_u)`. A tuple may open a new component; components that
//! lose all their tuples are pruned at the end of a sweep.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hyper::{resample_dp_concentration, resample_group_concentration, resample_symmetric_mass, GammaPrior};
use crate::itm::{check_converged, normalize, validate_masses, HyperSchedule, ThetaEstimate};
use crate::posterior::Posterior;
use crate::rng::{substream, ChainRng};
use crate::sampling::{sample_beta, sample_dirichlet, sample_index, sample_table_count};
use crate::table::{Matrix, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HdpMode {
    /// Nonparametric LDA: a single fixed interest.
    HdpLda,
    HdpItm,
}

impl HdpMode {
    pub fn has_interests(self) -> bool {
        matches!(self, HdpMode::HdpItm)
    }

    pub fn name(self) -> &'static str {
        match self {
            HdpMode::HdpLda => "hdp-lda",
            HdpMode::HdpItm => "hdpitm",
        }
    }
}

/// Stick-breaking proportion used when a component is instantiated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StickRule {
    /// `a ~ Beta(1, α_u)`: the remainder weight itself sets the break.
    #[default]
    Remainder,
    /// `a ~ Beta(1, γ)`: the usual GEM construction.
    Standard,
}

/// Component caps and the stopping schedule of [`train_two_phase`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPolicy {
    pub max_topics: usize,
    pub max_interests: usize,
    /// Sweeps during which new components may be instantiated.
    pub grow_iterations: usize,
    pub min_iterations: usize,
    pub max_iterations: usize,
    pub ll_window: usize,
    pub ll_threshold: f64,
    /// Extra sweeps after stopping whose estimates are averaged.
    pub averaging_window: usize,
    /// Keep the new-component slot open for the whole run (single-phase training).
    pub always_grow: bool,
}

impl Default for GrowthPolicy {
    fn default() -> Self {
        Self {
            max_topics: 400,
            max_interests: 80,
            grow_iterations: 100,
            min_iterations: 400,
            max_iterations: 600,
            ll_window: 10,
            ll_threshold: 0.02,
            averaging_window: 100,
            always_grow: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpConfig {
    pub mode: HdpMode,
    pub init_topics: usize,
    /// Ignored by [`HdpMode::HdpLda`].
    pub init_interests: usize,
    /// Initial `α_u` and `β_u`; instantiated components share the rest evenly.
    pub initial_rest: f64,
    pub eta: f64,
    pub gamma_z: f64,
    pub gamma_x: f64,
    pub mu_z: f64,
    pub mu_x: f64,
    pub seed: u64,
    pub stick: StickRule,
    pub policy: GrowthPolicy,
    pub hyper: HyperSchedule,
    pub theta: ThetaEstimate,
}

impl HdpConfig {
    /// Full-scale defaults: 100 topics and 20 interests, capped at 400 and 80.
    pub fn new(mode: HdpMode) -> Self {
        Self {
            mode,
            init_topics: 100,
            init_interests: 20,
            initial_rest: 0.5,
            eta: 1.0,
            gamma_z: 1.0,
            gamma_x: 1.0,
            mu_z: 1.0,
            mu_x: 1.0,
            seed: 0,
            stick: StickRule::Remainder,
            policy: GrowthPolicy::default(),
            hyper: HyperSchedule::default(),
            theta: ThetaEstimate::Averaged,
        }
    }

    /// Starting dimensions suited to the small synthetic corpora.
    pub fn synthetic(mode: HdpMode) -> Self {
        Self { init_topics: 10, init_interests: 3, ..Self::new(mode) }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.policy;
        if self.init_topics == 0 || (self.mode.has_interests() && self.init_interests == 0) {
            return Err(Error::Config("initial numbers of topics and interests must be at least 1".into()));
        }
        if p.max_topics < self.init_topics || (self.mode.has_interests() && p.max_interests < self.init_interests) {
            return Err(Error::Config("component caps must be at least the initial dimensions".into()));
        }
        if p.max_iterations == 0 || p.min_iterations > p.max_iterations {
            return Err(Error::Config(format!(
                "iteration bounds {}..={} are invalid",
                p.min_iterations, p.max_iterations
            )));
        }
        if p.averaging_window == 0 || p.ll_window == 0 {
            return Err(Error::Config("averaging and likelihood windows must be at least 1".into()));
        }
        if !(self.initial_rest > 0.0 && self.initial_rest < 1.0) {
            return Err(Error::Config("initial remainder weight must lie strictly between 0 and 1".into()));
        }
        validate_masses(&[
            ("eta", self.eta),
            ("gamma_z", self.gamma_z),
            ("gamma_x", self.gamma_x),
            ("mu_z", self.mu_z),
            ("mu_x", self.mu_x),
        ])
    }

    fn interest_count(&self) -> usize {
        if self.mode.has_interests() {
            self.init_interests
        } else {
            1
        }
    }
}

/// Global component weights and concentrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpGlobals {
    /// `α_1..α_k` of the instantiated topics.
    pub topic_weights: Vec<f64>,
    /// `α_u`.
    pub topic_rest: f64,
    pub interest_weights: Vec<f64>,
    pub interest_rest: f64,
    pub gamma_z: f64,
    pub gamma_x: f64,
    pub mu_z: f64,
    pub mu_x: f64,
}

impl HdpGlobals {
    /// `rest` for the uninstantiated remainder, the other mass split evenly.
    pub fn uniform(n_topics: usize, n_interests: usize, rest: f64) -> Self {
        let even = |n: usize| if n == 0 { Vec::new() } else { vec![(1.0 - rest) / n as f64; n] };
        Self {
            topic_weights: even(n_topics),
            topic_rest: if n_topics == 0 { 1.0 } else { rest },
            interest_weights: even(n_interests),
            interest_rest: if n_interests == 0 { 1.0 } else { rest },
            gamma_z: 1.0,
            gamma_x: 1.0,
            mu_z: 1.0,
            mu_x: 1.0,
        }
    }

    /// `|Σ α_k + α_u - 1|` maximized with its interest counterpart.
    pub fn max_mass_error(&self) -> f64 {
        let t = (self.topic_weights.iter().sum::<f64>() + self.topic_rest - 1.0).abs();
        let x = (self.interest_weights.iter().sum::<f64>() + self.interest_rest - 1.0).abs();
        t.max(x)
    }

    /// Breaks `a` off the topic remainder as a new component.
    pub fn split_topic(&mut self, a: f64) {
        split(&mut self.topic_weights, &mut self.topic_rest, a);
    }

    pub fn split_interest(&mut self, a: f64) {
        split(&mut self.interest_weights, &mut self.interest_rest, a);
    }
}

fn split(weights: &mut Vec<f64>, rest: &mut f64, a: f64) {
    let w = a * *rest;
    weights.push(w);
    *rest -= w;
}

/// Draws `(w_1..w_k, w_u) ~ Dirichlet(tables_1..tables_k, gamma)`.
pub fn draw_global_weights<R: Rng + ?Sized>(tables: &[u64], gamma: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let mut params: Vec<f64> = tables.iter().map(|&m| m as f64).collect();
    params.push(gamma);
    let mut w = sample_dirichlet(&params, rng);
    let rest = w.pop().expect("remainder weight");
    (w, rest)
}

/// Conditional over `counts.len()` used components plus a trailing new slot
/// for one tuple of a group holding `group_total` tuples (itself included):
///
/// `p(k) ∝ (n_k + μ w_k) / (N + μ - 1) · f_k`, `p(new) ∝ μ w_u / (N + μ - 1) / n_tags`.
///
/// The new slot is zero when `allow_new` is false.
#[allow(clippy::too_many_arguments)]
pub fn component_conditional(
    counts: &[u32],
    weights: &[f64],
    rest: f64,
    concentration: f64,
    group_total: u32,
    tag_factors: &[f64],
    n_tags: usize,
    allow_new: bool,
) -> Result<Vec<f64>> {
    if counts.len() != weights.len() || counts.len() != tag_factors.len() {
        return Err(Error::Shape("counts, weights and tag factors must align".into()));
    }
    let denom = group_total as f64 + concentration - 1.0;
    let mut p: Vec<f64> = counts
        .iter()
        .zip(weights)
        .zip(tag_factors)
        .map(|((&n, &w), &f)| (n as f64 + concentration * w) / denom * f)
        .collect();
    p.push(if allow_new { concentration * rest / denom / n_tags as f64 } else { 0.0 });
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("no component has positive probability".into()));
    }
    normalize(&mut p);
    Ok(p)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOutcome {
    pub new_topics: usize,
    pub new_interests: usize,
    /// A tuple chose a new component while its layer was at the cap.
    pub cap_reached: bool,
}

#[derive(Debug, Clone, Copy)]
enum TopicRule {
    Hdp,
    /// Symmetric Dirichlet prior with total mass `alpha` in the infinite limit.
    SymmetricLimit(f64),
}

/// Labels, dynamic count tables and globals of one HDP chain.
///
/// Tables are laid out with capacity strides (`sz` topics, `sx` interests)
/// that grow geometrically, so instantiation rarely moves data.
#[derive(Debug, Clone)]
pub struct HdpState<'c> {
    corpus: &'c Corpus,
    mode: HdpMode,
    stick: StickRule,
    n_tags: usize,
    max_topics: usize,
    max_interests: usize,
    n_topics: usize,
    n_interests: usize,
    sz: usize,
    sx: usize,
    topics: Vec<u32>,
    interests: Vec<u32>,
    /// `[r][sz]`
    resource_topic: Vec<u32>,
    /// `[u][sx]`
    user_interest: Vec<u32>,
    /// `[t][sx][sz]`
    tag_counts: Vec<u32>,
    /// `[sx][sz]`
    interest_topic: Vec<u32>,
    topic_totals: Vec<u32>,
    interest_totals: Vec<u32>,
    resource_totals: Vec<u32>,
    user_totals: Vec<u32>,
    globals: HdpGlobals,
    eta: f64,
    topic_uids: Vec<u64>,
    interest_uids: Vec<u64>,
    next_uid: u64,
    rng: ChainRng,
    stick_rng: ChainRng,
    globals_rng: ChainRng,
    eta_rng: ChainRng,
    scratch: Vec<f64>,
}

impl<'c> HdpState<'c> {
    pub fn new(corpus: &'c Corpus, config: &HdpConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n_interests = config.interest_count();
        let mut topic_rng = substream(config.seed, "init/topic");
        let mut interest_rng = substream(config.seed, "init/interest");
        let topics = (0..corpus.len()).map(|_| topic_rng.random_range(0..config.init_topics as u32)).collect();
        let interests = (0..corpus.len()).map(|_| interest_rng.random_range(0..n_interests as u32)).collect();
        let globals = HdpGlobals {
            gamma_z: config.gamma_z,
            gamma_x: config.gamma_x,
            mu_z: config.mu_z,
            mu_x: config.mu_x,
            ..HdpGlobals::uniform(config.init_topics, n_interests, config.initial_rest)
        };
        let globals = if config.mode.has_interests() {
            globals
        } else {
            HdpGlobals { interest_weights: vec![1.0], interest_rest: 0.0, ..globals }
        };
        Self::from_assignments(corpus, config, config.init_topics, n_interests, topics, interests, globals)
    }

    /// Builds a state from explicit labels and globals. Dimensions, caps,
    /// `eta`, the stick rule and the seed come from `config`.
    pub fn from_assignments(
        corpus: &'c Corpus,
        config: &HdpConfig,
        n_topics: usize,
        n_interests: usize,
        topics: Vec<u32>,
        interests: Vec<u32>,
        globals: HdpGlobals,
    ) -> Result<Self> {
        validate_masses(&[("eta", config.eta)])?;
        if n_topics == 0 || n_interests == 0 || (!config.mode.has_interests() && n_interests != 1) {
            return Err(Error::Config("invalid component counts".into()));
        }
        if topics.len() != corpus.len() || interests.len() != corpus.len() {
            return Err(Error::Shape("one topic and one interest label per tuple".into()));
        }
        if topics.iter().any(|&z| z as usize >= n_topics) || interests.iter().any(|&x| x as usize >= n_interests) {
            return Err(Error::Config("label out of range".into()));
        }
        if globals.topic_weights.len() != n_topics || globals.interest_weights.len() != n_interests {
            return Err(Error::Shape("one global weight per instantiated component".into()));
        }
        let max_topics = config.policy.max_topics.max(n_topics);
        let max_interests = if config.mode.has_interests() { config.policy.max_interests.max(n_interests) } else { 1 };
        let sz = initial_capacity(n_topics, max_topics);
        let sx = initial_capacity(n_interests, max_interests);
        let n_tags = corpus.n_tags();
        let seed = config.seed;
        let mut state = Self {
            corpus,
            mode: config.mode,
            stick: config.stick,
            n_tags,
            max_topics,
            max_interests,
            n_topics,
            n_interests,
            sz,
            sx,
            topics,
            interests,
            resource_topic: vec![0; corpus.n_resources() * sz],
            user_interest: vec![0; corpus.n_users() * sx],
            tag_counts: vec![0; n_tags * sx * sz],
            interest_topic: vec![0; sx * sz],
            topic_totals: vec![0; sz],
            interest_totals: vec![0; sx],
            resource_totals: corpus.resource_totals(),
            user_totals: corpus.user_totals(),
            globals,
            eta: config.eta,
            topic_uids: (0..n_topics as u64).collect(),
            interest_uids: (0..n_interests as u64).collect(),
            next_uid: n_topics.max(n_interests) as u64,
            rng: substream(seed, "sweep"),
            stick_rng: substream(seed, "stick"),
            globals_rng: substream(seed, "globals"),
            eta_rng: substream(seed, "hyper/eta"),
            scratch: Vec::new(),
        };
        for i in 0..corpus.len() {
            state.add(i);
        }
        Ok(state)
    }

    pub fn mode(&self) -> HdpMode {
        self.mode
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

    pub fn globals(&self) -> &HdpGlobals {
        &self.globals
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn resource_topic_count(&self, r: usize, z: usize) -> u32 {
        self.resource_topic[r * self.sz + z]
    }

    pub fn user_interest_count(&self, u: usize, x: usize) -> u32 {
        self.user_interest[u * self.sx + x]
    }

    pub fn tag_count(&self, x: usize, z: usize, t: usize) -> u32 {
        self.tag_counts[self.tag_index(t, x, z)]
    }

    pub fn topic_total(&self, z: usize) -> u32 {
        self.topic_totals[z]
    }

    pub fn interest_total(&self, x: usize) -> u32 {
        self.interest_totals[x]
    }

    #[inline]
    fn tag_index(&self, t: usize, x: usize, z: usize) -> usize {
        (t * self.sx + x) * self.sz + z
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
        self.resource_topic[r * self.sz + z] += 1;
        self.user_interest[u * self.sx + x] += 1;
        self.tag_counts[ti] += 1;
        self.interest_topic[x * self.sz + z] += 1;
        self.topic_totals[z] += 1;
        self.interest_totals[x] += 1;
    }

    #[inline]
    fn remove(&mut self, i: usize) {
        let (r, u, t, z, x) = self.tuple(i);
        let ti = self.tag_index(t, x, z);
        self.resource_topic[r * self.sz + z] -= 1;
        self.user_interest[u * self.sx + x] -= 1;
        self.tag_counts[ti] -= 1;
        self.interest_topic[x * self.sz + z] -= 1;
        self.topic_totals[z] -= 1;
        self.interest_totals[x] -= 1;
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.corpus.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.corpus.len() });
        }
        Ok(())
    }

    /// `(N_xzt + η/N_T) / (N_xz + η)` for every instantiated topic, excluding tuple `i`.
    fn topic_tag_factors(&self, i: usize) -> Vec<f64> {
        let (_, _, t, zi, xi) = self.tuple(i);
        let tag_prior = self.eta / self.n_tags as f64;
        (0..self.n_topics)
            .map(|k| {
                let own = (k == zi) as u32;
                let n_kxt = self.tag_counts[self.tag_index(t, xi, k)] - own;
                let n_kx = self.interest_topic[xi * self.sz + k] - own;
                (n_kxt as f64 + tag_prior) / (n_kx as f64 + self.eta)
            })
            .collect()
    }

    fn resource_counts_excluding(&self, i: usize) -> Vec<u32> {
        let (r, _, _, zi, _) = self.tuple(i);
        (0..self.n_topics)
            .map(|k| self.resource_topic[r * self.sz + k] - (k == zi) as u32)
            .collect()
    }

    /// Topic conditional of tuple `i` over the instantiated topics plus a
    /// trailing new-topic slot, which is zero unless `allow_new`.
    pub fn topic_conditional(&self, i: usize, allow_new: bool) -> Result<Vec<f64>> {
        self.check_index(i)?;
        let r = self.tuple(i).0;
        let g = &self.globals;
        component_conditional(
            &self.resource_counts_excluding(i),
            &g.topic_weights,
            g.topic_rest,
            g.mu_z,
            self.resource_totals[r],
            &self.topic_tag_factors(i),
            self.n_tags,
            allow_new,
        )
    }

    /// Interest conditional of tuple `i`; mirror of the topic case.
    pub fn interest_conditional(&self, i: usize, allow_new: bool) -> Result<Vec<f64>> {
        self.check_index(i)?;
        let (_, u, t, zi, xi) = self.tuple(i);
        let tag_prior = self.eta / self.n_tags as f64;
        let counts: Vec<u32> = (0..self.n_interests)
            .map(|j| self.user_interest[u * self.sx + j] - (j == xi) as u32)
            .collect();
        let factors: Vec<f64> = (0..self.n_interests)
            .map(|j| {
                let own = (j == xi) as u32;
                let n_jzt = self.tag_counts[self.tag_index(t, j, zi)] - own;
                let n_jz = self.interest_topic[j * self.sz + zi] - own;
                (n_jzt as f64 + tag_prior) / (n_jz as f64 + self.eta)
            })
            .collect();
        let g = &self.globals;
        component_conditional(
            &counts,
            &g.interest_weights,
            g.interest_rest,
            g.mu_x,
            self.user_totals[u],
            &factors,
            self.n_tags,
            allow_new && self.mode.has_interests(),
        )
    }

    /// Topic conditional under a symmetric Dirichlet prior of total mass
    /// `alpha` taken to the infinite limit: a topic only keeps prior support
    /// inside resources that already use it.
    pub fn degenerate_symmetric_conditional(&self, i: usize, alpha: f64) -> Result<Vec<f64>> {
        self.check_index(i)?;
        let r = self.tuple(i).0;
        let denom = self.resource_totals[r] as f64 + alpha - 1.0;
        let mut p: Vec<f64> = self
            .resource_counts_excluding(i)
            .iter()
            .zip(self.topic_tag_factors(i))
            .map(|(&n, f)| n as f64 / denom * f)
            .collect();
        p.push(alpha / denom / self.n_tags as f64);
        normalize(&mut p);
        Ok(p)
    }

    /// One sweep in corpus order. With `grow`, each tuple may open a new
    /// component; the first attempt beyond a cap is redrawn among existing
    /// components and closes growth for the rest of the sweep.
    pub fn sweep(&mut self, grow: bool) -> SweepOutcome {
        self.sweep_with(TopicRule::Hdp, grow)
    }

    /// A growing sweep whose topic step follows
    /// [`degenerate_symmetric_conditional`](Self::degenerate_symmetric_conditional).
    pub fn sweep_symmetric_limit(&mut self, alpha: f64) -> SweepOutcome {
        self.sweep_with(TopicRule::SymmetricLimit(alpha), true)
    }

    fn sweep_with(&mut self, rule: TopicRule, grow: bool) -> SweepOutcome {
        let mut outcome = SweepOutcome::default();
        let mut grow = grow;
        let eta = self.eta;
        let tag_prior = eta / self.n_tags as f64;
        let inv_tags = 1.0 / self.n_tags as f64;
        let triples = self.corpus.triples();
        let mut weights = std::mem::take(&mut self.scratch);
        for (i, tr) in triples.iter().enumerate() {
            self.remove(i);
            let (r, u, t) = (tr.resource as usize, tr.user as usize, tr.tag as usize);

            // Shared denominators cancel and are dropped.
            let x = self.interests[i] as usize;
            let (sz, kz) = (self.sz, self.n_topics);
            let rt = &self.resource_topic[r * sz..r * sz + kz];
            let tag_base = (t * self.sx + x) * sz;
            let tc = &self.tag_counts[tag_base..tag_base + kz];
            let it = &self.interest_topic[x * sz..x * sz + kz];
            let g = &self.globals;
            weights.clear();
            let mut total = 0.0;
            for k in 0..kz {
                let prior = match rule {
                    TopicRule::Hdp => g.mu_z * g.topic_weights[k],
                    TopicRule::SymmetricLimit(_) => 0.0,
                };
                let w = (rt[k] as f64 + prior) * (tc[k] as f64 + tag_prior) / (it[k] as f64 + eta);
                weights.push(w);
                total += w;
            }
            if grow {
                let w = match rule {
                    TopicRule::Hdp => g.mu_z * g.topic_rest,
                    TopicRule::SymmetricLimit(alpha) => alpha,
                } * inv_tags;
                weights.push(w);
                total += w;
            }
            let mut z = sample_index(&weights, total, &mut self.rng);
            if z == kz {
                if kz >= self.max_topics {
                    outcome.cap_reached = true;
                    grow = false;
                    weights.pop();
                    let total: f64 = weights.iter().sum();
                    z = sample_index(&weights, total, &mut self.rng);
                } else {
                    self.instantiate_topic();
                    outcome.new_topics += 1;
                }
            }

            if self.mode.has_interests() {
                let (sz, sx, jx) = (self.sz, self.sx, self.n_interests);
                let ui = &self.user_interest[u * sx..u * sx + jx];
                let g = &self.globals;
                weights.clear();
                let mut total = 0.0;
                for j in 0..jx {
                    let n_jzt = self.tag_counts[(t * sx + j) * sz + z];
                    let n_jz = self.interest_topic[j * sz + z];
                    let w = (ui[j] as f64 + g.mu_x * g.interest_weights[j]) * (n_jzt as f64 + tag_prior)
                        / (n_jz as f64 + eta);
                    weights.push(w);
                    total += w;
                }
                if grow {
                    let w = g.mu_x * g.interest_rest * inv_tags;
                    weights.push(w);
                    total += w;
                }
                let mut x = sample_index(&weights, total, &mut self.rng);
                if x == jx {
                    if jx >= self.max_interests {
                        outcome.cap_reached = true;
                        grow = false;
                        weights.pop();
                        let total: f64 = weights.iter().sum();
                        x = sample_index(&weights, total, &mut self.rng);
                    } else {
                        self.instantiate_interest();
                        outcome.new_interests += 1;
                    }
                }
                self.interests[i] = x as u32;
            }
            self.topics[i] = z as u32;
            self.add(i);
        }
        self.scratch = weights;
        outcome
    }

    fn stick_proportion(&mut self, rest: f64, gamma: f64) -> f64 {
        let b = match self.stick {
            StickRule::Remainder => rest,
            StickRule::Standard => gamma,
        };
        if !(b > 0.0) {
            return 1.0;
        }
        let a = sample_beta(1.0, b, &mut self.stick_rng);
        if a.is_nan() {
            1.0
        } else {
            a
        }
    }

    /// Appends an empty topic, breaking its weight off `α_u`.
    pub fn instantiate_topic(&mut self) {
        if self.n_topics == self.sz {
            self.grow_topic_capacity();
        }
        let a = self.stick_proportion(self.globals.topic_rest, self.globals.gamma_z);
        self.globals.split_topic(a);
        self.topic_uids.push(self.next_uid);
        self.next_uid += 1;
        self.n_topics += 1;
    }

    /// Appends an empty interest, breaking its weight off `β_u`.
    pub fn instantiate_interest(&mut self) {
        if self.n_interests == self.sx {
            self.grow_interest_capacity();
        }
        let a = self.stick_proportion(self.globals.interest_rest, self.globals.gamma_x);
        self.globals.split_interest(a);
        self.interest_uids.push(self.next_uid);
        self.next_uid += 1;
        self.n_interests += 1;
    }

    fn grow_topic_capacity(&mut self) {
        let new = (self.sz * 2).max(self.sz + 1).min(self.max_topics.max(self.sz + 1));
        let (old, sx) = (self.sz, self.sx);
        self.resource_topic = relayout(&self.resource_topic, self.corpus.n_resources(), (1, 1), (old, new));
        self.tag_counts = relayout(&self.tag_counts, self.n_tags, (sx, sx), (old, new));
        self.interest_topic = relayout(&self.interest_topic, 1, (sx, sx), (old, new));
        self.topic_totals.resize(new, 0);
        self.sz = new;
    }

    fn grow_interest_capacity(&mut self) {
        let new = (self.sx * 2).max(self.sx + 1).min(self.max_interests.max(self.sx + 1));
        let (old, sz) = (self.sx, self.sz);
        self.user_interest = relayout(&self.user_interest, self.corpus.n_users(), (1, 1), (old, new));
        self.tag_counts = relayout(&self.tag_counts, self.n_tags, (old, new), (sz, sz));
        self.interest_topic = relayout(&self.interest_topic, 1, (old, new), (sz, sz));
        self.interest_totals.resize(new, 0);
        self.sx = new;
    }

    /// Removes components without tuples, folding their weight into the
    /// remainder and compacting labels. Returns the numbers removed.
    pub fn prune(&mut self) -> (usize, usize) {
        let keep_z: Vec<usize> = (0..self.n_topics).filter(|&k| self.topic_totals[k] > 0).collect();
        let removed_z = self.n_topics - keep_z.len();
        if removed_z > 0 {
            self.compact_topics(&keep_z);
        }
        let keep_x: Vec<usize> = (0..self.n_interests).filter(|&j| self.interest_totals[j] > 0).collect();
        let removed_x = self.n_interests - keep_x.len();
        if removed_x > 0 {
            self.compact_interests(&keep_x);
        }
        (removed_z, removed_x)
    }

    fn compact_topics(&mut self, keep: &[usize]) {
        let old_n = self.n_topics;
        let map = label_map(keep, old_n);
        for z in &mut self.topics {
            *z = map[*z as usize];
        }
        let sz = self.sz;
        for table in [&mut self.resource_topic, &mut self.tag_counts, &mut self.interest_topic] {
            for row in table.chunks_exact_mut(sz) {
                compact_blocks(row, keep, old_n, 1);
            }
        }
        compact_blocks(&mut self.topic_totals, keep, old_n, 1);
        fold_weights(&mut self.globals.topic_weights, &mut self.globals.topic_rest, keep);
        self.topic_uids = keep.iter().map(|&k| self.topic_uids[k]).collect();
        self.n_topics = keep.len();
    }

    fn compact_interests(&mut self, keep: &[usize]) {
        let old_n = self.n_interests;
        let map = label_map(keep, old_n);
        for x in &mut self.interests {
            *x = map[*x as usize];
        }
        let (sx, sz) = (self.sx, self.sz);
        for row in self.user_interest.chunks_exact_mut(sx) {
            compact_blocks(row, keep, old_n, 1);
        }
        for block in self.tag_counts.chunks_exact_mut(sx * sz) {
            compact_blocks(block, keep, old_n, sz);
        }
        compact_blocks(&mut self.interest_topic, keep, old_n, sz);
        compact_blocks(&mut self.interest_totals, keep, old_n, 1);
        fold_weights(&mut self.globals.interest_weights, &mut self.globals.interest_rest, keep);
        self.interest_uids = keep.iter().map(|&j| self.interest_uids[j]).collect();
        self.n_interests = keep.len();
    }

    /// Redraws the global weights from simulated table counts and, when
    /// `concentrations` is set, the concentrations γ and μ of both layers.
    pub fn resample_globals(&mut self, prior: GammaPrior, concentrations: bool) {
        let rng = &mut self.globals_rng;
        let g = &mut self.globals;
        let (sz, kz) = (self.sz, self.n_topics);
        let mut tables = vec![0u64; kz];
        for row in self.resource_topic.chunks_exact(sz) {
            for (k, m) in tables.iter_mut().enumerate() {
                *m += sample_table_count(row[k], g.mu_z * g.topic_weights[k], rng) as u64;
            }
        }
        (g.topic_weights, g.topic_rest) = draw_global_weights(&tables, g.gamma_z, rng);
        if concentrations {
            let total: u64 = tables.iter().sum();
            g.gamma_z = resample_dp_concentration(g.gamma_z, kz, total, prior, rng);
            g.mu_z = resample_group_concentration(g.mu_z, &self.resource_totals, total, prior, rng);
        }

        if !self.mode.has_interests() {
            return;
        }
        let (sx, jx) = (self.sx, self.n_interests);
        let mut tables = vec![0u64; jx];
        for row in self.user_interest.chunks_exact(sx) {
            for (j, m) in tables.iter_mut().enumerate() {
                *m += sample_table_count(row[j], g.mu_x * g.interest_weights[j], rng) as u64;
            }
        }
        (g.interest_weights, g.interest_rest) = draw_global_weights(&tables, g.gamma_x, rng);
        if concentrations {
            let total: u64 = tables.iter().sum();
            g.gamma_x = resample_dp_concentration(g.gamma_x, jx, total, prior, rng);
            g.mu_x = resample_group_concentration(g.mu_x, &self.user_totals, total, prior, rng);
        }
    }

    /// Resamples the tag-layer mass `η`.
    pub fn resample_eta(&mut self, prior: GammaPrior, iterations: usize) -> f64 {
        self.eta = resample_symmetric_mass(
            self.eta,
            self.n_tags,
            &self.tag_counts,
            &self.interest_topic,
            prior,
            iterations,
            &mut self.eta_rng,
        );
        self.eta
    }

    pub fn log_likelihood(&self) -> f64 {
        let tag_prior = self.eta / self.n_tags as f64;
        (0..self.corpus.len())
            .map(|i| {
                let (_, _, t, z, x) = self.tuple(i);
                let n_xzt = self.tag_counts[self.tag_index(t, x, z)];
                let n_xz = self.interest_topic[x * self.sz + z];
                ((n_xzt as f64 + tag_prior) / (n_xz as f64 + self.eta)).ln()
            })
            .sum()
    }

    /// Point estimates from the current state over the instantiated components.
    pub fn estimate_parameters(&self) -> Posterior {
        let mut avg = HdpAverage::new(true);
        avg.accumulate(self);
        avg.finish(self, ThetaEstimate::Averaged)
    }

    /// Recounts every table from the labels and checks margins and layout.
    pub fn counts_consistent(&self) -> bool {
        let mut fresh = self.clone();
        for table in [
            &mut fresh.resource_topic,
            &mut fresh.user_interest,
            &mut fresh.tag_counts,
            &mut fresh.interest_topic,
            &mut fresh.topic_totals,
            &mut fresh.interest_totals,
        ] {
            table.iter_mut().for_each(|c| *c = 0);
        }
        for i in 0..self.corpus.len() {
            fresh.add(i);
        }
        let labels_ok = self.topics.iter().all(|&z| (z as usize) < self.n_topics)
            && self.interests.iter().all(|&x| (x as usize) < self.n_interests);
        let margins_ok = self
            .resource_topic
            .chunks_exact(self.sz)
            .zip(&self.resource_totals)
            .all(|(row, &n)| row.iter().sum::<u32>() == n)
            && self
                .user_interest
                .chunks_exact(self.sx)
                .zip(&self.user_totals)
                .all(|(row, &n)| row.iter().sum::<u32>() == n)
            && self.topic_totals.iter().map(|&c| c as usize).sum::<usize>() == self.corpus.len();
        labels_ok
            && margins_ok
            && self.globals.topic_weights.len() == self.n_topics
            && self.globals.interest_weights.len() == self.n_interests
            && fresh.resource_topic == self.resource_topic
            && fresh.user_interest == self.user_interest
            && fresh.tag_counts == self.tag_counts
            && fresh.interest_topic == self.interest_topic
            && fresh.topic_totals == self.topic_totals
            && fresh.interest_totals == self.interest_totals
    }
}

fn initial_capacity(n: usize, cap: usize) -> usize {
    (2 * n).max(8).min(cap).max(n)
}

/// Copies `[outer][mid.0][inner.0]` into a zeroed `[outer][mid.1][inner.1]`.
fn relayout(data: &[u32], outer: usize, mid: (usize, usize), inner: (usize, usize)) -> Vec<u32> {
    let mut out = vec![0; outer * mid.1 * inner.1];
    for o in 0..outer {
        for m in 0..mid.0 {
            let src = (o * mid.0 + m) * inner.0;
            let dst = (o * mid.1 + m) * inner.1;
            out[dst..dst + inner.0].copy_from_slice(&data[src..src + inner.0]);
        }
    }
    out
}

fn label_map(keep: &[usize], old_n: usize) -> Vec<u32> {
    let mut map = vec![u32::MAX; old_n];
    for (new, &old) in keep.iter().enumerate() {
        map[old] = new as u32;
    }
    map
}

/// Moves block `keep[i]` (of `width` entries) to position `i` and zeroes the
/// freed blocks up to `old_n`.
fn compact_blocks(data: &mut [u32], keep: &[usize], old_n: usize, width: usize) {
    for (new, &old) in keep.iter().enumerate() {
        if new != old {
            data.copy_within(old * width..(old + 1) * width, new * width);
        }
    }
    data[keep.len() * width..old_n * width].fill(0);
}

fn fold_weights(weights: &mut Vec<f64>, rest: &mut f64, keep: &[usize]) {
    let mut kept = Vec::with_capacity(keep.len());
    let mut k = 0;
    for (i, &w) in weights.iter().enumerate() {
        if keep.get(k) == Some(&i) {
            kept.push(w);
            k += 1;
        } else {
            *rest += w;
        }
    }
    *weights = kept;
}

/// Running averages of estimates keyed by component identity, so components
/// born or pruned inside the window are handled.
#[derive(Debug, Clone)]
struct HdpAverage {
    phi: BTreeMap<u64, Vec<f64>>,
    psi: BTreeMap<u64, Vec<f64>>,
    theta: Option<HashMap<(u64, u64), (Vec<f64>, usize)>>,
    samples: usize,
}

impl HdpAverage {
    fn new(with_theta: bool) -> Self {
        Self { phi: BTreeMap::new(), psi: BTreeMap::new(), theta: with_theta.then(HashMap::new), samples: 0 }
    }

    fn accumulate(&mut self, s: &HdpState) {
        let g = &s.globals;
        accumulate_columns(
            &mut self.phi,
            &s.resource_topic,
            s.sz,
            &s.resource_totals,
            &s.topic_uids,
            &g.topic_weights,
            g.mu_z,
        );
        accumulate_columns(
            &mut self.psi,
            &s.user_interest,
            s.sx,
            &s.user_totals,
            &s.interest_uids,
            &g.interest_weights,
            g.mu_x,
        );
        if let Some(theta) = self.theta.as_mut() {
            for x in 0..s.n_interests {
                for z in 0..s.n_topics {
                    let (slice, count) = theta
                        .entry((s.interest_uids[x], s.topic_uids[z]))
                        .or_insert_with(|| (vec![0.0; s.n_tags], 0));
                    add_tag_slice(slice, s, x, z);
                    *count += 1;
                }
            }
        }
        self.samples += 1;
    }

    fn finish(self, s: &HdpState, theta_mode: ThetaEstimate) -> Posterior {
        let n = self.samples as f64;
        let columns = |map: &BTreeMap<u64, Vec<f64>>, rows: usize| {
            let cols = map.len();
            let mut m = Matrix::zeros(rows, cols);
            for (c, col) in map.values().enumerate() {
                for (r, v) in col.iter().enumerate() {
                    m.row_mut(r)[c] = v / n;
                }
            }
            m
        };
        let phi = columns(&self.phi, s.corpus.n_resources());
        let psi = columns(&self.psi, s.corpus.n_users());
        let z_uids: Vec<u64> = self.phi.keys().copied().collect();
        let x_uids: Vec<u64> = self.psi.keys().copied().collect();
        let final_slices = match (theta_mode, &self.theta) {
            (ThetaEstimate::Averaged, Some(_)) => None,
            _ => {
                let mut map = HashMap::new();
                for x in 0..s.n_interests {
                    for z in 0..s.n_topics {
                        let mut slice = vec![0.0; s.n_tags];
                        add_tag_slice(&mut slice, s, x, z);
                        map.insert((s.interest_uids[x], s.topic_uids[z]), (slice, 1));
                    }
                }
                Some(map)
            }
        };
        let slices = final_slices.as_ref().or(self.theta.as_ref()).expect("theta source");
        let mut theta = Tensor3::zeros([x_uids.len(), z_uids.len(), s.n_tags]);
        for (a, xu) in x_uids.iter().enumerate() {
            for (b, zu) in z_uids.iter().enumerate() {
                let out = theta.slice_mut(a, b);
                match slices.get(&(*xu, *zu)) {
                    Some((sum, count)) => {
                        let c = *count as f64;
                        out.iter_mut().zip(sum).for_each(|(o, v)| *o = v / c);
                    }
                    None => out.fill(1.0 / s.n_tags as f64),
                }
            }
        }
        Posterior { phi, psi, theta, n_samples_averaged: self.samples }
    }
}

/// Adds `(N_gk + μ w_k) / (N_g + μ Σ_k w_k)` for every group `g` to the column of component `k`.
fn accumulate_columns(
    map: &mut BTreeMap<u64, Vec<f64>>,
    counts: &[u32],
    stride: usize,
    totals: &[u32],
    uids: &[u64],
    weights: &[f64],
    mu: f64,
) {
    let used: f64 = weights.iter().sum();
    for (k, &uid) in uids.iter().enumerate() {
        let col = map.entry(uid).or_insert_with(|| vec![0.0; totals.len()]);
        let prior = mu * weights[k];
        for (g, (c, &n)) in col.iter_mut().zip(totals).enumerate() {
            *c += (counts[g * stride + k] as f64 + prior) / (n as f64 + mu * used);
        }
    }
}

fn add_tag_slice(out: &mut [f64], s: &HdpState, x: usize, z: usize) {
    let prior = s.eta / s.n_tags as f64;
    let denom = s.interest_topic[x * s.sz + z] as f64 + s.eta;
    for (t, o) in out.iter_mut().enumerate() {
        *o += (s.tag_counts[s.tag_index(t, x, z)] as f64 + prior) / denom;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Grow,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdpTraceRow {
    pub iteration: usize,
    pub phase: Phase,
    /// Sweep inside the final averaging window.
    pub averaging: bool,
    pub log_likelihood: f64,
    pub mu_z: f64,
    /// Absent without an interest layer.
    pub mu_x: Option<f64>,
    pub eta: f64,
    pub n_topics: usize,
    pub n_interests: usize,
    pub gamma_z: f64,
    pub gamma_x: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HdpDiagnostics {
    pub trace: Vec<HdpTraceRow>,
    /// Last sweep of the growth phase, if it ended before the run did.
    pub grow_ended_at: Option<usize>,
    /// Sweep at which the stopping rule (or the iteration bound) ended training.
    pub stopped_at: usize,
    pub converged: bool,
}

impl HdpDiagnostics {
    /// The resource and user masses `μ_z`, `μ_x` fill the `alpha` and `beta` columns.
    pub const CSV_HEADER: &'static str =
        "iteration,log_likelihood,alpha,beta,eta,n_topics,n_interests,gamma_z,gamma_x,phase";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|b| b.to_string()).unwrap_or_default();
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.trace {
            let phase = match (r.averaging, r.phase) {
                (true, _) => "average",
                (false, Phase::Grow) => "grow",
                (false, Phase::Frozen) => "frozen",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.log_likelihood,
                r.mu_z,
                opt(r.mu_x),
                r.eta,
                r.n_topics,
                r.n_interests,
                r.gamma_z,
                opt(r.gamma_x),
                phase
            ));
        }
        out
    }

    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.log_likelihood).collect()
    }
}

#[derive(Debug, Clone)]
pub struct HdpRun {
    pub posterior: Posterior,
    pub diagnostics: HdpDiagnostics,
    /// Globals after the last sweep.
    pub globals: HdpGlobals,
    pub eta: f64,
}

/// Trains with a growth phase followed by a frozen phase.
///
/// During the first `grow_iterations` sweeps new components may appear; the
/// phase ends early at the first sweep that hits a cap. Afterwards the
/// dimensionality can only shrink through pruning. Training stops once the
/// likelihood rule holds after `min_iterations`, or at `max_iterations`, and
/// `averaging_window` further sweeps are averaged. With `always_grow` the
/// new-component slot stays open throughout.
pub fn train_two_phase(corpus: &Corpus, config: &HdpConfig) -> Result<HdpRun> {
    let mut state = HdpState::new(corpus, config)?;
    let policy = &config.policy;
    let at_caps = state.n_topics >= state.max_topics
        && (!config.mode.has_interests() || state.n_interests >= state.max_interests);
    let mut phase = if policy.always_grow || (policy.grow_iterations > 0 && !at_caps) {
        Phase::Grow
    } else {
        Phase::Frozen
    };
    let mut diagnostics = HdpDiagnostics::default();
    let mut history = Vec::with_capacity(policy.max_iterations);
    let mut iteration = 0;

    let step = |state: &mut HdpState, iteration: usize, phase: Phase, averaging: bool| -> Result<(SweepOutcome, HdpTraceRow)> {
        let outcome = state.sweep(phase == Phase::Grow);
        state.prune();
        let active = config.hyper.active_at(iteration);
        state.resample_globals(config.hyper.prior, active);
        if active {
            state.resample_eta(config.hyper.prior, config.hyper.iterations);
        }
        let ll = state.log_likelihood();
        if !ll.is_finite() {
            return Err(Error::Numerical(format!("log likelihood is {ll} at iteration {iteration}")));
        }
        let g = &state.globals;
        let interests = state.mode.has_interests();
        Ok((
            outcome,
            HdpTraceRow {
                iteration,
                phase,
                averaging,
                log_likelihood: ll,
                mu_z: g.mu_z,
                mu_x: interests.then_some(g.mu_x),
                eta: state.eta,
                n_topics: state.n_topics,
                n_interests: state.n_interests,
                gamma_z: g.gamma_z,
                gamma_x: interests.then_some(g.gamma_x),
            },
        ))
    };

    while iteration < policy.max_iterations {
        iteration += 1;
        let (outcome, row) = step(&mut state, iteration, phase, false)?;
        diagnostics.trace.push(row);
        history.push(row.log_likelihood);
        if phase == Phase::Grow
            && !policy.always_grow
            && (outcome.cap_reached || iteration >= policy.grow_iterations)
        {
            phase = Phase::Frozen;
            diagnostics.grow_ended_at = Some(iteration);
        }
        if iteration >= policy.min_iterations
            && history.len() > policy.ll_window
            && check_converged(&history, policy.ll_window, policy.ll_threshold)?
        {
            diagnostics.converged = true;
            break;
        }
    }
    diagnostics.stopped_at = iteration;

    let mut average = HdpAverage::new(config.theta == ThetaEstimate::Averaged);
    for _ in 0..policy.averaging_window {
        iteration += 1;
        let (_, row) = step(&mut state, iteration, phase, true)?;
        diagnostics.trace.push(row);
        average.accumulate(&state);
    }
    Ok(HdpRun {
        posterior: average.finish(&state, config.theta),
        diagnostics,
        globals: state.globals.clone(),
        eta: state.eta,
    })
}
