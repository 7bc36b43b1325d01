//! Ground-truth corpora with tunable tag ambiguity and user interest variation.
//!
//! Resources fall into groups whose members favor the same few topics; users
//! are distributions over the same topics; each topic is a distribution over
//! tags. A user bookmarks a resource when their profiles match well enough,
//! and each bookmark's tags are drawn through the element-wise product of the
//! two profiles.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::sampling::{sample_dirichlet, sample_index};
use crate::table::Matrix;

/// Parameter values of the ambiguity x variation grid.
pub const GRID_VALUES: [f64; 5] = [1.0, 0.5, 0.1, 0.05, 0.01];

/// Dirichlet parameter of the sparse group base measures.
const GROUP_BASE_PARAM: f64 = 0.1;
/// Scale of a group's base measure when drawing member resources from it.
const GROUP_CONCENTRATION: f64 = 20.0;
/// Fraction of a profile's mass that its favored topics must carry.
const FAVORED_MASS: f64 = 0.9;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_resources: usize,
    pub n_topics: usize,
    pub n_users: usize,
    /// Users are modeled as distributions over topics, so this must equal `n_topics`.
    pub n_interests: usize,
    pub n_tags: usize,
    /// Symmetric Dirichlet parameter of each topic's tag distribution.
    pub ambiguity: f64,
    /// Symmetric Dirichlet parameter of each user's interest distribution.
    pub variation: f64,
    pub threshold_factor: f64,
    pub draws_per_post: usize,
    pub resource_groups: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_resources: 40,
            n_topics: 10,
            n_users: 100,
            n_interests: 10,
            n_tags: 100,
            ambiguity: 1.0,
            variation: 1.0,
            threshold_factor: 1.5,
            draws_per_post: 7,
            resource_groups: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("resources", self.n_resources),
            ("topics", self.n_topics),
            ("users", self.n_users),
            ("interests", self.n_interests),
            ("tags", self.n_tags),
            ("draws per post", self.draws_per_post),
            ("resource groups", self.resource_groups),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("number of {name} must be at least 1")));
        }
        if self.n_interests != self.n_topics {
            return Err(Error::Config(
                "user interests are distributions over topics: interests must equal topics".into(),
            ));
        }
        if self.resource_groups > self.n_resources {
            return Err(Error::Config("more resource groups than resources".into()));
        }
        for (name, v) in [
            ("ambiguity", self.ambiguity),
            ("variation", self.variation),
            ("threshold factor", self.threshold_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    fn favored_range(&self) -> (usize, usize) {
        (2.min(self.n_topics), 4.min(self.n_topics))
    }
}

pub fn resource_name(r: usize) -> String {
    format!("r{r}")
}

pub fn user_name(u: usize) -> String {
    format!("u{u}")
}

pub fn tag_name(t: usize) -> String {
    format!("t{t}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Resource x topic.
    pub phi: Matrix,
    /// User x topic.
    pub psi: Matrix,
    /// Topic x tag.
    pub theta: Matrix,
    pub resource_group: Vec<usize>,
}

impl GroundTruth {
    pub fn resource_names(&self) -> Vec<String> {
        (0..self.phi.rows()).map(resource_name).collect()
    }

    /// Rows of `phi` for the resources of `corpus`, in corpus id order.
    pub fn phi_for(&self, corpus: &Corpus) -> Result<Matrix> {
        let names: Vec<&str> = corpus.resources().names().iter().map(String::as_str).collect();
        self.phi_for_names(&names)
    }

    pub fn phi_for_names(&self, names: &[&str]) -> Result<Matrix> {
        let index: HashMap<String, usize> = self.resource_names().into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        let rows = names
            .iter()
            .map(|n| index.get(*n).copied().ok_or_else(|| Error::UnknownResource(n.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.phi.select_rows(&rows))
    }
}

/// Smallest number of top components holding at least `FAVORED_MASS` of `p`.
pub fn favored_count(p: &[f64]) -> usize {
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut mass = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        mass += v;
        if mass >= FAVORED_MASS {
            return k + 1;
        }
    }
    p.len()
}

/// Exponentiated Shannon entropy (nats): the effective number of components.
pub fn effective_support(p: &[f64]) -> f64 {
    (-p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()).exp()
}

/// Mean histogram intersection between the tag distributions of all topic pairs.
pub fn topic_tag_overlap(theta: &Matrix) -> f64 {
    let n = theta.rows();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            total += theta.row(a).iter().zip(theta.row(b)).map(|(x, y)| x.min(*y)).sum::<f64>();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

fn draw_favoring<R: rand::Rng>(params: &[f64], range: (usize, usize), rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..MAX_REJECTIONS {
        let p = sample_dirichlet(params, rng);
        let k = favored_count(&p);
        if (range.0..=range.1).contains(&k) {
            return Ok(p);
        }
    }
    Err(Error::Numerical("could not draw a topic profile favoring the required number of topics".into()))
}

/// Draws the true profiles. Each draw family uses its own stream, so
/// configurations that differ only in `variation` share resources and topics,
/// and ones that differ only in `ambiguity` share resources and users.
pub fn generate_ground_truth(config: &SynthConfig) -> Result<GroundTruth> {
    config.validate()?;
    let range = config.favored_range();
    let mut phi_rng = substream(config.seed, "synth/phi");
    let bases = (0..config.resource_groups)
        .map(|_| draw_favoring(&vec![GROUP_BASE_PARAM; config.n_topics], range, &mut phi_rng))
        .collect::<Result<Vec<_>>>()?;
    let resource_group: Vec<usize> = (0..config.n_resources)
        .map(|r| r * config.resource_groups / config.n_resources)
        .collect();
    let phi_rows = resource_group
        .iter()
        .map(|&g| {
            let params: Vec<f64> = bases[g].iter().map(|b| GROUP_CONCENTRATION * b).collect();
            draw_favoring(&params, range, &mut phi_rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut psi_rng = substream(config.seed, "synth/psi");
    let psi_rows = (0..config.n_users)
        .map(|_| sample_dirichlet(&vec![config.variation; config.n_topics], &mut psi_rng))
        .collect();

    let mut theta_rng = substream(config.seed, "synth/theta");
    let theta_rows = (0..config.n_topics)
        .map(|_| sample_dirichlet(&vec![config.ambiguity; config.n_tags], &mut theta_rng))
        .collect();

    Ok(GroundTruth {
        phi: Matrix::from_rows(phi_rows)?,
        psi: Matrix::from_rows(psi_rows)?,
        theta: Matrix::from_rows(theta_rows)?,
        resource_group,
    })
}

/// Match score of every (resource, user) pair, resource-major.
pub fn match_scores(truth: &GroundTruth) -> Matrix {
    let (n_r, n_u) = (truth.phi.rows(), truth.psi.rows());
    let data = (0..n_r)
        .flat_map(|r| {
            (0..n_u).map(move |u| truth.phi.row(r).iter().zip(truth.psi.row(u)).map(|(a, b)| a * b).sum())
        })
        .collect();
    Matrix::from_vec(n_r, n_u, data).expect("match shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub n_posts: usize,
}

/// Emits one post for every (resource, user) pair whose match exceeds
/// `threshold_factor` times the mean match over all pairs.
pub fn generate_corpus(truth: &GroundTruth, config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    if truth.phi.cols() != truth.psi.cols() || truth.theta.rows() != truth.phi.cols() {
        return Err(Error::Shape("ground truth topic dimensions disagree".into()));
    }
    let scores = match_scores(truth);
    let mean = scores.as_slice().iter().sum::<f64>() / scores.as_slice().len() as f64;
    let threshold = config.threshold_factor * mean;
    let mut rng = substream(config.seed, "synth/posts");
    let mut builder = Corpus::builder();
    let mut n_posts = 0;
    let mut pref = vec![0.0; truth.phi.cols()];
    let mut tags: Vec<usize> = Vec::with_capacity(config.draws_per_post);
    for r in 0..truth.phi.rows() {
        for u in 0..truth.psi.rows() {
            if scores.get(r, u) <= threshold {
                continue;
            }
            let mut total = 0.0;
            for (k, p) in pref.iter_mut().enumerate() {
                *p = truth.phi.get(r, k) * truth.psi.get(u, k);
                total += *p;
            }
            tags.clear();
            for _ in 0..config.draws_per_post {
                let z = sample_index(&pref, total, &mut rng);
                let t = sample_index(truth.theta.row(z), 1.0, &mut rng);
                if !tags.contains(&t) {
                    tags.push(t);
                }
            }
            let names: Vec<String> = tags.iter().map(|&t| tag_name(t)).collect();
            builder.push_post(&resource_name(r), &user_name(u), &names);
            n_posts += 1;
        }
    }
    Ok(SynthCorpus { corpus: builder.build()?, n_posts })
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub index: usize,
    pub ambiguity: f64,
    pub variation: f64,
    pub config: SynthConfig,
    pub truth: GroundTruth,
    pub data: SynthCorpus,
}

impl GridCell {
    pub const MANIFEST_HEADER: &'static str = "cell,ambiguity,variation,posts,triples";

    pub fn manifest_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.index,
            self.ambiguity,
            self.variation,
            self.data.n_posts,
            self.data.corpus.len()
        )
    }
}

/// Generates every (ambiguity, variation) combination, ambiguity-major.
pub fn grid_run(ambiguities: &[f64], variations: &[f64], base: &SynthConfig) -> Result<Vec<GridCell>> {
    let cells: Vec<(usize, f64, f64)> = ambiguities
        .iter()
        .flat_map(|&a| variations.iter().map(move |&v| (a, v)))
        .enumerate()
        .map(|(i, (a, v))| (i, a, v))
        .collect();
    cells
        .into_par_iter()
        .map(|(index, ambiguity, variation)| {
            let config = SynthConfig { ambiguity, variation, ..base.clone() };
            let truth = generate_ground_truth(&config)?;
            let data = generate_corpus(&truth, &config)?;
            Ok(GridCell { index, ambiguity, variation, config, truth, data })
        })
        .collect()
}
