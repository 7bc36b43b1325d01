//! Model comparisons on synthetic grids: train named model variants on every
//! cell and score them with the deviation metric.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::deviation_delta;
use crate::hdpitm::{train_two_phase, HdpConfig, HdpMode};
use crate::itm::{train, ItmConfig};
use crate::lda::{train_lda, LdaConfig};
use crate::posterior::Posterior;
use crate::synth::GridCell;
use crate::table::Matrix;

/// A model variant by its short name: `lda10`, `itm10x3`, `hdpitm`,
/// `hdpitm+itm`, `hdp-lda` or `hdp+lda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    Lda { topics: usize },
    Itm { topics: usize, interests: usize },
    /// `two_phase` selects growth-then-frozen training over always growing.
    Hdp { mode: HdpMode, two_phase: bool },
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Lda { topics } => write!(f, "lda{topics}"),
            ModelSpec::Itm { topics, interests } => write!(f, "itm{topics}x{interests}"),
            ModelSpec::Hdp { mode: HdpMode::HdpItm, two_phase: false } => f.write_str("hdpitm"),
            ModelSpec::Hdp { mode: HdpMode::HdpItm, two_phase: true } => f.write_str("hdpitm+itm"),
            ModelSpec::Hdp { mode: HdpMode::HdpLda, two_phase: false } => f.write_str("hdp-lda"),
            ModelSpec::Hdp { mode: HdpMode::HdpLda, two_phase: true } => f.write_str("hdp+lda"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown model {s:?}"));
        let dim = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        Ok(match s {
            "hdpitm" => ModelSpec::Hdp { mode: HdpMode::HdpItm, two_phase: false },
            "hdpitm+itm" => ModelSpec::Hdp { mode: HdpMode::HdpItm, two_phase: true },
            "hdp-lda" => ModelSpec::Hdp { mode: HdpMode::HdpLda, two_phase: false },
            "hdp+lda" => ModelSpec::Hdp { mode: HdpMode::HdpLda, two_phase: true },
            _ if s.starts_with("lda") => ModelSpec::Lda { topics: dim(&s[3..])? },
            _ if s.starts_with("itm") => {
                let (z, x) = s[3..].split_once('x').ok_or_else(bad)?;
                ModelSpec::Itm { topics: dim(z)?, interests: dim(x)? }
            }
            _ => return Err(bad()),
        })
    }
}

/// Schedules shared by every model of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub iterations: usize,
    pub averaging_window: usize,
    /// Template for the nonparametric variants; mode, seed and the iteration
    /// schedule are overridden.
    pub hdp: HdpConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { iterations: 1000, averaging_window: 100, hdp: HdpConfig::synthetic(HdpMode::HdpItm) }
    }
}

pub fn train_model(spec: ModelSpec, corpus: &Corpus, seed: u64, settings: &TrainSettings) -> Result<Posterior> {
    match spec {
        ModelSpec::Lda { topics } => {
            let config = LdaConfig {
                n_iterations: settings.iterations,
                averaging_window: settings.averaging_window,
                seed,
                ..LdaConfig::new(topics)
            };
            Ok(train_lda(corpus, &config)?.0)
        }
        ModelSpec::Itm { topics, interests } => {
            let config = ItmConfig {
                n_iterations: settings.iterations,
                averaging_window: settings.averaging_window,
                seed,
                ..ItmConfig::new(topics, interests)
            };
            Ok(train(corpus, &config)?.0)
        }
        ModelSpec::Hdp { mode, two_phase } => {
            let mut config = settings.hdp.clone();
            config.mode = mode;
            config.seed = seed;
            // Same sweep budget as the finite models: growth for the first half
            // (or throughout), then the averaging window at the end.
            let policy = &mut config.policy;
            policy.always_grow = !two_phase;
            policy.grow_iterations = settings.iterations / 2;
            policy.max_iterations = settings.iterations.saturating_sub(settings.averaging_window).max(1);
            policy.min_iterations = policy.max_iterations;
            policy.averaging_window = settings.averaging_window;
            Ok(train_two_phase(corpus, &config)?.posterior)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub cell: usize,
    pub ambiguity: f64,
    pub variation: f64,
    pub model: String,
    pub run: usize,
    pub delta: f64,
}

pub const GRID_CSV_HEADER: &str = "ambiguity,variation,model,run,delta";

pub fn grid_csv(records: &[GridRecord]) -> String {
    let mut out = format!("{GRID_CSV_HEADER}\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.ambiguity, r.variation, r.model, r.run, r.delta));
    }
    out
}

/// One grid cell ready for training: its corpus and the true topic profiles
/// of the corpus's resources, row-aligned with the corpus ids.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub cell: usize,
    pub ambiguity: f64,
    pub variation: f64,
    pub corpus: Corpus,
    pub truth_phi: Matrix,
}

impl GridCase {
    pub fn from_cell(cell: &GridCell) -> Result<Self> {
        Ok(Self {
            cell: cell.index,
            ambiguity: cell.ambiguity,
            variation: cell.variation,
            corpus: cell.data.corpus.clone(),
            truth_phi: cell.truth.phi_for(&cell.data.corpus)?,
        })
    }
}

/// Trains every model with every seed on every case. Runs execute in
/// parallel; records come back ordered by case, then model, then run.
pub fn run_grid(
    cases: &[GridCase],
    models: &[ModelSpec],
    seeds: &[u64],
    settings: &TrainSettings,
) -> Result<Vec<GridRecord>> {
    let jobs: Vec<(&GridCase, ModelSpec, usize, u64)> = cases
        .iter()
        .flat_map(|c| {
            models
                .iter()
                .flat_map(move |&m| seeds.iter().enumerate().map(move |(run, &seed)| (c, m, run, seed)))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(case, model, run, seed)| {
            let posterior = train_model(model, &case.corpus, seed, settings)?;
            Ok(GridRecord {
                cell: case.cell,
                ambiguity: case.ambiguity,
                variation: case.variation,
                model: model.to_string(),
                run,
                delta: deviation_delta(&posterior.phi, &case.truth_phi)?,
            })
        })
        .collect()
}

/// Median of `values`; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median delta of `model` in `cell` over all runs.
pub fn median_delta(records: &[GridRecord], cell: usize, model: &str) -> Option<f64> {
    let deltas: Vec<f64> = records.iter().filter(|r| r.cell == cell && r.model == model).map(|r| r.delta).collect();
    median(&deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{grid_run, SynthConfig};

    #[test]
    fn model_names_round_trip() {
        for name in ["lda10", "lda30", "itm10x3", "itm80x40", "hdpitm", "hdpitm+itm", "hdp-lda", "hdp+lda"] {
            assert_eq!(name.parse::<ModelSpec>().unwrap().to_string(), name);
        }
        for bad in ["lda", "lda0", "itm10", "itmx3", "hdp", "foo"] {
            assert!(bad.parse::<ModelSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn small_grid_has_one_record_per_cell_model_and_run() {
        let base = SynthConfig { seed: 3, ..SynthConfig::default() };
        let cells = grid_run(&[1.0, 0.1], &[0.5], &base).unwrap();
        let cells: Vec<GridCase> = cells.iter().map(|c| GridCase::from_cell(c).unwrap()).collect();
        let models = ["lda10".parse().unwrap(), "itm10x3".parse().unwrap()];
        let settings = TrainSettings { iterations: 20, averaging_window: 5, ..TrainSettings::default() };
        let records = run_grid(&cells, &models, &[1, 2], &settings).unwrap();
        assert_eq!(records.len(), 2 * 2 * 2);
        assert_eq!(records[0].model, "lda10");
        assert_eq!((records[1].cell, records[1].run), (0, 1));
        assert!(records.iter().all(|r| r.delta.is_finite() && r.delta >= 0.0));
        assert_eq!(grid_csv(&records).lines().count(), 9);
        let again = run_grid(&cells, &models, &[1, 2], &settings).unwrap();
        assert_eq!(records, again);
    }
}
