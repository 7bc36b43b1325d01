//! Exact-enumeration oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

use tagmodel::itm::{HyperSchedule, ItmConfig, ItmState};
use tagmodel::lda::{LdaConfig, LdaState};
use tagmodel::Corpus;

/// Six tuples over two resources, two users and three tags.
pub fn oracle_corpus() -> Corpus {
    let mut b = Corpus::builder();
    for (r, u, t) in [
        ("r0", "u0", "t0"),
        ("r0", "u0", "t0"),
        ("r0", "u1", "t1"),
        ("r1", "u1", "t1"),
        ("r1", "u0", "t2"),
        ("r1", "u1", "t2"),
    ] {
        b.push_triple(r, u, t);
    }
    b.build().unwrap()
}

/// Log of the collapsed Dirichlet-multinomial evidence of one group with
/// symmetric total mass `mass` spread over `counts.len()` components.
fn log_dm(counts: &[u32], mass: f64) -> f64 {
    let a = mass / counts.len() as f64;
    let n: u32 = counts.iter().sum();
    ln_gamma(mass) - ln_gamma(n as f64 + mass) + counts.iter().map(|&c| ln_gamma(c as f64 + a) - ln_gamma(a)).sum::<f64>()
}

fn normalize_log(mut logs: Vec<f64>) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.iter_mut().for_each(|l| *l = (*l - max).exp());
    let total: f64 = logs.iter().sum();
    logs.iter_mut().for_each(|l| *l /= total);
    logs
}

/// Joint label of tuple `i` for state index `s`, with `base` labels per tuple.
fn digit(s: usize, i: usize, base: usize) -> usize {
    s / base.pow(i as u32) % base
}

/// Exact posterior over every joint `(z, x)` labeling, indexed by
/// `sum_i (z_i * nx + x_i) * (nz * nx)^i`.
pub fn exact_itm_posterior(corpus: &Corpus, nz: usize, nx: usize, alpha: f64, beta: f64, eta: f64) -> Vec<f64> {
    let triples = corpus.triples();
    let (nr, nu, nt) = (corpus.n_resources(), corpus.n_users(), corpus.n_tags());
    let base = nz * nx;
    let logs = (0..base.pow(triples.len() as u32))
        .map(|s| {
            let mut rz = vec![0u32; nr * nz];
            let mut ux = vec![0u32; nu * nx];
            let mut xzt = vec![0u32; nx * nz * nt];
            for (i, t) in triples.iter().enumerate() {
                let d = digit(s, i, base);
                let (z, x) = (d / nx, d % nx);
                rz[t.resource as usize * nz + z] += 1;
                ux[t.user as usize * nx + x] += 1;
                xzt[(x * nz + z) * nt + t.tag as usize] += 1;
            }
            rz.chunks(nz).map(|c| log_dm(c, alpha)).sum::<f64>()
                + ux.chunks(nx).map(|c| log_dm(c, beta)).sum::<f64>()
                + xzt.chunks(nt).map(|c| log_dm(c, eta)).sum::<f64>()
        })
        .collect();
    normalize_log(logs)
}

/// Exact posterior over every topic labeling, indexed by `sum_i z_i * nz^i`.
pub fn exact_lda_posterior(corpus: &Corpus, nz: usize, alpha: f64, eta: f64) -> Vec<f64> {
    let triples = corpus.triples();
    let (nr, nt) = (corpus.n_resources(), corpus.n_tags());
    let logs = (0..nz.pow(triples.len() as u32))
        .map(|s| {
            let mut rz = vec![0u32; nr * nz];
            let mut zt = vec![0u32; nz * nt];
            for (i, t) in triples.iter().enumerate() {
                let z = digit(s, i, nz);
                rz[t.resource as usize * nz + z] += 1;
                zt[z * nt + t.tag as usize] += 1;
            }
            rz.chunks(nz).map(|c| log_dm(c, alpha)).sum::<f64>() + zt.chunks(nt).map(|c| log_dm(c, eta)).sum::<f64>()
        })
        .collect();
    normalize_log(logs)
}

pub struct ChainSchedule {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
}

pub const ORACLE_SCHEDULE: ChainSchedule = ChainSchedule { sweeps: 200_000, burn_in: 10_000, thin: 10 };

fn histogram(states: impl Iterator<Item = usize>, n_states: usize) -> Vec<f64> {
    let mut counts = vec![0u64; n_states];
    let mut n = 0u64;
    for s in states {
        counts[s] += 1;
        n += 1;
    }
    counts.into_iter().map(|c| c as f64 / n as f64).collect()
}

/// Empirical distribution of the joint labeling visited by an ITM chain with
/// fixed unit hyperparameters.
pub fn itm_chain_distribution(corpus: &Corpus, nz: usize, nx: usize, seed: u64, schedule: &ChainSchedule) -> Vec<f64> {
    let config = ItmConfig { seed, hyper: HyperSchedule::fixed(), ..ItmConfig::new(nz, nx) };
    let mut state = ItmState::new(corpus, &config).unwrap();
    let base = nz * nx;
    let states = (1..=schedule.sweeps).filter_map(|sweep| {
        state.sweep();
        (sweep > schedule.burn_in && sweep % schedule.thin == 0).then(|| {
            state
                .topics()
                .iter()
                .zip(state.interests())
                .rev()
                .fold(0, |acc, (&z, &x)| acc * base + z as usize * nx + x as usize)
        })
    });
    histogram(states, base.pow(corpus.len() as u32))
}

pub fn lda_chain_distribution(corpus: &Corpus, nz: usize, seed: u64, schedule: &ChainSchedule) -> Vec<f64> {
    let config = LdaConfig { seed, hyper: HyperSchedule::fixed(), ..LdaConfig::new(nz) };
    let mut state = LdaState::new(corpus, &config).unwrap();
    let states = (1..=schedule.sweeps).filter_map(|sweep| {
        state.sweep();
        (sweep > schedule.burn_in && sweep % schedule.thin == 0)
            .then(|| state.topics().iter().rev().fold(0, |acc, &z| acc * nz + z as usize))
    });
    histogram(states, nz.pow(corpus.len() as u32))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Expected total variation between `p` and the histogram of `n` independent
/// draws from it, from the normal approximation to each cell's binomial error.
/// This is the floor any correct chain with `n` effective samples sits at.
pub fn sampling_noise_floor(p: &[f64], n: usize) -> f64 {
    let n = n as f64;
    0.5 * p.iter().map(|&q| (2.0 * q * (1.0 - q) / (std::f64::consts::PI * n)).sqrt()).sum::<f64>()
}

pub fn retained_samples(schedule: &ChainSchedule) -> usize {
    (schedule.burn_in + 1..=schedule.sweeps).filter(|s| s % schedule.thin == 0).count()
}
