//! Statistical properties of the ground-truth generator, estimated by
//! Monte Carlo over many seeds.

use tagmodel::synth::{
    effective_support, favored_count, generate_corpus, generate_ground_truth, grid_run, topic_tag_overlap,
    SynthConfig, GRID_VALUES,
};

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn narrow_variation_gives_users_at_most_two_effective_topics() {
    let support = mean((0..100).map(|seed| {
        let truth = generate_ground_truth(&SynthConfig { variation: 0.01, seed, ..SynthConfig::default() }).unwrap();
        mean(truth.psi.iter_rows().map(effective_support))
    }));
    assert!(support <= 2.0, "mean effective support {support}");
}

#[test]
fn tag_spread_grows_with_ambiguity() {
    // GRID_VALUES runs from most to least ambiguous.
    let supports: Vec<f64> = GRID_VALUES
        .iter()
        .map(|&ambiguity| {
            mean((0..30).map(|seed| {
                let config = SynthConfig { ambiguity, seed, ..SynthConfig::default() };
                mean(generate_ground_truth(&config).unwrap().theta.iter_rows().map(effective_support))
            }))
        })
        .collect();
    assert!(supports.windows(2).all(|w| w[0] > w[1]), "{supports:?}");
}

#[test]
fn raising_the_threshold_never_adds_posts() {
    for seed in 0..10 {
        let base = SynthConfig { seed, ..SynthConfig::default() };
        let truth = generate_ground_truth(&base).unwrap();
        let posts: Vec<usize> = [1.0, 1.25, 1.5, 2.0, 3.0]
            .iter()
            .map(|&threshold_factor| {
                let config = SynthConfig { threshold_factor, ..base.clone() };
                generate_corpus(&truth, &config).map(|c| c.n_posts).unwrap_or(0)
            })
            .collect();
        assert!(posts.windows(2).all(|w| w[0] >= w[1]), "{posts:?}");
    }
}

#[test]
fn resources_favor_two_to_four_topics() {
    for seed in 0..20 {
        let truth = generate_ground_truth(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        assert!(truth.phi.iter_rows().all(|row| (2..=4).contains(&favored_count(row))));
        assert!(truth.phi.max_row_sum_error() < 1e-12);
        assert!(truth.psi.max_row_sum_error() < 1e-12);
        assert!(truth.theta.max_row_sum_error() < 1e-12);
    }
}

#[test]
fn posts_carry_between_one_and_seven_distinct_tags() {
    let config = SynthConfig { seed: 3, ..SynthConfig::default() };
    let truth = generate_ground_truth(&config).unwrap();
    let data = generate_corpus(&truth, &config).unwrap();
    let posts = data.corpus.posts();
    assert_eq!(posts.len(), data.n_posts);
    for post in posts {
        assert!((1..=7).contains(&post.tags.len()));
        let mut tags = post.tags.clone();
        tags.sort_unstable();
        tags.dedup();
        assert_eq!(tags.len(), post.tags.len());
    }
}

#[test]
fn most_ambiguous_cell_has_the_highest_tag_overlap() {
    let cells = grid_run(&GRID_VALUES, &GRID_VALUES, &SynthConfig { seed: 21, ..SynthConfig::default() }).unwrap();
    assert_eq!(cells.len(), 25);
    let overlaps: Vec<f64> = cells.iter().map(|c| topic_tag_overlap(&c.truth.theta)).collect();
    let top = overlaps.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!((cells[0].ambiguity, cells[0].variation), (1.0, 1.0));
    assert_eq!(overlaps[0], top);
}

#[test]
fn grid_is_reproducible() {
    let base = SynthConfig { n_resources: 10, n_users: 20, seed: 5, ..SynthConfig::default() };
    let a = grid_run(&[1.0, 0.01], &[0.5], &base).unwrap();
    let b = grid_run(&[1.0, 0.01], &[0.5], &base).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.truth.phi, y.truth.phi);
        assert_eq!(x.data, y.data);
    }
}
