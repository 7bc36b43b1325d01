//! `tagmodel`: generate synthetic corpora, train topic models over tagging
//! data, and evaluate the learned resource profiles.

mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tagmodel::eval::{
    deviation_delta_scaled, precision_curve, precision_curve_csv, rank_by_similarity, DeltaScale, RankedList,
};
use tagmodel::experiment::{grid_csv, run_grid, GridCase, ModelSpec, TrainSettings};
use tagmodel::hdpitm::{train_two_phase, GrowthPolicy, HdpConfig, HdpMode, StickRule};
use tagmodel::itm::{train, HyperSchedule, ItmConfig, ThetaEstimate};
use tagmodel::lda::{train_lda, LdaConfig};
use tagmodel::rng::derive_seed;
use tagmodel::snapshot::Snapshot;
use tagmodel::synth::{grid_run, GridCell, SynthConfig, GRID_VALUES};
use tagmodel::{parse_triples, Corpus, CorpusStats, InputFormat};

use manifest::{Recorder, RunManifest};

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_REPLAY_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "tagmodel", version, about = "Topic models of social annotation data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print corpus statistics as CSV.
    Stats(StatsArgs),
    /// Generate synthetic corpora over an ambiguity x variation grid.
    Generate(GenerateArgs),
    /// Train a model; writes snapshot.bin, diagnostics.csv and manifest.json.
    Train(TrainArgs),
    /// Evaluate snapshots.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Rerun the command recorded in a manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    /// Posts for files ending in `.posts.tsv`, triples otherwise.
    Auto,
    Triples,
    Posts,
}

#[derive(Args)]
struct CorpusArgs {
    /// Tab-separated annotation file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Write stats.csv and a manifest here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Use the 5 x 5 grid {1, 0.5, 0.1, 0.05, 0.01}^2.
    #[arg(long, conflicts_with_all = ["ambiguity", "variation"])]
    grid_default: bool,
    /// Comma-separated tag ambiguity values (default: the standard grid values).
    #[arg(long, value_delimiter = ',')]
    ambiguity: Vec<f64>,
    /// Comma-separated interest variation values (default: the standard grid values).
    #[arg(long, value_delimiter = ',')]
    variation: Vec<f64>,
    #[arg(long, default_value_t = 40)]
    resources: usize,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 100)]
    users: usize,
    /// Defaults to the number of topics.
    #[arg(long)]
    interests: Option<usize>,
    #[arg(long, default_value_t = 100)]
    tags: usize,
    #[arg(long, default_value_t = 1.5)]
    threshold: f64,
    #[arg(long, default_value_t = 7)]
    draws: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Lda,
    Itm,
    HdpLda,
    Hdpitm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThetaArg {
    Averaged,
    Final,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StickArg {
    Remainder,
    Standard,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 3)]
    interests: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Number of final sweeps whose estimates are averaged.
    #[arg(long, default_value_t = 100)]
    avg: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Keep the Dirichlet masses fixed instead of resampling them.
    #[arg(long)]
    fixed_hyper: bool,
    /// `final` skips the second interest x topic x tag buffer on large vocabularies.
    #[arg(long, value_enum, default_value_t = ThetaArg::Averaged)]
    theta: ThetaArg,
    #[arg(long, default_value_t = 100)]
    init_topics: usize,
    #[arg(long, default_value_t = 20)]
    init_interests: usize,
    #[arg(long, default_value_t = 400)]
    cap_topics: usize,
    #[arg(long, default_value_t = 80)]
    cap_interests: usize,
    #[arg(long, default_value_t = 100)]
    grow_iters: usize,
    #[arg(long, default_value_t = 400)]
    min_iters: usize,
    #[arg(long, default_value_t = 600)]
    max_iters: usize,
    /// Allow new components throughout instead of freezing after the growth phase.
    #[arg(long)]
    always_grow: bool,
    #[arg(long, value_enum, default_value_t = StickArg::Remainder)]
    stick: StickArg,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Deviation between a learned snapshot and a truth file; writes delta.csv.
    Delta {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Divide by the number of resource pairs.
        #[arg(long)]
        mean_per_pair: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resources most similar to a seed resource; writes ranked.csv.
    Rank {
        #[arg(long)]
        snapshot: PathBuf,
        /// Name of the seed resource.
        #[arg(long)]
        seed_resource: String,
        #[arg(long, default_value_t = 100)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cumulative relevant count along a ranked list; writes precision.csv.
    Precision {
        /// A ranked.csv file.
        #[arg(long)]
        ranked: PathBuf,
        /// One relevant resource name per line.
        #[arg(long)]
        relevant: PathBuf,
        #[arg(long, default_value_t = 100)]
        k_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score models on every cell of a generated grid; writes grid.csv.
    Grid {
        /// Directory written by `generate`.
        #[arg(long)]
        cells: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "lda10,lda30,itm10x3")]
        models: Vec<String>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 100)]
        avg: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }
}

impl From<tagmodel::Error> for Failure {
    fn from(e: tagmodel::Error) -> Self {
        use tagmodel::Error::*;
        let code = match e {
            Io(_) | Format(_) => EXIT_IO,
            Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = configure_workers().and_then(|()| run(cli.command, &args));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Sizes the worker pool from `TAGMODEL_WORKERS` when set.
fn configure_workers() -> CliResult<()> {
    let Ok(value) = std::env::var("TAGMODEL_WORKERS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::validation(format!("TAGMODEL_WORKERS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::validation(e.to_string()))
}

fn run(command: Command, args: &[String]) -> CliResult<()> {
    match command {
        Command::Stats(a) => cmd_stats(a, args),
        Command::Generate(a) => cmd_generate(a, args),
        Command::Train(a) => cmd_train(a, args),
        Command::Eval(e) => cmd_eval(e, args),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn read_corpus(args: &CorpusArgs) -> CliResult<Corpus> {
    let format = match args.format {
        FormatArg::Triples => InputFormat::Triples,
        FormatArg::Posts => InputFormat::Posts,
        FormatArg::Auto if args.input.to_string_lossy().ends_with(".posts.tsv") => InputFormat::Posts,
        FormatArg::Auto => InputFormat::Triples,
    };
    let file = fs::File::open(&args.input).map_err(io_context(&args.input))?;
    Ok(parse_triples(BufReader::new(file), format)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_context(dir))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(io_context(path))
}

fn cmd_stats(a: StatsArgs, args: &[String]) -> CliResult<()> {
    let corpus = read_corpus(&a.corpus)?;
    let csv = corpus.stats().to_csv();
    match a.out {
        None => print!("{csv}"),
        Some(out) => {
            create_dir(&out)?;
            write_file(&out.join("stats.csv"), &csv)?;
            let mut rec = Recorder::new("stats", args);
            rec.input(&a.corpus.input);
            rec.output("stats.csv");
            rec.finish(&out)?;
        }
    }
    debug_assert_eq!(CorpusStats::CSV_HEADER, csv.lines().next().unwrap_or_default());
    Ok(())
}

fn cell_stem(index: usize) -> String {
    format!("cell-{index:02}")
}

fn cmd_generate(a: GenerateArgs, args: &[String]) -> CliResult<()> {
    let values = |v: &[f64]| if v.is_empty() { GRID_VALUES.to_vec() } else { v.to_vec() };
    let (ambiguities, variations) = if a.grid_default {
        (GRID_VALUES.to_vec(), GRID_VALUES.to_vec())
    } else {
        (values(&a.ambiguity), values(&a.variation))
    };
    let base = SynthConfig {
        n_resources: a.resources,
        n_topics: a.topics,
        n_users: a.users,
        n_interests: a.interests.unwrap_or(a.topics),
        n_tags: a.tags,
        threshold_factor: a.threshold,
        draws_per_post: a.draws,
        resource_groups: a.groups,
        seed: a.seed,
        ..SynthConfig::default()
    };
    base.validate()?;
    let cells = grid_run(&ambiguities, &variations, &base)?;

    create_dir(&a.out)?;
    let mut rec = Recorder::new("generate", args);
    rec.seed = Some(a.seed);
    rec.config = json!({ "base": base, "ambiguity": ambiguities, "variation": variations });
    let mut index = format!("{}\n", GridCell::MANIFEST_HEADER);
    for cell in &cells {
        let stem = cell_stem(cell.index);
        let posts = format!("{stem}.posts.tsv");
        let path = a.out.join(&posts);
        let mut w = BufWriter::new(fs::File::create(&path).map_err(io_context(&path))?);
        cell.data.corpus.write_posts(&mut w)?;
        w.flush()?;
        let truth = format!("{stem}.truth.bin");
        Snapshot::from_truth(&cell.truth).save(&a.out.join(&truth))?;
        rec.output(&posts);
        rec.output(&truth);
        index.push_str(&cell.manifest_row());
        index.push('\n');
    }
    write_file(&a.out.join("cells.csv"), &index)?;
    rec.output("cells.csv");
    rec.finish(&a.out)?;
    println!("wrote {} cells to {}", cells.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs, args: &[String]) -> CliResult<()> {
    let corpus = read_corpus(&a.corpus)?;
    let hyper = if a.fixed_hyper { HyperSchedule::fixed() } else { HyperSchedule::default() };
    let theta = match a.theta {
        ThetaArg::Averaged => ThetaEstimate::Averaged,
        ThetaArg::Final => ThetaEstimate::Final,
    };
    let (model_name, posterior, diagnostics_csv, hyperparameters, iterations, config, extra_dims) = match a.model {
        ModelArg::Lda => {
            let config = LdaConfig {
                alpha: a.alpha,
                eta: a.eta,
                n_iterations: a.iters,
                averaging_window: a.avg,
                seed: a.seed,
                hyper,
                theta,
                ..LdaConfig::new(a.topics)
            };
            let (posterior, diagnostics) = train_lda(&corpus, &config)?;
            let last = diagnostics.trace.last().expect("at least one iteration");
            let h = BTreeMap::from([("alpha".to_string(), last.alpha), ("eta".to_string(), last.eta)]);
            let config = serde_json::to_value(&config).expect("config serializes");
            ("lda", posterior, diagnostics.to_csv(), h, a.iters, config, vec![])
        }
        ModelArg::Itm => {
            let config = ItmConfig {
                alpha: a.alpha,
                beta: a.beta,
                eta: a.eta,
                n_iterations: a.iters,
                averaging_window: a.avg,
                seed: a.seed,
                hyper,
                theta,
                ..ItmConfig::new(a.topics, a.interests)
            };
            let (posterior, diagnostics) = train(&corpus, &config)?;
            let last = diagnostics.trace.last().expect("at least one iteration");
            let h = BTreeMap::from([
                ("alpha".to_string(), last.alpha),
                ("beta".to_string(), last.beta.unwrap_or(a.beta)),
                ("eta".to_string(), last.eta),
            ]);
            let config = serde_json::to_value(&config).expect("config serializes");
            ("itm", posterior, diagnostics.to_csv(), h, a.iters, config, vec![])
        }
        ModelArg::HdpLda | ModelArg::Hdpitm => {
            let mode = if a.model == ModelArg::Hdpitm { HdpMode::HdpItm } else { HdpMode::HdpLda };
            let config = HdpConfig {
                init_topics: a.init_topics,
                init_interests: a.init_interests,
                eta: a.eta,
                seed: a.seed,
                stick: match a.stick {
                    StickArg::Remainder => StickRule::Remainder,
                    StickArg::Standard => StickRule::Standard,
                },
                policy: GrowthPolicy {
                    max_topics: a.cap_topics,
                    max_interests: a.cap_interests,
                    grow_iterations: a.grow_iters,
                    min_iterations: a.min_iters,
                    max_iterations: a.max_iters,
                    averaging_window: a.avg,
                    always_grow: a.always_grow,
                    ..GrowthPolicy::default()
                },
                hyper,
                theta,
                ..HdpConfig::new(mode)
            };
            let run = train_two_phase(&corpus, &config)?;
            let g = &run.globals;
            let h = BTreeMap::from([
                ("gamma_z".to_string(), g.gamma_z),
                ("gamma_x".to_string(), g.gamma_x),
                ("mu_z".to_string(), g.mu_z),
                ("mu_x".to_string(), g.mu_x),
                ("eta".to_string(), run.eta),
            ]);
            let dims = vec![
                ("k_z".to_string(), run.posterior.phi.cols()),
                ("j_x".to_string(), run.posterior.psi.cols()),
            ];
            let iterations = run.diagnostics.trace.len();
            let config = serde_json::to_value(&config).expect("config serializes");
            (mode.name(), run.posterior, run.diagnostics.to_csv(), h, iterations, config, dims)
        }
    };
    if posterior.max_normalization_error() > 1e-9 {
        return Err(Failure { code: EXIT_NUMERICAL, message: "estimates are not normalized".into() });
    }

    create_dir(&a.out)?;
    let mut snapshot = Snapshot::from_posterior(
        model_name,
        &posterior,
        corpus.resources().names().to_vec(),
        corpus.n_tags(),
        hyperparameters,
        iterations,
    )?;
    snapshot.header.dims.extend(extra_dims);
    snapshot.save(&a.out.join("snapshot.bin"))?;
    write_file(&a.out.join("diagnostics.csv"), &diagnostics_csv)?;

    let mut rec = Recorder::new("train", args);
    rec.seed = Some(a.seed);
    rec.config = config;
    rec.input(&a.corpus.input);
    rec.output("snapshot.bin");
    rec.output("diagnostics.csv");
    rec.finish(&a.out)?;
    println!("trained {model_name} on {} tuples; wrote {}", corpus.len(), a.out.display());
    Ok(())
}

fn cmd_eval(command: EvalCommand, args: &[String]) -> CliResult<()> {
    match command {
        EvalCommand::Delta { snapshot, truth, mean_per_pair, out } => {
            let learned = Snapshot::load(&snapshot)?;
            let actual = Snapshot::load(&truth)?;
            let names = learned.header.resources.clone();
            let scale = if mean_per_pair { DeltaScale::MeanPerPair } else { DeltaScale::Sum };
            let delta = deviation_delta_scaled(&learned.phi()?, &actual.phi_for_names(&names)?, scale)?;
            create_dir(&out)?;
            write_file(&out.join("delta.csv"), &format!("delta\n{delta}\n"))?;
            let mut rec = Recorder::new("eval delta", args);
            rec.config = json!({ "mean_per_pair": mean_per_pair });
            rec.input(&snapshot);
            rec.input(&truth);
            rec.output("delta.csv");
            rec.finish(&out)?;
            println!("{delta}");
        }
        EvalCommand::Rank { snapshot, seed_resource, top, out } => {
            let snap = Snapshot::load(&snapshot)?;
            let names = &snap.header.resources;
            let seed = names
                .iter()
                .position(|n| *n == seed_resource)
                .ok_or_else(|| Failure::validation(format!("unknown resource {seed_resource:?}")))?;
            let ranked = rank_by_similarity(&snap.phi()?, seed)?;
            create_dir(&out)?;
            write_file(&out.join("ranked.csv"), &ranked.to_csv(top, |r| names[r].as_str()))?;
            let mut rec = Recorder::new("eval rank", args);
            rec.config = json!({ "seed_resource": seed_resource, "top": top });
            rec.input(&snapshot);
            rec.output("ranked.csv");
            rec.finish(&out)?;
        }
        EvalCommand::Precision { ranked, relevant, k_max, out } => {
            let list = read_ranked(&ranked)?;
            let relevant_text = fs::read_to_string(&relevant).map_err(io_context(&relevant))?;
            let wanted: HashSet<&str> = relevant_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            let ids: HashSet<usize> =
                list.iter().enumerate().filter(|(_, n)| wanted.contains(n.as_str())).map(|(i, _)| i).collect();
            let ranked_list = RankedList { seed: usize::MAX, entries: (0..list.len()).map(|i| (i, 0.0)).collect() };
            let curve = precision_curve(&ranked_list, &ids, k_max);
            create_dir(&out)?;
            write_file(&out.join("precision.csv"), &precision_curve_csv(&curve))?;
            let mut rec = Recorder::new("eval precision", args);
            rec.config = json!({ "k_max": k_max });
            rec.input(&ranked);
            rec.input(&relevant);
            rec.output("precision.csv");
            rec.finish(&out)?;
        }
        EvalCommand::Grid { cells, models, runs, seed, iters, avg, out } => {
            let specs = models.iter().map(|m| m.parse::<ModelSpec>()).collect::<Result<Vec<_>, _>>()?;
            if runs == 0 {
                return Err(Failure::validation("at least one run is required"));
            }
            let (cases, inputs) = load_grid(&cells)?;
            let seeds: Vec<u64> = (0..runs).map(|r| derive_seed(seed, &format!("run/{r}"))).collect();
            let settings = TrainSettings { iterations: iters, averaging_window: avg, ..TrainSettings::default() };
            let records = run_grid(&cases, &specs, &seeds, &settings)?;
            create_dir(&out)?;
            write_file(&out.join("grid.csv"), &grid_csv(&records))?;
            let mut rec = Recorder::new("eval grid", args);
            rec.seed = Some(seed);
            rec.config = json!({ "models": models, "runs": runs, "iterations": iters, "averaging_window": avg, "seeds": seeds });
            for input in &inputs {
                rec.input(input);
            }
            rec.output("grid.csv");
            rec.finish(&out)?;
        }
    }
    Ok(())
}

/// Resource names of a ranked.csv file in rank order.
fn read_ranked(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io_context(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(RankedList::CSV_HEADER) {
        return Err(Failure::validation(format!("{}: expected header {}", path.display(), RankedList::CSV_HEADER)));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            match fields[..] {
                [_, name, _] => Ok(name.to_string()),
                _ => Err(Failure::validation(format!("{}: malformed line {}", path.display(), i + 2))),
            }
        })
        .collect()
}

fn load_grid(dir: &Path) -> CliResult<(Vec<GridCase>, Vec<PathBuf>)> {
    let index_path = dir.join("cells.csv");
    let text = fs::read_to_string(&index_path).map_err(io_context(&index_path))?;
    let mut lines = text.lines();
    if lines.next() != Some(GridCell::MANIFEST_HEADER) {
        return Err(Failure::validation(format!("{}: unexpected header", index_path.display())));
    }
    let mut cases = Vec::new();
    let mut inputs = vec![index_path.clone()];
    for (i, line) in lines.enumerate() {
        let bad = || Failure::validation(format!("{}: malformed line {}", index_path.display(), i + 2));
        let fields: Vec<&str> = line.split(',').collect();
        let [cell, ambiguity, variation, _, _] = fields[..] else {
            return Err(bad());
        };
        let cell: usize = cell.parse().map_err(|_| bad())?;
        let ambiguity: f64 = ambiguity.parse().map_err(|_| bad())?;
        let variation: f64 = variation.parse().map_err(|_| bad())?;
        let posts = dir.join(format!("{}.posts.tsv", cell_stem(cell)));
        let truth = dir.join(format!("{}.truth.bin", cell_stem(cell)));
        let corpus = read_corpus(&CorpusArgs { input: posts.clone(), format: FormatArg::Posts })?;
        let truth_phi = Snapshot::load(&truth)?.phi_for_names(corpus.resources().names())?;
        cases.push(GridCase { cell, ambiguity, variation, corpus, truth_phi });
        inputs.push(posts);
        inputs.push(truth);
    }
    Ok((cases, inputs))
}

/// Output directory of a parsed command, where its manifest lives.
fn out_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Stats(a) => a.out.as_deref(),
        Command::Generate(a) => Some(&a.out),
        Command::Train(a) => Some(&a.out),
        Command::Eval(e) => Some(match e {
            EvalCommand::Delta { out, .. }
            | EvalCommand::Rank { out, .. }
            | EvalCommand::Precision { out, .. }
            | EvalCommand::Grid { out, .. } => out,
        }),
        Command::Replay(_) => None,
    }
}

fn with_out(args: &[String], out: &Path) -> Vec<String> {
    let mut result = Vec::with_capacity(args.len() + 2);
    let mut replaced = false;
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        if arg == "--out" {
            iter.next();
            result.push(arg.clone());
            result.push(out.display().to_string());
            replaced = true;
        } else if arg.starts_with("--out=") {
            result.push(format!("--out={}", out.display()));
            replaced = true;
        } else {
            result.push(arg.clone());
        }
    }
    if !replaced {
        result.push("--out".into());
        result.push(out.display().to_string());
    }
    result
}

fn cmd_replay(a: ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::load(&a.manifest).map_err(|m| Failure { code: EXIT_IO, message: m })?;
    if recorded.command == "replay" {
        return Err(Failure::validation("cannot replay a replay"));
    }
    for input in &recorded.inputs {
        let now = manifest::sha256_file(Path::new(&input.path)).map_err(io_context(Path::new(&input.path)))?;
        if now != input.sha256 {
            return Err(Failure::validation(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let args = match &a.out {
        Some(out) => with_out(&recorded.args, out),
        None => recorded.args.clone(),
    };
    let cli = Cli::try_parse_from(std::iter::once("tagmodel".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Failure::validation(format!("recorded arguments no longer parse: {e}")))?;
    let dir = out_dir(&cli.command)
        .map(Path::to_path_buf)
        .ok_or_else(|| Failure::validation("the recorded command wrote no output directory"))?;
    run(cli.command, &args)?;

    let fresh = RunManifest::load(&dir.join(manifest::FILE_NAME)).map_err(|m| Failure { code: EXIT_IO, message: m })?;
    let now: HashMap<&str, &str> = fresh.outputs.iter().map(|o| (o.path.as_str(), o.sha256.as_str())).collect();
    let mut mismatches = 0;
    for output in &recorded.outputs {
        let same = now.get(output.path.as_str()) == Some(&output.sha256.as_str());
        println!("{}\t{}", if same { "match" } else { "MISMATCH" }, output.path);
        mismatches += !same as usize;
    }
    if mismatches > 0 {
        return Err(Failure {
            code: EXIT_REPLAY_MISMATCH,
            message: format!("{mismatches} output(s) differ from the recorded run"),
        });
    }
    Ok(())
}
