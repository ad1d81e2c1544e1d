//! `distdescribe`: describe how one text corpus differs from another.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 backend
//! failure, 4 run aborted because too many judgments abstained.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distdescribe_core::backends::{BackendSpec, RouteStyle};
use distdescribe_core::bench::{self, BenchError};
use distdescribe_core::config::{ConfigError, RunConfig};
use distdescribe_core::corpus::{self, CorpusError, CorpusFormat, DistributionPair};
use distdescribe_core::discriminator::{self, DiscriminatorError};
use distdescribe_core::pipeline::{Engine, PipelineError};
use distdescribe_core::proposer::{self, ProposerError};

#[derive(Parser, Debug)]
#[command(name = "distdescribe", version, about = "Describe differences between text distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank hypotheses describing how D1 differs from D0
    Describe {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Describe every cluster against the rest (jsonl with text and cluster)
    LabelClusters {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Describe how a test corpus differs from a training corpus
    Shift {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Look for features separating label classes (jsonl with text and label)
    Scan {
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Estimate the classification accuracy of one hypothesis
    Verify {
        #[arg(long)]
        hypothesis: String,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the pipeline on a synthetic suite and report gold recovery
    Bench {
        /// Suite directory written by gen-bench
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a synthetic suite
    GenBench(GenBenchArgs),
    /// Print the proposer prompts a describe run would send
    DumpPrompt {
        #[command(flatten)]
        pair: PairArgs,
        /// Only prompts for this percentile
        #[arg(long)]
        percentile: Option<u32>,
        /// Only the prompt with this set index
        #[arg(long)]
        set: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug)]
struct PairArgs {
    /// Baseline corpus (.jsonl with a "text" field, or one sample per line)
    #[arg(long)]
    d0: PathBuf,
    /// Corpus to describe
    #[arg(long)]
    d1: PathBuf,
}

#[derive(Args, Debug)]
struct GenBenchArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Named suite; `default` is one noiseless task per predicate, cycled
    #[arg(long, conflicts_with = "gold")]
    suite: Option<String>,
    #[arg(long, default_value_t = 54)]
    tasks: usize,
    /// Gold predicate id for a single task
    #[arg(long, requires_all = ["q1", "q0"])]
    gold: Option<String>,
    #[arg(long)]
    q1: Option<f64>,
    #[arg(long)]
    q0: Option<f64>,
    /// Samples per side
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Run options. Each overrides the matching key of `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML config file (first key: format = "distdescribe-config-v1")
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pair_seed: Option<u64>,
    #[arg(long)]
    prompt_seed: Option<u64>,
    #[arg(long)]
    n_pairs: Option<usize>,
    /// Score every cross pair instead of sampling
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    percentiles: Option<Vec<u32>>,
    #[arg(long)]
    samples_per_group: Option<usize>,
    #[arg(long)]
    sets_per_percentile: Option<usize>,
    #[arg(long)]
    completions_per_set: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    in_flight: Option<usize>,
    #[arg(long)]
    max_abstention: Option<f64>,
    /// rule, http, record:<path>, replay:<path> or cache:<path>
    #[arg(long)]
    proposer_backend: Option<BackendSpec>,
    #[arg(long)]
    verifier_backend: Option<BackendSpec>,
    #[arg(long)]
    proposer_url: Option<String>,
    #[arg(long)]
    verifier_url: Option<String>,
    #[arg(long)]
    proposer_model: Option<String>,
    #[arg(long)]
    verifier_model: Option<String>,
    /// completions or chat, for both endpoints
    #[arg(long, value_parser = parse_route)]
    route: Option<RouteStyle>,
    /// Persistent judgment cache (jsonl)
    #[arg(long)]
    cache: Option<String>,
    /// Write the machine-readable report here
    #[arg(long)]
    out: Option<String>,
}

fn parse_route(s: &str) -> Result<RouteStyle, String> {
    match s {
        "completions" => Ok(RouteStyle::Completions),
        "chat" => Ok(RouteStyle::Chat),
        _ => Err(format!("unknown route `{s}` (expected completions or chat)")),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        set!(seed, n_pairs, top_k, percentiles, samples_per_group, sets_per_percentile);
        set!(completions_per_set, temperature, max_tokens, in_flight, max_abstention);
        set!(proposer_backend, verifier_backend);
        if self.pair_seed.is_some() {
            c.pair_seed = self.pair_seed;
        }
        if self.prompt_seed.is_some() {
            c.prompt_seed = self.prompt_seed;
        }
        if self.exhaustive {
            c.exhaustive = true;
        }
        if let Some(u) = &self.proposer_url {
            c.proposer_endpoint.base_url = u.clone();
        }
        if let Some(u) = &self.verifier_url {
            c.verifier_endpoint.base_url = u.clone();
        }
        if let Some(m) = &self.proposer_model {
            c.proposer_endpoint.model = m.clone();
        }
        if let Some(m) = &self.verifier_model {
            c.verifier_endpoint.model = m.clone();
        }
        if let Some(r) = self.route {
            c.proposer_endpoint.route = r;
            c.verifier_endpoint.route = r;
        }
        if self.cache.is_some() {
            c.cache = self.cache.clone();
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        c.validate().map_err(Failure::Input)?;
        Ok(c)
    }
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Backend(String),
    Aborted(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Backend(_) => 3,
            Self::Aborted(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Backend(m) | Self::Aborted(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Aborted { .. } => Self::Aborted(e.to_string()),
            e if e.is_backend() => Self::Backend(e.to_string()),
            e => Self::Input(e.to_string()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<DiscriminatorError> for Failure {
    fn from(e: DiscriminatorError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<ProposerError> for Failure {
    fn from(e: ProposerError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Pipeline(p) => p.into(),
            e => Self::Input(e.to_string()),
        }
    }
}

fn load_pair(args: &PairArgs) -> Result<DistributionPair, Failure> {
    let d0 = corpus::load_corpus(&args.d0, CorpusFormat::from_path(&args.d0))?;
    let d1 = corpus::load_corpus(&args.d1, CorpusFormat::from_path(&args.d1))?;
    Ok(DistributionPair::new(d0, d1))
}

/// Writes the report document to `--out` (if set) and the table to stdout.
fn emit(config: &RunConfig, json: String, table: String) -> Result<(), Failure> {
    if let Some(out) = &config.out {
        let path = Path::new(out);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
        }
        fs::write(path, json).map_err(|e| Failure::Input(format!("{out}: {e}")))?;
    }
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Describe { pair, run } => {
            let config = run.resolve()?;
            let pair = load_pair(&pair)?;
            let report = Engine::from_config(config.clone())?.describe_pair(&pair)?;
            emit(&config, report.to_json(), report.to_table())
        }
        Command::LabelClusters { input, run } => {
            let config = run.resolve()?;
            let clustered = corpus::load_clustered(&input)?;
            let report = Engine::from_config(config.clone())?.label_clusters(&clustered)?;
            emit(&config, report.to_json(), report.to_table())
        }
        Command::Shift { train, test, run } => {
            let config = run.resolve()?;
            let train = corpus::load_corpus(&train, CorpusFormat::from_path(&train))?;
            let test = corpus::load_corpus(&test, CorpusFormat::from_path(&test))?;
            let report = Engine::from_config(config.clone())?.shift_report(&train, &test)?;
            emit(&config, report.to_json(), report.to_table())
        }
        Command::Scan { labels, run } => {
            let config = run.resolve()?;
            let classes = corpus::load_labeled(&labels)?;
            let report = Engine::from_config(config.clone())?.shortcut_scan(&classes)?;
            emit(&config, report.to_json(), report.to_table())
        }
        Command::Verify { hypothesis, pair, run } => {
            let config = run.resolve()?;
            let pair = load_pair(&pair)?;
            let report = Engine::from_config(config.clone())?.verify(&hypothesis, &pair)?;
            emit(&config, report.to_json(), report.to_table())
        }
        Command::Bench { suite, run } => {
            let config = run.resolve()?;
            let tasks = bench::load_suite(&suite)?;
            let engine = Engine::from_config(config.clone())?;
            let report = bench::run_bench(&tasks, &engine)?;
            emit(&config, report.to_json(), report.to_table())
        }
        Command::GenBench(args) => {
            let tasks = match (&args.gold, args.q1, args.q0) {
                (Some(gold), Some(q1), Some(q0)) => vec![bench::generate_task(gold, q1, q0, args.n, args.seed)?],
                _ => match args.suite.as_deref().unwrap_or("default") {
                    "default" => bench::default_suite(args.tasks, args.n, args.seed)?,
                    other => return Err(Failure::Input(format!("unknown suite `{other}`"))),
                },
            };
            bench::write_suite(&args.out, &tasks)?;
            eprintln!("wrote {} tasks to {}", tasks.len(), args.out.display());
            Ok(())
        }
        Command::DumpPrompt { pair, percentile, set, run } => {
            let config = run.resolve()?;
            let pair = load_pair(&pair)?;
            let disc = discriminator::train(&pair, &config.train())?;
            let plans = proposer::plan_prompts(&pair, &disc, &config.proposer())?;
            let selected: Vec<_> = plans
                .iter()
                .filter(|p| percentile.is_none_or(|q| p.percentile == q))
                .filter(|p| set.is_none_or(|s| p.set_index == s))
                .collect();
            if selected.is_empty() {
                return Err(Failure::Input("no prompt matches the selection".into()));
            }
            let single = selected.len() == 1;
            for p in selected {
                if !single {
                    println!("### percentile {} set {}", p.percentile, p.set_index);
                }
                println!("{}", p.prompt.rendered);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
