//! Synthetic binary tasks with known gold predicates, and the benchmark that
//! checks whether the pipeline recovers them.

mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Registry;
use crate::config::RunConfig;
use crate::corpus::{load_corpus, Corpus, CorpusError, CorpusFormat, DistributionPair, Sample};
use crate::pipeline::{Engine, PipelineError};
use crate::verifier::{CAEstimate, PairSet};

use synth::Draft;

pub const SUITE_FORMAT: &str = "distdescribe-bench-suite-v1";
pub const BENCH_REPORT_SCHEMA: &str = "distdescribe-bench-report-v1";
pub const MIN_SAMPLES_PER_SIDE: usize = 10;
/// Share of each side that also receives a random non-gold predicate.
pub const CONTRAST_RATE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("no satisfying/violating edit for predicate `{0}`")]
    UnsatisfiablePredicate(String),
    #[error("rates must satisfy 0 <= q0 < q1 <= 1 (got q1={q1}, q0={q0})")]
    InvalidRates { q1: f64, q0: f64 },
    #[error("need at least {MIN_SAMPLES_PER_SIDE} samples per side, got {0}")]
    TooFewSamples(usize),
    #[error("no tasks to run")]
    EmptySuite,
    #[error("suite {path}: {message}")]
    Suite { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn suite_err(path: &Path, message: impl ToString) -> BenchError {
    BenchError::Suite {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub gold: String,
    pub q1: f64,
    pub q0: f64,
    pub n_per_side: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub pair: DistributionPair,
}

impl SyntheticTask {
    pub fn gold_description(&self) -> String {
        Registry::builtin()
            .get(&self.spec.gold)
            .map(|p| p.description.clone())
            .unwrap_or_default()
    }
}

fn side_seed(seed: u64, side: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(side)
}

fn build_side(name: &str, gold: &str, q: f64, n: usize, seed: u64, registry: &Registry) -> Result<Corpus, BenchError> {
    let pred = registry.get(gold).ok_or_else(|| BenchError::UnknownPredicate(gold.into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let satisfied = (q * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut want = vec![false; n];
    for &i in &order[..satisfied] {
        want[i] = true;
    }
    let others: Vec<&str> = registry.ids().filter(|id| *id != gold).collect();
    let n_contrast = (CONTRAST_RATE * n as f64).round() as usize;
    let mut contrast: Vec<Option<&str>> = vec![None; n];
    for i in rand::seq::index::sample(&mut rng, n, n_contrast) {
        contrast[i] = others.choose(&mut rng).copied();
    }

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let base = Draft::base(&mut rng);
        let mut draft = base.clone();
        if let Some(c) = contrast[i] {
            draft.apply(c, true, &mut rng);
        }
        if !draft.apply(gold, want[i], &mut rng) {
            return Err(BenchError::UnsatisfiablePredicate(gold.into()));
        }
        let mut text = draft.render();
        if pred.holds(&text) != want[i] {
            // The contrast edit interfered with the gold label; drop it.
            let mut plain = base;
            plain.apply(gold, want[i], &mut rng);
            text = plain.render();
            if pred.holds(&text) != want[i] {
                return Err(BenchError::UnsatisfiablePredicate(gold.into()));
            }
        }
        samples.push(Sample::new(format!("{name}:{i}"), text));
    }
    Ok(Corpus::new(name, samples)?)
}

/// Builds a task whose d1 has exactly `round(q1 * n)` samples satisfying the
/// gold predicate and whose d0 has exactly `round(q0 * n)`.
pub fn generate_task(gold: &str, q1: f64, q0: f64, n_per_side: usize, seed: u64) -> Result<SyntheticTask, BenchError> {
    let registry = Registry::builtin();
    if registry.get(gold).is_none() {
        return Err(BenchError::UnknownPredicate(gold.into()));
    }
    if !(0.0..=1.0).contains(&q0) || !(0.0..=1.0).contains(&q1) || q0 >= q1 {
        return Err(BenchError::InvalidRates { q1, q0 });
    }
    if n_per_side < MIN_SAMPLES_PER_SIDE {
        return Err(BenchError::TooFewSamples(n_per_side));
    }
    let d0 = build_side("d0", gold, q0, n_per_side, side_seed(seed, 0), &registry)?;
    let d1 = build_side("d1", gold, q1, n_per_side, side_seed(seed, 1), &registry)?;
    Ok(SyntheticTask {
        spec: TaskSpec {
            name: format!("{gold}-{seed}"),
            gold: gold.into(),
            q1,
            q0,
            n_per_side,
            seed,
        },
        pair: DistributionPair::new(d0, d1),
    })
}

/// `n_tasks` noiseless tasks (rates 1.0 / 0.0), cycling through the registry
/// in id order; task `i` uses seed `seed + i`.
pub fn default_suite(n_tasks: usize, n_per_side: usize, seed: u64) -> Result<Vec<SyntheticTask>, BenchError> {
    let ids: Vec<String> = Registry::builtin().ids().map(String::from).collect();
    (0..n_tasks)
        .map(|i| {
            let gold = &ids[i % ids.len()];
            let mut t = generate_task(gold, 1.0, 0.0, n_per_side, seed + i as u64)?;
            t.spec.name = format!("task-{i:03}-{gold}");
            Ok(t)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    tasks: Vec<TaskSpec>,
}

/// Writes `manifest.json` plus `<task>/d0.jsonl` and `<task>/d1.jsonl`.
pub fn write_suite(dir: &Path, tasks: &[SyntheticTask]) -> Result<(), BenchError> {
    let io = |e: std::io::Error| suite_err(dir, e);
    fs::create_dir_all(dir).map_err(io)?;
    for t in tasks {
        let td = dir.join(&t.spec.name);
        fs::create_dir_all(&td).map_err(io)?;
        t.pair.d0.save_jsonl(&td.join("d0.jsonl")).map_err(io)?;
        t.pair.d1.save_jsonl(&td.join("d1.jsonl")).map_err(io)?;
    }
    let manifest = Manifest {
        format: SUITE_FORMAT.into(),
        tasks: tasks.iter().map(|t| t.spec.clone()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(dir.join("manifest.json"), text).map_err(io)
}

pub fn load_suite(dir: &Path) -> Result<Vec<SyntheticTask>, BenchError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| suite_err(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| suite_err(&path, e))?;
    if manifest.format != SUITE_FORMAT {
        return Err(suite_err(&path, format!("unsupported format `{}`", manifest.format)));
    }
    manifest
        .tasks
        .into_iter()
        .map(|spec| {
            let td = dir.join(&spec.name);
            let d0 = load_corpus(&td.join("d0.jsonl"), CorpusFormat::Jsonl)?;
            let d1 = load_corpus(&td.join("d1.jsonl"), CorpusFormat::Jsonl)?;
            Ok(SyntheticTask {
                spec,
                pair: DistributionPair::new(d0, d1),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub name: String,
    pub gold: String,
    pub q1: f64,
    pub q0: f64,
    pub gold_in_top_k: bool,
    pub gold_rank: Option<usize>,
    pub top1: Option<String>,
    pub top1_ca: Option<f64>,
    /// CA of the gold description itself: the verifier-quality metric.
    pub gold_ca: CAEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub config: RunConfig,
    pub top_k: usize,
    pub tasks: Vec<TaskResult>,
    pub hit_rate: f64,
    pub rank1_rate: f64,
    pub mean_gold_ca: f64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("task                                 gold rank  top-1 CA  gold CA\n");
        for t in &self.tasks {
            out.push_str(&format!(
                "{:<36} {:>9}  {:>8}  {:.3}\n",
                t.name,
                t.gold_rank.map_or("-".to_string(), |r| r.to_string()),
                t.top1_ca.map_or("-".to_string(), |c| format!("{c:.3}")),
                t.gold_ca.mean
            ));
        }
        let hits = self.tasks.iter().filter(|t| t.gold_in_top_k).count();
        out.push_str(&format!(
            "top-{} hit rate: {:.3} ({}/{})\nrank-1 rate: {:.3}\nmean gold CA: {:.3}\n",
            self.top_k,
            self.hit_rate,
            hits,
            self.tasks.len(),
            self.rank1_rate,
            self.mean_gold_ca
        ));
        out
    }
}

/// Runs the pipeline on every task and matches ranked descriptions back to
/// predicate ids through the registry parser.
pub fn run_bench(tasks: &[SyntheticTask], engine: &Engine) -> Result<BenchReport, BenchError> {
    if tasks.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    let registry = Registry::builtin();
    let config = engine.config();
    let mut results = Vec::with_capacity(tasks.len());
    for t in tasks {
        let report = engine.describe_pair(&t.pair)?;
        let gold_rank = report
            .ranked
            .iter()
            .find(|r| registry.parse(&r.hypothesis.s).is_some_and(|p| p.id == t.spec.gold))
            .map(|r| r.rank);
        let pairs = PairSet::for_pair(&t.pair, config.n_pairs, config.pair_seed(), config.exhaustive);
        let gold_ca = engine
            .verifier()
            .benchmark_verifier(&t.gold_description(), &t.pair, &pairs)
            .map_err(PipelineError::from)?;
        results.push(TaskResult {
            name: t.spec.name.clone(),
            gold: t.spec.gold.clone(),
            q1: t.spec.q1,
            q0: t.spec.q0,
            gold_in_top_k: gold_rank.is_some(),
            gold_rank,
            top1: report.ranked.first().map(|r| r.hypothesis.s.clone()),
            top1_ca: report.ranked.first().map(|r| r.ca.mean),
            gold_ca,
        });
    }
    let n = results.len() as f64;
    Ok(BenchReport {
        schema: BENCH_REPORT_SCHEMA.into(),
        config: config.effective(),
        top_k: config.top_k,
        hit_rate: results.iter().filter(|r| r.gold_in_top_k).count() as f64 / n,
        rank1_rate: results.iter().filter(|r| r.gold_rank == Some(1)).count() as f64 / n,
        mean_gold_ca: results.iter().map(|r| r.gold_ca.mean).sum::<f64>() / n,
        tasks: results,
    })
}
