//! Swap-normalized pairwise scoring and Monte-Carlo classification accuracy.
//!
//! For a hypothesis `s` and a cross pair `(x1, x0)` the verifier asks the
//! judgment backend both orientations and combines them as
//! `h_hat = (V(s, x1, x0) - V(s, x0, x1) + 1) / 2`, which makes
//! `h_hat(x1, x0) + h_hat(x0, x1) = 1` hold for any backend.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, JudgmentBackend, JudgmentRequest};
use crate::corpus::{DistributionPair, Sample};
use crate::util::{digest_parts, parallel_map};

pub const DEFAULT_N_PAIRS: usize = 400;
pub const QUESTION_PREFIX: &str = crate::backends::rules::JUDGE_QUESTION_PREFIX;

fn one_line(text: &str) -> String {
    text.chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifierQuestion {
    pub question: String,
    pub context: String,
}

impl VerifierQuestion {
    pub fn new(s: &str, a: &str, b: &str) -> Self {
        Self {
            question: format!("{QUESTION_PREFIX}{s}?"),
            context: format!("A: {}\nB: {}", one_line(a), one_line(b)),
        }
    }

    pub fn request(&self) -> JudgmentRequest {
        JudgmentRequest {
            question: self.question.clone(),
            context: self.context.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Abstain,
    /// The backend kept failing; scored like an abstention.
    Failed,
}

impl Verdict {
    pub fn parse(answer: &str) -> Self {
        let a = answer.trim().to_lowercase();
        if a.starts_with("yes") {
            Self::Yes
        } else if a.starts_with("no") {
            Self::No
        } else {
            Self::Abstain
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.half_units()) / 2.0
    }

    /// The value in units of one half: 2, 0 or 1.
    pub fn half_units(self) -> u32 {
        match self {
            Self::Yes => 2,
            Self::No => 0,
            Self::Abstain | Self::Failed => 1,
        }
    }

    pub fn abstained(self) -> bool {
        matches!(self, Self::Abstain | Self::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairJudgment {
    pub forward: Verdict,
    pub backward: Verdict,
}

impl PairJudgment {
    pub fn h_hat(&self) -> f64 {
        f64::from(self.quarter_units()) / 4.0
    }

    /// `4 * h_hat`, always an integer in 0..=4.
    pub fn quarter_units(&self) -> u32 {
        self.forward.half_units() + 2 - self.backward.half_units()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    s: String,
    a_id: String,
    b_id: String,
    answer: String,
    value: f64,
}

/// Judgments keyed by `(backend id, s, a.text, b.text)`, optionally backed by
/// an append-only jsonl file. Safe for concurrent use.
#[derive(Debug)]
pub struct JudgmentCache {
    entries: RwLock<HashMap<String, Verdict>>,
    writer: Mutex<Option<File>>,
    path: Option<PathBuf>,
    hits: AtomicUsize,
}

impl Default for JudgmentCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl JudgmentCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            path: None,
            hits: AtomicUsize::new(0),
        }
    }

    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let err = |e: std::io::Error| BackendError::Store(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path).map_err(err)?).lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let l: CacheLine = serde_json::from_str(&line).map_err(|e| {
                    BackendError::Store(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                entries.insert(l.key, Verdict::parse(&l.answer));
            }
        }
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
            path: Some(path.to_path_buf()),
            hits: AtomicUsize::new(0),
        })
    }

    pub fn key(backend_id: &str, s: &str, a: &str, b: &str) -> String {
        digest_parts(&[backend_id, s, a, b])
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    fn get(&self, key: &str) -> Option<Verdict> {
        let v = self.entries.read().unwrap().get(key).copied();
        if v.is_some() {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        v
    }

    fn put(&self, key: &str, s: &str, a: &Sample, b: &Sample, answer: &str, verdict: Verdict) -> Result<(), BackendError> {
        if let Some(path) = &self.path {
            let err = |e: std::io::Error| BackendError::Store(format!("{}: {e}", path.display()));
            let line = serde_json::to_string(&CacheLine {
                key: key.to_string(),
                s: s.to_string(),
                a_id: a.id.clone(),
                b_id: b.id.clone(),
                answer: answer.to_string(),
                value: verdict.value(),
            })
            .map_err(|e| BackendError::Store(e.to_string()))?;
            let mut w = self.writer.lock().unwrap();
            if w.is_none() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(err)?;
                }
                *w = Some(OpenOptions::new().create(true).append(true).open(path).map_err(err)?);
            }
            writeln!(w.as_mut().expect("writer opened"), "{line}").map_err(err)?;
        }
        self.entries.write().unwrap().insert(key.to_string(), verdict);
        Ok(())
    }
}

/// Index pairs `(i1 into d1, i0 into d0)` shared by every hypothesis in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    pub exhaustive: bool,
    pub seed: u64,
}

impl PairSet {
    /// `n_pairs` uniform draws with replacement, or the full cross product
    /// when it has at most `n_pairs` elements.
    pub fn draw(n1: usize, n0: usize, n_pairs: usize, seed: u64) -> Self {
        if n1 * n0 <= n_pairs {
            return Self::exhaustive(n1, n0, seed);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..n_pairs)
            .map(|_| (rng.random_range(0..n1), rng.random_range(0..n0)))
            .collect();
        Self {
            pairs,
            exhaustive: false,
            seed,
        }
    }

    pub fn exhaustive(n1: usize, n0: usize, seed: u64) -> Self {
        Self {
            pairs: (0..n1).flat_map(|i| (0..n0).map(move |j| (i, j))).collect(),
            exhaustive: true,
            seed,
        }
    }

    pub fn for_pair(pair: &DistributionPair, n_pairs: usize, seed: u64, force_exhaustive: bool) -> Self {
        if force_exhaustive {
            Self::exhaustive(pair.d1.len(), pair.d0.len(), seed)
        } else {
            Self::draw(pair.d1.len(), pair.d0.len(), n_pairs, seed)
        }
    }

    /// The same pairs for the swapped distribution pair.
    pub fn flipped(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect(),
            exhaustive: self.exhaustive,
            seed: self.seed,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CAEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub seed: u64,
    pub exhaustive: bool,
    /// Single judgments (two per pair) that were neither yes nor no.
    pub abstentions: usize,
    /// Judgments whose backend call failed after retries; included in
    /// `abstentions`.
    pub failures: usize,
    /// Sum of `4 * h_hat` over pairs.
    #[serde(skip)]
    pub quarter_units: u64,
}

impl CAEstimate {
    fn from_judgments(judgments: &[PairJudgment], seed: u64, exhaustive: bool) -> Self {
        let n = judgments.len();
        let quarter_units: u64 = judgments.iter().map(|j| u64::from(j.quarter_units())).sum();
        let abstentions = judgments
            .iter()
            .map(|j| usize::from(j.forward.abstained()) + usize::from(j.backward.abstained()))
            .sum();
        let failures = judgments
            .iter()
            .map(|j| usize::from(j.forward == Verdict::Failed) + usize::from(j.backward == Verdict::Failed))
            .sum();
        let mean = if n == 0 { 0.5 } else { quarter_units as f64 / (4 * n) as f64 };
        let stderr = if n < 2 {
            0.0
        } else {
            let ss: f64 = judgments.iter().map(|j| (j.h_hat() - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        Self {
            mean,
            stderr,
            n_pairs: n,
            seed,
            exhaustive,
            abstentions,
            failures,
            quarter_units,
        }
    }

    /// The estimate for the opposite orientation: `1 - mean`, same spread.
    pub fn reversed(&self) -> Self {
        let quarter_units = 4 * self.n_pairs as u64 - self.quarter_units;
        Self {
            mean: if self.n_pairs == 0 { 0.5 } else { quarter_units as f64 / (4 * self.n_pairs) as f64 },
            quarter_units,
            ..self.clone()
        }
    }

    pub fn significant(&self) -> bool {
        self.mean - 2.0 * self.stderr > 0.5
    }

    pub fn judgments(&self) -> usize {
        2 * self.n_pairs
    }
}

struct Job<'a> {
    key: String,
    s: &'a str,
    a: &'a Sample,
    b: &'a Sample,
}

/// Scores hypotheses against one judgment backend, caching every answer.
pub struct Verifier {
    backend: Arc<dyn JudgmentBackend>,
    backend_id: String,
    cache: Arc<JudgmentCache>,
    in_flight: usize,
    requests: AtomicUsize,
}

impl Verifier {
    pub fn new(backend: Arc<dyn JudgmentBackend>) -> Self {
        Self::with_cache(backend, Arc::new(JudgmentCache::in_memory()))
    }

    pub fn with_cache(backend: Arc<dyn JudgmentBackend>, cache: Arc<JudgmentCache>) -> Self {
        let backend_id = backend.id();
        Self {
            backend,
            backend_id,
            cache,
            in_flight: 4,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn in_flight(mut self, bound: usize) -> Self {
        self.in_flight = bound.max(1);
        self
    }

    pub fn cache(&self) -> &Arc<JudgmentCache> {
        &self.cache
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    /// Backend requests issued so far (cache hits excluded).
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn ask(&self, s: &str, a: &Sample, b: &Sample) -> Result<(String, Verdict), BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let answer = self.backend.judge(&VerifierQuestion::new(s, &a.text, &b.text).request())?;
        let verdict = Verdict::parse(&answer);
        Ok((answer, verdict))
    }

    fn resolve(&self, job: &Job) -> Result<Verdict, BackendError> {
        if let Some(v) = self.cache.get(&job.key) {
            return Ok(v);
        }
        match self.ask(job.s, job.a, job.b) {
            Ok((answer, verdict)) => {
                self.cache.put(&job.key, job.s, job.a, job.b, &answer, verdict)?;
                Ok(verdict)
            }
            Err(e) if e.is_transient() => Ok(Verdict::Failed),
            Err(e) => Err(e),
        }
    }

    /// `V(s, a, b)` as a verdict: is `a` more `s` than `b`?
    pub fn judge(&self, s: &str, a: &Sample, b: &Sample) -> Result<Verdict, BackendError> {
        let key = JudgmentCache::key(&self.backend_id, s, &a.text, &b.text);
        if let Some(v) = self.cache.get(&key) {
            return Ok(v);
        }
        let (answer, verdict) = self.ask(s, a, b)?;
        self.cache.put(&key, s, a, b, &answer, verdict)?;
        Ok(verdict)
    }

    pub fn pair_judgment(&self, s: &str, x1: &Sample, x0: &Sample) -> Result<PairJudgment, BackendError> {
        Ok(PairJudgment {
            forward: self.judge(s, x1, x0)?,
            backward: self.judge(s, x0, x1)?,
        })
    }

    pub fn h_hat(&self, s: &str, x1: &Sample, x0: &Sample) -> Result<f64, BackendError> {
        Ok(self.pair_judgment(s, x1, x0)?.h_hat())
    }

    fn slot<'a>(
        &self,
        index: &mut HashMap<String, usize>,
        jobs: &mut Vec<Job<'a>>,
        s: &'a str,
        a: &'a Sample,
        b: &'a Sample,
    ) -> usize {
        let key = JudgmentCache::key(&self.backend_id, s, &a.text, &b.text);
        *index.entry(key.clone()).or_insert_with(|| {
            jobs.push(Job { key, s, a, b });
            jobs.len() - 1
        })
    }

    /// CA estimates for several hypotheses over one shared pair set. Distinct
    /// judgments are resolved once each, concurrently up to the in-flight
    /// bound; aggregation follows pair order.
    pub fn estimate_many(
        &self,
        hypotheses: &[&str],
        pair: &DistributionPair,
        pairs: &PairSet,
    ) -> Result<Vec<CAEstimate>, BackendError> {
        let (d1, d0) = (pair.d1.samples(), pair.d0.samples());
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut jobs: Vec<Job> = Vec::new();
        let mut slots: Vec<Vec<(usize, usize)>> = Vec::with_capacity(hypotheses.len());
        for &s in hypotheses {
            let mut per = Vec::with_capacity(pairs.len());
            for &(i1, i0) in &pairs.pairs {
                let (x1, x0) = (&d1[i1], &d0[i0]);
                let f = self.slot(&mut index, &mut jobs, s, x1, x0);
                let b = self.slot(&mut index, &mut jobs, s, x0, x1);
                per.push((f, b));
            }
            slots.push(per);
        }
        let verdicts: Vec<Verdict> = parallel_map(&jobs, self.in_flight, |job| self.resolve(job))
            .into_iter()
            .collect::<Result<_, _>>()?;
        Ok(slots
            .iter()
            .map(|per| {
                let judgments: Vec<PairJudgment> = per
                    .iter()
                    .map(|&(f, b)| PairJudgment {
                        forward: verdicts[f],
                        backward: verdicts[b],
                    })
                    .collect();
                CAEstimate::from_judgments(&judgments, pairs.seed, pairs.exhaustive)
            })
            .collect())
    }

    pub fn estimate_on(&self, s: &str, pair: &DistributionPair, pairs: &PairSet) -> Result<CAEstimate, BackendError> {
        Ok(self.estimate_many(&[s], pair, pairs)?.remove(0))
    }

    /// Monte-Carlo CA over `n_pairs` seeded draws, exact when the cross
    /// product is no larger than `n_pairs`.
    pub fn estimate_ca(&self, s: &str, pair: &DistributionPair, n_pairs: usize, seed: u64) -> Result<CAEstimate, BackendError> {
        self.estimate_on(s, pair, &PairSet::draw(pair.d1.len(), pair.d0.len(), n_pairs, seed))
    }

    /// CA of a known gold hypothesis: the verifier-quality metric.
    pub fn benchmark_verifier(&self, gold: &str, pair: &DistributionPair, pairs: &PairSet) -> Result<CAEstimate, BackendError> {
        self.estimate_on(gold, pair, pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::RuleBackend;
    use crate::corpus::Corpus;
    use std::collections::HashSet;

    struct Fixed(&'static str);

    impl JudgmentBackend for Fixed {
        fn id(&self) -> String {
            format!("fixed:{}", self.0)
        }
        fn judge(&self, _: &JudgmentRequest) -> Result<String, BackendError> {
            Ok(self.0.to_string())
        }
    }

    fn rule() -> Verifier {
        Verifier::new(Arc::new(RuleBackend::default()))
    }

    fn sample(id: &str, t: &str) -> Sample {
        Sample::new(id, t)
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(Verdict::parse(" Yes."), Verdict::Yes);
        assert_eq!(Verdict::parse("no."), Verdict::No);
        assert_eq!(Verdict::parse("NO"), Verdict::No);
        assert_eq!(Verdict::parse("maybe"), Verdict::Abstain);
        assert_eq!(Verdict::parse(""), Verdict::Abstain);
    }

    #[test]
    fn question_layout() {
        let q = VerifierQuestion::new("contains a digit", "a\nb", "c");
        assert_eq!(q.question, "Is it true that sentence A contains a digit?");
        assert_eq!(q.context, "A: a b\nB: c");
    }

    #[test]
    fn h_hat_formula() {
        let j = |f, b| PairJudgment { forward: f, backward: b }.h_hat();
        assert_eq!(j(Verdict::Yes, Verdict::No), 1.0);
        assert_eq!(j(Verdict::Yes, Verdict::Yes), 0.5);
        assert_eq!(j(Verdict::No, Verdict::Yes), 0.0);
        assert_eq!(j(Verdict::Abstain, Verdict::No), 0.75);
    }

    #[test]
    fn judge_question_mark() {
        let v = rule();
        let (a, b) = (sample("a", "Is it raining?"), sample("b", "It rains."));
        assert_eq!(v.judge("contains a question mark", &a, &b).unwrap(), Verdict::Yes);
        assert_eq!(v.judge("contains a question mark", &b, &a).unwrap(), Verdict::No);
        assert_eq!(Verifier::new(Arc::new(Fixed("maybe"))).judge("x", &a, &b).unwrap().value(), 0.5);
    }

    #[test]
    fn length_h_hat() {
        let v = rule();
        let x1 = sample("x1", "one two three four five six seven eight nine ten eleven twelve");
        let x0 = sample("x0", "one two three");
        assert_eq!(v.h_hat("is longer in sentence length", &x1, &x0).unwrap(), 1.0);
    }

    #[test]
    fn identical_sides_give_exactly_half() {
        let c = Corpus::from_texts("c", ["a?", "b", "c?", "d", "e!"]).unwrap();
        let pair = DistributionPair::new(c.clone(), c);
        let v = rule();
        for s in ["contains a question mark", "is longer in sentence length", "mentions money"] {
            let est = v.estimate_ca(s, &pair, 400, 3).unwrap();
            assert!(est.exhaustive);
            assert_eq!(est.mean, 0.5);
        }
    }

    #[test]
    fn repeated_estimates_hit_cache() {
        let d1 = Corpus::from_texts("d1", ["a?", "b?", "c"]).unwrap();
        let d0 = Corpus::from_texts("d0", ["x", "y?", "z"]).unwrap();
        let pair = DistributionPair::new(d0, d1);
        let v = rule();
        let first = v.estimate_ca("contains a question mark", &pair, 400, 0).unwrap();
        let sent = v.requests();
        assert_eq!(sent, 18);
        let second = v.estimate_ca("contains a question mark", &pair, 400, 0).unwrap();
        assert_eq!(first, second);
        assert_eq!(v.requests(), sent);
    }

    #[test]
    fn abstaining_backend_is_chance() {
        let d1 = Corpus::from_texts("d1", ["a", "b"]).unwrap();
        let d0 = Corpus::from_texts("d0", ["c", "d"]).unwrap();
        let v = Verifier::new(Arc::new(Fixed("maybe")));
        let est = v.estimate_ca("anything", &DistributionPair::new(d0, d1), 400, 0).unwrap();
        assert_eq!(est.mean, 0.5);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.abstentions, 8);
    }

    #[test]
    fn sampled_mode_draws_with_replacement() {
        let p = PairSet::draw(30, 30, 400, 9);
        assert!(!p.exhaustive);
        assert_eq!(p.len(), 400);
        assert_eq!(p, PairSet::draw(30, 30, 400, 9));
        let distinct: HashSet<_> = p.pairs.iter().collect();
        assert!(distinct.len() < 400);
        assert_eq!(PairSet::draw(20, 20, 400, 0).len(), 400);
        assert!(PairSet::draw(20, 20, 400, 0).exhaustive);
    }

    #[test]
    fn persistent_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let (a, b) = (sample("a", "x 1"), sample("b", "y"));
        {
            let v = Verifier::with_cache(Arc::new(RuleBackend::default()), Arc::new(JudgmentCache::open(&path).unwrap()));
            assert_eq!(v.judge("contains a digit", &a, &b).unwrap(), Verdict::Yes);
        }
        let cache = Arc::new(JudgmentCache::open(&path).unwrap());
        assert_eq!(cache.len(), 1);
        let v = Verifier::with_cache(Arc::new(RuleBackend::default()), cache);
        assert_eq!(v.judge("contains a digit", &a, &b).unwrap(), Verdict::Yes);
        assert_eq!(v.requests(), 0);
        let line = fs::read_to_string(&path).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(parsed["a_id"], "a");
        assert_eq!(parsed["value"], 1.0);
    }
}
