//! Proposer prompts and candidate hypothesis collection.
//!
//! The rendered prompt layout is fixed:
//!
//! ```text
//! Group 0:
//! 1. <text>
//! ...
//!
//! Group 1:
//! 1. <text>
//! ...
//!
//! Compared to group 0, each sentence from group 1
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, CompletionBackend, CompletionRequest};
use crate::corpus::{DistributionPair, Sample, Side};
use crate::discriminator::{select_percentile, Discriminator};
use crate::util::parallel_map;

pub const INSTRUCTION: &str = "Compared to group 0, each sentence from group 1";
pub const PROMPT_TOKEN_BUDGET: usize = 2048;
pub const SAMPLE_TOKEN_CAP: usize = 256;
pub const TRUNCATION_MARKER: &str = "…";
pub const MAX_GROUP_SAMPLES: usize = 5;

const GROUP0_HEADER: &str = "Group 0:";
const GROUP1_HEADER: &str = "Group 1:";

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("no samples for side {0:?}")]
    EmptySampleSet(Side),
    #[error("{count} samples for side {side:?}, at most {MAX_GROUP_SAMPLES} fit a prompt")]
    TooManySamples { side: Side, count: usize },
    #[error("backend failed for prompt (percentile {percentile}, set {set_index}): {source}")]
    Backend {
        percentile: u32,
        set_index: usize,
        #[source]
        source: BackendError,
    },
    #[error("all {raw_count} completions were empty or rejected")]
    AllCompletionsEmpty { raw_count: usize },
}

/// `ceil(1.3 * whitespace tokens)`.
pub fn estimate_tokens(text: &str) -> usize {
    tokens_for_words(text.split_whitespace().count())
}

fn tokens_for_words(words: usize) -> usize {
    (13 * words).div_ceil(10)
}

fn words_for_tokens(tokens: usize) -> usize {
    tokens * 10 / 13
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposerPrompt {
    pub group0_samples: Vec<Sample>,
    pub group1_samples: Vec<Sample>,
    pub rendered: String,
    pub token_estimate: usize,
}

impl ProposerPrompt {
    pub fn instruction(&self) -> &'static str {
        INSTRUCTION
    }
}

/// A sample's text flattened to one line, with its word count.
struct Line {
    text: String,
    words: usize,
    limit: usize,
}

impl Line {
    fn new(sample: &Sample) -> Self {
        let text: String = sample
            .text
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        let words = text.split_whitespace().count();
        Self {
            text,
            words,
            limit: words,
        }
    }

    /// The first `limit` words with their original spacing, plus the marker
    /// when anything was cut.
    fn render(&self) -> String {
        if self.limit >= self.words {
            return self.text.clone();
        }
        let mut seen = 0;
        let mut end = 0;
        let mut in_word = false;
        for (i, c) in self.text.char_indices() {
            if c.is_whitespace() {
                if in_word {
                    seen += 1;
                    end = i;
                    if seen == self.limit {
                        break;
                    }
                }
                in_word = false;
            } else {
                in_word = true;
            }
        }
        format!("{}{TRUNCATION_MARKER}", &self.text[..end])
    }
}

fn overhead_words(n0: usize, n1: usize) -> usize {
    let headers = 2 * 2;
    headers + n0 + n1 + INSTRUCTION.split_whitespace().count()
}

fn render(group0: &[String], group1: &[String]) -> String {
    let mut out = String::new();
    for (header, lines) in [(GROUP0_HEADER, group0), (GROUP1_HEADER, group1)] {
        out.push_str(header);
        out.push('\n');
        for (i, l) in lines.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, l));
        }
        out.push('\n');
    }
    out.push_str(INSTRUCTION);
    out
}

/// Renders the pinned proposer prompt. Samples over 256 estimated tokens are
/// cut at a word boundary; if the whole prompt still exceeds 2048, the
/// longest sample is shortened one word at a time until it fits.
pub fn build_prompt(set1: &[Sample], set0: &[Sample]) -> Result<ProposerPrompt, ProposerError> {
    for (side, set) in [(Side::D1, set1), (Side::D0, set0)] {
        if set.is_empty() {
            return Err(ProposerError::EmptySampleSet(side));
        }
        if set.len() > MAX_GROUP_SAMPLES {
            return Err(ProposerError::TooManySamples {
                side,
                count: set.len(),
            });
        }
    }
    let mut lines: Vec<Line> = set0.iter().chain(set1).map(Line::new).collect();
    let cap = words_for_tokens(SAMPLE_TOKEN_CAP);
    for l in &mut lines {
        l.limit = l.limit.min(cap);
    }
    let budget = words_for_tokens(PROMPT_TOKEN_BUDGET);
    let fixed = overhead_words(set0.len(), set1.len());
    let mut total: usize = fixed + lines.iter().map(|l| l.limit).sum::<usize>();
    while total > budget {
        // First maximum wins, so shortening rotates through equally long samples.
        let (idx, longest) = lines
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, l)| if l.limit > best.1 { (i, l.limit) } else { best });
        if longest <= 1 {
            break;
        }
        lines[idx].limit -= 1;
        total -= 1;
    }
    let rendered_lines: Vec<String> = lines.iter().map(Line::render).collect();
    let (g0, g1) = rendered_lines.split_at(set0.len());
    let rendered = render(g0, g1);
    let token_estimate = estimate_tokens(&rendered);
    debug_assert!(token_estimate <= PROMPT_TOKEN_BUDGET);
    Ok(ProposerPrompt {
        group0_samples: set0.to_vec(),
        group1_samples: set1.to_vec(),
        rendered,
        token_estimate,
    })
}

/// Inverse of the prompt layout: `(group 0 texts, group 1 texts)`.
pub fn parse_prompt(prompt: &str) -> Option<(Vec<String>, Vec<String>)> {
    let body = prompt.strip_suffix(INSTRUCTION)?;
    let mut groups: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut current: Option<usize> = None;
    for line in body.lines() {
        match line {
            GROUP0_HEADER => current = Some(0),
            GROUP1_HEADER => current = Some(1),
            "" => current = None,
            _ => {
                let g = current?;
                let (num, text) = line.split_once(". ")?;
                num.parse::<usize>().ok()?;
                groups[g].push(text.to_string());
            }
        }
    }
    let [g0, g1] = groups;
    if g0.is_empty() || g1.is_empty() {
        return None;
    }
    Some((g0, g1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub percentile: u32,
    pub set_index: usize,
    pub completion_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub s: String,
    pub raw: String,
    pub provenance: Option<Provenance>,
    pub comparative: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "token", rename_all = "snake_case")]
pub enum Rejection {
    Empty,
    ForbiddenToken(String),
}

pub const DEFAULT_FORBIDDEN: &[&str] = &["group", "Group"];

fn has_comparative(s: &str) -> bool {
    let lower = s.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    words.iter().any(|w| *w == "more" || *w == "less")
        || words
            .windows(2)
            .any(|w| w[1] == "than" && w[0].len() > 2 && w[0].ends_with("er"))
}

/// [`normalize_with`] using the default forbidden list.
pub fn normalize_hypothesis(raw: &str) -> Result<Hypothesis, Rejection> {
    normalize_with(raw, DEFAULT_FORBIDDEN)
}

/// Trims whitespace and trailing `,`/`.` terminators, then rejects empty
/// strings and strings containing a forbidden token.
pub fn normalize_with<S: AsRef<str>>(raw: &str, forbidden: &[S]) -> Result<Hypothesis, Rejection> {
    let s = raw
        .trim()
        .trim_end_matches(|c: char| c == ',' || c == '.' || c.is_whitespace())
        .trim();
    if s.is_empty() {
        return Err(Rejection::Empty);
    }
    if let Some(tok) = forbidden.iter().map(AsRef::as_ref).find(|t| !t.is_empty() && s.contains(*t)) {
        return Err(Rejection::ForbiddenToken(tok.to_string()));
    }
    Ok(Hypothesis {
        s: s.to_string(),
        raw: raw.to_string(),
        provenance: None,
        comparative: has_comparative(s),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerConfig {
    pub percentiles: Vec<u32>,
    pub sets_per_percentile: usize,
    pub samples_per_group: usize,
    pub completions_per_set: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub forbidden_tokens: Vec<String>,
    pub seed: u64,
    pub in_flight: usize,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            percentiles: vec![5, 20, 100],
            sets_per_percentile: 10,
            samples_per_group: 5,
            completions_per_set: 2,
            max_tokens: 32,
            temperature: 0.7,
            stop: vec![",".into(), ".".into(), "\n".into()],
            forbidden_tokens: DEFAULT_FORBIDDEN.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedPrompt {
    pub percentile: u32,
    pub set_index: usize,
    pub prompt: ProposerPrompt,
}

fn percentile_rng(seed: u64, percentile: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ u64::from(percentile).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn draw(rng: &mut ChaCha8Rng, pool: &[Sample], k: usize) -> Vec<Sample> {
    let k = k.min(pool.len());
    rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// Every prompt `propose` would send, in (percentile, set) order.
pub fn plan_prompts(
    pair: &DistributionPair,
    disc: &Discriminator,
    config: &ProposerConfig,
) -> Result<Vec<PlannedPrompt>, ProposerError> {
    let k = config.samples_per_group.clamp(1, MAX_GROUP_SAMPLES);
    let mut plans = Vec::new();
    for &p in &config.percentiles {
        let reps = select_percentile(disc, pair, p);
        let mut rng = percentile_rng(config.seed, reps.percentile);
        for set_index in 0..config.sets_per_percentile {
            let set1 = draw(&mut rng, &reps.d1_samples, k);
            let set0 = draw(&mut rng, &reps.d0_samples, k);
            plans.push(PlannedPrompt {
                percentile: reps.percentile,
                set_index,
                prompt: build_prompt(&set1, &set0)?,
            });
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub hypotheses: Vec<Hypothesis>,
    pub raw_count: usize,
    pub rejected: usize,
    /// Largest (group 0, group 1) sample counts seen in any prompt.
    pub prompt_group_sizes: (usize, usize),
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// One `{"s", "raw", "provenance"}` object per line.
    pub fn to_jsonl(&self) -> String {
        self.hypotheses
            .iter()
            .map(|h| {
                serde_json::json!({"s": h.s, "raw": h.raw, "provenance": h.provenance}).to_string() + "\n"
            })
            .collect()
    }
}

pub fn completion_request(prompt: &ProposerPrompt, config: &ProposerConfig) -> CompletionRequest {
    CompletionRequest {
        prompt: prompt.rendered.clone(),
        n: config.completions_per_set,
        max_tokens: config.max_tokens,
        temperature: config.temperature,
        stop: config.stop.clone(),
        forbidden_tokens: config.forbidden_tokens.clone(),
    }
}

/// Samples prompts from each representativeness percentile, collects the
/// completions, and returns the normalized, deduplicated hypotheses in
/// first-seen (percentile, set, completion) order.
pub fn propose(
    pair: &DistributionPair,
    disc: &Discriminator,
    backend: &dyn CompletionBackend,
    config: &ProposerConfig,
) -> Result<CandidateSet, ProposerError> {
    let plans = plan_prompts(pair, disc, config)?;
    let responses = parallel_map(&plans, config.in_flight, |plan| {
        backend.complete(&completion_request(&plan.prompt, config))
    });

    let mut out = CandidateSet {
        hypotheses: Vec::new(),
        raw_count: 0,
        rejected: 0,
        prompt_group_sizes: (0, 0),
    };
    let mut seen = std::collections::HashSet::new();
    for (plan, resp) in plans.iter().zip(responses) {
        let completions = resp.map_err(|source| ProposerError::Backend {
            percentile: plan.percentile,
            set_index: plan.set_index,
            source,
        })?;
        out.prompt_group_sizes.0 = out.prompt_group_sizes.0.max(plan.prompt.group0_samples.len());
        out.prompt_group_sizes.1 = out.prompt_group_sizes.1.max(plan.prompt.group1_samples.len());
        for (ci, raw) in completions.iter().enumerate() {
            out.raw_count += 1;
            match normalize_with(raw, &config.forbidden_tokens) {
                Ok(mut h) => {
                    if seen.insert(h.s.clone()) {
                        h.provenance = Some(Provenance {
                            percentile: plan.percentile,
                            set_index: plan.set_index,
                            completion_index: ci,
                        });
                        out.hypotheses.push(h);
                    }
                }
                Err(_) => out.rejected += 1,
            }
        }
    }
    if out.hypotheses.is_empty() {
        return Err(ProposerError::AllCompletionsEmpty {
            raw_count: out.raw_count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(prefix: &str, texts: &[&str]) -> Vec<Sample> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sample::new(format!("{prefix}{i}"), *t))
            .collect()
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("a"), 2);
        assert_eq!(estimate_tokens("a b c d e f g h i j"), 13);
        assert_eq!(words_for_tokens(256), 196);
        assert!(tokens_for_words(196) <= 256 && tokens_for_words(197) > 256);
        assert_eq!(words_for_tokens(2048), 1575);
    }

    #[test]
    fn layout_for_short_samples() {
        let s1 = samples("b", &["b1", "b2", "b3", "b4", "b5"]);
        let s0 = samples("a", &["a1", "a2", "a3", "a4", "a5"]);
        let p = build_prompt(&s1, &s0).unwrap();
        assert!(p.rendered.ends_with(INSTRUCTION));
        let numbered = p
            .rendered
            .lines()
            .filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.parse::<u32>().is_ok()))
            .count();
        assert_eq!(numbered, 10);
        assert!(p.rendered.starts_with("Group 0:\n1. a1\n"));
        assert_eq!(p.token_estimate, estimate_tokens(&p.rendered));
    }

    #[test]
    fn huge_sample_is_truncated_to_budget() {
        let long = vec!["word"; 3000].join(" ");
        let s1 = samples("b", &[&long]);
        let s0 = samples("a", &["short one"]);
        let p = build_prompt(&s1, &s0).unwrap();
        assert!(p.token_estimate <= PROMPT_TOKEN_BUDGET);
        assert!(p.rendered.contains(TRUNCATION_MARKER));
        let (_, g1) = parse_prompt(&p.rendered).unwrap();
        assert!(estimate_tokens(&g1[0]) <= SAMPLE_TOKEN_CAP);
    }

    #[test]
    fn ten_long_samples_fit_budget() {
        let long = vec!["tok"; 400].join("  ");
        let many: Vec<&str> = vec![long.as_str(); 5];
        let p = build_prompt(&samples("b", &many), &samples("a", &many)).unwrap();
        assert!(p.token_estimate <= PROMPT_TOKEN_BUDGET, "{}", p.token_estimate);
        let (g0, g1) = parse_prompt(&p.rendered).unwrap();
        let lens: Vec<usize> = g0.iter().chain(&g1).map(|t| t.split_whitespace().count()).collect();
        let (lo, hi) = (lens.iter().min().unwrap(), lens.iter().max().unwrap());
        assert!(hi - lo <= 1, "round-robin keeps lengths level: {lens:?}");
    }

    #[test]
    fn empty_set_rejected() {
        let s0 = samples("a", &["x"]);
        assert!(matches!(build_prompt(&[], &s0), Err(ProposerError::EmptySampleSet(Side::D1))));
        assert!(matches!(build_prompt(&s0, &[]), Err(ProposerError::EmptySampleSet(Side::D0))));
        let six = samples("a", &["1", "2", "3", "4", "5", "6"]);
        assert!(matches!(build_prompt(&six, &s0), Err(ProposerError::TooManySamples { .. })));
    }

    #[test]
    fn multiline_sample_is_flattened() {
        let p = build_prompt(&samples("b", &["x\ny"]), &samples("a", &["z"])).unwrap();
        let (_, g1) = parse_prompt(&p.rendered).unwrap();
        assert_eq!(g1, vec!["x y".to_string()]);
    }

    #[test]
    fn normalize_examples() {
        let h = normalize_hypothesis("is military-related.").unwrap();
        assert_eq!(h.s, "is military-related");
        assert!(!h.comparative);
        assert_eq!(
            normalize_hypothesis("is about group 0"),
            Err(Rejection::ForbiddenToken("group".into()))
        );
        assert_eq!(normalize_hypothesis("   "), Err(Rejection::Empty));
        assert_eq!(normalize_hypothesis(" . "), Err(Rejection::Empty));
        assert!(normalize_hypothesis("is more positive").unwrap().comparative);
        assert!(normalize_hypothesis("is longer than usual").unwrap().comparative);
        assert!(!normalize_hypothesis("mentions a river").unwrap().comparative);
    }

    #[test]
    fn normalize_strips_repeated_terminators() {
        let h = normalize_hypothesis(" uses past tense.,. ").unwrap();
        assert_eq!(h.s, "uses past tense");
        assert_eq!(normalize_hypothesis(&h.s).unwrap().s, h.s);
    }
}
