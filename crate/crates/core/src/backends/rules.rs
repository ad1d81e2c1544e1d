//! Exactly evaluable text predicates and the deterministic rule backend built
//! on them.
//!
//! A predicate's `score` induces the comparator "A is more s than B" as
//! `score(A) > score(B)`. Binary predicates score 0 or 1; `length` and
//! `capital_ratio` are graded.

use serde::Serialize;

use super::{BackendError, CompletionBackend, CompletionRequest, JudgmentBackend, JudgmentRequest};
use crate::proposer::parse_prompt;

const NEGATION: &[&str] = &[
    "not", "never", "no", "nobody", "nothing", "none", "nowhere", "neither", "nor", "cannot",
];
const FIRST_PERSON: &[&str] = &["i", "me", "my", "mine", "myself", "we", "us", "our", "ours", "ourselves"];
const SECOND_PERSON: &[&str] = &["you", "your", "yours", "yourself", "yourselves"];
const ANIMALS: &[&str] = &[
    "dog", "dogs", "cat", "cats", "horse", "horses", "bird", "birds", "zebra", "lion", "rabbit",
    "cow", "sheep", "fox", "owl",
];
const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "purple", "orange", "pink", "brown", "black", "white", "gray",
    "grey",
];
const DAYS: &[&str] = &[
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const FOOD: &[&str] = &[
    "pizza", "bread", "soup", "cheese", "pasta", "cake", "apple", "apples", "sandwich", "rice",
    "cookies", "food",
];
const SPORTS: &[&str] = &[
    "soccer", "football", "tennis", "basketball", "baseball", "hockey", "match", "team",
    "tournament", "stadium",
];
const WEATHER: &[&str] = &[
    "rain", "raining", "snow", "storm", "sunny", "windy", "cloudy", "weather", "thunder", "fog",
];
const MONEY: &[&str] = &["money", "dollars", "dollar", "cash", "price", "euros", "budget", "coins"];
const NUMBER_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "twenty", "hundred", "thousand", "dozen",
];
const FUTURE: &[&str] = &["will", "shall", "won't", "gonna"];
const PAST_IRREGULAR: &[&str] = &[
    "was", "were", "had", "did", "went", "made", "saw", "took", "came", "built", "found",
    "brought", "wrote", "kept", "gave", "left", "told", "ran", "sold", "held",
];
// Words ending in "ed" that are not past-tense verbs.
const ED_EXCEPTIONS: &[&str] = &[
    "bed", "red", "need", "seed", "feed", "shed", "speed", "indeed", "hundred", "sled", "weed",
    "breed", "greed", "bred", "fled", "wed",
];
const EMOTICONS: &[&str] = &[":)", ":(", ":D", ";)", ":-)", ":-(", ":P", "<3", ":')", "^_^"];

/// Length in words at or above which `length` counts as satisfied.
pub const LONG_SENTENCE_WORDS: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateKind {
    ContainsChar(char),
    Lexicon(#[serde(skip)] &'static [&'static str]),
    Word(String),
    Negation,
    PastTense,
    Hyperlink,
    Emoticon,
    Digit,
    AllCapsWord,
    CapitalRatio,
    Length,
}

/// A rule hypothesis: a natural-language description plus an exact score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RulePredicate {
    pub id: String,
    pub description: String,
    #[serde(skip)]
    pub kind: PredicateKind,
}

/// Lowercased whitespace tokens with surrounding punctuation trimmed.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .trim_matches('\'')
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
}

fn any_token(text: &str, pred: impl Fn(&str) -> bool) -> bool {
    word_tokens(text).any(|t| pred(&t))
}

fn is_past_form(t: &str) -> bool {
    PAST_IRREGULAR.contains(&t)
        || (t.len() >= 4
            && t.ends_with("ed")
            && t.chars().all(|c| c.is_ascii_alphabetic())
            && !ED_EXCEPTIONS.contains(&t))
}

fn capital_ratio(text: &str) -> f64 {
    let (mut letters, mut upper) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if c.is_uppercase() {
            upper += 1;
        }
    }
    if letters == 0 {
        0.0
    } else {
        upper as f64 / letters as f64
    }
}

fn bool_score(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl RulePredicate {
    fn new(id: &str, description: &str, kind: PredicateKind) -> Self {
        Self {
            id: id.to_string(),
            description: description.to_string(),
            kind,
        }
    }

    pub fn score(&self, text: &str) -> f64 {
        match &self.kind {
            PredicateKind::ContainsChar(c) => bool_score(text.contains(*c)),
            PredicateKind::Lexicon(words) => bool_score(any_token(text, |t| words.contains(&t))),
            PredicateKind::Word(w) => bool_score(any_token(text, |t| t == w)),
            PredicateKind::Negation => bool_score(any_token(text, |t| {
                NEGATION.contains(&t) || t.ends_with("n't")
            })),
            PredicateKind::PastTense => bool_score(any_token(text, is_past_form)),
            PredicateKind::Hyperlink => {
                let l = text.to_lowercase();
                bool_score(l.contains("http://") || l.contains("https://") || l.contains("www."))
            }
            PredicateKind::Emoticon => {
                bool_score(text.split_whitespace().any(|t| EMOTICONS.contains(&t)))
            }
            PredicateKind::Digit => bool_score(text.chars().any(|c| c.is_ascii_digit())),
            PredicateKind::AllCapsWord => bool_score(text.split_whitespace().any(|t| {
                let core = t.trim_matches(|c: char| !c.is_alphabetic());
                core.chars().count() >= 2 && core.chars().all(|c| c.is_alphabetic() && c.is_uppercase())
            })),
            PredicateKind::CapitalRatio => capital_ratio(text),
            PredicateKind::Length => text.split_whitespace().count() as f64,
        }
    }

    /// Whether a single text satisfies the predicate on its own.
    pub fn holds(&self, text: &str) -> bool {
        match self.kind {
            PredicateKind::Length => text.split_whitespace().count() >= LONG_SENTENCE_WORDS,
            PredicateKind::CapitalRatio => capital_ratio(text) > 0.5,
            _ => self.score(text) > 0.0,
        }
    }

    pub fn is_graded(&self) -> bool {
        matches!(self.kind, PredicateKind::Length | PredicateKind::CapitalRatio)
    }
}

/// Canonical form used to match descriptions: trimmed, trailing punctuation
/// removed, inner whitespace collapsed, lowercased, curly quotes folded.
pub fn canonical_description(s: &str) -> String {
    let folded: String = s
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201c}' | '\u{201d}' => '"',
            c => c,
        })
        .collect();
    let trimmed = folded.trim().trim_end_matches(|c: char| ".,;:!?".contains(c) || c.is_whitespace());
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone)]
pub struct Registry {
    predicates: Vec<RulePredicate>,
    /// Canonical descriptions, parallel to `predicates`.
    keys: Vec<String>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn builtin() -> Self {
        use PredicateKind::*;
        let mut predicates = vec![
            RulePredicate::new("all_caps_word", "contains a word in all capital letters", AllCapsWord),
            RulePredicate::new("animal", "mentions an animal", Lexicon(ANIMALS)),
            RulePredicate::new("capital_ratio", "has a high ratio of capital letters", CapitalRatio),
            RulePredicate::new("color", "mentions a color", Lexicon(COLORS)),
            RulePredicate::new("day_of_week", "mentions a day of the week", Lexicon(DAYS)),
            RulePredicate::new("digit", "contains a digit", Digit),
            RulePredicate::new("emoticon", "contains an emoticon", Emoticon),
            RulePredicate::new("exclamation", "contains an exclamation mark", ContainsChar('!')),
            RulePredicate::new("first_person", "is written in first person", Lexicon(FIRST_PERSON)),
            RulePredicate::new("food", "is about food", Lexicon(FOOD)),
            RulePredicate::new("future_tense", "uses future tense", Lexicon(FUTURE)),
            RulePredicate::new("hyperlink", "contains a hyperlink", Hyperlink),
            RulePredicate::new("length", "is longer in sentence length", Length),
            RulePredicate::new("money", "mentions money", Lexicon(MONEY)),
            RulePredicate::new("negation", "contains a negative statement", Negation),
            RulePredicate::new("number_word", "contains a number word", Lexicon(NUMBER_WORDS)),
            RulePredicate::new("past_tense", "uses past tense", PastTense),
            RulePredicate::new("question_mark", "contains a question mark", ContainsChar('?')),
            RulePredicate::new("quotation", "contains a quotation", ContainsChar('"')),
            RulePredicate::new("second_person", "addresses the reader directly", Lexicon(SECOND_PERSON)),
            RulePredicate::new("sports", "is about sports", Lexicon(SPORTS)),
            RulePredicate::new("weather", "is about the weather", Lexicon(WEATHER)),
            RulePredicate::new("word_yay", "contains the word 'yay'", Word("yay".into())),
            RulePredicate::new("word_zebra", "contains the word 'zebra'", Word("zebra".into())),
        ];
        predicates.sort_by(|a, b| a.id.cmp(&b.id));
        let keys = predicates.iter().map(|p| canonical_description(&p.description)).collect();
        Self { predicates, keys }
    }

    pub fn predicates(&self) -> &[RulePredicate] {
        &self.predicates
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.predicates.iter().map(|p| p.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&RulePredicate> {
        self.predicates.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    /// Maps a hypothesis string back to a predicate. Besides the registered
    /// descriptions, any `contains the word '<w>'` is accepted.
    pub fn parse(&self, description: &str) -> Option<RulePredicate> {
        let key = canonical_description(description);
        if let Some(i) = self.keys.iter().position(|k| *k == key) {
            return Some(self.predicates[i].clone());
        }
        let rest = key.strip_prefix("contains the word ")?;
        let word = ['\'', '"']
            .iter()
            .find_map(|q| rest.strip_prefix(*q).and_then(|r| r.strip_suffix(*q)))?;
        if word.is_empty() || word.contains(char::is_whitespace) {
            return None;
        }
        Some(RulePredicate::new(
            &format!("word:{word}"),
            &format!("contains the word '{word}'"),
            PredicateKind::Word(word.to_string()),
        ))
    }
}

/// `(#{a > b} - #{a < b}) / (|g1| |g0|)` over all cross pairs: the mean score
/// difference for binary predicates, and scale-free for graded ones.
pub fn separation(pred: &RulePredicate, group1: &[String], group0: &[String]) -> f64 {
    if group1.is_empty() || group0.is_empty() {
        return 0.0;
    }
    let s1: Vec<f64> = group1.iter().map(|t| pred.score(t)).collect();
    let s0: Vec<f64> = group0.iter().map(|t| pred.score(t)).collect();
    let mut net = 0i64;
    for a in &s1 {
        for b in &s0 {
            net += match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    net as f64 / (s1.len() * s0.len()) as f64
}

/// Deterministic stand-in for both language-model roles.
#[derive(Debug, Clone, Default)]
pub struct RuleBackend {
    registry: Registry,
}

pub const JUDGE_QUESTION_PREFIX: &str = "Is it true that sentence A ";

impl RuleBackend {
    pub fn new(registry: Registry) -> Self {
        Self { registry }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Descriptions of the `n` predicates that best separate group 1 from
    /// group 0 in the prompt, ties broken by predicate id.
    pub fn rule_propose(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let (group0, group1) = parse_prompt(&req.prompt)
            .ok_or_else(|| BackendError::UnparseablePrompt(excerpt(&req.prompt)))?;
        let mut ranked: Vec<(f64, &RulePredicate)> = self
            .registry
            .predicates
            .iter()
            .map(|p| (separation(p, &group1, &group0), p))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        Ok(ranked
            .into_iter()
            .take(req.n)
            .map(|(_, p)| p.description.clone())
            .collect())
    }

    /// "yes" iff score(A) > score(B); "no" otherwise; "unknown" when the
    /// question or context does not parse.
    pub fn rule_judge(&self, req: &JudgmentRequest) -> String {
        self.try_judge(req).unwrap_or("unknown").to_string()
    }

    fn try_judge(&self, req: &JudgmentRequest) -> Option<&'static str> {
        let s = req
            .question
            .strip_prefix(JUDGE_QUESTION_PREFIX)?
            .strip_suffix('?')?;
        let pred = self.registry.parse(s)?;
        let (a, b) = parse_context(&req.context)?;
        Some(if pred.score(a) > pred.score(b) { "yes" } else { "no" })
    }
}

/// Splits `A: <a>\nB: <b>`.
pub fn parse_context(context: &str) -> Option<(&str, &str)> {
    let rest = context.strip_prefix("A: ")?;
    let (a, b) = rest.split_once("\nB: ")?;
    Some((a, b))
}

fn excerpt(s: &str) -> String {
    s.chars().take(80).collect()
}

impl CompletionBackend for RuleBackend {
    fn id(&self) -> String {
        "rule".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        self.rule_propose(req)
    }
}

impl JudgmentBackend for RuleBackend {
    fn id(&self) -> String {
        "rule".into()
    }

    fn judge(&self, req: &JudgmentRequest) -> Result<String, BackendError> {
        Ok(self.rule_judge(req))
    }
}
