//! Template sentence synthesis with per-predicate satisfying and violating
//! edits.
//!
//! Base sentences have the shape
//! `<Det> <adj> <noun> <verb phrase> the <object> near the <place> [adverb].`
//! and satisfy none of the built-in predicates. Each predicate edits one slot;
//! where cheap, the violating edit fills the slot with a neutral phrase of the
//! same word count so sentence length stays uncorrelated with the gold label.

use rand::seq::IndexedRandom;
use rand::Rng;

const ADJECTIVES: &[&str] = &[
    "quiet", "small", "tall", "young", "busy", "calm", "gentle", "clever", "modest", "patient",
    "careful", "cheerful",
];
const NOUNS: &[&str] = &[
    "neighbor", "teacher", "artist", "driver", "farmer", "student", "doctor", "writer", "pilot",
    "baker", "gardener", "tailor",
];
/// (third person, base, past)
const VERBS: &[(&str, &str, &str)] = &[
    ("fixes", "fix", "fixed"),
    ("carries", "carry", "carried"),
    ("paints", "paint", "painted"),
    ("cleans", "clean", "cleaned"),
    ("moves", "move", "moved"),
    ("checks", "check", "checked"),
    ("opens", "open", "opened"),
    ("pushes", "push", "pushed"),
    ("lifts", "lift", "lifted"),
    ("watches", "watch", "watched"),
    ("repairs", "repair", "repaired"),
    ("polishes", "polish", "polished"),
];
const OBJECTS: &[&str] = &[
    "lamp", "chair", "window", "box", "fence", "ladder", "basket", "kettle", "door", "table",
    "mirror", "bench",
];
const PLACES: &[&str] = &[
    "station", "library", "river", "market", "bridge", "garden", "office", "school", "harbor",
    "museum", "corner", "square",
];
const ADVERBS: &[&str] = &["slowly", "carefully", "quietly", "often", "daily", "again"];

const ANIMALS: &[&str] = &["dog", "cat", "horse", "bird", "rabbit", "fox", "owl", "cow"];
const COLORS: &[&str] = &["red", "blue", "green", "yellow", "purple", "orange", "brown", "gray"];
const DAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];
const FOODS: &[&str] = &["pizza", "bread", "soup", "cheese", "cake", "sandwich"];
const MONEY: &[&str] = &["cash", "money", "dollars", "coins"];
const NUMBERS: &[&str] = &["two", "three", "four", "five", "six", "seven"];
const WEATHER: &[(&str, &str)] = &[("the", "rain"), ("the", "storm"), ("the", "snow"), ("the", "fog")];
const LONG_TAIL: &[&str] = &[
    "while", "the", "evening", "light", "slowly", "fades", "over", "the", "quiet", "town",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Det {
    The,
    My,
    Your,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tense {
    Present,
    Past,
    Future,
}

#[derive(Debug, Clone)]
pub(crate) struct Draft {
    det: Det,
    adj: String,
    noun: &'static str,
    verb: (&'static str, &'static str, &'static str),
    tense: Tense,
    negated: bool,
    emphatic: bool,
    object: String,
    quoted: bool,
    caps_object: bool,
    place: &'static str,
    adverb: Option<&'static str>,
    tail: Vec<Vec<String>>,
    terminal: char,
    emoticon: bool,
    mixed_caps: bool,
}

fn pick<R: Rng + ?Sized>(rng: &mut R, pool: &[&'static str]) -> &'static str {
    pool.choose(rng).copied().expect("non-empty pool")
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

/// Upper-cases every letter of a word except its last one, so the word is
/// mostly capitals without being all capitals.
fn mostly_upper(word: &str) -> String {
    let last = word.char_indices().rfind(|(_, c)| c.is_alphabetic()).map(|(i, _)| i);
    word.char_indices()
        .map(|(i, c)| if Some(i) == last { c.to_lowercase().collect::<String>() } else { c.to_uppercase().collect() })
        .collect()
}

impl Draft {
    pub(crate) fn base<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            det: Det::The,
            adj: pick(rng, ADJECTIVES).to_string(),
            noun: pick(rng, NOUNS),
            verb: *VERBS.choose(rng).expect("verbs"),
            tense: Tense::Present,
            negated: false,
            emphatic: false,
            object: pick(rng, OBJECTS).to_string(),
            quoted: false,
            caps_object: false,
            place: pick(rng, PLACES),
            adverb: rng.random_bool(0.5).then(|| pick(rng, ADVERBS)),
            tail: Vec::new(),
            terminal: '.',
            emoticon: false,
            mixed_caps: false,
        }
    }

    fn verb_phrase(&self) -> Vec<&'static str> {
        let (third, base, past) = self.verb;
        match (self.tense, self.negated, self.emphatic) {
            (Tense::Future, true, _) => vec!["will", "not", base],
            (Tense::Future, false, true) => vec!["will", "surely", base],
            (Tense::Future, false, false) => vec!["will", base],
            (Tense::Past, true, _) => vec!["did", "not", base],
            (Tense::Past, false, true) => vec!["really", "did", base],
            (Tense::Past, false, false) => vec![past],
            (Tense::Present, true, _) => vec!["does", "not", base],
            (Tense::Present, false, true) => vec!["really", "does", base],
            (Tense::Present, false, false) => vec![third],
        }
    }

    pub(crate) fn render(&self) -> String {
        let det = match self.det {
            Det::The => "The",
            Det::My => "My",
            Det::Your => "Your",
        };
        let object = match (self.caps_object, self.quoted) {
            (true, q) => (self.object.to_uppercase(), q),
            (false, q) => (self.object.clone(), q),
        };
        let mut ws: Vec<(String, bool)> = vec![
            (det.to_string(), false),
            (self.adj.clone(), false),
            (self.noun.to_string(), false),
        ];
        ws.extend(self.verb_phrase().into_iter().map(|w| (w.to_string(), false)));
        ws.push(("the".into(), false));
        ws.push((
            if object.1 { format!("\"{}\"", object.0) } else { object.0 },
            self.caps_object,
        ));
        ws.extend(["near", "the", self.place].map(|w| (w.to_string(), false)));
        if let Some(a) = self.adverb {
            ws.push((a.to_string(), false));
        }
        for phrase in &self.tail {
            ws.extend(phrase.iter().map(|w| (w.clone(), false)));
        }
        let mut text = ws
            .into_iter()
            .map(|(w, keep)| if self.mixed_caps && !keep { mostly_upper(&w) } else { w })
            .collect::<Vec<_>>()
            .join(" ");
        text.push(self.terminal);
        if self.emoticon {
            text.push_str(" :)");
        }
        text
    }

    /// Applies the satisfying or violating edit for `id`. Returns false for
    /// predicates without an edit.
    pub(crate) fn apply<R: Rng + ?Sized>(&mut self, id: &str, satisfy: bool, rng: &mut R) -> bool {
        let neutral_object = |d: &mut Draft, rng: &mut R, bad: &[&str]| {
            if bad.contains(&d.object.as_str()) {
                d.object = pick(rng, OBJECTS).to_string();
            }
        };
        match (id, satisfy) {
            ("all_caps_word", s) => self.caps_object = s,
            ("animal", true) => self.object = pick(rng, ANIMALS).to_string(),
            ("animal", false) => neutral_object(self, rng, &[ANIMALS, &["zebra"]].concat()),
            ("capital_ratio", s) => self.mixed_caps = s,
            ("color", true) => self.adj = pick(rng, COLORS).to_string(),
            ("color", false) => {
                if COLORS.contains(&self.adj.as_str()) {
                    self.adj = pick(rng, ADJECTIVES).to_string();
                }
            }
            ("day_of_week", true) => self.tail.push(words(&["on", pick(rng, DAYS)])),
            ("day_of_week", false) => self.tail.push(words(&["on", "time"])),
            ("digit", true) => self.tail.push(vec!["at".into(), rng.random_range(2..10u8).to_string()]),
            ("digit", false) => self.tail.push(words(&["at", "noon"])),
            ("emoticon", s) => self.emoticon = s,
            ("exclamation", true) => self.terminal = '!',
            ("exclamation", false) => {
                if self.terminal == '!' {
                    self.terminal = '.';
                }
            }
            ("first_person", true) => self.det = Det::My,
            ("first_person", false) => {
                if self.det == Det::My {
                    self.det = Det::The;
                }
            }
            ("food", true) => self.object = pick(rng, FOODS).to_string(),
            ("food", false) => neutral_object(self, rng, FOODS),
            ("future_tense", true) => self.tense = Tense::Future,
            ("future_tense", false) => {
                if self.tense == Tense::Future {
                    self.tense = Tense::Present;
                }
            }
            ("hyperlink", true) => self.tail.push(words(&["via", "www.example.org"])),
            ("hyperlink", false) => self.tail.push(words(&["via", "email"])),
            ("length", true) => self.tail.push(words(LONG_TAIL)),
            ("length", false) => {}
            ("money", true) => self.tail.push(words(&["for", pick(rng, MONEY)])),
            ("money", false) => self.tail.push(words(&["for", "fun"])),
            ("negation", true) => {
                self.negated = true;
                self.emphatic = false;
            }
            ("negation", false) => {
                self.negated = false;
                self.emphatic = true;
            }
            ("number_word", true) => self.tail.push(words(&["with", pick(rng, NUMBERS), "friends"])),
            ("number_word", false) => self.tail.push(words(&["with", "some", "friends"])),
            ("past_tense", true) => self.tense = Tense::Past,
            ("past_tense", false) => {
                if self.tense == Tense::Past {
                    self.tense = Tense::Present;
                }
            }
            ("question_mark", true) => self.terminal = '?',
            ("question_mark", false) => {
                if self.terminal == '?' {
                    self.terminal = '.';
                }
            }
            ("quotation", s) => self.quoted = s,
            ("second_person", true) => self.det = Det::Your,
            ("second_person", false) => {
                if self.det == Det::Your {
                    self.det = Det::The;
                }
            }
            ("sports", true) => self.place = "stadium",
            ("sports", false) => {
                if self.place == "stadium" {
                    self.place = pick(rng, PLACES);
                }
            }
            ("weather", true) => {
                let (d, w) = *WEATHER.choose(rng).expect("weather");
                self.tail.push(words(&["in", d, w]));
            }
            ("weather", false) => self.tail.push(words(&["in", "the", "hall"])),
            ("word_yay", true) => self.tail.push(words(&["yay"])),
            ("word_yay", false) => self.tail.push(words(&["too"])),
            ("word_zebra", true) => self.object = "zebra".into(),
            ("word_zebra", false) => neutral_object(self, rng, &["zebra"]),
            _ => return false,
        }
        true
    }
}
