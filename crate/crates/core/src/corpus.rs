//! Text corpora, distribution pairs and clustered corpora.
//!
//! Texts are stored verbatim: the loader strips exactly one trailing `\n` per
//! line and nothing else, so hypotheses about punctuation or whitespace still
//! see the original bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("corpus `{0}` has no usable samples")]
    EmptyCorpus(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("need at least two clusters, found {0}")]
    FewerThanTwoClusters(usize),
    #[error("unknown cluster `{0}`")]
    UnknownCluster(String),
}

/// A single text input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// An ordered, non-empty collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    name: String,
    samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let name = name.into();
        if samples.is_empty() {
            return Err(CorpusError::EmptyCorpus(name));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.text.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: 0,
                    reason: format!("sample `{}` has empty text", s.id),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { name, samples })
    }

    /// Builds a corpus from raw texts, assigning ids `<name>:<index>`.
    pub fn from_texts<I, S>(name: impl Into<String>, texts: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let samples = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Sample::new(sample_id(&name, i), t))
            .collect();
        Self::new(name, samples)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.text.as_str())
    }

    /// Writes the corpus as jsonl, one `{"text": ...}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for s in &self.samples {
            let line = serde_json::to_string(&TextRecord {
                text: s.text.clone(),
                cluster: None,
            })
            .map_err(io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> io::Result<()> {
        let f = io::BufWriter::new(fs::File::create(path)?);
        self.write_jsonl(f)
    }
}

fn sample_id(name: &str, index: usize) -> String {
    format!("{name}:{index}")
}

/// The two-sided input: how does `d1` differ from `d0`?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionPair {
    pub d0: Corpus,
    pub d1: Corpus,
}

impl DistributionPair {
    pub fn new(d0: Corpus, d1: Corpus) -> Self {
        Self { d0, d1 }
    }

    /// The same pair with the roles of the two sides exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            d0: self.d1.clone(),
            d1: self.d0.clone(),
        }
    }

    pub fn side(&self, side: Side) -> &Corpus {
        match side {
            Side::D0 => &self.d0,
            Side::D1 => &self.d1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    D0,
    D1,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteredCorpus {
    clusters: BTreeMap<String, Corpus>,
}

impl ClusteredCorpus {
    pub fn new(clusters: BTreeMap<String, Corpus>) -> Result<Self, CorpusError> {
        if clusters.len() < 2 {
            return Err(CorpusError::FewerThanTwoClusters(clusters.len()));
        }
        Ok(Self { clusters })
    }

    pub fn clusters(&self) -> &BTreeMap<String, Corpus> {
        &self.clusters
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.clusters.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    PlainLines,
}

impl CorpusFormat {
    /// `.jsonl` / `.json` files are jsonl, anything else is one sample per line.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => Self::Jsonl,
            _ => Self::PlainLines,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cluster: Option<String>,
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            CorpusError::FileNotFound(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string()
}

/// Splits on `\n` only, so a `\r` before the newline stays part of the text.
fn physical_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = content.strip_suffix('\n').unwrap_or(content);
    let take = if content.is_empty() { 0 } else { usize::MAX };
    body.split('\n').take(take).enumerate()
}

fn parse_record(line_no: usize, line: &str) -> Result<TextRecord, CorpusError> {
    let rec: TextRecord =
        serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no + 1,
            reason: e.to_string(),
        })?;
    if rec.text.is_empty() {
        return Err(CorpusError::MalformedRecord {
            line: line_no + 1,
            reason: "empty \"text\"".into(),
        });
    }
    Ok(rec)
}

/// Loads a corpus. Sample ids are `<file stem>:<zero-based line index>`;
/// whitespace-only lines are skipped without shifting later ids.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let content = read_file(path)?;
    let name = corpus_name(path);
    let mut samples = Vec::new();
    for (i, line) in physical_lines(&content) {
        if line.trim().is_empty() {
            continue;
        }
        let text = match format {
            CorpusFormat::PlainLines => line.to_string(),
            CorpusFormat::Jsonl => parse_record(i, line)?.text,
        };
        samples.push(Sample::new(sample_id(&name, i), text));
    }
    Corpus::new(name, samples)
}

/// Loads a jsonl file whose records carry both `text` and `cluster`.
pub fn load_clustered(path: &Path) -> Result<ClusteredCorpus, CorpusError> {
    let content = read_file(path)?;
    let name = corpus_name(path);
    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (i, line) in physical_lines(&content) {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(i, line)?;
        let cluster = rec.cluster.ok_or_else(|| CorpusError::MalformedRecord {
            line: i + 1,
            reason: "missing \"cluster\"".into(),
        })?;
        groups
            .entry(cluster)
            .or_default()
            .push(Sample::new(sample_id(&name, i), rec.text));
    }
    let clusters = groups
        .into_iter()
        .map(|(id, samples)| Corpus::new(id.clone(), samples).map(|c| (id, c)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    ClusteredCorpus::new(clusters)
}

/// Treats `target` as D1 and every other cluster, concatenated in cluster-id
/// order, as D0.
pub fn one_vs_rest(clustered: &ClusteredCorpus, target: &str) -> Result<DistributionPair, CorpusError> {
    let d1 = clustered
        .clusters
        .get(target)
        .ok_or_else(|| CorpusError::UnknownCluster(target.to_string()))?
        .clone();
    let rest: Vec<Sample> = clustered
        .clusters
        .iter()
        .filter(|(id, _)| id.as_str() != target)
        .flat_map(|(_, c)| c.samples.iter().cloned())
        .collect();
    let d0 = Corpus::new(format!("rest-of-{target}"), rest)?;
    Ok(DistributionPair::new(d0, d1))
}

/// Loads a jsonl file with a string `label` field into one corpus per label,
/// ordered by first appearance.
pub fn load_labeled(path: &Path) -> Result<Vec<Corpus>, CorpusError> {
    #[derive(Deserialize)]
    struct LabeledRecord {
        text: String,
        label: String,
    }
    let content = read_file(path)?;
    let name = corpus_name(path);
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (i, line) in physical_lines(&content) {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if rec.text.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: i + 1,
                reason: "empty \"text\"".into(),
            });
        }
        if !groups.contains_key(&rec.label) {
            order.push(rec.label.clone());
        }
        groups
            .entry(rec.label)
            .or_default()
            .push(Sample::new(sample_id(&name, i), rec.text));
    }
    order
        .into_iter()
        .map(|label| {
            let samples = groups.remove(&label).unwrap_or_default();
            Corpus::new(label, samples)
        })
        .collect()
}
