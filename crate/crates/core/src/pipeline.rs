//! End-to-end runs: train, propose, verify on a shared pair set, rank, report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends};
use crate::config::RunConfig;
use crate::corpus::{one_vs_rest, ClusteredCorpus, Corpus, CorpusError, DistributionPair};
use crate::discriminator::{train, DiscriminatorError};
use crate::proposer::{propose, CandidateSet, Hypothesis, ProposerError};
use crate::verifier::{CAEstimate, JudgmentCache, PairSet, Verifier};

pub const REPORT_SCHEMA: &str = "distdescribe-report-v1";
pub const NO_SIGNIFICANT_DIFFERENCE: &str = "no significant difference";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Discriminator(#[from] DiscriminatorError),
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error("verifier backend: {0}")]
    Backend(#[from] BackendError),
    #[error("aborted: {abstained} of {total} judgments abstained (limit {limit})")]
    Aborted { abstained: usize, total: usize, limit: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    /// Failures caused by a backend rather than by the input.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Self::Backend(_) | Self::Proposer(ProposerError::Backend { .. } | ProposerError::AllCompletionsEmpty { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideInfo {
    pub name: String,
    pub size: usize,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendIds {
    pub proposer: String,
    pub verifier: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JudgmentTally {
    pub total: usize,
    pub abstained: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSetInfo {
    pub n_pairs: usize,
    pub exhaustive: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHypothesis {
    pub rank: usize,
    pub hypothesis: Hypothesis,
    pub ca: CAEstimate,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub d0: SideInfo,
    pub d1: SideInfo,
    pub config: RunConfig,
    pub backends: BackendIds,
    pub discriminator_held_out_accuracy: Option<f64>,
    /// Largest (group 0, group 1) sample counts in any proposer prompt.
    pub prompt_group_sizes: (usize, usize),
    pub raw_count: usize,
    pub candidate_count: usize,
    pub rejected_count: usize,
    pub pair_set: PairSetInfo,
    pub judgments: JudgmentTally,
    pub ranked: Vec<RankedHypothesis>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: {} (n={}) vs {}: {} (n={})",
            self.d1.role, self.d1.name, self.d1.size, self.d0.role, self.d0.name, self.d0.size
        );
        let _ = writeln!(
            out,
            "{} candidates from {} completions; {} pairs{}",
            self.candidate_count,
            self.raw_count,
            self.pair_set.n_pairs,
            if self.pair_set.exhaustive { " (exhaustive)" } else { "" }
        );
        out.push_str(&ranked_table(&self.ranked));
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn ranked_table(ranked: &[RankedHypothesis]) -> String {
    let mut out = String::from("rank  CA     stderr  sig  hypothesis\n");
    for r in ranked {
        let _ = writeln!(
            out,
            "{:<4}  {:.3}  {:.3}   {:<3}  {}",
            r.rank,
            r.ca.mean,
            r.ca.stderr,
            if r.significant { "*" } else { "" },
            r.hypothesis.s
        );
    }
    out
}

/// One class pair of a shortcut scan. `report` describes how `d1_label`
/// differs from `d0_label`; `reverse` ranks the same estimates as `1 - CA`
/// for the opposite direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutPair {
    pub d0_label: String,
    pub d1_label: String,
    pub report: Report,
    pub reverse: Vec<RankedHypothesis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    pub schema: String,
    pub labels: Vec<String>,
    pub pairs: Vec<ShortcutPair>,
}

impl ShortcutReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            let _ = writeln!(out, "== {} vs {} ==", p.d1_label, p.d0_label);
            out.push_str(&p.report.to_table());
            let _ = writeln!(out, "-- {} vs {} --", p.d0_label, p.d1_label);
            out.push_str(&ranked_table(&p.reverse));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub schema: String,
    pub clusters: BTreeMap<String, Report>,
}

impl ClusterReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (id, r) in &self.clusters {
            let _ = writeln!(out, "== cluster {id} ==");
            out.push_str(&r.to_table());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: String,
    pub hypothesis: String,
    pub d0: SideInfo,
    pub d1: SideInfo,
    pub config: RunConfig,
    pub verifier: String,
    pub ca: CAEstimate,
    pub significant: bool,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "hypothesis: {}\nCA {:.3} (stderr {:.3}, {} pairs{}){}\n",
            self.hypothesis,
            self.ca.mean,
            self.ca.stderr,
            self.ca.n_pairs,
            if self.ca.exhaustive { ", exhaustive" } else { "" },
            if self.significant { " significant" } else { "" }
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Orders by mean descending, then by hypothesis text, and keeps `top_k`.
pub fn rank(scored: Vec<(Hypothesis, CAEstimate)>, top_k: usize) -> Vec<RankedHypothesis> {
    let mut scored = scored;
    scored.sort_by(|a, b| b.1.mean.total_cmp(&a.1.mean).then_with(|| a.0.s.cmp(&b.0.s)));
    scored
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, (hypothesis, ca))| RankedHypothesis {
            rank: i + 1,
            significant: ca.significant(),
            hypothesis,
            ca,
        })
        .collect()
}

struct Scored {
    estimates: Vec<(Hypothesis, CAEstimate)>,
    pairs: PairSet,
    tally: JudgmentTally,
}

/// A configured pipeline. Reusing one engine across runs shares its judgment
/// cache.
pub struct Engine {
    config: RunConfig,
    backends: Backends,
    verifier: Verifier,
}

impl Engine {
    pub fn new(config: RunConfig, backends: Backends) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        let cache = match &config.cache {
            Some(path) => Arc::new(JudgmentCache::open(Path::new(path))?),
            None => Arc::new(JudgmentCache::in_memory()),
        };
        let verifier = Verifier::with_cache(backends.verifier.clone(), cache).in_flight(config.in_flight);
        Ok(Self {
            config,
            backends,
            verifier,
        })
    }

    /// Builds the backends named in the config.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        let backends = Backends::from_specs(
            &config.proposer_backend,
            &config.proposer_endpoint,
            &config.verifier_backend,
            &config.verifier_endpoint,
        )?;
        Self::new(config, backends)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    fn candidates(&self, pair: &DistributionPair) -> Result<(CandidateSet, Option<f64>), PipelineError> {
        let disc = train(pair, &self.config.train())?;
        let cands = propose(pair, &disc, &*self.backends.proposer, &self.config.proposer())?;
        Ok((cands, disc.held_out_accuracy()))
    }

    fn score(&self, pair: &DistributionPair, hypotheses: Vec<Hypothesis>) -> Result<Scored, PipelineError> {
        let pairs = PairSet::for_pair(pair, self.config.n_pairs, self.config.pair_seed(), self.config.exhaustive);
        let texts: Vec<&str> = hypotheses.iter().map(|h| h.s.as_str()).collect();
        let estimates = self.verifier.estimate_many(&texts, pair, &pairs)?;
        let mut tally = JudgmentTally::default();
        for e in &estimates {
            tally.total += e.judgments();
            tally.abstained += e.abstentions;
            tally.failed += e.failures;
        }
        if tally.total > 0 && tally.abstained as f64 > self.config.max_abstention * tally.total as f64 {
            return Err(PipelineError::Aborted {
                abstained: tally.abstained,
                total: tally.total,
                limit: self.config.max_abstention,
            });
        }
        Ok(Scored {
            estimates: hypotheses.into_iter().zip(estimates).collect(),
            pairs,
            tally,
        })
    }

    fn report(
        &self,
        pair: &DistributionPair,
        roles: (&str, &str),
        cands: &CandidateSet,
        held_out: Option<f64>,
        scored: &Scored,
    ) -> Report {
        let ranked = rank(scored.estimates.clone(), self.config.top_k);
        let mut warnings = Vec::new();
        if !ranked.iter().any(|r| r.significant) {
            warnings.push(NO_SIGNIFICANT_DIFFERENCE.to_string());
        }
        warnings.extend(tally_warnings(&scored.tally));
        Report {
            schema: REPORT_SCHEMA.into(),
            d0: SideInfo {
                name: pair.d0.name().into(),
                size: pair.d0.len(),
                role: roles.0.into(),
            },
            d1: SideInfo {
                name: pair.d1.name().into(),
                size: pair.d1.len(),
                role: roles.1.into(),
            },
            config: self.config.effective(),
            backends: BackendIds {
                proposer: self.backends.proposer.id(),
                verifier: self.verifier.backend_id().into(),
            },
            discriminator_held_out_accuracy: held_out,
            prompt_group_sizes: cands.prompt_group_sizes,
            raw_count: cands.raw_count,
            candidate_count: cands.len(),
            rejected_count: cands.rejected,
            pair_set: PairSetInfo {
                n_pairs: scored.pairs.len(),
                exhaustive: scored.pairs.exhaustive,
                seed: scored.pairs.seed,
            },
            judgments: scored.tally,
            ranked,
            warnings,
        }
    }

    pub fn describe_pair(&self, pair: &DistributionPair) -> Result<Report, PipelineError> {
        self.describe_with_roles(pair, ("d0", "d1"))
    }

    pub fn describe_with_roles(&self, pair: &DistributionPair, roles: (&str, &str)) -> Result<Report, PipelineError> {
        let (cands, held_out) = self.candidates(pair)?;
        let scored = self.score(pair, cands.hypotheses.clone())?;
        Ok(self.report(pair, roles, &cands, held_out, &scored))
    }

    /// One report per cluster, each cluster against the union of the rest.
    pub fn label_clusters(&self, clustered: &ClusteredCorpus) -> Result<ClusterReport, PipelineError> {
        let mut clusters = BTreeMap::new();
        for id in clustered.ids() {
            let pair = one_vs_rest(clustered, id)?;
            clusters.insert(id.to_string(), self.describe_with_roles(&pair, ("rest", "cluster"))?);
        }
        Ok(ClusterReport {
            schema: REPORT_SCHEMA.into(),
            clusters,
        })
    }

    /// How `test` differs from `train`.
    pub fn shift_report(&self, train: &Corpus, test: &Corpus) -> Result<Report, PipelineError> {
        let pair = DistributionPair::new(train.clone(), test.clone());
        self.describe_with_roles(&pair, ("train", "test"))
    }

    /// Every unordered label pair `(i < j)` with `d0 = labels[i]`,
    /// `d1 = labels[j]`. Candidates are proposed in both directions and
    /// verified once; the reverse ranking uses `1 - CA`.
    pub fn shortcut_scan(&self, classes: &[Corpus]) -> Result<ShortcutReport, PipelineError> {
        if classes.len() < 2 {
            return Err(CorpusError::FewerThanTwoClusters(classes.len()).into());
        }
        let mut pairs = Vec::new();
        for i in 0..classes.len() {
            for j in i + 1..classes.len() {
                let pair = DistributionPair::new(classes[i].clone(), classes[j].clone());
                let (fwd, held_out) = self.candidates(&pair)?;
                let (bwd, _) = self.candidates(&pair.swapped())?;
                let merged = merge_candidates(&fwd, &bwd);
                let scored = self.score(&pair, merged.hypotheses.clone())?;
                let report = self.report(&pair, ("d0", "d1"), &merged, held_out, &scored);
                let reverse = rank(
                    scored
                        .estimates
                        .iter()
                        .map(|(h, ca)| (h.clone(), ca.reversed()))
                        .collect(),
                    self.config.top_k,
                );
                pairs.push(ShortcutPair {
                    d0_label: classes[i].name().into(),
                    d1_label: classes[j].name().into(),
                    report,
                    reverse,
                });
            }
        }
        Ok(ShortcutReport {
            schema: REPORT_SCHEMA.into(),
            labels: classes.iter().map(|c| c.name().to_string()).collect(),
            pairs,
        })
    }

    /// CA of a single user-supplied hypothesis.
    pub fn verify(&self, hypothesis: &str, pair: &DistributionPair) -> Result<VerifyReport, PipelineError> {
        let pairs = PairSet::for_pair(pair, self.config.n_pairs, self.config.pair_seed(), self.config.exhaustive);
        let ca = self.verifier.benchmark_verifier(hypothesis, pair, &pairs)?;
        let tally = JudgmentTally {
            total: ca.judgments(),
            abstained: ca.abstentions,
            failed: ca.failures,
        };
        let significant = ca.significant();
        let mut warnings = Vec::new();
        if !significant {
            warnings.push(NO_SIGNIFICANT_DIFFERENCE.to_string());
        }
        warnings.extend(tally_warnings(&tally));
        Ok(VerifyReport {
            schema: REPORT_SCHEMA.into(),
            hypothesis: hypothesis.to_string(),
            d0: SideInfo {
                name: pair.d0.name().into(),
                size: pair.d0.len(),
                role: "d0".into(),
            },
            d1: SideInfo {
                name: pair.d1.name().into(),
                size: pair.d1.len(),
                role: "d1".into(),
            },
            config: self.config.effective(),
            verifier: self.verifier.backend_id().into(),
            ca,
            significant,
            warnings,
        })
    }
}

fn tally_warnings(t: &JudgmentTally) -> Vec<String> {
    let mut w = Vec::new();
    if t.abstained > 0 {
        w.push(format!("{} of {} judgments abstained", t.abstained, t.total));
    }
    if t.failed > 0 {
        w.push(format!(
            "{} judgments failed after retries and were scored as abstentions",
            t.failed
        ));
    }
    w
}

/// Forward candidates first, then unseen backward ones.
fn merge_candidates(fwd: &CandidateSet, bwd: &CandidateSet) -> CandidateSet {
    let mut out = fwd.clone();
    for h in &bwd.hypotheses {
        if !out.hypotheses.iter().any(|x| x.s == h.s) {
            out.hypotheses.push(h.clone());
        }
    }
    out.raw_count += bwd.raw_count;
    out.rejected += bwd.rejected;
    out.prompt_group_sizes.0 = out.prompt_group_sizes.0.max(bwd.prompt_group_sizes.0);
    out.prompt_group_sizes.1 = out.prompt_group_sizes.1.max(bwd.prompt_group_sizes.1);
    out
}
