//! Multi-criterion detection tree.
//!
//! Criteria are evaluated in a configured order. A failing gate criterion
//! rejects the sample immediately; other failures are recorded and, unless
//! `stop_at_first_failure` is set, evaluation continues so the trace shows
//! every defect. A sample is accepted only if every criterion passed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, ModelConfig};
use crate::model::{FusionConfig, HybridScore};
use crate::scoring::score_sample;

pub const DEFAULT_ORDER: [&str; 6] = ["EA3", "EA1", "EA2", "EA4", "EA5", "EA6"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub order: Vec<String>,
    pub gate_criteria: BTreeSet<String>,
    pub stop_at_first_failure: bool,
    pub fusion: FusionConfig,
    pub overrides: BTreeMap<String, FusionConfig>,
    pub models: ModelConfig,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            order: DEFAULT_ORDER.iter().map(|s| s.to_string()).collect(),
            gate_criteria: ["EA3".to_string()].into(),
            stop_at_first_failure: false,
            fusion: FusionConfig::default(),
            overrides: BTreeMap::new(),
            models: ModelConfig::default(),
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order.is_empty() {
            return Err(Error::InvalidArgument("tree order is empty".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.order.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::InvalidArgument(format!("criterion '{dup}' appears twice in tree order")));
        }
        if let Some(g) = self.gate_criteria.iter().find(|g| !seen.contains(g.as_str())) {
            return Err(Error::InvalidArgument(format!("gate criterion '{g}' is not in the tree order")));
        }
        self.fusion.validate()?;
        for f in self.overrides.values() {
            f.validate()?;
        }
        Ok(())
    }

    pub fn fusion_for(&self, criterion_id: &str) -> &FusionConfig {
        self.overrides.get(criterion_id).unwrap_or(&self.fusion)
    }

    /// Short digest identifying this configuration in audit trails.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("tree config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalVerdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub criterion_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<HybridScore>,
    pub verdict: Verdict,
    /// Why the node could not be scored; such nodes fail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationTrace {
    pub sample_id: String,
    pub steps: Vec<TraceStep>,
    #[serde(rename = "final")]
    pub final_verdict: FinalVerdict,
    pub short_circuited: bool,
    pub config_hash: String,
}

/// Outcome of scoring one node that did not produce a score.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeError {
    /// The sample lacks what this node needs; the node fails closed.
    Unscorable(String),
    /// The tree itself cannot be evaluated.
    Fatal(Error),
}

/// Produces the hybrid score of one sample at one tree node.
pub trait NodeScorer {
    fn score(
        &self,
        sample_id: &str,
        criterion_id: &str,
        models: &ModelConfig,
        fusion: &FusionConfig,
    ) -> Result<HybridScore, NodeError>;
}

/// Scores nodes from a knowledge base against stored baselines.
pub struct KbScorer<'a>(pub &'a KnowledgeBase);

impl NodeScorer for KbScorer<'_> {
    fn score(
        &self,
        sample_id: &str,
        criterion_id: &str,
        models: &ModelConfig,
        fusion: &FusionConfig,
    ) -> Result<HybridScore, NodeError> {
        let kb = self.0;
        if kb.criterion(criterion_id).is_none() {
            return Err(NodeError::Fatal(Error::NotFound(format!("criterion '{criterion_id}'"))));
        }
        match score_sample(kb, sample_id, criterion_id, models, fusion, None) {
            Ok((row, _)) => Ok(row),
            Err(e @ Error::MissingBaseline(_)) => Err(NodeError::Fatal(e)),
            Err(e) => match kb.resolve_references(criterion_id, models) {
                Err(re) => Err(NodeError::Fatal(re)),
                Ok(_) => Err(NodeError::Unscorable(e.to_string())),
            },
        }
    }
}

pub fn evaluate_tree_with(
    scorer: &dyn NodeScorer,
    sample_id: &str,
    config: &TreeConfig,
) -> Result<QualificationTrace> {
    config.validate()?;
    let mut steps = Vec::with_capacity(config.order.len());
    let mut short_circuited = false;
    for cid in &config.order {
        let step = match scorer.score(sample_id, cid, &config.models, config.fusion_for(cid)) {
            Ok(score) => TraceStep {
                criterion_id: cid.clone(),
                verdict: if score.label.is_positive() { Verdict::Pass } else { Verdict::Fail },
                score: Some(score),
                error: None,
            },
            Err(NodeError::Unscorable(msg)) => TraceStep {
                criterion_id: cid.clone(),
                score: None,
                verdict: Verdict::Fail,
                error: Some(msg),
            },
            Err(NodeError::Fatal(e)) => return Err(e),
        };
        let failed = step.verdict == Verdict::Fail;
        steps.push(step);
        if failed && (config.gate_criteria.contains(cid) || config.stop_at_first_failure) {
            short_circuited = steps.len() < config.order.len();
            break;
        }
    }
    let all_passed = steps.len() == config.order.len() && steps.iter().all(|s| s.verdict == Verdict::Pass);
    Ok(QualificationTrace {
        sample_id: sample_id.to_string(),
        steps,
        final_verdict: if all_passed { FinalVerdict::Accept } else { FinalVerdict::Reject },
        short_circuited,
        config_hash: config.hash(),
    })
}

pub fn evaluate_tree(kb: &KnowledgeBase, sample_id: &str, config: &TreeConfig) -> Result<QualificationTrace> {
    if kb.sample(sample_id).is_none() {
        return Err(Error::NotFound(format!("sample '{sample_id}'")));
    }
    evaluate_tree_with(&KbScorer(kb), sample_id, config)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub gate_failures: usize,
    pub short_circuited: usize,
    pub failures_by_criterion: BTreeMap<String, usize>,
    /// `(sample, error)` for samples whose tree could not be evaluated.
    pub errors: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub traces: Vec<QualificationTrace>,
    pub summary: TreeSummary,
}

/// Runs the tree over many samples. Per-sample errors are collected, not fatal.
pub fn batch_tree_report(
    scorer: &dyn NodeScorer,
    samples: &[String],
    config: &TreeConfig,
) -> Result<TreeReport> {
    config.validate()?;
    let mut report = TreeReport::default();
    for id in samples {
        match evaluate_tree_with(scorer, id, config) {
            Ok(trace) => {
                let s = &mut report.summary;
                match trace.final_verdict {
                    FinalVerdict::Accept => s.accepted += 1,
                    FinalVerdict::Reject => s.rejected += 1,
                }
                if trace.short_circuited {
                    s.short_circuited += 1;
                }
                for step in trace.steps.iter().filter(|st| st.verdict == Verdict::Fail) {
                    *s.failures_by_criterion.entry(step.criterion_id.clone()).or_default() += 1;
                    if config.gate_criteria.contains(&step.criterion_id) {
                        s.gate_failures += 1;
                    }
                }
                report.traces.push(trace);
            }
            Err(e) => report.summary.errors.push((id.clone(), e.to_string())),
        }
    }
    report.summary.errors.sort();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Prediction, Strategy};

    /// Scores from a fixed table: `true` passes, `false` fails, missing is unscorable.
    struct Table(BTreeMap<(String, String), bool>);

    impl NodeScorer for Table {
        fn score(&self, s: &str, c: &str, _: &ModelConfig, f: &FusionConfig) -> Result<HybridScore, NodeError> {
            match self.0.get(&(s.to_string(), c.to_string())) {
                Some(&pass) => Ok(HybridScore {
                    sample_id: s.into(),
                    criterion_id: c.into(),
                    delta_text: 0.0,
                    delta_image: 0.0,
                    z_text: if pass { 1.0 } else { -1.0 },
                    z_image: 0.0,
                    combined: if pass { 1.0 } else { -1.0 },
                    strategy: Strategy::ZscoreSum,
                    threshold: f.threshold,
                    label: Prediction::from_bool(pass),
                    batch_id: "t".into(),
                }),
                None => Err(NodeError::Unscorable("missing".into())),
            }
        }
    }

    fn table(sample: &str, pattern: &[(&str, bool)]) -> Table {
        Table(pattern.iter().map(|(c, p)| ((sample.to_string(), c.to_string()), *p)).collect())
    }

    fn all(pass: bool) -> Vec<(&'static str, bool)> {
        DEFAULT_ORDER.iter().map(|c| (*c, pass)).collect()
    }

    #[test]
    fn gate_failure_short_circuits() {
        let mut p = all(true);
        p[0].1 = false;
        let t = evaluate_tree_with(&table("s", &p), "s", &TreeConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert!(t.short_circuited);
        assert_eq!(t.final_verdict, FinalVerdict::Reject);
    }

    #[test]
    fn all_pass_accepts() {
        let t = evaluate_tree_with(&table("s", &all(true)), "s", &TreeConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 6);
        assert_eq!(t.final_verdict, FinalVerdict::Accept);
        assert!(!t.short_circuited);
    }

    #[test]
    fn non_gate_failure_continues() {
        let mut p = all(true);
        p[1].1 = false; // EA1
        let t = evaluate_tree_with(&table("s", &p), "s", &TreeConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 6);
        assert_eq!(t.final_verdict, FinalVerdict::Reject);
        assert!(!t.short_circuited);

        let cfg = TreeConfig { stop_at_first_failure: true, ..Default::default() };
        let t = evaluate_tree_with(&table("s", &p), "s", &cfg).unwrap();
        assert_eq!(t.steps.len(), 2);
        assert!(t.short_circuited);
    }

    #[test]
    fn unscorable_node_fails_closed() {
        let mut p = all(true);
        p.remove(3); // EA4 missing
        let t = evaluate_tree_with(&table("s", &p), "s", &TreeConfig::default()).unwrap();
        assert_eq!(t.final_verdict, FinalVerdict::Reject);
        let step = t.steps.iter().find(|s| s.criterion_id == "EA4").unwrap();
        assert_eq!(step.verdict, Verdict::Fail);
        assert!(step.error.is_some());
    }

    #[test]
    fn config_validation() {
        let dup = TreeConfig { order: vec!["EA1".into(), "EA1".into()], gate_criteria: BTreeSet::new(), ..Default::default() };
        assert!(dup.validate().is_err());
        let stray_gate = TreeConfig { order: vec!["EA1".into()], ..Default::default() };
        assert!(stray_gate.validate().is_err());
        let empty = TreeConfig { order: vec![], gate_criteria: BTreeSet::new(), ..Default::default() };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn hash_tracks_overrides() {
        let a = TreeConfig::default();
        let mut b = TreeConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.overrides.insert("EA1".into(), FusionConfig { threshold: 0.5, ..Default::default() });
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn batch_summary() {
        let mut map = table("good", &all(true)).0;
        let mut bad = all(true);
        bad[0].1 = false;
        map.extend(table("gated", &bad).0);
        let scorer = Table(map);
        let ids = vec!["good".to_string(), "gated".to_string()];
        let r = batch_tree_report(&scorer, &ids, &TreeConfig::default()).unwrap();
        assert_eq!(r.summary.accepted, 1);
        assert_eq!(r.summary.gate_failures, 1);
        assert_eq!(r.summary.failures_by_criterion.get("EA3"), Some(&1));

        let rev: Vec<String> = ids.iter().rev().cloned().collect();
        assert_eq!(batch_tree_report(&scorer, &rev, &TreeConfig::default()).unwrap().summary, r.summary);
        assert_eq!(batch_tree_report(&scorer, &[], &TreeConfig::default()).unwrap(), TreeReport::default());
    }
}
