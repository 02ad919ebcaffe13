//! Text-to-image retrieval and top-k precision.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Polarity};
use crate::model::{Embedding, ExpertLabel, PromptVariant, Space};
use crate::similarity::{cosine, fuse_references};

/// How corpus images are ranked against a query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Cosine to the positive prompt embedding.
    #[default]
    Positive,
    /// Cosine to the positive prompt minus cosine to the negative prompt.
    Delta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDescriptor {
    pub criteria: Vec<String>,
    pub variant: PromptVariant,
    pub cumulative: bool,
}

impl QueryDescriptor {
    pub fn label(&self) -> String {
        self.criteria.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: QueryDescriptor,
    pub model_id: String,
    /// The whole corpus, best match first; ties by sample id.
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RetrievalResult {
    pub fn top_k(&self) -> &[(String, f64)] {
        &self.ranked[..self.k.min(self.ranked.len())]
    }
}

/// Prompt vectors of one criterion, falling back to plain wording when the
/// requested variant has no embeddings.
fn criterion_prompt(
    kb: &KnowledgeBase,
    criterion_id: &str,
    polarity: Polarity,
    variant: PromptVariant,
    model: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>> {
    let mut set = kb.prompt_embeddings(criterion_id, polarity, variant, model);
    if set.is_empty() && variant == PromptVariant::Color {
        let msg = format!("{criterion_id}: no color-aware {model} prompt embeddings, using plain");
        warn!("{msg}");
        warnings.push(msg);
        set = kb.prompt_embeddings(criterion_id, polarity, PromptVariant::Plain, model);
    }
    if set.is_empty() {
        return Err(Error::NotFound(format!(
            "{model} {variant} prompt embedding for {criterion_id} ({polarity:?})"
        )));
    }
    let vs: Vec<&[f64]> = set.iter().map(|e| e.vector.as_slice()).collect();
    fuse_references(&vs)
}

/// Unweighted mean of the per-criterion positive prompt embeddings, in the
/// order given. Not re-normalized.
pub fn cumulative_text_embedding(
    kb: &KnowledgeBase,
    criteria: &[String],
    variant: PromptVariant,
    model: &str,
) -> Result<Vec<f64>> {
    cumulative_query(kb, criteria, Polarity::Pos, variant, model, &mut Vec::new())
}

fn cumulative_query(
    kb: &KnowledgeBase,
    criteria: &[String],
    polarity: Polarity,
    variant: PromptVariant,
    model: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>> {
    if criteria.is_empty() {
        return Err(Error::Empty("criteria list".into()));
    }
    let per: Vec<Vec<f64>> = criteria
        .iter()
        .map(|c| criterion_prompt(kb, c, polarity, variant, model, warnings))
        .collect::<Result<_>>()?;
    fuse_references(&per)
}

/// Ranks `corpus` by cosine to `query`, best first.
pub fn rank_by_text(query: &[f64], corpus: &[(String, &[f64])]) -> Result<Vec<(String, f64)>> {
    rank_with(corpus, |v| cosine(query, v))
}

fn rank_with(
    corpus: &[(String, &[f64])],
    score: impl Fn(&[f64]) -> Result<f64>,
) -> Result<Vec<(String, f64)>> {
    if corpus.is_empty() {
        return Err(Error::Empty("retrieval corpus".into()));
    }
    let mut ranked = corpus
        .iter()
        .map(|(id, v)| Ok((id.clone(), score(v)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Vision embeddings of every sample for `model`.
pub fn vision_corpus<'a>(kb: &'a KnowledgeBase, model: &str) -> Vec<(String, &'a Embedding)> {
    kb.samples()
        .filter_map(|s| {
            kb.sample_embedding(&s.sample_id, model, Space::Vision)
                .ok()
                .map(|e| (s.sample_id.clone(), e))
        })
        .collect()
}

/// Runs a text query against the vision corpus of `model`.
pub fn retrieve(
    kb: &KnowledgeBase,
    query: &QueryDescriptor,
    model: &str,
    k: usize,
    mode: RankMode,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut warnings = Vec::new();
    let criteria: &[String] = if query.cumulative {
        &query.criteria
    } else {
        match query.criteria.as_slice() {
            [one] => std::slice::from_ref(one),
            _ => {
                return Err(Error::InvalidArgument(
                    "an individual query takes exactly one criterion".into(),
                ))
            }
        }
    };
    let pos = cumulative_query(kb, criteria, Polarity::Pos, query.variant, model, &mut warnings)?;
    let corpus = vision_corpus(kb, model);
    let corpus: Vec<(String, &[f64])> = corpus.iter().map(|(id, e)| (id.clone(), e.vector.as_slice())).collect();
    let ranked = match mode {
        RankMode::Positive => rank_by_text(&pos, &corpus)?,
        RankMode::Delta => {
            let neg = cumulative_query(kb, criteria, Polarity::Neg, query.variant, model, &mut warnings)?;
            rank_with(&corpus, |v| Ok(cosine(v, &pos)? - cosine(v, &neg)?))?
        }
    };
    Ok(RetrievalResult {
        query: query.clone(),
        model_id: model.to_string(),
        ranked,
        k,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub hits: usize,
    pub k: usize,
    /// `100 · hits / k`, rounded to 2 decimals.
    pub percent: f64,
}

/// Share of accept-labeled samples among the first `k` labeled results.
/// `na` and unlabeled samples are skipped and later ranks fill their place.
pub fn precision_at_k(
    ranked: &[(String, f64)],
    labels: &BTreeMap<String, ExpertLabel>,
    k: usize,
) -> Result<PrecisionAtK> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let considered: Vec<bool> = ranked
        .iter()
        .filter_map(|(id, _)| match labels.get(id) {
            Some(ExpertLabel::Accept) => Some(true),
            Some(ExpertLabel::Reject) => Some(false),
            _ => None,
        })
        .take(k)
        .collect();
    if considered.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} labeled results available for k = {k}",
            considered.len()
        )));
    }
    let hits = considered.iter().filter(|&&a| a).count();
    Ok(PrecisionAtK {
        hits,
        k,
        percent: (10_000.0 * hits as f64 / k as f64).round() / 100.0,
    })
}

/// Relevance for a criterion set: accept when every criterion is accepted,
/// `na` when any label is missing or `na`, reject otherwise.
pub fn relevance_labels(kb: &KnowledgeBase, criteria: &[String]) -> BTreeMap<String, ExpertLabel> {
    kb.samples()
        .map(|s| {
            let mut out = ExpertLabel::Accept;
            for c in criteria {
                match s.label(c) {
                    None | Some(ExpertLabel::Na) => {
                        out = ExpertLabel::Na;
                        break;
                    }
                    Some(ExpertLabel::Reject) => out = ExpertLabel::Reject,
                    Some(ExpertLabel::Accept) => {}
                }
            }
            (s.sample_id.clone(), out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub criterion_set: String,
    pub cumulative: bool,
    pub variant: PromptVariant,
    pub model: String,
    pub k: usize,
    pub hits: usize,
    pub precision_pct: f64,
}

/// Precision table over every query × variant × model × k combination.
///
/// A query with one criterion is an individual row; longer lists are
/// cumulative rows over the mean of all listed criteria.
pub fn retrieval_report(
    kb: &KnowledgeBase,
    queries: &[Vec<String>],
    variants: &[PromptVariant],
    models: &[String],
    ks: &[usize],
    mode: RankMode,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for criteria in queries {
        let labels = relevance_labels(kb, criteria);
        for &variant in variants {
            for model in models {
                let query = QueryDescriptor {
                    criteria: criteria.clone(),
                    variant,
                    cumulative: criteria.len() > 1,
                };
                let max_k = ks.iter().copied().max().unwrap_or(1);
                let result = retrieve(kb, &query, model, max_k, mode)?;
                for &k in ks {
                    let p = precision_at_k(&result.ranked, &labels, k)?;
                    rows.push(ReportRow {
                        criterion_set: query.label(),
                        cumulative: query.cumulative,
                        variant,
                        model: model.clone(),
                        k,
                        hits: p.hits,
                        precision_pct: p.percent,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_report(rows: &[ReportRow]) -> String {
    let mut out = String::from("criterion_set,variant,model,k,precision_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.2}\n",
            r.criterion_set,
            r.variant,
            r.model,
            r.k,
            r.precision_pct
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(seq: &[(&str, ExpertLabel)]) -> BTreeMap<String, ExpertLabel> {
        seq.iter().map(|(id, l)| (id.to_string(), *l)).collect()
    }

    fn ranked(ids: &[&str]) -> Vec<(String, f64)> {
        ids.iter().enumerate().map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01)).collect()
    }

    #[test]
    fn rank_examples() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let corpus = vec![("s1".to_string(), &a[..]), ("s2".to_string(), &b[..])];
        let r = rank_by_text(&[1.0, 0.0], &corpus).unwrap();
        assert_eq!(r[0], ("s1".to_string(), 1.0));
        assert_eq!(r.len(), 2);
        assert!(rank_by_text(&[1.0, 0.0], &[]).is_err());
        assert!(rank_by_text(&[1.0, 0.0, 0.0], &corpus).is_err());
    }

    #[test]
    fn rank_three_by_hand() {
        // cosines to [1,0]: a=0.6, b=0.8, c=0 (ordered b, a, c)
        let (a, b, c) = ([0.6, 0.8], [0.8, 0.6], [0.0, 2.0]);
        let corpus = vec![
            ("a".to_string(), &a[..]),
            ("b".to_string(), &b[..]),
            ("c".to_string(), &c[..]),
        ];
        let r = rank_by_text(&[2.0, 0.0], &corpus).unwrap();
        let ids: Vec<_> = r.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert!((r[1].1 - 0.6).abs() < 1e-15);
    }

    #[test]
    fn precision_examples() {
        use ExpertLabel::*;
        let l = labels(&[("1", Accept), ("2", Accept), ("3", Reject), ("4", Accept), ("5", Reject)]);
        let p = precision_at_k(&ranked(&["1", "2", "3", "4", "5"]), &l, 5).unwrap();
        assert_eq!((p.hits, p.percent), (3, 60.0));

        let ids: Vec<String> = (0..15).map(|i| i.to_string()).collect();
        let l: BTreeMap<_, _> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), if i % 4 == 0 { Accept } else { Reject }))
            .collect();
        let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let p = precision_at_k(&ranked(&refs), &l, 15).unwrap();
        assert_eq!((p.hits, p.percent), (4, 26.67));

        let none = labels(&[("1", Reject)]);
        assert_eq!(precision_at_k(&ranked(&["1"]), &none, 1).unwrap().percent, 0.0);
        assert!(precision_at_k(&ranked(&["1"]), &none, 0).is_err());
    }

    #[test]
    fn na_is_backfilled() {
        use ExpertLabel::*;
        let l = labels(&[("1", Na), ("2", Accept), ("3", Reject)]);
        let p = precision_at_k(&ranked(&["1", "2", "3"]), &l, 2).unwrap();
        assert_eq!((p.hits, p.k), (1, 2));
        assert!(precision_at_k(&ranked(&["1", "2", "3"]), &l, 3).is_err());
    }

    #[test]
    fn report_csv() {
        let rows = vec![ReportRow {
            criterion_set: "EA1".into(),
            cumulative: false,
            variant: PromptVariant::Plain,
            model: "clip".into(),
            k: 15,
            hits: 4,
            precision_pct: 26.67,
        }];
        assert_eq!(
            write_report(&rows),
            "criterion_set,variant,model,k,precision_pct\nEA1,plain,clip,15,26.67\n"
        );
    }
}
