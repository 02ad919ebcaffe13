//! Deterministic synthetic corpus built around the published expert labels.
//!
//! Real embeddings come from the external adapter. For tests and demos this
//! module plants one random direction per criterion in each model's space and
//! places every sample on the accept or reject side of it according to its
//! expert label, with seeded noise on top.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fixtures;
use crate::kb::{EmbeddingMeta, EmbeddingSource, InterchangeRecord, KnowledgeBase};
use crate::model::{normalize_vector, AssessmentCriterion, ExpertLabel, Space};

pub const DIM: usize = 16;
pub const MODELS: [&str; 2] = ["clip", "flava"];
/// Reference images drawn per side of each criterion.
const REFS_PER_SIDE: usize = 2;

pub struct SyntheticCorpus {
    /// Interchange lines for every sample image (both models) and every
    /// plain prompt (both models).
    pub embeddings: String,
    pub labels_csv: String,
    /// Published criteria with reference images filled in.
    pub criteria: Vec<AssessmentCriterion>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..DIM).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

fn line(out: &mut String, id: &str, model: &str, space: Space, v: &[f64], source: EmbeddingSource, meta: EmbeddingMeta) {
    let rec = InterchangeRecord {
        id: id.to_string(),
        model: model.to_string(),
        space,
        dim: v.len(),
        vector: normalize_vector(v).expect("synthetic vectors are non-zero"),
        source,
        meta,
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
}

pub fn corpus(seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kb = KnowledgeBase::new();
    kb.load_labels_str(fixtures::TABLE_A1_LABELS)?;
    kb.load_criteria_str(fixtures::TABLE1_CRITERIA)?;
    let criteria: Vec<AssessmentCriterion> = kb.criteria().cloned().collect();

    let mut out = String::new();
    for model in MODELS {
        let axes: Vec<Vec<f64>> = criteria.iter().map(|_| gaussian_vec(&mut rng, 1.0)).collect();
        for (c, axis) in criteria.iter().zip(&axes) {
            for (polarity, sign) in [("pos", 1.0), ("neg", -1.0)] {
                let noise = gaussian_vec(&mut rng, 0.3);
                let v: Vec<f64> = axis.iter().zip(&noise).map(|(a, n)| sign * a + n).collect();
                let text = if sign > 0.0 { &c.positive_text } else { &c.negative_text };
                let meta = EmbeddingMeta { prompt_text: Some(text.clone()), ..Default::default() };
                let id = format!("{}.{polarity}.plain", c.criterion_id);
                line(&mut out, &id, model, Space::Text, &v, EmbeddingSource::Prompt, meta);
            }
        }
        for s in kb.samples() {
            let mut v = gaussian_vec(&mut rng, 0.8);
            for (c, axis) in criteria.iter().zip(&axes) {
                let sign = match s.label(&c.criterion_id) {
                    Some(ExpertLabel::Accept) => 0.5,
                    Some(ExpertLabel::Reject) => -0.5,
                    _ => 0.0,
                };
                v.iter_mut().zip(axis).for_each(|(x, a)| *x += sign * a);
            }
            let meta = EmbeddingMeta {
                image_ref: Some(format!("{}.png", s.sample_id)),
                sample_id: Some(s.sample_id.clone()),
                ..Default::default()
            };
            let id = format!("{}.{model}", s.sample_id);
            line(&mut out, &id, model, Space::Vision, &v, EmbeddingSource::Image, meta);
        }
    }

    let criteria = criteria
        .into_iter()
        .map(|mut c| {
            let side = |want: ExpertLabel| -> Vec<String> {
                kb.samples()
                    .filter(|s| s.label(&c.criterion_id) == Some(want))
                    .map(|s| s.sample_id.clone())
                    .take(REFS_PER_SIDE)
                    .collect()
            };
            c.positive_image_ids = side(ExpertLabel::Accept).into_iter().collect();
            c.negative_image_ids = side(ExpertLabel::Reject).into_iter().collect();
            c
        })
        .collect();
    Ok(SyntheticCorpus {
        embeddings: out,
        labels_csv: fixtures::TABLE_A1_LABELS.to_string(),
        criteria,
    })
}

/// Knowledge base loaded with the synthetic corpus.
pub fn knowledge_base(seed: u64) -> Result<KnowledgeBase> {
    let c = corpus(seed)?;
    let mut kb = KnowledgeBase::new();
    kb.load_labels_str(&c.labels_csv)?;
    kb.ingest_embeddings_str(&c.embeddings)?;
    for crit in c.criteria {
        kb.upsert_criterion(crit)?;
    }
    Ok(kb)
}
