//! Scoring samples from a knowledge-base snapshot.

use crate::error::{Error, Result};
use crate::fusion::{score_deltas, ScoreTable};
use crate::kb::{Baseline, BaselineKey, KnowledgeBase, ModelConfig};
use crate::model::{FusionConfig, HybridScore, SimilarityDelta, Space, ZscorePopulation};
use crate::similarity::{cosine, ReferenceEmbeddings};

/// Raw text and image deltas of one sample against resolved references.
pub fn sample_delta(
    kb: &KnowledgeBase,
    sample_id: &str,
    refs: &ReferenceEmbeddings,
) -> Result<SimilarityDelta> {
    let text_query = kb.sample_embedding(sample_id, &refs.text_model, Space::Vision)?;
    let image_query = kb.sample_embedding(sample_id, &refs.image_model, Space::Vision)?;
    Ok(SimilarityDelta {
        sample_id: sample_id.to_string(),
        criterion_id: refs.criterion_id.clone(),
        delta_text: refs.text_delta(&text_query.vector)?,
        delta_image: refs.image_delta(&image_query.vector)?,
    })
}

/// Samples that carry both embeddings a hybrid score needs.
pub fn scorable_samples(kb: &KnowledgeBase, models: &ModelConfig) -> Vec<String> {
    kb.samples()
        .filter(|s| {
            kb.sample_embedding(&s.sample_id, &models.text_model, Space::Vision).is_ok()
                && kb.sample_embedding(&s.sample_id, &models.image_model, Space::Vision).is_ok()
        })
        .map(|s| s.sample_id.clone())
        .collect()
}

fn baseline_for<'a>(kb: &'a KnowledgeBase, criterion_id: &str, models: &ModelConfig) -> Result<&'a Baseline> {
    let key = BaselineKey::new(criterion_id, models);
    kb.baseline(&key).ok_or_else(|| {
        Error::MissingBaseline(format!(
            "{criterion_id} ({} text / {} image)",
            models.text_model, models.image_model
        ))
    })
}

/// Scores a batch of samples for one criterion.
///
/// `sample_ids == None` scores every sample with the required embeddings.
/// The z-score population is the batch itself unless `config` asks for the
/// stored baseline.
pub fn score_batch(
    kb: &KnowledgeBase,
    sample_ids: Option<&[String]>,
    criterion_id: &str,
    models: &ModelConfig,
    config: &FusionConfig,
) -> Result<ScoreTable> {
    let refs = kb.resolve_references(criterion_id, models)?;
    let ids = match sample_ids {
        Some(ids) => ids.to_vec(),
        None => scorable_samples(kb, models),
    };
    if ids.is_empty() {
        return Err(Error::Empty(format!("no scorable samples for {criterion_id}")));
    }
    let deltas = ids
        .iter()
        .map(|id| sample_delta(kb, id, &refs))
        .collect::<Result<Vec<_>>>()?;
    let baseline = match config.zscore_population {
        ZscorePopulation::Batch => None,
        ZscorePopulation::StoredBaseline => Some(baseline_for(kb, criterion_id, models)?),
    };
    let mut table = score_deltas(
        criterion_id,
        &deltas,
        config,
        baseline.map(|b| (&b.stats, b.population_id.as_str())),
    )?;
    table.models = Some(models.clone());
    table.warnings.splice(0..0, refs.warnings.iter().cloned());
    Ok(table)
}

/// Scores a single sample against a stored population: the criterion's
/// baseline, or the statistics of the stored batch `batch_id`.
pub fn score_sample(
    kb: &KnowledgeBase,
    sample_id: &str,
    criterion_id: &str,
    models: &ModelConfig,
    config: &FusionConfig,
    batch_id: Option<&str>,
) -> Result<(HybridScore, ReferenceEmbeddings)> {
    let refs = kb.resolve_references(criterion_id, models)?;
    let delta = sample_delta(kb, sample_id, &refs)?;
    let (stats, population_id) = match batch_id {
        Some(id) => {
            let t = kb
                .score_table(id)
                .ok_or_else(|| Error::NotFound(format!("score table '{id}'")))?;
            if t.criterion_id != criterion_id {
                return Err(Error::InvalidArgument(format!(
                    "batch '{id}' was scored for {}, not {criterion_id}",
                    t.criterion_id
                )));
            }
            (t.population_stats, t.batch_id.clone())
        }
        None => {
            let b = baseline_for(kb, criterion_id, models)?;
            (b.stats, b.population_id.clone())
        }
    };
    let table = score_deltas(criterion_id, &[delta], config, Some((&stats, &population_id)))?;
    let row = table.rows.into_iter().next().expect("one delta yields one row");
    Ok((row, refs))
}

/// Baseline built from a scored batch.
pub fn baseline_from_table(table: &ScoreTable) -> Result<Baseline> {
    let models = table.models.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("score table '{}' has no model provenance", table.batch_id))
    })?;
    Ok(Baseline {
        key: BaselineKey::new(&table.criterion_id, models),
        population_id: table.batch_id.clone(),
        stats: table.population_stats,
    })
}

/// A reference sample id with its cosine to the query.
pub type Neighbor = (String, f64);

/// Reference sample most similar to `sample_id` on each side, by image-model
/// cosine: `(best positive, best negative)`.
pub fn nearest_references(
    kb: &KnowledgeBase,
    sample_id: &str,
    refs: &ReferenceEmbeddings,
) -> Result<(Option<Neighbor>, Option<Neighbor>)> {
    let q = kb.sample_embedding(sample_id, &refs.image_model, Space::Vision)?;
    let best = |ids: &[String]| -> Result<Option<Neighbor>> {
        let mut best: Option<(String, f64)> = None;
        for id in ids {
            let e = kb.sample_embedding(id, &refs.image_model, Space::Vision)?;
            let c = cosine(&q.vector, &e.vector)?;
            if best.as_ref().is_none_or(|(_, b)| c > *b) {
                best = Some((id.clone(), c));
            }
        }
        Ok(best)
    };
    Ok((best(&refs.pos_image_ids)?, best(&refs.neg_image_ids)?))
}
