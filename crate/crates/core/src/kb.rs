//! File-backed knowledge base of embeddings, samples, criteria, expert labels,
//! baseline populations and scored batches.
//!
//! On disk a knowledge base is a directory with three files:
//!
//! * `embeddings.jsonl`: one interchange record per line, sorted by
//!   `(model, id)`, vector components written with 17 significant digits;
//! * `knowledge.json`: `{"version": 1, "criteria": [...], "labels": [...],
//!   "baselines": [...]}` with every list sorted by key;
//! * `score_tables.jsonl`: scored batches, one per population, oldest first.
//!
//! Embedding ids are unique per model, so CLIP and FLAVA prompt embeddings
//! may share the conventional `{criterion}.{pos|neg}.{variant}` id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::fusion::{PopulationStats, ScoreTable};
use crate::model::{
    normalize, validate_embedding, AssessmentCriterion, Embedding, ExpertLabel, ModelSpace,
    PromptVariant, SampleRecord, Space,
};
use crate::similarity::{fuse_references, ReferenceEmbeddings};
use crate::table::sample_id_from_image;

pub const KNOWLEDGE_VERSION: u32 = 1;
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const KNOWLEDGE_FILE: &str = "knowledge.json";
pub const SCORE_TABLES_FILE: &str = "score_tables.jsonl";

/// Labels-file header columns and the criterion each maps to.
pub const LABEL_COLUMNS: [(&str, &str); 6] = [
    ("dilution", "EA1"),
    ("haz", "EA2"),
    ("reinforcement", "EA3"),
    ("porosity", "EA4"),
    ("dissolution", "EA5"),
    ("distribution", "EA6"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Image,
    Prompt,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Sample an image embedding belongs to. Defaults to the file stem of
    /// `image_ref`, then to the embedding id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// One line of the embedding interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeRecord {
    pub id: String,
    pub model: String,
    pub space: Space,
    pub dim: usize,
    pub vector: Vec<f64>,
    pub source: EmbeddingSource,
    #[serde(default)]
    pub meta: EmbeddingMeta,
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    id: &'a str,
    model: &'a str,
    space: Space,
    dim: usize,
    vector: Box<RawValue>,
    source: EmbeddingSource,
    meta: &'a EmbeddingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEmbedding {
    pub embedding: Embedding,
    pub source: EmbeddingSource,
    pub meta: EmbeddingMeta,
}

impl StoredEmbedding {
    pub fn to_record(&self) -> InterchangeRecord {
        InterchangeRecord {
            id: self.embedding.id.clone(),
            model: self.embedding.model_id.clone(),
            space: self.embedding.space,
            dim: self.embedding.dim,
            vector: self.embedding.vector.clone(),
            source: self.source,
            meta: self.meta.clone(),
        }
    }

    fn canonical_line(&self) -> String {
        let mut v = String::from("[");
        for (i, x) in self.embedding.vector.iter().enumerate() {
            if i > 0 {
                v.push(',');
            }
            let _ = write!(v, "{x:.16e}");
        }
        v.push(']');
        let rec = CanonicalRecord {
            id: &self.embedding.id,
            model: &self.embedding.model_id,
            space: self.embedding.space,
            dim: self.embedding.dim,
            vector: RawValue::from_string(v).expect("formatted floats are valid JSON"),
            source: self.source,
            meta: &self.meta,
        };
        serde_json::to_string(&rec).expect("embedding record serializes")
    }
}

/// Store key of an embedding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub model: String,
    pub id: String,
}

impl EmbeddingKey {
    pub fn new(model: impl Into<String>, id: impl Into<String>) -> Self {
        EmbeddingKey {
            model: model.into(),
            id: id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
}

/// Parses a prompt embedding id `{criterion}.{pos|neg}.{variant}[.{suffix}]`.
pub fn parse_prompt_id(id: &str) -> Option<(String, Polarity, PromptVariant)> {
    let parts: Vec<&str> = id.split('.').collect();
    for i in 1..parts.len().saturating_sub(1) {
        let polarity = match parts[i] {
            "pos" => Polarity::Pos,
            "neg" => Polarity::Neg,
            _ => continue,
        };
        if let Ok(variant) = parts[i + 1].parse::<PromptVariant>() {
            return Some((parts[..i].join("."), polarity, variant));
        }
    }
    None
}

/// Models used on each side of a hybrid score.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Model whose shared vision-text space scores images against prompts.
    pub text_model: String,
    /// Model whose vision space scores images against reference images.
    pub image_model: String,
    pub variant: PromptVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_model: "clip".into(),
            image_model: "flava".into(),
            variant: PromptVariant::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BaselineKey {
    pub criterion_id: String,
    pub text_model: String,
    pub image_model: String,
}

impl BaselineKey {
    pub fn new(criterion_id: &str, models: &ModelConfig) -> Self {
        BaselineKey {
            criterion_id: criterion_id.to_string(),
            text_model: models.text_model.clone(),
            image_model: models.image_model.clone(),
        }
    }
}

/// Stored z-score population for single-sample scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    #[serde(flatten)]
    pub key: BaselineKey,
    /// Batch the statistics were taken from.
    pub population_id: String,
    pub stats: PopulationStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub count: usize,
    /// `(line, id)` of vectors re-normalized because they were off unit norm.
    pub renormalized: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelRow {
    sample: String,
    labels: BTreeMap<String, ExpertLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KnowledgeFile {
    version: u32,
    criteria: Vec<AssessmentCriterion>,
    labels: Vec<LabelRow>,
    baselines: Vec<Baseline>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    embeddings: BTreeMap<EmbeddingKey, StoredEmbedding>,
    samples: BTreeMap<String, SampleRecord>,
    criteria: BTreeMap<String, AssessmentCriterion>,
    baselines: BTreeMap<BaselineKey, Baseline>,
    score_tables: Vec<ScoreTable>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn embedding(&self, model: &str, id: &str) -> Option<&StoredEmbedding> {
        self.embeddings.get(&EmbeddingKey::new(model, id))
    }

    /// All embeddings with the given id, across models.
    pub fn embeddings_with_id<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a StoredEmbedding> + 'a {
        self.embeddings.values().filter(move |e| e.embedding.id == id)
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &StoredEmbedding> {
        self.embeddings.values()
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecord> {
        self.samples.get(id)
    }

    pub fn samples(&self) -> impl Iterator<Item = &SampleRecord> {
        self.samples.values()
    }

    pub fn criterion(&self, id: &str) -> Option<&AssessmentCriterion> {
        self.criteria.get(id)
    }

    pub fn criteria(&self) -> impl Iterator<Item = &AssessmentCriterion> {
        self.criteria.values()
    }

    pub fn baseline(&self, key: &BaselineKey) -> Option<&Baseline> {
        self.baselines.get(key)
    }

    pub fn baselines(&self) -> impl Iterator<Item = &Baseline> {
        self.baselines.values()
    }

    pub fn score_tables(&self) -> &[ScoreTable] {
        &self.score_tables
    }

    pub fn score_table(&self, batch_id: &str) -> Option<&ScoreTable> {
        self.score_tables.iter().rev().find(|t| t.batch_id == batch_id)
    }

    pub fn latest_score_table(&self, criterion_id: &str) -> Option<&ScoreTable> {
        self.score_tables.iter().rev().find(|t| t.criterion_id == criterion_id)
    }

    /// Embedding of `sample_id` for `(model, space)`.
    pub fn sample_embedding(&self, sample_id: &str, model: &str, space: Space) -> Result<&Embedding> {
        let sample = self
            .samples
            .get(sample_id)
            .ok_or_else(|| Error::NotFound(format!("sample '{sample_id}'")))?;
        let id = sample
            .embeddings
            .get(&ModelSpace::new(model, space))
            .ok_or_else(|| {
                Error::NotFound(format!("{model}/{space} embedding for sample '{sample_id}'"))
            })?;
        self.embedding(model, id)
            .map(|e| &e.embedding)
            .ok_or_else(|| Error::NotFound(format!("embedding '{id}' ({model})")))
    }

    /// Expert labels of every sample for `criterion_id`.
    pub fn labels_for(&self, criterion_id: &str) -> BTreeMap<String, ExpertLabel> {
        self.samples
            .values()
            .filter_map(|s| s.label(criterion_id).map(|l| (s.sample_id.clone(), l)))
            .collect()
    }

    /// Parses and stores interchange records. All-or-nothing: any bad line
    /// leaves the knowledge base untouched.
    pub fn ingest_embeddings_str(&mut self, text: &str) -> Result<IngestReport> {
        let mut staged: Vec<(usize, StoredEmbedding)> = Vec::new();
        let mut keys = BTreeSet::new();
        let mut report = IngestReport::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: InterchangeRecord =
                serde_json::from_str(raw).map_err(|e| Error::parse(line, e.to_string()))?;
            let key = EmbeddingKey::new(&rec.model, &rec.id);
            if self.embeddings.contains_key(&key) || !keys.insert(key) {
                return Err(Error::Duplicate(format!(
                    "line {line}: embedding id '{}' for model '{}'",
                    rec.id, rec.model
                )));
            }
            let mut e = Embedding::new(rec.id.clone(), rec.model.clone(), rec.space, rec.vector);
            e.dim = rec.dim;
            let mut e = validate_embedding(e).map_err(|err| Error::parse(line, err.to_string()))?;
            if !e.normalized {
                e = normalize(e).map_err(|err| Error::parse(line, err.to_string()))?;
                warn!("line {line}: embedding '{}' re-normalized to unit norm", rec.id);
                report.renormalized.push((line, rec.id.clone()));
            }
            staged.push((
                line,
                StoredEmbedding {
                    embedding: e,
                    source: rec.source,
                    meta: rec.meta,
                },
            ));
        }

        let mut next = self.clone();
        for (line, stored) in staged {
            next.insert_embedding(stored).map_err(|e| match e {
                Error::Duplicate(m) => Error::Duplicate(format!("line {line}: {m}")),
                Error::Conflict(m) => Error::Conflict(format!("line {line}: {m}")),
                other => Error::parse(line, other.to_string()),
            })?;
            report.count += 1;
        }
        *self = next;
        Ok(report)
    }

    pub fn ingest_embeddings(&mut self, path: &Path) -> Result<IngestReport> {
        let text = read_file(path)?;
        self.ingest_embeddings_str(&text).map_err(|e| e.with_path(path))
    }

    fn insert_embedding(&mut self, stored: StoredEmbedding) -> Result<()> {
        let e = &stored.embedding;
        let key = EmbeddingKey::new(&e.model_id, &e.id);
        if self.embeddings.contains_key(&key) {
            return Err(Error::Duplicate(format!("{}/{}", e.model_id, e.id)));
        }
        if stored.source == EmbeddingSource::Image {
            let sample_id = stored
                .meta
                .sample_id
                .clone()
                .or_else(|| {
                    stored.meta.image_ref.as_deref().map(|r| {
                        let name = r.rsplit(['/', '\\']).next().unwrap_or(r);
                        sample_id_from_image(name)
                    })
                })
                .unwrap_or_else(|| e.id.clone());
            let sample = self
                .samples
                .entry(sample_id.clone())
                .or_insert_with(|| SampleRecord::new(sample_id.clone()));
            let slot = ModelSpace::new(&e.model_id, e.space);
            if let Some(existing) = sample.embeddings.get(&slot) {
                return Err(Error::Conflict(format!(
                    "sample '{sample_id}' already has {}/{} embedding '{existing}'",
                    e.model_id, e.space
                )));
            }
            sample.embeddings.insert(slot, e.id.clone());
            if sample.image_ref.is_none() {
                sample.image_ref = stored.meta.image_ref.clone();
            }
        }
        self.embeddings.insert(key, stored);
        Ok(())
    }

    /// Removes an embedding that no sample references.
    pub fn delete_embedding(&mut self, model: &str, id: &str) -> Result<StoredEmbedding> {
        let key = EmbeddingKey::new(model, id);
        if let Some(s) = self
            .samples
            .values()
            .find(|s| s.embeddings.iter().any(|(k, v)| k.model == model && v == id))
        {
            return Err(Error::Conflict(format!(
                "embedding '{id}' is attached to sample '{}'",
                s.sample_id
            )));
        }
        self.embeddings
            .remove(&key)
            .ok_or_else(|| Error::NotFound(format!("embedding '{id}' ({model})")))
    }

    /// Removes a sample and its image embeddings. Refused while a criterion
    /// uses the sample as a reference.
    pub fn delete_sample(&mut self, sample_id: &str) -> Result<SampleRecord> {
        if let Some(c) = self.criteria.values().find(|c| {
            c.positive_image_ids.contains(sample_id) || c.negative_image_ids.contains(sample_id)
        }) {
            return Err(Error::Conflict(format!(
                "sample '{sample_id}' is a reference of criterion '{}'; detach it first",
                c.criterion_id
            )));
        }
        let sample = self
            .samples
            .remove(sample_id)
            .ok_or_else(|| Error::NotFound(format!("sample '{sample_id}'")))?;
        for (slot, id) in &sample.embeddings {
            self.embeddings.remove(&EmbeddingKey::new(&slot.model, id));
        }
        Ok(sample)
    }

    /// Inserts or atomically replaces a criterion.
    pub fn upsert_criterion(&mut self, c: AssessmentCriterion) -> Result<&AssessmentCriterion> {
        c.validate()?;
        if let Some(id) = c
            .positive_image_ids
            .iter()
            .chain(&c.negative_image_ids)
            .find(|id| !self.samples.contains_key(*id))
        {
            return Err(Error::NotFound(format!(
                "criterion '{}' references unknown sample '{id}'",
                c.criterion_id
            )));
        }
        let id = c.criterion_id.clone();
        self.criteria.insert(id.clone(), c);
        Ok(&self.criteria[&id])
    }

    pub fn delete_criterion(&mut self, id: &str) -> Result<AssessmentCriterion> {
        self.criteria
            .remove(id)
            .ok_or_else(|| Error::NotFound(format!("criterion '{id}'")))
    }

    /// Loads a labels table (`sample,dilution,haz,...`). Missing samples are
    /// created. Returns the number of data rows.
    pub fn load_labels_str(&mut self, text: &str) -> Result<usize> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
        let mut columns = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if i == 0 {
                if !h.eq_ignore_ascii_case("sample") {
                    return Err(Error::parse(1, format!("first column must be 'sample', got '{h}'")));
                }
                continue;
            }
            let cid = LABEL_COLUMNS
                .iter()
                .find(|(name, _)| h.eq_ignore_ascii_case(name))
                .map(|(_, cid)| *cid)
                .ok_or_else(|| Error::parse(1, format!("unknown criterion column '{h}'")))?;
            columns.push(cid);
        }
        if columns.is_empty() {
            return Err(Error::parse(1, "no criterion columns"));
        }

        let mut rows: Vec<(String, Vec<(&str, ExpertLabel)>)> = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
            let sample = rec.get(0).unwrap_or_default().to_string();
            if sample.is_empty() {
                return Err(Error::parse(line, "empty sample id"));
            }
            if !seen.insert(sample.clone()) {
                return Err(Error::parse(line, format!("duplicate sample '{sample}'")));
            }
            let mut labels = Vec::with_capacity(columns.len());
            for (j, cid) in columns.iter().enumerate() {
                let raw = rec
                    .get(j + 1)
                    .ok_or_else(|| Error::parse(line, format!("missing value for {cid}")))?;
                let label = raw
                    .parse::<ExpertLabel>()
                    .map_err(|_| Error::parse(line, format!("unknown label value '{raw}'")))?;
                labels.push((*cid, label));
            }
            rows.push((sample, labels));
        }

        let n = rows.len();
        for (sample, labels) in rows {
            let rec = self
                .samples
                .entry(sample.clone())
                .or_insert_with(|| SampleRecord::new(sample));
            for (cid, l) in labels {
                rec.labels.insert(cid.to_string(), l);
            }
        }
        Ok(n)
    }

    pub fn load_labels(&mut self, path: &Path) -> Result<usize> {
        let text = read_file(path)?;
        self.load_labels_str(&text).map_err(|e| e.with_path(path))
    }

    /// Loads a JSON array of criteria, all or nothing. Returns the count.
    pub fn load_criteria_str(&mut self, text: &str) -> Result<usize> {
        let list: Vec<AssessmentCriterion> = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), e.to_string()))?;
        let mut next = self.clone();
        for c in &list {
            next.upsert_criterion(c.clone())?;
        }
        *self = next;
        Ok(list.len())
    }

    pub fn load_criteria(&mut self, path: &Path) -> Result<usize> {
        let text = read_file(path)?;
        self.load_criteria_str(&text).map_err(|e| e.with_path(path))
    }

    /// Prompt embeddings of `model` for one criterion, polarity and variant.
    pub fn prompt_embeddings(
        &self,
        criterion_id: &str,
        polarity: Polarity,
        variant: PromptVariant,
        model: &str,
    ) -> Vec<&Embedding> {
        self.embeddings
            .values()
            .filter(|e| e.source == EmbeddingSource::Prompt && e.embedding.model_id == model)
            .filter(|e| {
                parse_prompt_id(&e.embedding.id)
                    .is_some_and(|(cid, p, v)| cid == criterion_id && p == polarity && v == variant)
            })
            .map(|e| &e.embedding)
            .collect()
    }

    /// Fuses the prompt and reference-image embeddings of a criterion.
    ///
    /// Sides without references come back as `None`; a referenced sample
    /// lacking the requested embedding is an error.
    pub fn resolve_references(&self, criterion_id: &str, models: &ModelConfig) -> Result<ReferenceEmbeddings> {
        let c = self
            .criteria
            .get(criterion_id)
            .ok_or_else(|| Error::NotFound(format!("criterion '{criterion_id}'")))?;
        let mut warnings = Vec::new();

        let prompts = |variant: PromptVariant, polarity: Polarity| {
            self.prompt_embeddings(criterion_id, polarity, variant, &models.text_model)
        };

        let mut variant = models.variant;
        if variant == PromptVariant::Color {
            let text_missing = c.prompts(PromptVariant::Color).2;
            let has_vectors =
                !prompts(PromptVariant::Color, Polarity::Pos).is_empty() && !prompts(PromptVariant::Color, Polarity::Neg).is_empty();
            if text_missing || !has_vectors {
                let msg = format!("{criterion_id}: color-aware prompts unavailable, using plain prompts");
                warn!("{msg}");
                warnings.push(msg);
                variant = PromptVariant::Plain;
            }
        }
        let fuse = |set: Vec<&Embedding>| -> Result<Option<Vec<f64>>> {
            if set.is_empty() {
                Ok(None)
            } else {
                let vs: Vec<&[f64]> = set.iter().map(|e| e.vector.as_slice()).collect();
                fuse_references(&vs).map(Some)
            }
        };
        let mean_pos_text = fuse(prompts(variant, Polarity::Pos))?;
        let mean_neg_text = fuse(prompts(variant, Polarity::Neg))?;

        let images = |ids: &BTreeSet<String>| -> Result<Vec<&Embedding>> {
            ids.iter()
                .map(|id| self.sample_embedding(id, &models.image_model, Space::Vision))
                .collect()
        };
        let pos_images = images(&c.positive_image_ids)?;
        let neg_images = images(&c.negative_image_ids)?;

        Ok(ReferenceEmbeddings {
            criterion_id: criterion_id.to_string(),
            text_model: models.text_model.clone(),
            image_model: models.image_model.clone(),
            mean_pos_text,
            mean_neg_text,
            mean_pos_image: fuse(pos_images)?,
            mean_neg_image: fuse(neg_images)?,
            pos_image_ids: c.positive_image_ids.iter().cloned().collect(),
            neg_image_ids: c.negative_image_ids.iter().cloned().collect(),
            warnings,
        })
    }

    pub fn set_baseline(&mut self, baseline: Baseline) {
        self.baselines.insert(baseline.key.clone(), baseline);
    }

    /// Stores a scored batch. A table for the same population replaces the
    /// earlier one, so re-scoring is idempotent.
    pub fn append_score_table(&mut self, table: ScoreTable) {
        self.score_tables.retain(|t| t.batch_id != table.batch_id);
        self.score_tables.push(table);
    }

    /// Checks that criteria and samples only point at known records.
    pub fn check_integrity(&self) -> Result<()> {
        for s in self.samples.values() {
            for (slot, id) in &s.embeddings {
                if !self.embeddings.contains_key(&EmbeddingKey::new(&slot.model, id)) {
                    return Err(Error::NotFound(format!(
                        "sample '{}' references missing embedding '{id}'",
                        s.sample_id
                    )));
                }
            }
        }
        for c in self.criteria.values() {
            for id in c.positive_image_ids.iter().chain(&c.negative_image_ids) {
                if !self.samples.contains_key(id) {
                    return Err(Error::NotFound(format!(
                        "criterion '{}' references missing sample '{id}'",
                        c.criterion_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_embeddings(&self) -> String {
        let mut out = String::new();
        for e in self.embeddings.values() {
            out.push_str(&e.canonical_line());
            out.push('\n');
        }
        out
    }

    pub fn write_knowledge(&self) -> String {
        let labels = self
            .samples
            .values()
            .filter(|s| !s.labels.is_empty())
            .map(|s| LabelRow {
                sample: s.sample_id.clone(),
                labels: s.labels.clone(),
            })
            .collect();
        let doc = KnowledgeFile {
            version: KNOWLEDGE_VERSION,
            criteria: self.criteria.values().cloned().collect(),
            labels,
            baselines: self.baselines.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("knowledge file serializes");
        s.push('\n');
        s
    }

    pub fn write_score_tables(&self) -> String {
        let mut out = String::new();
        for t in &self.score_tables {
            out.push_str(&serde_json::to_string(t).expect("score table serializes"));
            out.push('\n');
        }
        out
    }

    /// Applies a knowledge document on top of the current embeddings.
    pub fn read_knowledge_str(&mut self, text: &str) -> Result<()> {
        let doc: KnowledgeFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: None,
            line: e.line(),
            message: e.to_string(),
        })?;
        if doc.version != KNOWLEDGE_VERSION {
            return Err(Error::parse(1, format!("unsupported knowledge file version {}", doc.version)));
        }
        let mut next = self.clone();
        for row in doc.labels {
            let rec = next
                .samples
                .entry(row.sample.clone())
                .or_insert_with(|| SampleRecord::new(row.sample));
            rec.labels.extend(row.labels);
        }
        for c in doc.criteria {
            next.upsert_criterion(c)?;
        }
        for b in doc.baselines {
            next.set_baseline(b);
        }
        *self = next;
        Ok(())
    }

    pub fn read_score_tables_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: ScoreTable = serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            self.score_tables.push(t);
        }
        Ok(())
    }

    /// Loads a knowledge-base directory; missing files count as empty.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut kb = KnowledgeBase::new();
        let p = dir.join(EMBEDDINGS_FILE);
        if p.exists() {
            kb.ingest_embeddings(&p)?;
        }
        let p = dir.join(KNOWLEDGE_FILE);
        if p.exists() {
            kb.read_knowledge_str(&read_file(&p)?).map_err(|e| e.with_path(&p))?;
        }
        let p = dir.join(SCORE_TABLES_FILE);
        if p.exists() {
            kb.read_score_tables_str(&read_file(&p)?).map_err(|e| e.with_path(&p))?;
        }
        Ok(kb)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(EMBEDDINGS_FILE), &self.write_embeddings())?;
        write_atomic(&dir.join(KNOWLEDGE_FILE), &self.write_knowledge())?;
        write_atomic(&dir.join(SCORE_TABLES_FILE), &self.write_score_tables())?;
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Point-in-time read view of a [`Store`].
#[derive(Debug, Clone)]
pub struct Snapshot {
    kb: Arc<KnowledgeBase>,
    generation: u64,
}

impl Snapshot {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn id(&self) -> String {
        format!("gen-{}", self.generation)
    }
}

impl std::ops::Deref for Snapshot {
    type Target = KnowledgeBase;

    fn deref(&self) -> &KnowledgeBase {
        &self.kb
    }
}

impl PartialEq for Snapshot {
    fn eq(&self, other: &Self) -> bool {
        self.generation == other.generation && (Arc::ptr_eq(&self.kb, &other.kb) || self.kb == other.kb)
    }
}

/// Single-writer, multi-reader knowledge base with snapshot isolation.
///
/// Writes run against a private copy and are published (and persisted, when
/// the store has a directory) only if they succeed.
#[derive(Debug)]
pub struct Store {
    current: RwLock<Arc<KnowledgeBase>>,
    writer: Mutex<()>,
    generation: AtomicU64,
    dir: Option<PathBuf>,
}

impl Store {
    pub fn in_memory(kb: KnowledgeBase) -> Self {
        Store {
            current: RwLock::new(Arc::new(kb)),
            writer: Mutex::new(()),
            generation: AtomicU64::new(0),
            dir: None,
        }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let kb = KnowledgeBase::load_dir(&dir)?;
        info!(
            "opened knowledge base at {} ({} embeddings, {} samples, {} criteria)",
            dir.display(),
            kb.embeddings.len(),
            kb.samples.len(),
            kb.criteria.len()
        );
        Ok(Store {
            current: RwLock::new(Arc::new(kb)),
            writer: Mutex::new(()),
            generation: AtomicU64::new(0),
            dir: Some(dir),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn snapshot(&self) -> Snapshot {
        let guard = self.current.read().unwrap_or_else(|e| e.into_inner());
        Snapshot {
            kb: Arc::clone(&guard),
            generation: self.generation.load(Ordering::SeqCst),
        }
    }

    /// Runs `f` against a copy of the current state and publishes the result.
    pub fn write<T>(&self, f: impl FnOnce(&mut KnowledgeBase) -> Result<T>) -> Result<T> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let base = Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()));
        let mut next = (*base).clone();
        let out = f(&mut next)?;
        next.check_integrity()?;
        if let Some(dir) = &self.dir {
            next.save_dir(dir)?;
        }
        let mut cur = self.current.write().unwrap_or_else(|e| e.into_inner());
        *cur = Arc::new(next);
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(out)
    }
}
