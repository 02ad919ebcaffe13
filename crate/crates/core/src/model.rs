//! Shared domain types and embedding validation.
//!
//! All arithmetic is carried out in `f64`. Embeddings are expected to arrive
//! L2-normalized; anything outside [`UNIT_NORM_TOLERANCE`] is re-normalized on
//! ingest and flagged rather than rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of `‖v‖₂` from 1 for a vector to count as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Vision,
    Text,
    Multimodal,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Vision => "vision",
            Space::Text => "text",
            Space::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(Space::Vision),
            "text" => Ok(Space::Text),
            "multimodal" => Ok(Space::Multimodal),
            other => Err(Error::InvalidArgument(format!("unknown space '{other}'"))),
        }
    }
}

/// A vector produced by one model in one modality space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub model_id: String,
    pub space: Space,
    pub dim: usize,
    pub vector: Vec<f64>,
    #[serde(default)]
    pub normalized: bool,
}

impl Embedding {
    pub fn new(
        id: impl Into<String>,
        model_id: impl Into<String>,
        space: Space,
        vector: Vec<f64>,
    ) -> Self {
        Embedding {
            id: id.into(),
            model_id: model_id.into(),
            space,
            dim: vector.len(),
            vector,
            normalized: false,
        }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks the structural invariants of `e` and sets `normalized` according to
/// whether its norm is within tolerance of 1.
pub fn validate_embedding(mut e: Embedding) -> Result<Embedding> {
    if e.dim == 0 {
        return Err(Error::InvalidArgument("dim must be positive".into()));
    }
    if e.vector.len() != e.dim {
        return Err(Error::DimensionMismatch {
            expected: e.dim,
            actual: e.vector.len(),
        });
    }
    if let Some(index) = e.vector.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    e.normalized = (e.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE;
    Ok(e)
}

/// Scales `e` to unit L2 norm.
pub fn normalize(mut e: Embedding) -> Result<Embedding> {
    e.vector = normalize_vector(&e.vector)?;
    e.normalized = true;
    Ok(e)
}

pub fn normalize_vector(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite {
            index: v.iter().position(|x| !x.is_finite()).unwrap_or(0),
        });
    }
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Expert label for one sample under one criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertLabel {
    Accept,
    Reject,
    Na,
}

impl ExpertLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpertLabel::Accept => "accept",
            ExpertLabel::Reject => "reject",
            ExpertLabel::Na => "NA",
        }
    }
}

impl FromStr for ExpertLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "accept" => Ok(ExpertLabel::Accept),
            "reject" => Ok(ExpertLabel::Reject),
            "na" | "n/a" => Ok(ExpertLabel::Na),
            other => Err(Error::InvalidArgument(format!("unknown label value '{other}'"))),
        }
    }
}

/// Key of a per-sample embedding: the model that produced it and its space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelSpace {
    pub model: String,
    pub space: Space,
}

impl ModelSpace {
    pub fn new(model: impl Into<String>, space: Space) -> Self {
        ModelSpace {
            model: model.into(),
            space,
        }
    }
}

/// A dataset sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_ref: Option<String>,
    /// Embedding ids keyed by producing model and space.
    #[serde(with = "embedding_refs")]
    pub embeddings: BTreeMap<ModelSpace, String>,
    /// Expert labels keyed by criterion id.
    pub labels: BTreeMap<String, ExpertLabel>,
}

mod embedding_refs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{ModelSpace, Space};

    #[derive(Serialize, Deserialize)]
    struct Ref {
        model: String,
        space: Space,
        id: String,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<ModelSpace, String>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let refs: Vec<Ref> = map
            .iter()
            .map(|(k, id)| Ref {
                model: k.model.clone(),
                space: k.space,
                id: id.clone(),
            })
            .collect();
        refs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<ModelSpace, String>, D::Error> {
        let refs = Vec::<Ref>::deserialize(d)?;
        Ok(refs
            .into_iter()
            .map(|r| (ModelSpace::new(r.model, r.space), r.id))
            .collect())
    }
}

impl SampleRecord {
    pub fn new(sample_id: impl Into<String>) -> Self {
        SampleRecord {
            sample_id: sample_id.into(),
            ..Default::default()
        }
    }

    pub fn label(&self, criterion_id: &str) -> Option<ExpertLabel> {
        self.labels.get(criterion_id).copied()
    }
}

/// Which prompt wording to use for the text side of a criterion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    #[default]
    Plain,
    Color,
}

impl PromptVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Plain => "plain",
            PromptVariant::Color => "color",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(PromptVariant::Plain),
            "color" | "color-aware" | "color_aware" => Ok(PromptVariant::Color),
            other => Err(Error::InvalidArgument(format!("unknown prompt variant '{other}'"))),
        }
    }
}

/// One expert assessment with its textual and visual references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentCriterion {
    pub criterion_id: String,
    pub name: String,
    pub positive_text: String,
    pub negative_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_aware_positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_aware_negative: Option<String>,
    #[serde(default)]
    pub positive_image_ids: BTreeSet<String>,
    #[serde(default)]
    pub negative_image_ids: BTreeSet<String>,
}

impl AssessmentCriterion {
    pub fn validate(&self) -> Result<()> {
        if self.criterion_id.trim().is_empty() {
            return Err(Error::InvalidArgument("criterion_id must not be empty".into()));
        }
        if self.positive_text == self.negative_text {
            return Err(Error::InvalidArgument(format!(
                "{}: positive and negative texts are identical",
                self.criterion_id
            )));
        }
        if let Some(id) = self
            .positive_image_ids
            .intersection(&self.negative_image_ids)
            .next()
        {
            return Err(Error::InvalidArgument(format!(
                "{}: sample '{id}' is both a positive and a negative reference",
                self.criterion_id
            )));
        }
        Ok(())
    }

    /// Prompt texts for `variant`, plus whether a fallback to plain happened.
    pub fn prompts(&self, variant: PromptVariant) -> (&str, &str, bool) {
        match (variant, &self.color_aware_positive, &self.color_aware_negative) {
            (PromptVariant::Color, Some(p), Some(n)) => (p, n, false),
            (PromptVariant::Color, _, _) => (&self.positive_text, &self.negative_text, true),
            (PromptVariant::Plain, _, _) => (&self.positive_text, &self.negative_text, false),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    ZscoreSum,
    Weighted,
    Vote,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZscoreSum => "zscore_sum",
            Strategy::Weighted => "weighted",
            Strategy::Vote => "vote",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore_sum" | "zscore-sum" | "sum" => Ok(Strategy::ZscoreSum),
            "weighted" => Ok(Strategy::Weighted),
            "vote" => Ok(Strategy::Vote),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Standard-deviation convention for z-scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConvention {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N − 1.
    Sample,
}

impl FromStr for SigmaConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(SigmaConvention::Population),
            "sample" => Ok(SigmaConvention::Sample),
            other => Err(Error::InvalidArgument(format!("unknown sigma convention '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaZeroPolicy {
    /// A zero-spread population standardizes to all zeros.
    #[default]
    Zeros,
}

/// Which population supplies μ and σ for standardization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZscorePopulation {
    #[default]
    Batch,
    StoredBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: Strategy,
    /// Weights for (text delta, image delta) under [`Strategy::Weighted`].
    pub weights: (f64, f64),
    pub threshold: f64,
    pub sigma_convention: SigmaConvention,
    pub sigma_zero_policy: SigmaZeroPolicy,
    pub zscore_population: ZscorePopulation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: Strategy::ZscoreSum,
            weights: (1.0, 1.0),
            threshold: 0.0,
            sigma_convention: SigmaConvention::Population,
            sigma_zero_policy: SigmaZeroPolicy::Zeros,
            zscore_population: ZscorePopulation::Batch,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.weights.0.is_finite() || !self.weights.1.is_finite() {
            return Err(Error::InvalidArgument("fusion weights must be finite".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Raw similarity deltas of one sample under one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDelta {
    pub sample_id: String,
    pub criterion_id: String,
    /// Image vs. fused prompt references in a shared vision-text space.
    pub delta_text: f64,
    /// Image vs. fused reference images in a vision space.
    pub delta_image: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Positive,
    Negative,
}

impl Prediction {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Prediction::Positive
        } else {
            Prediction::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Prediction::Positive
    }
}

/// Standardized and fused score of one sample under one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridScore {
    pub sample_id: String,
    pub criterion_id: String,
    pub delta_text: f64,
    pub delta_image: f64,
    pub z_text: f64,
    pub z_image: f64,
    pub combined: f64,
    pub strategy: Strategy,
    pub threshold: f64,
    pub label: Prediction,
    pub batch_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: Vec<f64>) -> Embedding {
        Embedding::new("e", "clip", Space::Vision, v)
    }

    #[test]
    fn unit_vector_validates_as_normalized() {
        let e = validate_embedding(emb(vec![1.0, 0.0, 0.0])).unwrap();
        assert!(e.normalized);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut e = emb(vec![1.0, 0.0, 0.0]);
        e.dim = 2;
        assert_eq!(
            validate_embedding(e),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        );
    }

    #[test]
    fn hand_normed_vector_is_normalized() {
        // 0.36 + 0.64 = 1
        let e = validate_embedding(emb(vec![0.6, 0.8])).unwrap();
        assert!(e.normalized);
    }

    #[test]
    fn non_unit_vector_is_accepted_unflagged() {
        let e = validate_embedding(emb(vec![3.0, 4.0])).unwrap();
        assert!(!e.normalized);
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            validate_embedding(emb(vec![1.0, f64::NAN])),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(validate_embedding(emb(vec![f64::INFINITY])).is_err());
        assert!(validate_embedding(emb(vec![])).is_err());
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(emb(vec![3.0, 4.0])).unwrap();
        assert!((n.vector[0] - 0.6).abs() < 1e-15);
        assert!((n.vector[1] - 0.8).abs() < 1e-15);
        assert!(n.normalized);
        assert_eq!(normalize(emb(vec![1.0, 0.0])).unwrap().vector, vec![1.0, 0.0]);
        assert_eq!(normalize(emb(vec![0.0, 0.0])), Err(Error::ZeroVector));
    }

    #[test]
    fn criterion_invariants() {
        let mut c = AssessmentCriterion {
            criterion_id: "EA1".into(),
            name: "Dilution".into(),
            positive_text: "a".into(),
            negative_text: "b".into(),
            color_aware_positive: None,
            color_aware_negative: None,
            positive_image_ids: ["s1".to_string()].into(),
            negative_image_ids: ["s2".to_string()].into(),
        };
        assert!(c.validate().is_ok());
        c.negative_image_ids.insert("s1".into());
        assert!(c.validate().is_err());
        c.negative_image_ids.remove("s1");
        c.negative_text = "a".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn color_variant_falls_back_to_plain() {
        let c = AssessmentCriterion {
            criterion_id: "EA1".into(),
            name: "Dilution".into(),
            positive_text: "p".into(),
            negative_text: "n".into(),
            color_aware_positive: None,
            color_aware_negative: None,
            positive_image_ids: Default::default(),
            negative_image_ids: Default::default(),
        };
        assert_eq!(c.prompts(PromptVariant::Color), ("p", "n", true));
        assert_eq!(c.prompts(PromptVariant::Plain), ("p", "n", false));
    }

    #[test]
    fn label_tokens() {
        assert_eq!("NA".parse::<ExpertLabel>().unwrap(), ExpertLabel::Na);
        assert_eq!(" accept".parse::<ExpertLabel>().unwrap(), ExpertLabel::Accept);
        assert!("maybe".parse::<ExpertLabel>().is_err());
    }
}
