//! Z-score standardization, hybrid fusion and threshold classification.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::ModelConfig;
use crate::model::{
    ExpertLabel, FusionConfig, HybridScore, Prediction, SigmaConvention, SimilarityDelta, Strategy,
};

/// Mean and standard deviation of `values` under `convention`.
///
/// A single value under the sample convention has no defined spread and is
/// reported with σ = 0.
pub fn mean_std(values: &[f64], convention: SigmaConvention) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("z-score population".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let denom = match convention {
        SigmaConvention::Population => n,
        SigmaConvention::Sample => n - 1.0,
    };
    let sigma = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
    Ok((mean, sigma))
}

/// `(v − μ) / σ`, or 0 when σ is 0.
pub fn standardize(value: f64, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        (value - mean) / sigma
    }
}

pub fn zscore(values: &[f64], convention: SigmaConvention) -> Result<Vec<f64>> {
    let (mean, sigma) = mean_std(values, convention)?;
    Ok(values.iter().map(|&v| standardize(v, mean, sigma)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub mu_text: f64,
    pub sigma_text: f64,
    pub mu_image: f64,
    pub sigma_image: f64,
    pub n: usize,
    pub convention: SigmaConvention,
}

impl PopulationStats {
    pub fn from_deltas(deltas: &[SimilarityDelta], convention: SigmaConvention) -> Result<Self> {
        let text: Vec<f64> = deltas.iter().map(|d| d.delta_text).collect();
        let image: Vec<f64> = deltas.iter().map(|d| d.delta_image).collect();
        let (mu_text, sigma_text) = mean_std(&text, convention)?;
        let (mu_image, sigma_image) = mean_std(&image, convention)?;
        Ok(PopulationStats {
            mu_text,
            sigma_text,
            mu_image,
            sigma_image,
            n: deltas.len(),
            convention,
        })
    }

    pub fn z_text(&self, delta: f64) -> f64 {
        standardize(delta, self.mu_text, self.sigma_text)
    }

    pub fn z_image(&self, delta: f64) -> f64 {
        standardize(delta, self.mu_image, self.sigma_image)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub combined: f64,
    pub label: Prediction,
}

/// Fuses two standardized deltas under `config`.
///
/// Under [`Strategy::Vote`] each z votes by its sign (≥ 0 is positive); a split
/// vote is settled by the sign of the z-sum against the threshold. The reported
/// score for votes is the plain z-sum.
pub fn hybrid_combine(z_text: f64, z_image: f64, config: &FusionConfig) -> Result<Combined> {
    if !z_text.is_finite() || !z_image.is_finite() {
        return Err(Error::NonFinite { index: usize::from(z_text.is_finite()) });
    }
    config.validate()?;
    let tau = config.threshold;
    let out = match config.strategy {
        Strategy::ZscoreSum => {
            let combined = z_text + z_image;
            Combined {
                combined,
                label: Prediction::from_bool(combined >= tau),
            }
        }
        Strategy::Weighted => {
            let combined = config.weights.0 * z_text + config.weights.1 * z_image;
            Combined {
                combined,
                label: Prediction::from_bool(combined >= tau),
            }
        }
        Strategy::Vote => {
            let combined = z_text + z_image;
            let label = match (z_text >= 0.0, z_image >= 0.0) {
                (true, true) => Prediction::Positive,
                (false, false) => Prediction::Negative,
                _ => Prediction::from_bool(combined >= tau),
            };
            Combined { combined, label }
        }
    };
    Ok(out)
}

/// Scored batch for one criterion, rows sorted by combined score descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub batch_id: String,
    pub criterion_id: String,
    pub rows: Vec<HybridScore>,
    pub population_stats: PopulationStats,
    pub config: FusionConfig,
    /// Models behind the deltas; `None` for injected fixture deltas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ScoreTable {
    pub fn row(&self, sample_id: &str) -> Option<&HybridScore> {
        self.rows.iter().find(|r| r.sample_id == sample_id)
    }

    /// Re-applies a threshold to existing scores.
    pub fn relabel(&self, threshold: f64) -> Result<ScoreTable> {
        let mut config = self.config;
        config.threshold = threshold;
        let mut out = self.clone();
        out.config = config;
        for r in &mut out.rows {
            let c = hybrid_combine(r.z_text, r.z_image, &config)?;
            r.threshold = threshold;
            r.label = c.label;
        }
        Ok(out)
    }
}

fn sort_rows(rows: &mut [HybridScore]) {
    rows.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
}

/// Identifier of the z-score population formed by `deltas`.
pub fn batch_id_for(criterion_id: &str, deltas: &[SimilarityDelta], convention: SigmaConvention) -> String {
    let mut sorted: Vec<&SimilarityDelta> = deltas.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut h = Sha256::new();
    h.update(criterion_id.as_bytes());
    h.update([0u8, convention as u8]);
    for d in sorted {
        h.update(d.sample_id.as_bytes());
        h.update([0u8]);
        h.update(d.delta_text.to_bits().to_le_bytes());
        h.update(d.delta_image.to_bits().to_le_bytes());
    }
    format!("batch-{}", &hex::encode(h.finalize())[..12])
}

/// Standardizes, fuses and labels raw deltas.
///
/// With `baseline == None` the batch itself is the z-score population;
/// otherwise the supplied statistics are used and `population_id` names them.
pub fn score_deltas(
    criterion_id: &str,
    deltas: &[SimilarityDelta],
    config: &FusionConfig,
    baseline: Option<(&PopulationStats, &str)>,
) -> Result<ScoreTable> {
    config.validate()?;
    if deltas.is_empty() {
        return Err(Error::Empty("score batch".into()));
    }
    if let Some(d) = deltas.iter().find(|d| !d.delta_text.is_finite() || !d.delta_image.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite delta for sample '{}'",
            d.sample_id
        )));
    }
    let mut warnings = Vec::new();
    let (stats, batch_id) = match baseline {
        Some((stats, id)) => (*stats, id.to_string()),
        None => (
            PopulationStats::from_deltas(deltas, config.sigma_convention)?,
            batch_id_for(criterion_id, deltas, config.sigma_convention),
        ),
    };
    if stats.sigma_text == 0.0 {
        warnings.push("text-delta population has zero spread; z_text set to 0".to_string());
    }
    if stats.sigma_image == 0.0 {
        warnings.push("image-delta population has zero spread; z_image set to 0".to_string());
    }
    for w in &warnings {
        warn!("{criterion_id}: {w}");
    }

    let mut rows = deltas
        .iter()
        .map(|d| {
            let z_text = stats.z_text(d.delta_text);
            let z_image = stats.z_image(d.delta_image);
            let c = hybrid_combine(z_text, z_image, config)?;
            Ok(HybridScore {
                sample_id: d.sample_id.clone(),
                criterion_id: criterion_id.to_string(),
                delta_text: d.delta_text,
                delta_image: d.delta_image,
                z_text,
                z_image,
                combined: c.combined,
                strategy: config.strategy,
                threshold: config.threshold,
                label: c.label,
                batch_id: batch_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(ScoreTable {
        batch_id,
        criterion_id: criterion_id.to_string(),
        rows,
        population_stats: stats,
        config: *config,
        models: None,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
    /// `None` when no sample is labeled accept.
    pub recall: Option<f64>,
    pub false_positives: Vec<String>,
    pub false_negatives: Vec<String>,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn misclassified(&self) -> Vec<String> {
        self.false_positives
            .iter()
            .chain(&self.false_negatives)
            .cloned()
            .collect()
    }
}

/// Compares positive predictions with accept labels. `na` and unlabeled
/// samples are skipped. Misclassified ids are listed in table order.
pub fn confusion(table: &ScoreTable, labels: &BTreeMap<String, ExpertLabel>) -> Result<Confusion> {
    let predictions: Vec<(&str, Prediction)> =
        table.rows.iter().map(|r| (r.sample_id.as_str(), r.label)).collect();
    confusion_of(&predictions, labels)
}

/// [`confusion`] over bare `(sample, prediction)` pairs.
pub fn confusion_of(
    predictions: &[(&str, Prediction)],
    labels: &BTreeMap<String, ExpertLabel>,
) -> Result<Confusion> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    let mut false_positives = Vec::new();
    let mut false_negatives = Vec::new();
    for &(id, label) in predictions {
        let accept = match labels.get(id) {
            Some(ExpertLabel::Accept) => true,
            Some(ExpertLabel::Reject) => false,
            Some(ExpertLabel::Na) | None => continue,
        };
        match (label.is_positive(), accept) {
            (true, true) => tp += 1,
            (true, false) => {
                fp += 1;
                false_positives.push(id.to_string());
            }
            (false, true) => {
                fn_ += 1;
                false_negatives.push(id.to_string());
            }
            (false, false) => tn += 1,
        }
    }
    let total = tp + fp + fn_ + tn;
    if total == 0 {
        return Err(Error::Empty("no labeled samples".into()));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Confusion {
        tp,
        fp,
        fn_,
        tn,
        accuracy: (tp + tn) as f64 / total as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        false_positives,
        false_negatives,
    })
}
