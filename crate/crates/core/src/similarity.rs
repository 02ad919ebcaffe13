//! Cosine similarity, reference fusion and similarity deltas.
//!
//! A delta compares a query against the mean of its positive references and
//! the mean of its negative references:
//!
//! ```text
//! Δ = cos(q, mean(pos)) − cos(q, mean(neg))
//! ```
//!
//! The text delta uses prompt embeddings from a shared vision-text space, the
//! image delta uses reference image embeddings from a vision space. Fused
//! means are never re-normalized because cosine is scale invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{l2_norm, Embedding, Space};

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Cosine similarity of two vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    if a.is_empty() {
        return Err(Error::Empty("cosine of empty vectors".into()));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Element-wise arithmetic mean of `members`.
pub fn fuse_references<V: AsRef<[f64]>>(members: &[V]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Empty("reference set".into()))?
        .as_ref();
    let mut sum = vec![0.0; first.len()];
    for m in members {
        let m = m.as_ref();
        check_dims(first, m)?;
        for (s, x) in sum.iter_mut().zip(m) {
            *s += x;
        }
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// `cos(query, positive) − cos(query, negative)` against already-fused means.
pub fn delta_against(query: &[f64], positive: &[f64], negative: &[f64]) -> Result<f64> {
    Ok(cosine(query, positive)? - cosine(query, negative)?)
}

fn require_model(e: &Embedding, model: &str, role: &str) -> Result<()> {
    if e.model_id != model {
        return Err(Error::SpaceMismatch(format!(
            "{role} '{}' comes from model '{}', expected '{model}'",
            e.id, e.model_id
        )));
    }
    Ok(())
}

/// Delta of an image embedding against positive and negative prompt embeddings
/// of the same model.
pub fn text_delta(image: &Embedding, pos_texts: &[Embedding], neg_texts: &[Embedding]) -> Result<f64> {
    if pos_texts.is_empty() || neg_texts.is_empty() {
        return Err(Error::Empty("prompt reference set".into()));
    }
    if image.space == Space::Text {
        return Err(Error::SpaceMismatch(format!(
            "query '{}' is a text embedding",
            image.id
        )));
    }
    for t in pos_texts.iter().chain(neg_texts) {
        require_model(t, &image.model_id, "prompt")?;
        if t.space == Space::Vision {
            return Err(Error::SpaceMismatch(format!(
                "prompt reference '{}' is a vision embedding",
                t.id
            )));
        }
    }
    delta_against(
        &image.vector,
        &fuse_references(pos_texts)?,
        &fuse_references(neg_texts)?,
    )
}

/// Delta of a query image against positive and negative reference images of
/// the same model and space.
pub fn image_delta(query: &Embedding, pos_images: &[Embedding], neg_images: &[Embedding]) -> Result<f64> {
    if pos_images.is_empty() || neg_images.is_empty() {
        return Err(Error::Empty("image reference set".into()));
    }
    if query.space == Space::Text {
        return Err(Error::SpaceMismatch(format!(
            "query '{}' is a text embedding",
            query.id
        )));
    }
    for r in pos_images.iter().chain(neg_images) {
        require_model(r, &query.model_id, "reference image")?;
        if r.space != query.space {
            return Err(Error::SpaceMismatch(format!(
                "reference image '{}' is in space {}, query is in {}",
                r.id, r.space, query.space
            )));
        }
    }
    delta_against(
        &query.vector,
        &fuse_references(pos_images)?,
        &fuse_references(neg_images)?,
    )
}

/// Fused reference means for one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEmbeddings {
    pub criterion_id: String,
    pub text_model: String,
    pub image_model: String,
    pub mean_pos_text: Option<Vec<f64>>,
    pub mean_neg_text: Option<Vec<f64>>,
    pub mean_pos_image: Option<Vec<f64>>,
    pub mean_neg_image: Option<Vec<f64>>,
    /// Reference sample ids behind the image means, for explanations.
    pub pos_image_ids: Vec<String>,
    pub neg_image_ids: Vec<String>,
    pub warnings: Vec<String>,
}

impl ReferenceEmbeddings {
    pub fn text_delta(&self, image: &[f64]) -> Result<f64> {
        match (&self.mean_pos_text, &self.mean_neg_text) {
            (Some(p), Some(n)) => delta_against(image, p, n),
            _ => Err(Error::Empty(format!(
                "{}: prompt references for model '{}'",
                self.criterion_id, self.text_model
            ))),
        }
    }

    pub fn image_delta(&self, image: &[f64]) -> Result<f64> {
        match (&self.mean_pos_image, &self.mean_neg_image) {
            (Some(p), Some(n)) => delta_against(image, p, n),
            _ => Err(Error::Empty(format!(
                "{}: image references for model '{}'",
                self.criterion_id, self.image_model
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub sample_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub model_id: String,
    pub space: Space,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

/// Dense cosine matrix over `samples`, which must share model, space and dim.
pub fn pairwise_matrix(samples: &[Embedding]) -> Result<SimilarityMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("pairwise matrix input".into()))?;
    for s in samples {
        if s.model_id != first.model_id || s.space != first.space {
            return Err(Error::SpaceMismatch(format!(
                "'{}' is {}/{}, expected {}/{}",
                s.id, s.model_id, s.space, first.model_id, first.space
            )));
        }
        check_dims(&first.vector, &s.vector)?;
    }
    let n = samples.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = cosine(&samples[i].vector, &samples[i].vector)?;
        for j in (i + 1)..n {
            let c = cosine(&samples[i].vector, &samples[j].vector)?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix {
        sample_ids: samples.iter().map(|s| s.id.clone()).collect(),
        values,
        model_id: first.model_id.clone(),
        space: first.space,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Full element-wise `a − b`.
    pub diff: Vec<Vec<f64>>,
}

/// Element-wise `a − b`, summarized over the strict upper triangle.
pub fn matrix_difference_stats(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<DifferenceStats> {
    if a.sample_ids != b.sample_ids {
        return Err(Error::InvalidArgument(
            "matrices cover different samples or orderings".into(),
        ));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Empty("difference stats need at least two samples".into()));
    }
    let diff: Vec<Vec<f64>> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect();
    let tri: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| diff[i][j])
        .collect();
    let m = tri.len() as f64;
    let mean = tri.iter().sum::<f64>() / m;
    let var = tri.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    Ok(DifferenceStats {
        mean,
        std: var.sqrt(),
        diff,
    })
}

/// Ranks dimensions by how far apart the two groups sit after pooled
/// standardization: `|mean_A(z) − mean_B(z)|`. Zero-spread dimensions score 0;
/// ties go to the lower index.
pub fn discriminative_dimensions<V: AsRef<[f64]>>(
    group_a: &[V],
    group_b: &[V],
    n: usize,
) -> Result<Vec<(usize, f64)>> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Empty("discriminative groups".into()));
    }
    let dim = group_a[0].as_ref().len();
    for v in group_a.iter().chain(group_b) {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.as_ref().len(),
            });
        }
    }
    if n == 0 || n > dim {
        return Err(Error::InvalidArgument(format!(
            "n must be in 1..={dim}, got {n}"
        )));
    }
    let total = (group_a.len() + group_b.len()) as f64;
    let mut scores: Vec<(usize, f64)> = (0..dim)
        .map(|d| {
            let col = |g: &[V]| g.iter().map(|v| v.as_ref()[d]).collect::<Vec<_>>();
            let a = col(group_a);
            let b = col(group_b);
            let mu = a.iter().chain(&b).sum::<f64>() / total;
            let sigma = (a.iter().chain(&b).map(|x| (x - mu).powi(2)).sum::<f64>() / total).sqrt();
            if sigma == 0.0 {
                return (d, 0.0);
            }
            let mean_z = |xs: &[f64]| xs.iter().map(|x| (x - mu) / sigma).sum::<f64>() / xs.len() as f64;
            (d, (mean_z(&a) - mean_z(&b)).abs())
        })
        .collect();
    scores.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    scores.truncate(n);
    Ok(scores)
}
