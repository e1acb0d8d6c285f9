//! Facet and query rewards, the search utility and the logistic CTR model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::facetgen::{feature, FacetList};
use crate::lexindex::{tokenize, InvertedIndex};
use crate::math;
use crate::usersim::LatentIntent;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub w_recall: f64,
    pub w_sem: f64,
    pub k_eval: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha: 0.5, w_recall: 0.7, w_sem: 0.3, k_eval: 10 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.alpha)
            && self.w_recall >= 0.0
            && self.w_sem >= 0.0
            && (self.w_recall + self.w_sem - 1.0).abs() < 1e-9
            && self.k_eval >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!("invalid reward config {self:?}")))
        }
    }
}

/// Logistic click model over facet features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrModel {
    pub weights: Vec<f64>,
}

impl Default for CtrModel {
    fn default() -> Self {
        Self { weights: vec![0.0; feature::DIM] }
    }
}

/// One labelled impression for fitting the click model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickExample {
    pub features: Vec<f64>,
    pub clicked: bool,
}

impl CtrModel {
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: features.len() });
        }
        Ok(math::sigmoid(math::dot(&self.weights, features)))
    }

    /// Mean negative log-likelihood; probabilities are clamped away from 0 and 1.
    pub fn log_loss(&self, data: &[ClickExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for ex in data {
            let p = self.predict(&ex.features)?.clamp(1e-12, 1.0 - 1e-12);
            total -= if ex.clicked { math::ln(p) } else { math::ln(1.0 - p) };
        }
        Ok(total / data.len() as f64)
    }

    /// Full-batch gradient descent on log-loss with a small L2 penalty,
    /// starting from `self`.
    pub fn fit(&self, data: &[ClickExample], learning_rate: f64, iterations: usize, l2: f64) -> Result<CtrModel> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut w = self.weights.clone();
        let n = data.len() as f64;
        for _ in 0..iterations {
            let mut grad: Vec<f64> = w.iter().map(|x| l2 * x).collect();
            for ex in data {
                if ex.features.len() != w.len() {
                    return Err(Error::DimensionMismatch { expected: w.len(), got: ex.features.len() });
                }
                let p = math::sigmoid(math::dot(&w, &ex.features));
                let y = if ex.clicked { 1.0 } else { 0.0 };
                for (g, x) in grad.iter_mut().zip(&ex.features) {
                    *g += (p - y) * x / n;
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= learning_rate * g;
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("ctr weights"));
            }
        }
        Ok(CtrModel { weights: w })
    }
}

pub fn predicted_ctr(model: &CtrModel, features: &[f64]) -> Result<f64> {
    model.predict(features)
}

/// Share of reference names present among generated names.
pub fn facet_coverage(generated: &FacetList, reference: &FacetList) -> Result<f64> {
    let reference: BTreeSet<&str> = reference.facets.iter().map(|f| f.name.as_str()).collect();
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let generated: BTreeSet<&str> = generated.facets.iter().map(|f| f.name.as_str()).collect();
    Ok(reference.intersection(&generated).count() as f64 / reference.len() as f64)
}

/// `alpha·coverage + (1−alpha)·mean CTR`; `features[i]` belongs to
/// `generated.facets[i]`. An empty list contributes CTR 0.
pub fn r_facet(
    config: &RewardConfig,
    model: &CtrModel,
    generated: &FacetList,
    features: &[Vec<f64>],
    reference: &FacetList,
) -> Result<f64> {
    if features.len() != generated.len() {
        return Err(Error::DimensionMismatch { expected: generated.len(), got: features.len() });
    }
    let coverage = facet_coverage(generated, reference)?;
    let ctr = if features.is_empty() {
        0.0
    } else {
        let mut s = 0.0;
        for f in features {
            s += model.predict(f)?;
        }
        s / features.len() as f64
    };
    Ok(config.alpha * coverage + (1.0 - config.alpha) * ctr)
}

fn tfidf(index: &InvertedIndex, text: &str) -> BTreeMap<String, f64> {
    let n = index.doc_count() as f64;
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for t in tokenize(text) {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    for (t, v) in tf.iter_mut() {
        let df = index.doc_freq(t) as f64;
        *v *= math::ln((1.0 + n) / (1.0 + df)) + 1.0;
    }
    tf
}

/// Cosine of tf-idf vectors of `a` and `b`, idf taken from the index.
pub fn semantic_relevance(index: &InvertedIndex, a: &str, b: &str) -> f64 {
    let va = tfidf(index, a);
    let vb = tfidf(index, b);
    let na: f64 = va.values().map(|x| x * x).sum();
    let nb: f64 = vb.values().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = va.iter().filter_map(|(t, x)| vb.get(t).map(|y| x * y)).sum();
    (dot / (math::sqrt(na) * math::sqrt(nb))).clamp(0.0, 1.0)
}

/// Recall of intent targets in the top `k_eval` of an arbitrary ranking.
pub fn target_recall(ranked: &[String], intent: &LatentIntent, k_eval: usize) -> Result<f64> {
    if intent.target_docs.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let hits = ranked.iter().take(k_eval).filter(|d| intent.target_docs.contains(*d)).count();
    Ok(hits as f64 / intent.target_docs.len() as f64)
}

/// Query reward given an already computed ranking for `q_prime`.
pub fn r_query_ranked(
    config: &RewardConfig,
    index: &InvertedIndex,
    ranked: &[String],
    q_prime: &str,
    intent: &LatentIntent,
) -> Result<f64> {
    let recall = target_recall(ranked, intent, config.k_eval)?;
    Ok(config.w_recall * recall + config.w_sem * semantic_relevance(index, q_prime, &intent.description))
}

/// `w_recall·recall@k_eval + w_sem·semantic_relevance(q′, description)`.
pub fn r_query(config: &RewardConfig, index: &InvertedIndex, q_prime: &str, intent: &LatentIntent) -> Result<f64> {
    let ranked: Vec<String> = index.search(q_prime, config.k_eval).into_iter().map(|r| r.doc_id).collect();
    r_query_ranked(config, index, &ranked, q_prime, intent)
}

/// Downstream search utility U(q′).
pub fn search_utility(config: &RewardConfig, index: &InvertedIndex, q_prime: &str, intent: &LatentIntent) -> Result<f64> {
    r_query(config, index, q_prime, intent)
}
