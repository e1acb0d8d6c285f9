//! Query rewriting as a softmax policy over a small enumerable action space.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::KnowledgeGraph;
use crate::context::RewriteContext;
use crate::facetgen::FacetSelection;
use crate::math;
use crate::{Error, Result};

/// Action feature layout: operator one-hot, then the unresolved-conflict flag
/// (the query already names another value of the selected attribute and the
/// action leaves it in place).
pub const ACTION_DIM: usize = 5;
pub const MAX_SYNONYMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Operator {
    Append,
    ReplaceSlot,
    ExpandSynonym,
    ReplaceQuery,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Append, Operator::ReplaceSlot, Operator::ExpandSynonym, Operator::ReplaceQuery];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewriteAction {
    Append { value: String },
    ReplaceSlot { attribute: String, slot: String, value: String },
    ExpandSynonym { value: String, synonyms: Vec<String> },
    ReplaceQuery { query: String },
}

impl RewriteAction {
    pub fn operator(&self) -> Operator {
        match self {
            RewriteAction::Append { .. } => Operator::Append,
            RewriteAction::ReplaceSlot { .. } => Operator::ReplaceSlot,
            RewriteAction::ExpandSynonym { .. } => Operator::ExpandSynonym,
            RewriteAction::ReplaceQuery { .. } => Operator::ReplaceQuery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewritePolicyParams {
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl Default for RewritePolicyParams {
    fn default() -> Self {
        Self { weights: vec![0.0; ACTION_DIM], temperature: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Argmax,
}

fn words(q: &str) -> Vec<String> {
    q.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// First query token that is a different KG value of the selected attribute.
fn conflicting_slot(query: &str, sel: &FacetSelection, kg: &KnowledgeGraph) -> Option<String> {
    let values = kg.all_values(&sel.name);
    words(query).into_iter().find(|w| *w != sel.value && values.contains(w))
}

/// APPEND always; REPLACE_SLOT when the query holds another value of the
/// attribute; EXPAND_SYNONYM when the attribute has siblings.
pub fn enumerate_actions(x_rw: &RewriteContext, kg: &KnowledgeGraph) -> Vec<RewriteAction> {
    let sel = &x_rw.selection;
    let mut out = vec![RewriteAction::Append { value: sel.value.clone() }];
    if let Some(slot) = conflicting_slot(&x_rw.original_query, sel, kg) {
        out.push(RewriteAction::ReplaceSlot { attribute: sel.name.clone(), slot, value: sel.value.clone() });
    }
    let values = kg.all_values(&sel.name);
    if values.len() >= 2 {
        let synonyms: Vec<String> = values.into_iter().filter(|v| *v != sel.value).take(MAX_SYNONYMS).collect();
        out.push(RewriteAction::ExpandSynonym { value: sel.value.clone(), synonyms });
    }
    out
}

/// Feature vector of one action in context.
pub fn action_features(x_rw: &RewriteContext, kg: &KnowledgeGraph, action: &RewriteAction) -> Vec<f64> {
    let mut f = vec![0.0; ACTION_DIM];
    f[action.operator().index()] = 1.0;
    let conflict = conflicting_slot(&x_rw.original_query, &x_rw.selection, kg).is_some();
    if conflict && matches!(action.operator(), Operator::Append | Operator::ExpandSynonym) {
        f[4] = 1.0;
    }
    f
}

fn push_unique(out: &mut Vec<String>, w: &str) {
    if !out.iter().any(|x| x == w) {
        out.push(w.to_string());
    }
}

/// Applies `action` to `q`. Terms already present are not repeated.
pub fn apply_action(q: &str, selection: &FacetSelection, action: &RewriteAction) -> String {
    let mut toks = words(q);
    match action {
        RewriteAction::Append { value } => push_unique(&mut toks, value),
        RewriteAction::ReplaceSlot { slot, value, .. } => {
            if let Some(pos) = toks.iter().position(|t| t == slot) {
                toks[pos] = value.clone();
                let mut seen = Vec::new();
                toks.retain(|t| {
                    let keep = !seen.contains(t);
                    seen.push(t.clone());
                    keep
                });
            } else {
                push_unique(&mut toks, value);
            }
        }
        RewriteAction::ExpandSynonym { value, synonyms } => {
            push_unique(&mut toks, value);
            for s in synonyms {
                push_unique(&mut toks, s);
            }
        }
        RewriteAction::ReplaceQuery { query } => {
            let trimmed = query.trim();
            if trimmed.is_empty() {
                push_unique(&mut toks, &selection.value);
            } else {
                return trimmed.to_string();
            }
        }
    }
    if toks.is_empty() {
        return selection.value.clone();
    }
    toks.join(" ")
}

/// Log-probability of action `chosen` under softmax(w·f/T) and its gradient.
pub fn action_logprob_grad(weights: &[f64], temperature: f64, feats: &[Vec<f64>], chosen: usize) -> (f64, Vec<f64>) {
    let z: Vec<f64> = feats.iter().map(|f| math::dot(weights, f) / temperature).collect();
    let lse = math::logsumexp(&z);
    let mut grad: Vec<f64> = feats[chosen].iter().map(|x| x / temperature).collect();
    for (f, zi) in feats.iter().zip(&z) {
        let p = math::exp(zi - lse);
        for (g, x) in grad.iter_mut().zip(f) {
            *g -= p * x / temperature;
        }
    }
    (z[chosen] - lse, grad)
}

pub fn action_probs(weights: &[f64], temperature: f64, feats: &[Vec<f64>]) -> Vec<f64> {
    let z: Vec<f64> = feats.iter().map(|f| math::dot(weights, f) / temperature).collect();
    math::softmax(&z)
}

fn check(params: &RewritePolicyParams, feats: &[Vec<f64>]) -> Result<()> {
    if feats.is_empty() {
        return Err(Error::EmptyActions);
    }
    for f in feats {
        if f.len() != params.weights.len() {
            return Err(Error::DimensionMismatch { expected: params.weights.len(), got: f.len() });
        }
    }
    Ok(())
}

/// Index of the chosen action and its log-probability; argmax ties resolve to
/// the earliest action.
pub fn choose_action<R: Rng + ?Sized>(
    params: &RewritePolicyParams,
    feats: &[Vec<f64>],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<(usize, f64)> {
    check(params, feats)?;
    let probs = action_probs(&params.weights, params.temperature, feats);
    let idx = match mode {
        DecodeMode::Argmax => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        DecodeMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    let (lp, _) = action_logprob_grad(&params.weights, params.temperature, feats, idx);
    Ok((idx, lp))
}

/// Samples from `actions` with the given features.
pub fn sample_rewrite<R: Rng + ?Sized>(
    params: &RewritePolicyParams,
    actions: &[RewriteAction],
    feats: &[Vec<f64>],
    rng: &mut R,
) -> Result<(RewriteAction, f64)> {
    if actions.is_empty() {
        return Err(Error::EmptyActions);
    }
    let (i, lp) = choose_action(params, feats, DecodeMode::Sample, rng)?;
    Ok((actions[i].clone(), lp))
}

/// Result of one rewrite decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    pub query: String,
    pub action: RewriteAction,
    pub actions: Vec<RewriteAction>,
    pub features: Vec<Vec<f64>>,
    pub index: usize,
    pub logprob: f64,
}

pub fn decide_rewrite<R: Rng + ?Sized>(
    params: &RewritePolicyParams,
    x_rw: &RewriteContext,
    kg: &KnowledgeGraph,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<RewriteOutcome> {
    let actions = enumerate_actions(x_rw, kg);
    let features: Vec<Vec<f64>> = actions.iter().map(|a| action_features(x_rw, kg, a)).collect();
    let (index, logprob) = choose_action(params, &features, mode, rng)?;
    let action = actions[index].clone();
    let query = apply_action(&x_rw.original_query, &x_rw.selection, &action);
    Ok(RewriteOutcome { query, action, actions, features, index, logprob })
}

/// Rewritten query and the log-probability of the action that produced it.
pub fn rewrite_query<R: Rng + ?Sized>(
    params: &RewritePolicyParams,
    x_rw: &RewriteContext,
    kg: &KnowledgeGraph,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<(String, f64)> {
    decide_rewrite(params, x_rw, kg, mode, rng).map(|o| (o.query, o.logprob))
}

/// Grounds free text from an external rewriter: the selected value is appended
/// when the text does not already carry it.
pub fn ground_rewrite(raw: &str, x_rw: &RewriteContext) -> String {
    let action = RewriteAction::ReplaceQuery { query: raw.trim().to_string() };
    let q = apply_action(&x_rw.original_query, &x_rw.selection, &action);
    if words(&q).contains(&x_rw.selection.value) {
        q
    } else {
        apply_action(&q, &x_rw.selection, &RewriteAction::Append { value: x_rw.selection.value.clone() })
    }
}
