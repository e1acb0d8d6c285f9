//! Facet list generation: a Plackett–Luce policy over mined candidate
//! attributes, plus the static knowledge-graph and Gini-ranking baselines and
//! the hallucination guard for externally generated lists.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, KnowledgeGraph};
use crate::context::SessionContext;
use crate::lexindex::{tokenize, RankedResult};
use crate::math;
use crate::{Error, Result, SearchEnv};

/// Candidate feature layout.
pub mod feature {
    pub const KG_PRIOR: usize = 0;
    pub const LEXICAL_OVERLAP: usize = 1;
    pub const BEHAVIOR_AFFINITY: usize = 2;
    pub const WEB_TREND: usize = 3;
    pub const VALUE_ENTROPY: usize = 4;
    pub const BIAS: usize = 5;
    pub const DIM: usize = 6;
    pub const NAMES: [&str; DIM] = ["kg_prior", "lexical_overlap", "behavior_affinity", "web_trend", "value_entropy", "bias"];
}

/// A facet the user picked: attribute name and value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FacetSelection {
    pub name: String,
    pub value: String,
}

impl FacetSelection {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self { name: name.into(), value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub name: String,
    pub values: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FacetList {
    pub facets: Vec<Facet>,
}

impl FacetList {
    pub fn names(&self) -> Vec<&str> {
        self.facets.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.facets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Facet> {
        self.facets.iter().find(|f| f.name == name)
    }

    /// Builds a list from bare names (values left empty); for tests and gold
    /// lists where only names matter.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            facets: names
                .iter()
                .map(|n| Facet { name: n.as_ref().to_string(), values: Vec::new(), score: 0.0 })
                .collect(),
        }
    }
}

/// One attribute the policy may place in a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFacet {
    pub name: String,
    pub values: Vec<String>,
    pub features: Vec<f64>,
}

impl AsRef<[f64]> for CandidateFacet {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetPolicyParams {
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl Default for FacetPolicyParams {
    fn default() -> Self {
        Self { weights: vec![0.0; feature::DIM], temperature: 1.0 }
    }
}

impl FacetPolicyParams {
    pub fn score(&self, features: &[f64]) -> f64 {
        math::dot(&self.weights, features)
    }
}

fn value_tokens(values: &[String]) -> BTreeSet<String> {
    values.iter().flat_map(|v| tokenize(v)).collect()
}

/// Mines one candidate per attribute of `ctx.kg_view`, plus attributes whose
/// values occur in web-trend terms, sorted by name. `results` is the current
/// result set (index ordinals) the entropy feature is computed over.
pub fn mine_candidates(ctx: &SessionContext, env: &SearchEnv, results: &[u32]) -> Vec<CandidateFacet> {
    let mut values: BTreeMap<String, Vec<String>> = ctx.kg_view.attributes.clone();
    for (term, _) in &ctx.web_trends {
        for tok in tokenize(term) {
            for attr in env.kg.attributes_with_value(&tok) {
                values.entry(attr.clone()).or_insert_with(|| env.kg.all_values(&attr));
            }
        }
    }
    let query_tokens: BTreeSet<String> = tokenize(&ctx.query).into_iter().collect();
    let behavior_docs: Vec<u32> = ctx
        .behaviors
        .iter()
        .filter_map(|b| env.catalog.ordinal(&b.product_id).map(|o| o as u32))
        .collect();

    values
        .into_iter()
        .map(|(name, vals)| {
            let vtok = value_tokens(&vals);
            let mut f = vec![0.0; feature::DIM];
            f[feature::KG_PRIOR] = ctx
                .kg_view
                .categories
                .iter()
                .filter_map(|c| env.kg.attribute(c, &name).map(|s| s.prior))
                .fold(0.0, f64::max);
            if !query_tokens.is_empty() {
                f[feature::LEXICAL_OVERLAP] =
                    query_tokens.iter().filter(|t| vtok.contains(*t)).count() as f64 / query_tokens.len() as f64;
            }
            f[feature::BEHAVIOR_AFFINITY] = behavior_affinity(ctx, env, &behavior_docs, &name, &vals, &vtok);
            f[feature::WEB_TREND] = ctx
                .web_trends
                .iter()
                .filter(|(t, _)| tokenize(t).iter().any(|x| vtok.contains(x)))
                .map(|(_, w)| *w)
                .fold(0.0, f64::max);
            f[feature::VALUE_ENTROPY] = value_entropy(env, results, &name, vals.len());
            f[feature::BIAS] = 1.0;
            CandidateFacet { name, values: vals, features: f }
        })
        .collect()
}

/// Half behavior concentration above chance, half strongest matching profile
/// interest.
fn behavior_affinity(
    ctx: &SessionContext,
    env: &SearchEnv,
    behavior_docs: &[u32],
    attr: &str,
    values: &[String],
    vtok: &BTreeSet<String>,
) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &d in behavior_docs {
        if let Some(v) = env.value_of(d, attr) {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    let concentration = if behavior_docs.is_empty() || values.is_empty() {
        0.0
    } else {
        let top = counts.values().copied().max().unwrap_or(0) as f64;
        (top / behavior_docs.len() as f64 - 1.0 / values.len() as f64).max(0.0)
    };
    let profile = ctx
        .profile
        .iter()
        .filter(|(t, _)| tokenize(t).iter().any(|x| vtok.contains(x)))
        .map(|(_, w)| w.clamp(0.0, 1.0))
        .fold(0.0, f64::max);
    0.5 * concentration + 0.5 * profile
}

/// Normalized value entropy of `attr` over `results`, scaled by the share of
/// results that carry the attribute.
fn value_entropy(env: &SearchEnv, results: &[u32], attr: &str, n_values: usize) -> f64 {
    if results.is_empty() || n_values < 2 {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &d in results {
        if let Some(v) = env.value_of(d, attr) {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    let covered: usize = counts.values().sum();
    if covered == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / covered as f64;
            -p * math::ln(p)
        })
        .sum();
    (h / math::ln(n_values as f64)).min(1.0) * covered as f64 / results.len() as f64
}

/// Tempered scores `w·φ(c)/T` of every candidate.
pub fn logits<F: AsRef<[f64]>>(weights: &[f64], temperature: f64, features: &[F]) -> Vec<f64> {
    features.iter().map(|f| math::dot(weights, f.as_ref()) / temperature).collect()
}

/// Log-probability of drawing `order` (indices into `features`) by sequential
/// softmax without replacement, and its gradient with respect to the weights.
pub fn plackett_luce_logprob_grad<F: AsRef<[f64]>>(
    weights: &[f64],
    temperature: f64,
    features: &[F],
    order: &[usize],
) -> (f64, Vec<f64>) {
    let z = logits(weights, temperature, features);
    let mut remaining: Vec<bool> = vec![true; features.len()];
    let mut lp = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for &chosen in order {
        let live: Vec<usize> = (0..features.len()).filter(|&i| remaining[i]).collect();
        let zs: Vec<f64> = live.iter().map(|&i| z[i]).collect();
        let lse = math::logsumexp(&zs);
        lp += z[chosen] - lse;
        for (&i, &zi) in live.iter().zip(&zs) {
            let p = math::exp(zi - lse);
            for (g, x) in grad.iter_mut().zip(features[i].as_ref()) {
                *g -= p * x / temperature;
            }
        }
        for (g, x) in grad.iter_mut().zip(features[chosen].as_ref()) {
            *g += x / temperature;
        }
        remaining[chosen] = false;
    }
    (lp, grad)
}

/// Log-probability only.
pub fn plackett_luce_logprob<F: AsRef<[f64]>>(weights: &[f64], temperature: f64, features: &[F], order: &[usize]) -> f64 {
    let z = logits(weights, temperature, features);
    let mut remaining: Vec<bool> = vec![true; features.len()];
    let mut lp = 0.0;
    for &chosen in order {
        let zs: Vec<f64> = (0..features.len()).filter(|&i| remaining[i]).map(|i| z[i]).collect();
        lp += z[chosen] - math::logsumexp(&zs);
        remaining[chosen] = false;
    }
    lp
}

/// Draws `k` distinct indices by sequential softmax.
pub fn sample_order<F: AsRef<[f64]>, R: Rng + ?Sized>(
    weights: &[f64],
    temperature: f64,
    features: &[F],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k > features.len() {
        return Err(Error::NotEnoughCandidates { requested: k, available: features.len() });
    }
    let z = logits(weights, temperature, features);
    let mut live: Vec<usize> = (0..features.len()).collect();
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let zs: Vec<f64> = live.iter().map(|&i| z[i]).collect();
        let probs = math::softmax(&zs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = live.len() - 1;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = j;
                break;
            }
        }
        order.push(live.remove(pick));
    }
    Ok(order)
}

fn check_dims(params: &FacetPolicyParams, candidates: &[CandidateFacet]) -> Result<()> {
    for c in candidates {
        if c.features.len() != params.weights.len() {
            return Err(Error::DimensionMismatch { expected: params.weights.len(), got: c.features.len() });
        }
    }
    Ok(())
}

pub fn to_facet_list(params: &FacetPolicyParams, candidates: &[CandidateFacet], order: &[usize]) -> FacetList {
    FacetList {
        facets: order
            .iter()
            .map(|&i| Facet {
                name: candidates[i].name.clone(),
                values: candidates[i].values.clone(),
                score: params.score(&candidates[i].features),
            })
            .collect(),
    }
}

/// Samples a ranked list of `k` facets and its exact log-probability.
pub fn sample_facet_list<R: Rng + ?Sized>(
    params: &FacetPolicyParams,
    candidates: &[CandidateFacet],
    k: usize,
    rng: &mut R,
) -> Result<(FacetList, f64)> {
    check_dims(params, candidates)?;
    let order = sample_order(&params.weights, params.temperature, candidates, k, rng)?;
    let lp = plackett_luce_logprob(&params.weights, params.temperature, candidates, &order);
    Ok((to_facet_list(params, candidates, &order), lp))
}

/// Resolves facet names to candidate indices, rejecting unknown or repeated
/// names.
pub fn resolve_order<S: AsRef<str>>(candidates: &[CandidateFacet], names: &[S]) -> Result<Vec<usize>> {
    let mut seen = BTreeSet::new();
    names
        .iter()
        .map(|n| {
            let n = n.as_ref();
            if !seen.insert(n) {
                return Err(Error::DuplicateEntry(n.to_string()));
            }
            candidates
                .iter()
                .position(|c| c.name == n)
                .ok_or_else(|| Error::UnknownCandidate(n.to_string()))
        })
        .collect()
}

/// Log-probability the sampler assigns to exactly this ordered list.
pub fn list_logprob(params: &FacetPolicyParams, candidates: &[CandidateFacet], list: &FacetList) -> Result<f64> {
    check_dims(params, candidates)?;
    let order = resolve_order(candidates, &list.names())?;
    Ok(plackett_luce_logprob(&params.weights, params.temperature, candidates, &order))
}

/// Deterministic serving order: score descending, ties by name.
pub fn rank_facets(params: &FacetPolicyParams, candidates: &[CandidateFacet], k: usize) -> FacetList {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    let scores: Vec<f64> = candidates.iter().map(|c| params.score(&c.features)).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| candidates[a].name.cmp(&candidates[b].name))
    });
    idx.truncate(k);
    to_facet_list(params, candidates, &idx)
}

/// Static baseline: the category's attributes by prior weight, ties by name.
pub fn rule_based_facets(kg: &KnowledgeGraph, category: &str, k: usize) -> FacetList {
    let Some(attrs) = kg.category(category) else {
        return FacetList::default();
    };
    let mut list: Vec<Facet> = attrs
        .iter()
        .map(|(n, s)| Facet { name: n.clone(), values: s.values.clone(), score: s.prior })
        .collect();
    list.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).unwrap_or(core::cmp::Ordering::Equal).then_with(|| a.name.cmp(&b.name))
    });
    list.truncate(k);
    FacetList { facets: list }
}

/// Gini impurity `1 − Σ p(v)²` of a value histogram.
pub fn gini_impurity<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p
        })
        .sum::<f64>()
}

/// Dynamic baseline: attributes recorded on the result documents ranked by
/// Gini impurity of their value distribution, ties by name. Values are listed
/// most frequent first.
pub fn gini_rank_facets(results: &[RankedResult], catalog: &Catalog, k: usize) -> FacetList {
    let mut hist: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for r in results {
        if let Some(p) = catalog.get(&r.doc_id) {
            for (a, v) in &p.attrs {
                *hist.entry(a).or_default().entry(v).or_insert(0) += 1;
            }
        }
    }
    let mut list: Vec<Facet> = hist
        .into_iter()
        .map(|(name, values)| {
            let score = gini_impurity(values.values().copied());
            let mut vs: Vec<(&str, usize)> = values.into_iter().collect();
            vs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            Facet { name: name.to_string(), values: vs.into_iter().map(|(v, _)| v.to_string()).collect(), score }
        })
        .collect();
    list.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).unwrap_or(core::cmp::Ordering::Equal).then_with(|| a.name.cmp(&b.name))
    });
    list.truncate(k);
    FacetList { facets: list }
}

/// Facets proposed by an external generator, before grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedFacet {
    pub name: String,
    #[serde(default)]
    pub values: Vec<String>,
}

/// Keeps only facets whose attribute exists in the graph; values are
/// restricted to known ones (all known values when none survive). Returns the
/// grounded list and the number of facets dropped.
pub fn ground_facets(proposed: &[ProposedFacet], kg: &KnowledgeGraph) -> (FacetList, usize) {
    let mut dropped = 0;
    let mut seen = BTreeSet::new();
    let mut facets = Vec::new();
    for (rank, p) in proposed.iter().enumerate() {
        let name = p.name.trim().to_lowercase();
        if !kg.has_attribute(&name) || !seen.insert(name.clone()) {
            dropped += 1;
            continue;
        }
        let known = kg.all_values(&name);
        let mut values: Vec<String> = Vec::new();
        for v in &p.values {
            let v = v.trim().to_lowercase();
            if known.contains(&v) && !values.contains(&v) {
                values.push(v);
            }
        }
        if values.is_empty() {
            values = known;
        }
        facets.push(Facet { name, values, score: -(rank as f64) });
    }
    (FacetList { facets }, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AttributeSpec, Product};
    use crate::rng;

    fn cand(name: &str, f: &[f64]) -> CandidateFacet {
        CandidateFacet { name: name.into(), values: vec!["v".into()], features: f.to_vec() }
    }

    fn uniform3() -> (FacetPolicyParams, Vec<CandidateFacet>) {
        let p = FacetPolicyParams { weights: vec![0.0, 0.0], temperature: 1.0 };
        (p, vec![cand("a", &[1.0, 0.0]), cand("b", &[0.0, 1.0]), cand("c", &[1.0, 1.0])])
    }

    #[test]
    fn uniform_scores_give_uniform_pairs() {
        let (p, c) = uniform3();
        let (list, lp) = sample_facet_list(&p, &c, 2, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(list.len(), 2);
        assert!((lp - (-1.791759)).abs() < 1e-6);
        let direct = list_logprob(&p, &c, &FacetList::from_names(&["c", "a"])).unwrap();
        assert!((direct - ((1.0f64 / 3.0).ln() + 0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_has_zero_logprob() {
        let p = FacetPolicyParams { weights: vec![0.3], temperature: 1.0 };
        let (list, lp) = sample_facet_list(&p, &[cand("a", &[2.0])], 1, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(list.names(), ["a"]);
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn too_many_requested() {
        let (p, c) = uniform3();
        assert!(matches!(
            sample_facet_list(&p, &c, 4, &mut rng::stream(1, &[])),
            Err(Error::NotEnoughCandidates { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn logprob_rejects_unknown_or_repeated() {
        let (p, c) = uniform3();
        assert!(matches!(list_logprob(&p, &c, &FacetList::from_names(&["z"])), Err(Error::UnknownCandidate(_))));
        assert!(matches!(list_logprob(&p, &c, &FacetList::from_names(&["a", "a"])), Err(Error::DuplicateEntry(_))));
    }

    #[test]
    fn sampled_logprob_matches_recomputation() {
        let p = FacetPolicyParams { weights: vec![0.7, -1.3], temperature: 0.8 };
        let c = vec![cand("a", &[1.0, 0.2]), cand("b", &[0.1, 1.0]), cand("c", &[0.5, 0.5]), cand("d", &[0.9, 0.0])];
        let mut r = rng::stream(9, &[]);
        for _ in 0..50 {
            let (list, lp) = sample_facet_list(&p, &c, 3, &mut r).unwrap();
            assert!((list_logprob(&p, &c, &list).unwrap() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = FacetPolicyParams { weights: vec![0.7, -1.3], temperature: 1.0 };
        let c = vec![cand("a", &[1.0, 0.2]), cand("b", &[0.1, 1.0]), cand("c", &[0.5, 0.5])];
        let a = sample_facet_list(&p, &c, 3, &mut rng::stream(5, &[1])).unwrap();
        let b = sample_facet_list(&p, &c, 3, &mut rng::stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = vec![0.4, -0.9, 1.1];
        let feats = vec![vec![1.0, 0.2, 0.0], vec![0.3, 1.0, 0.5], vec![0.0, 0.4, 1.0], vec![0.7, 0.7, 0.1]];
        let order = [2, 0];
        let (_, g) = plackett_luce_logprob_grad(&w, 0.7, &feats, &order);
        for i in 0..w.len() {
            let h = 1e-6;
            let mut up = w.clone();
            up[i] += h;
            let mut dn = w.clone();
            dn[i] -= h;
            let fd = (plackett_luce_logprob(&up, 0.7, &feats, &order) - plackett_luce_logprob(&dn, 0.7, &feats, &order))
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn rule_based_examples() {
        let spec = |p| AttributeSpec { values: vec!["x".into()], prior: p };
        let mut kg = KnowledgeGraph::default();
        kg.categories.insert("dress".into(), BTreeMap::from([("color".into(), spec(0.4)), ("size".into(), spec(0.9))]));
        kg.categories.insert("lamp".into(), BTreeMap::from([("zeta".into(), spec(0.5)), ("alpha".into(), spec(0.5))]));
        assert_eq!(rule_based_facets(&kg, "dress", 5).names(), ["size", "color"]);
        assert!(rule_based_facets(&kg, "sofa", 5).is_empty());
        assert_eq!(rule_based_facets(&kg, "lamp", 5).names(), ["alpha", "zeta"]);
    }

    fn product(id: &str, attrs: &[(&str, &str)]) -> Product {
        Product {
            id: id.into(),
            title: "t".into(),
            category: "dress".into(),
            attrs: attrs.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect(),
            popularity: 0.5,
        }
    }

    #[test]
    fn gini_examples() {
        let catalog = Catalog::new(vec![
            product("p1", &[("color", "red"), ("size", "s")]),
            product("p2", &[("color", "blue"), ("size", "s")]),
        ]);
        let results: Vec<RankedResult> =
            ["p1", "p2"].iter().map(|d| RankedResult { doc_id: d.to_string(), score: 1.0 }).collect();
        let list = gini_rank_facets(&results, &catalog, 5);
        assert_eq!(list.names(), ["color", "size"]);
        assert!((list.facets[0].score - 0.5).abs() < 1e-15);
        assert_eq!(list.facets[1].score, 0.0);
        assert!(gini_rank_facets(&[], &catalog, 5).is_empty());
    }

    #[test]
    fn grounding_drops_invented_names() {
        let mut kg = KnowledgeGraph::default();
        kg.categories.insert(
            "dress".into(),
            BTreeMap::from([("color".into(), AttributeSpec { values: vec!["red".into()], prior: 1.0 })]),
        );
        let proposed = vec![
            ProposedFacet { name: "color".into(), values: vec!["red".into(), "sparkly".into()] },
            ProposedFacet { name: "vibe".into(), values: vec![] },
            ProposedFacet { name: "aura".into(), values: vec![] },
        ];
        let (list, dropped) = ground_facets(&proposed, &kg);
        assert_eq!(list.names(), ["color"]);
        assert_eq!(list.facets[0].values, ["red"]);
        assert_eq!(dropped, 2);
    }
}
