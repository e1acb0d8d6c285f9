//! Latent-intent user simulator with a position-discounted click model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, KnowledgeGraph};
use crate::context::{assemble_generation_context, Behavior, EventKind, SessionContext, TrendTable};
use crate::facetgen::{FacetList, FacetSelection};
use crate::lexindex::tokenize;
use crate::pipeline::{Pipeline, SearchState};
use crate::rng::{self, tag};
use crate::{Error, Result, SearchEnv};

/// What the simulated user is actually looking for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentIntent {
    pub category: String,
    pub constraints: BTreeMap<String, String>,
    pub description: String,
    pub target_docs: BTreeSet<String>,
}

impl LatentIntent {
    /// Constraints not yet among `clicked`.
    pub fn unsatisfied<'a>(&'a self, clicked: &'a [FacetSelection]) -> impl Iterator<Item = (&'a String, &'a String)> {
        self.constraints
            .iter()
            .filter(move |(a, v)| !clicked.iter().any(|c| &c.name == *a && &c.value == *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub p_match: f64,
    pub gamma: f64,
    pub p_noise: f64,
    pub max_turns: usize,
    pub conversion_depth: usize,
    /// Facets shown per turn.
    pub facet_k: usize,
    /// Relative weights of 1, 2 and 3 constraint intents.
    pub constraint_weights: [f64; 3],
    /// Multiplier on the choice weight of trending attributes.
    pub trend_bonus: f64,
    /// Probability that an intent value shows up in the profile.
    pub profile_rate: f64,
    pub max_behaviors: usize,
    /// Share of behaviors unrelated to the intent.
    pub behavior_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p_match: 0.9,
            gamma: 0.85,
            p_noise: 0.02,
            max_turns: 5,
            conversion_depth: 10,
            facet_k: 10,
            constraint_weights: [0.45, 0.4, 0.15],
            trend_bonus: 8.0,
            profile_rate: 0.6,
            max_behaviors: 4,
            behavior_noise: 0.3,
        }
    }
}

fn weighted_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Attributes of `category` that some trend term for the category names.
pub fn trending_attributes(kg: &KnowledgeGraph, trends: &TrendTable, category: &str) -> BTreeSet<String> {
    let Some(attrs) = kg.category(category) else {
        return BTreeSet::new();
    };
    let mut out = BTreeSet::new();
    for term in trends.terms.get(category).into_iter().flatten() {
        for tok in tokenize(term) {
            for (name, spec) in attrs {
                if spec.values.contains(&tok) {
                    out.insert(name.clone());
                }
            }
        }
    }
    out
}

/// Trend terms per category naming attributes the category lacks.
pub const FOREIGN_TRENDS: usize = 2;

/// Per category: one value of each of 1–2 low-prior attributes (outside the
/// ten highest priors when possible), then values of [`FOREIGN_TRENDS`]
/// attributes the category lacks.
pub fn generate_trends(kg: &KnowledgeGraph, seed: u64) -> TrendTable {
    let mut rng = rng::stream(seed, &[tag::TRENDS]);
    let all_attrs: BTreeSet<String> = kg.categories.values().flat_map(|a| a.keys().cloned()).collect();
    let mut table = TrendTable::default();
    for (cat, attrs) in &kg.categories {
        let mut ranked: Vec<(&String, f64)> = attrs.iter().map(|(n, s)| (n, s.prior)).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal).then(a.0.cmp(b.0)));
        let cut = if ranked.len() > 10 { 10 } else { ranked.len() / 2 };
        let mut tail: Vec<&String> = ranked[cut..].iter().map(|(n, _)| *n).collect();
        tail.shuffle(&mut rng);
        let n_trend = rng.random_range(1..=2usize).min(tail.len());
        let mut terms = Vec::new();
        for name in tail.into_iter().take(n_trend) {
            let values = &attrs[name].values;
            terms.push(values[rng.random_range(0..values.len())].clone());
        }
        let mut foreign: Vec<&String> = all_attrs.iter().filter(|a| !attrs.contains_key(*a)).collect();
        foreign.shuffle(&mut rng);
        for name in foreign.into_iter().take(FOREIGN_TRENDS) {
            let values = kg.all_values(name);
            if !values.is_empty() {
                terms.push(values[rng.random_range(0..values.len())].clone());
            }
        }
        table.terms.insert(cat.clone(), terms);
    }
    table
}

/// Samples an intent from a seed product: 1–3 of its attribute values, the
/// attributes chosen by prior weight (boosted when trending).
pub fn sample_intent_from<R: Rng + ?Sized>(
    catalog: &Catalog,
    kg: &KnowledgeGraph,
    effective: &[BTreeMap<String, String>],
    trends: Option<&TrendTable>,
    config: &SimConfig,
    rng: &mut R,
) -> Result<LatentIntent> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    for _ in 0..64 {
        let seed_ix = rng.random_range(0..catalog.len());
        let seed = &catalog.products()[seed_ix];
        let attrs = &effective[seed_ix];
        let Some(spec) = kg.category(&seed.category) else { continue };
        let trending = trends.map(|t| trending_attributes(kg, t, &seed.category)).unwrap_or_default();
        let mut pool: Vec<(&String, f64)> = attrs
            .keys()
            .filter_map(|a| spec.get(a).map(|s| (a, s.prior)))
            .map(|(a, p)| (a, if trending.contains(a) { p * config.trend_bonus } else { p }))
            .collect();
        if pool.is_empty() {
            continue;
        }
        let n = (weighted_index(&config.constraint_weights, rng) + 1).min(pool.len());
        let mut constraints = BTreeMap::new();
        for _ in 0..n {
            let weights: Vec<f64> = pool.iter().map(|(_, w)| *w).collect();
            let (a, _) = pool.remove(weighted_index(&weights, rng));
            constraints.insert(a.clone(), attrs[a].clone());
        }
        let target_docs: BTreeSet<String> = catalog
            .products()
            .iter()
            .zip(effective)
            .filter(|(p, eff)| p.category == seed.category && constraints.iter().all(|(a, v)| eff.get(a) == Some(v)))
            .map(|(p, _)| p.id.clone())
            .collect();
        if target_docs.is_empty() {
            continue;
        }
        let mut description = seed.category.clone();
        for v in constraints.values() {
            description.push(' ');
            description.push_str(v);
        }
        return Ok(LatentIntent { category: seed.category.clone(), constraints, description, target_docs });
    }
    Err(Error::NoSatisfiableIntent)
}

/// Intent sampling with default settings and no trends.
pub fn sample_intent<R: Rng + ?Sized>(catalog: &Catalog, kg: &KnowledgeGraph, rng: &mut R) -> Result<LatentIntent> {
    let effective = catalog.effective_attributes(kg);
    sample_intent_from(catalog, kg, &effective, None, &SimConfig::default(), rng)
}

/// Profile tags, recent behaviors and trends consistent with `intent`.
pub fn sample_context<R: Rng + ?Sized>(
    env: &SearchEnv,
    intent: &LatentIntent,
    trends: Option<&TrendTable>,
    config: &SimConfig,
    rng: &mut R,
) -> SessionContext {
    let mut profile: Vec<(String, f64)> = Vec::new();
    for v in intent.constraints.values() {
        if rng.random_bool(config.profile_rate) {
            profile.push((v.clone(), rng.random_range(0.5..1.0)));
        }
    }
    let all_values: Vec<String> = env
        .kg
        .category(&intent.category)
        .map(|a| a.values().flat_map(|s| s.values.iter().cloned()).collect())
        .unwrap_or_default();
    if !all_values.is_empty() {
        for _ in 0..rng.random_range(0..=2usize) {
            let v = all_values[rng.random_range(0..all_values.len())].clone();
            if !profile.iter().any(|(t, _)| *t == v) {
                profile.push((v, rng.random_range(0.0..0.5)));
            }
        }
    }
    profile.shuffle(rng);

    let in_category: Vec<usize> = env
        .catalog
        .products()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.category == intent.category)
        .map(|(i, _)| i)
        .collect();
    let constraints: Vec<(&String, &String)> = intent.constraints.iter().collect();
    let mut behaviors = Vec::new();
    for _ in 0..rng.random_range(0..=config.max_behaviors) {
        let pool: Vec<usize> = if rng.random_bool(config.behavior_noise) || constraints.is_empty() {
            in_category.clone()
        } else {
            let (a, v) = constraints[rng.random_range(0..constraints.len())];
            in_category
                .iter()
                .copied()
                .filter(|&i| env.effective[i].get(a) == Some(v))
                .collect()
        };
        if pool.is_empty() {
            continue;
        }
        let i = pool[rng.random_range(0..pool.len())];
        let kind = if rng.random_bool(0.8) { EventKind::Click } else { EventKind::Cart };
        behaviors.push(Behavior { kind, product_id: env.catalog.products()[i].id.clone() });
    }
    let provider = trends.map(|t| t as &dyn crate::context::KnowledgeProvider);
    assemble_generation_context(&intent.category, profile, behaviors, &env.kg, provider)
}

/// Scans positions in order; a facet naming an unsatisfied constraint is
/// clicked with `p_match·γ^j` (0-based `j`), any other with `p_noise`. The
/// first success wins.
pub fn click_decision<R: Rng + ?Sized>(
    intent: &LatentIntent,
    facets: &FacetList,
    clicked: &[FacetSelection],
    config: &SimConfig,
    rng: &mut R,
) -> Option<(usize, FacetSelection)> {
    let open: BTreeMap<&String, &String> = intent.unsatisfied(clicked).collect();
    let mut discount = 1.0;
    for (j, f) in facets.facets.iter().enumerate() {
        let u: f64 = rng.random();
        if let Some(v) = open.get(&f.name) {
            if u < config.p_match * discount {
                return Some((j, FacetSelection::new(f.name.clone(), (*v).clone())));
            }
        } else if u < config.p_noise && !f.values.is_empty() {
            let v = f.values[rng.random_range(0..f.values.len())].clone();
            return Some((j, FacetSelection::new(f.name.clone(), v)));
        }
        discount *= config.gamma;
    }
    None
}

/// Shown facet with the features it was scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub name: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub impressions: Vec<Impression>,
    pub click: Option<(usize, FacetSelection)>,
    pub rewritten: Option<String>,
    pub top_k: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub intent: LatentIntent,
    /// Turn 0 is the initial retrieval and carries no impressions.
    pub turns: Vec<Turn>,
    pub converted: bool,
}

fn hits(top: &[String], intent: &LatentIntent, depth: usize) -> bool {
    top.iter().take(depth).any(|d| intent.target_docs.contains(d))
}

/// Runs the facet → click → refine → search loop. Facets are shown at least
/// once; afterwards the loop stops when the top results contain a target or
/// after `max_turns` facet turns.
pub fn run_session<R: Rng + ?Sized>(
    pipeline: &Pipeline<'_>,
    intent: &LatentIntent,
    ctx: &SessionContext,
    config: &SimConfig,
    rng: &mut R,
) -> Result<SessionLog> {
    let env = pipeline.env;
    let mut state = SearchState::start(env, ctx.clone());
    let depth = config.conversion_depth;
    let top = state.top_ids(env, depth);
    let mut converted = hits(&top, intent, depth);
    let mut turns = vec![Turn { query: state.query().to_string(), impressions: Vec::new(), click: None, rewritten: None, top_k: top }];
    for t in 0..config.max_turns {
        if t > 0 && converted {
            break;
        }
        let shown = pipeline.show_facets(&state, intent, config.facet_k, rng)?;
        let impressions: Vec<Impression> = shown
            .list
            .facets
            .iter()
            .zip(&shown.features)
            .map(|(f, x)| Impression { name: f.name.clone(), features: x.clone() })
            .collect();
        let query = state.query().to_string();
        let click = click_decision(intent, &shown.list, &state.clicks, config, rng);
        let mut rewritten = None;
        if let Some((_, sel)) = &click {
            rewritten = Some(pipeline.refine(&mut state, sel, intent, rng)?);
        }
        let top = state.top_ids(env, depth);
        converted |= hits(&top, intent, depth);
        turns.push(Turn { query, impressions, click, rewritten, top_k: top });
    }
    Ok(SessionLog { intent: intent.clone(), turns, converted })
}

/// A clicked facet preferred over one shown alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub session: usize,
    pub turn: usize,
    pub query: String,
    pub positive: Impression,
    pub negative: Impression,
}

pub fn harvest_preferences(logs: &[SessionLog]) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for (s, log) in logs.iter().enumerate() {
        for (t, turn) in log.turns.iter().enumerate() {
            let Some((pos, _)) = &turn.click else { continue };
            let Some(positive) = turn.impressions.get(*pos) else { continue };
            for (j, neg) in turn.impressions.iter().enumerate() {
                if j != *pos {
                    out.push(PreferencePair {
                        session: s,
                        turn: t,
                        query: turn.query.clone(),
                        positive: positive.clone(),
                        negative: neg.clone(),
                    });
                }
            }
        }
    }
    out
}

/// Labelled impressions from preference pairs: each turn's clicked facet once
/// as a positive, every paired facet as a negative.
pub fn click_examples(pairs: &[PreferencePair]) -> Vec<crate::reward::ClickExample> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in pairs {
        if seen.insert((p.session, p.turn)) {
            out.push(crate::reward::ClickExample { features: p.positive.features.clone(), clicked: true });
        }
        out.push(crate::reward::ClickExample { features: p.negative.features.clone(), clicked: false });
    }
    out
}

/// Refits `prior` on the clicks harvested from `logs`.
pub fn refit_ctr(prior: &crate::reward::CtrModel, logs: &[SessionLog]) -> Result<crate::reward::CtrModel> {
    let examples = click_examples(&harvest_preferences(logs));
    prior.fit(&examples, CTR_LEARNING_RATE, CTR_ITERATIONS, CTR_L2)
}

pub const CTR_LEARNING_RATE: f64 = 1.0;
pub const CTR_ITERATIONS: usize = 300;
pub const CTR_L2: f64 = 1e-3;

/// `(clicks / impressions, converted clicking sessions / clicking sessions)`,
/// zero for empty denominators.
pub fn simulated_ctr_ucvr(logs: &[SessionLog]) -> (f64, f64) {
    let mut impressions = 0usize;
    let mut clicks = 0usize;
    let mut clicking = 0usize;
    let mut converted = 0usize;
    for log in logs {
        let mut any = false;
        for t in &log.turns {
            impressions += t.impressions.len();
            if t.click.is_some() {
                clicks += 1;
                any = true;
            }
        }
        if any {
            clicking += 1;
            if log.converted {
                converted += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(clicks, impressions), ratio(converted, clicking))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, CatalogConfig, Product};
    use crate::facetgen::Facet;

    fn intent(constraints: &[(&str, &str)]) -> LatentIntent {
        LatentIntent {
            category: "dress".into(),
            constraints: constraints.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect(),
            description: "dress".into(),
            target_docs: BTreeSet::from(["p1".to_string()]),
        }
    }

    fn list(names: &[&str]) -> FacetList {
        FacetList {
            facets: names
                .iter()
                .map(|n| Facet { name: n.to_string(), values: vec!["x".into()], score: 0.0 })
                .collect(),
        }
    }

    #[test]
    fn no_match_no_noise_no_click() {
        let c = SimConfig { p_noise: 0.0, ..Default::default() };
        let mut r = rng::stream(1, &[]);
        for _ in 0..100 {
            assert!(click_decision(&intent(&[("color", "red")]), &list(&["size", "fit"]), &[], &c, &mut r).is_none());
        }
    }

    #[test]
    fn certain_click_at_top() {
        let c = SimConfig { p_match: 1.0, gamma: 1.0, ..Default::default() };
        let mut r = rng::stream(2, &[]);
        for _ in 0..100 {
            let got = click_decision(&intent(&[("color", "red")]), &list(&["color", "size"]), &[], &c, &mut r);
            assert_eq!(got, Some((0, FacetSelection::new("color", "red"))));
        }
    }

    #[test]
    fn satisfied_constraints_are_not_clicked_again() {
        let c = SimConfig { p_match: 1.0, gamma: 1.0, p_noise: 0.0, ..Default::default() };
        let done = [FacetSelection::new("color", "red")];
        let got = click_decision(&intent(&[("color", "red")]), &list(&["color"]), &done, &c, &mut rng::stream(1, &[]));
        assert!(got.is_none());
    }

    #[test]
    fn single_product_intent() {
        let p = Product {
            id: "p1".into(),
            title: "red dress".into(),
            category: "dress".into(),
            attrs: BTreeMap::new(),
            popularity: 1.0,
        };
        let mut kg = KnowledgeGraph::default();
        kg.categories.insert(
            "dress".into(),
            BTreeMap::from([(
                "color".into(),
                crate::catalog::AttributeSpec { values: vec!["red".into(), "blue".into()], prior: 1.0 },
            )]),
        );
        let it = sample_intent(&Catalog::new(vec![p]), &kg, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(it.target_docs, BTreeSet::from(["p1".to_string()]));
        assert_eq!(it.description, "dress red");
    }

    #[test]
    fn empty_catalog_fails() {
        let kg = KnowledgeGraph::default();
        assert!(matches!(sample_intent(&Catalog::new(vec![]), &kg, &mut rng::stream(1, &[])), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn intents_are_reproducible_and_satisfiable() {
        let (cat, kg) = generate_catalog(&CatalogConfig { num_products: 300, num_categories: 4, ..Default::default() });
        let a = sample_intent(&cat, &kg, &mut rng::stream(5, &[])).unwrap();
        let b = sample_intent(&cat, &kg, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(a, b);
        assert!((1..=3).contains(&a.constraints.len()));
    }

    #[test]
    fn trends_name_low_prior_and_foreign_attributes() {
        let (_, kg) = generate_catalog(&CatalogConfig { num_products: 0, num_categories: 6, ..Default::default() });
        let t = generate_trends(&kg, 3);
        assert_eq!(t, generate_trends(&kg, 3));
        for cat in kg.categories.keys() {
            let trending = trending_attributes(&kg, &t, cat);
            assert!((1..=2).contains(&trending.len()));
            let top10: Vec<String> = crate::facetgen::rule_based_facets(&kg, cat, 10).names().iter().map(|s| s.to_string()).collect();
            if kg.categories[cat].len() > 10 {
                assert!(trending.iter().all(|a| !top10.contains(a)));
            }
        }
    }

    #[test]
    fn ctr_ucvr_counting() {
        let imp = |n: usize| (0..n).map(|i| Impression { name: alloc::format!("a{i}"), features: vec![] }).collect();
        let turn = |n, click: bool| Turn {
            query: "q".into(),
            impressions: imp(n),
            click: click.then(|| (0, FacetSelection::new("a0", "x"))),
            rewritten: None,
            top_k: vec![],
        };
        let log = |turns, converted| SessionLog { intent: intent(&[]), turns, converted };
        assert_eq!(simulated_ctr_ucvr(&[log(vec![turn(0, false)], false)]), (0.0, 0.0));
        let logs = [log(vec![turn(5, true)], true), log(vec![turn(5, true)], true)];
        assert_eq!(simulated_ctr_ucvr(&logs), (0.2, 1.0));
        let pairs = harvest_preferences(&[log(vec![turn(10, true)], false)]);
        assert_eq!(pairs.len(), 9);
        assert!(harvest_preferences(&[log(vec![turn(10, false)], false)]).is_empty());
        assert_eq!(click_examples(&pairs).len(), 10);
    }
}
