//! Synthetic product catalog and its category → attribute → value graph.

mod words;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lexindex::tokenize;
use crate::math;
use crate::rng::{self, tag};

pub use words::{ATTRIBUTES, CATEGORIES};

/// One catalog item. `attrs` holds the structured (possibly incomplete)
/// attribute annotations; values missing there are spelled out in the title.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    pub category: String,
    pub attrs: BTreeMap<String, String>,
    #[serde(rename = "pop")]
    pub popularity: f64,
}

/// Values and prior weight of one attribute within a category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub values: Vec<String>,
    pub prior: f64,
}

/// Category → attribute → (values, prior).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeGraph {
    pub categories: BTreeMap<String, BTreeMap<String, AttributeSpec>>,
}

/// Attribute → values restricted to the categories a query touches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeSubgraph {
    pub categories: Vec<String>,
    pub attributes: BTreeMap<String, Vec<String>>,
}

impl AttributeSubgraph {
    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

impl KnowledgeGraph {
    pub fn category(&self, name: &str) -> Option<&BTreeMap<String, AttributeSpec>> {
        self.categories.get(name)
    }

    pub fn attribute(&self, category: &str, attr: &str) -> Option<&AttributeSpec> {
        self.categories.get(category)?.get(attr)
    }

    /// True if any category declares `attr`.
    pub fn has_attribute(&self, attr: &str) -> bool {
        self.categories.values().any(|a| a.contains_key(attr))
    }

    /// Attribute names whose value lists (in any category) contain `token`.
    pub fn attributes_with_value(&self, token: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for attrs in self.categories.values() {
            for (name, spec) in attrs {
                if spec.values.iter().any(|v| v == token) {
                    out.insert(name.clone());
                }
            }
        }
        out
    }

    /// Union of value lists of `attr` across all categories, first-seen order.
    pub fn all_values(&self, attr: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for attrs in self.categories.values() {
            if let Some(spec) = attrs.get(attr) {
                for v in &spec.values {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }

    /// First query token naming a category.
    pub fn infer_category(&self, query_terms: &[String]) -> Option<&str> {
        query_terms
            .iter()
            .find_map(|t| self.categories.get_key_value(t.as_str()).map(|(k, _)| k.as_str()))
    }

    /// Checks the graph invariants, returning one message per violation.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (cat, attrs) in &self.categories {
            for (name, spec) in attrs {
                if spec.values.is_empty() {
                    errs.push(format!("{cat}/{name}: no values"));
                }
                if !(spec.prior.is_finite() && spec.prior >= 0.0) {
                    errs.push(format!("{cat}/{name}: bad prior {}", spec.prior));
                }
                let uniq: BTreeSet<&String> = spec.values.iter().collect();
                if uniq.len() != spec.values.len() {
                    errs.push(format!("{cat}/{name}: duplicate values"));
                }
            }
        }
        errs
    }
}

/// Products sorted by id, with an id lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    products: Vec<Product>,
    by_id: BTreeMap<String, usize>,
}

impl Catalog {
    /// Builds a catalog; products are re-ordered by ascending id.
    pub fn new(mut products: Vec<Product>) -> Self {
        products.sort_by(|a, b| a.id.cmp(&b.id));
        let by_id = products.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        Self { products, by_id }
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.by_id.get(id).map(|&i| &self.products[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Checks every product against the graph; empty when valid.
    pub fn validate(&self, kg: &KnowledgeGraph) -> Vec<String> {
        let mut errs = Vec::new();
        if self.by_id.len() != self.products.len() {
            errs.push("duplicate product ids".to_string());
        }
        for p in &self.products {
            let Some(attrs) = kg.category(&p.category) else {
                errs.push(format!("{}: unknown category {}", p.id, p.category));
                continue;
            };
            for (name, value) in &p.attrs {
                match attrs.get(name) {
                    None => errs.push(format!("{}: undeclared attribute {name}", p.id)),
                    Some(spec) if !spec.values.contains(value) => {
                        errs.push(format!("{}: value {value} not in {name}", p.id))
                    }
                    _ => {}
                }
            }
            if !(0.0..=1.0).contains(&p.popularity) {
                errs.push(format!("{}: popularity {}", p.id, p.popularity));
            }
        }
        errs
    }

    /// The full attribute assignment of every product, in catalog order:
    /// recorded `attrs` plus values recovered from title tokens.
    pub fn effective_attributes(&self, kg: &KnowledgeGraph) -> Vec<BTreeMap<String, String>> {
        self.products.iter().map(|p| effective_attributes(p, kg)).collect()
    }
}

/// Recorded attributes of `p` completed with attribute values named in its
/// title.
pub fn effective_attributes(p: &Product, kg: &KnowledgeGraph) -> BTreeMap<String, String> {
    let mut out = p.attrs.clone();
    let Some(attrs) = kg.category(&p.category) else {
        return out;
    };
    let tokens = tokenize(&p.title);
    for (name, spec) in attrs {
        if out.contains_key(name) {
            continue;
        }
        if let Some(v) = spec.values.iter().find(|v| tokens.iter().any(|t| t == *v)) {
            out.insert(name.clone(), v.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub num_products: usize,
    pub num_categories: usize,
    /// Inclusive range.
    pub attrs_per_category: (usize, usize),
    /// Inclusive range.
    pub values_per_attr: (usize, usize),
    pub seed: u64,
    /// Probability that a product's attribute is recorded in `attrs`.
    pub attr_fill_rate: f64,
    /// Probability that a recorded value is also repeated in the title.
    pub title_repeat_rate: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            num_products: 10_000,
            num_categories: 12,
            attrs_per_category: (12, 16),
            values_per_attr: (4, 7),
            seed: 1,
            attr_fill_rate: 0.7,
            title_repeat_rate: 0.2,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let (a0, a1) = self.attrs_per_category;
        let (v0, v1) = self.values_per_attr;
        if a0 == 0 || a0 > a1 || v0 == 0 || v0 > v1 {
            return Err(crate::Error::InvalidArgument("empty or inverted range".into()));
        }
        for r in [self.attr_fill_rate, self.title_repeat_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(crate::Error::InvalidArgument("rate outside [0,1]".into()));
            }
        }
        Ok(())
    }
}

fn category_name(i: usize) -> String {
    let base = CATEGORIES[i % CATEGORIES.len()];
    match i / CATEGORIES.len() {
        0 => base.to_string(),
        n => format!("{base}{}", n + 1),
    }
}

/// Generates a catalog and its knowledge graph. Pure function of `config`.
///
/// Attribute priors decay as `rank^-0.8` over a per-category random ranking;
/// popularity is Zipf(1.1) over a random product ranking.
pub fn generate_catalog(config: &CatalogConfig) -> (Catalog, KnowledgeGraph) {
    let mut rng = rng::stream(config.seed, &[tag::CATALOG]);
    let (a0, a1) = config.attrs_per_category;
    let (v0, v1) = config.values_per_attr;

    let mut kg = KnowledgeGraph::default();
    for c in 0..config.num_categories {
        let mut pool: Vec<usize> = (0..ATTRIBUTES.len()).collect();
        pool.shuffle(&mut rng);
        let n_attr = rng.random_range(a0..=a1).min(ATTRIBUTES.len());
        let mut attrs = BTreeMap::new();
        for (rank, &ai) in pool.iter().take(n_attr).enumerate() {
            let (name, all_values) = ATTRIBUTES[ai];
            let n_val = rng.random_range(v0..=v1).min(all_values.len());
            let mut picks: Vec<usize> = (0..all_values.len()).collect();
            picks.shuffle(&mut rng);
            let mut picks: Vec<usize> = picks.into_iter().take(n_val).collect();
            picks.sort_unstable();
            let values = picks.into_iter().map(|i| all_values[i].to_string()).collect();
            let prior = math::powf(rank as f64 + 1.0, -0.8);
            attrs.insert(name.to_string(), AttributeSpec { values, prior });
        }
        kg.categories.insert(category_name(c), attrs);
    }

    let cats: Vec<&String> = kg.categories.keys().collect();
    let mut ranks: Vec<usize> = (0..config.num_products).collect();
    ranks.shuffle(&mut rng);
    let mut products = Vec::with_capacity(config.num_products);
    if !cats.is_empty() {
        for (i, rank) in ranks.into_iter().enumerate() {
            let category = cats[rng.random_range(0..cats.len())].clone();
            let mut attrs = BTreeMap::new();
            let mut title_words: Vec<String> = Vec::new();
            for (name, spec) in &kg.categories[&category] {
                let value = spec.values[rng.random_range(0..spec.values.len())].clone();
                let recorded = rng.random_bool(config.attr_fill_rate);
                if !recorded || rng.random_bool(config.title_repeat_rate) {
                    title_words.push(value.clone());
                }
                if recorded {
                    attrs.insert(name.clone(), value);
                }
            }
            title_words.push(category.clone());
            products.push(Product {
                id: format!("p{i:05}"),
                title: title_words.join(" "),
                category,
                attrs,
                popularity: math::powf(rank as f64 + 1.0, -1.1),
            });
        }
    }
    (Catalog::new(products), kg)
}

/// Attributes (with values) of every category whose name or value tokens
/// intersect `query_terms`. Values shared by several categories are merged in
/// first-seen order.
pub fn kg_subgraph(kg: &KnowledgeGraph, query_terms: &[String]) -> AttributeSubgraph {
    let terms: BTreeSet<&str> = query_terms.iter().map(String::as_str).collect();
    let mut out = AttributeSubgraph::default();
    for (cat, attrs) in &kg.categories {
        let name_hit = tokenize(cat).iter().any(|t| terms.contains(t.as_str()));
        let value_hit = || {
            attrs
                .values()
                .flat_map(|s| s.values.iter())
                .any(|v| tokenize(v).iter().any(|t| terms.contains(t.as_str())))
        };
        if !(name_hit || value_hit()) {
            continue;
        }
        out.categories.push(cat.clone());
        for (name, spec) in attrs {
            let entry = out.attributes.entry(name.clone()).or_default();
            for v in &spec.values {
                if !entry.contains(v) {
                    entry.push(v.clone());
                }
            }
        }
    }
    out
}
