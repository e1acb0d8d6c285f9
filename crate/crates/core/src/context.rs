//! Generation and rewrite contexts, prompt rendering and the external
//! knowledge provider interface.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::catalog::{kg_subgraph, AttributeSubgraph, KnowledgeGraph};
use crate::facetgen::FacetSelection;
use crate::lexindex::tokenize;
use crate::{Error, Result};

/// Upper bound on trend entries passed into a context.
pub const MAX_TRENDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Click,
    Cart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    pub kind: EventKind,
    pub product_id: String,
}

/// Everything facet generation conditions on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionContext {
    pub query: String,
    pub profile: Vec<(String, f64)>,
    /// Oldest first.
    pub behaviors: Vec<Behavior>,
    pub kg_view: AttributeSubgraph,
    pub web_trends: Vec<(String, f64)>,
}

/// Everything query rewriting conditions on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteContext {
    pub original_query: String,
    pub selection: FacetSelection,
    pub click_history: Vec<FacetSelection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderError {
    Timeout,
    Unavailable(String),
}

impl core::fmt::Display for ProviderError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ProviderError::Timeout => f.write_str("provider timed out"),
            ProviderError::Unavailable(m) => write!(f, "provider unavailable: {m}"),
        }
    }
}

/// Source of real-time trend terms for a query.
pub trait KnowledgeProvider: Send + Sync {
    fn lookup(&self, query: &str) -> core::result::Result<Vec<(String, f64)>, ProviderError>;
}

/// Provider that knows nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullProvider;

impl KnowledgeProvider for NullProvider {
    fn lookup(&self, _query: &str) -> core::result::Result<Vec<(String, f64)>, ProviderError> {
        Ok(Vec::new())
    }
}

/// In-memory map from query term to trend strings. The `i`-th trend of a term
/// gets weight `1/(i+1)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrendTable {
    pub terms: BTreeMap<String, Vec<String>>,
}

impl KnowledgeProvider for TrendTable {
    fn lookup(&self, query: &str) -> core::result::Result<Vec<(String, f64)>, ProviderError> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for tok in tokenize(query) {
            if let Some(trends) = self.terms.get(&tok) {
                for (i, t) in trends.iter().enumerate() {
                    if !out.iter().any(|(s, _)| s == t) {
                        out.push((t.clone(), 1.0 / (i as f64 + 1.0)));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl<P: KnowledgeProvider + ?Sized> KnowledgeProvider for Box<P> {
    fn lookup(&self, query: &str) -> core::result::Result<Vec<(String, f64)>, ProviderError> {
        (**self).lookup(query)
    }
}

/// Trends fetched for one query, with the degradation warning if any.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalKnowledge {
    pub trends: Vec<(String, f64)>,
    pub warning: Option<String>,
}

/// Looks up trends, truncating to [`MAX_TRENDS`] and clamping weights to
/// `[0,1]`. Provider failures degrade to an empty list plus a warning.
pub fn fetch_external_knowledge(provider: Option<&dyn KnowledgeProvider>, query: &str) -> ExternalKnowledge {
    let Some(provider) = provider else {
        return ExternalKnowledge::default();
    };
    match provider.lookup(query) {
        Ok(list) => ExternalKnowledge {
            trends: list
                .into_iter()
                .filter(|(_, w)| w.is_finite())
                .map(|(t, w)| (t, w.clamp(0.0, 1.0)))
                .take(MAX_TRENDS)
                .collect(),
            warning: None,
        },
        Err(e) => {
            let warning = format!("external knowledge unavailable for `{query}`: {e}");
            log::warn!("{warning}");
            ExternalKnowledge { trends: Vec::new(), warning: Some(warning) }
        }
    }
}

/// Builds the generation context; never fails on provider trouble.
pub fn assemble_generation_context(
    query: &str,
    profile: Vec<(String, f64)>,
    behaviors: Vec<Behavior>,
    kg: &KnowledgeGraph,
    provider: Option<&dyn KnowledgeProvider>,
) -> SessionContext {
    let kg_view = kg_subgraph(kg, &tokenize(query));
    let web_trends = fetch_external_knowledge(provider, query).trends;
    SessionContext { query: query.to_string(), profile, behaviors, kg_view, web_trends }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateId {
    Generation,
    Rewrite,
}

/// A prompt with `{slot}` placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub text: &'static str,
}

pub const GENERATION_TEMPLATE: PromptTemplate = PromptTemplate {
    id: TemplateId::Generation,
    text: "You are an AI assistant for an e-commerce search system. Based on the user's search context, generate a list of relevant facets (like product attributes) that can help them refine their search.\n\
User Query: {query}\n\
User Profile Interests: {user_profile}\n\
User Session Behaviors (clicks/carts): {user_behavior}\n\
Related Product Knowledge Graph: {kg_subgraph}\n\
Real-time Web Trends: {web_content}\n\
Generate a list of facets in JSON format, each with a name and possible values. Focus on attributes that are not obvious from the query alone and reflect current trends or specific user needs.\n\
Facets:\n",
};

pub const REWRITE_TEMPLATE: PromptTemplate = PromptTemplate {
    id: TemplateId::Rewrite,
    text: "You are an AI assistant for an e-commerce search system. A user has just clicked on a facet to refine their search. Rewrite the original query to better reflect their new intent for the retrieval engine.\n\
Original Query: {original_query}\n\
Selected Facet: {selected_facet_value} (from facet: {selected_facet_name})\n\
User Click History in this session: {click_history}\n\
Generate ONLY the rewritten query string that captures the user's refined intent. \n\
Rewritten Query:\n",
};

impl PromptTemplate {
    pub fn for_id(id: TemplateId) -> Self {
        match id {
            TemplateId::Generation => GENERATION_TEMPLATE,
            TemplateId::Rewrite => REWRITE_TEMPLATE,
        }
    }

    /// Slot names in order of appearance.
    pub fn slots(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else { break };
            out.push(&rest[open + 1..open + close]);
            rest = &rest[open + close + 1..];
        }
        out
    }
}

/// Substitutes every `{slot}` of `template` in one pass.
pub fn render_prompt(template: &PromptTemplate, slots: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(template.text.len() + 256);
    let mut rest = template.text;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').map(|c| open + c).unwrap_or(rest.len());
        let name = &rest[open + 1..close];
        let value = slots.get(name).ok_or_else(|| Error::MissingSlot(name.to_string()))?;
        out.push_str(&rest[..open]);
        out.push_str(value);
        rest = &rest[(close + 1).min(rest.len())..];
    }
    out.push_str(rest);
    Ok(out)
}

fn join_pairs<I: IntoIterator<Item = String>>(items: I) -> String {
    items.into_iter().collect::<Vec<_>>().join(", ")
}

/// Slot values for the generation template.
pub fn generation_slots(ctx: &SessionContext) -> BTreeMap<&'static str, String> {
    let kind = |k: EventKind| match k {
        EventKind::Click => "click",
        EventKind::Cart => "cart",
    };
    BTreeMap::from([
        ("query", ctx.query.clone()),
        ("user_profile", join_pairs(ctx.profile.iter().map(|(t, w)| format!("{t}={w}")))),
        ("user_behavior", join_pairs(ctx.behaviors.iter().map(|b| format!("{}={}", kind(b.kind), b.product_id)))),
        (
            "kg_subgraph",
            join_pairs(ctx.kg_view.attributes.iter().map(|(a, vs)| format!("{a}={}", vs.join("|")))),
        ),
        ("web_content", join_pairs(ctx.web_trends.iter().map(|(t, w)| format!("{t}={w}")))),
    ])
}

/// Slot values for the rewrite template.
pub fn rewrite_slots(rw: &RewriteContext) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("original_query", rw.original_query.clone()),
        ("selected_facet_value", rw.selection.value.clone()),
        ("selected_facet_name", rw.selection.name.clone()),
        ("click_history", join_pairs(rw.click_history.iter().map(|s| format!("{}={}", s.name, s.value)))),
    ])
}
