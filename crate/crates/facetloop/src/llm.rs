//! Chat-completion client for the optional external-model paths.

use std::time::Duration;

use facetloop_core::catalog::KnowledgeGraph;
use facetloop_core::context::{RewriteContext, SessionContext};
use facetloop_core::context::{generation_slots, render_prompt, rewrite_slots, GENERATION_TEMPLATE, REWRITE_TEMPLATE};
use facetloop_core::facetgen::{ground_facets, FacetList, ProposedFacet};
use facetloop_core::rewrite::ground_rewrite;
use serde::{Deserialize, Serialize};

use crate::config::LlmConfig;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("response has no message content")]
    NoContent,
    #[error("unparseable facet payload: {raw}")]
    Parse { raw: String },
    #[error(transparent)]
    Prompt(#[from] facetloop_core::Error),
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl LlmClient {
    /// Reads the bearer token from the environment variable the config names.
    pub fn from_config(c: &LlmConfig) -> Self {
        Self {
            endpoint: c.endpoint.clone(),
            model: c.model.clone(),
            api_key: std::env::var(&c.api_key_env).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_millis(c.timeout_ms),
        }
    }

    /// Sends one user message and returns the first choice's text.
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let body = ChatRequest { model: &self.model, messages: vec![Message { role: "user", content: prompt }], temperature: 0.0 };
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp: ChatResponse = req
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        resp.choices.into_iter().next().and_then(|c| c.message.content).ok_or(LlmError::NoContent)
    }
}

fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Accepts a JSON array of `{name, values}` or an object with a `facets`
/// array, optionally inside a code fence.
pub fn parse_facet_payload(raw: &str) -> Result<Vec<ProposedFacet>, LlmError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Payload {
        List(Vec<ProposedFacet>),
        Wrapped { facets: Vec<ProposedFacet> },
    }
    match serde_json::from_str::<Payload>(strip_fence(raw)) {
        Ok(Payload::List(v)) | Ok(Payload::Wrapped { facets: v }) => Ok(v),
        Err(_) => Err(LlmError::Parse { raw: raw.to_string() }),
    }
}

/// Facets proposed by the model, kept only where the graph knows the
/// attribute. Returns the list and how many proposals were dropped.
pub fn llm_generate_facets(client: &LlmClient, prompt: &str, kg: &KnowledgeGraph) -> Result<(FacetList, usize), LlmError> {
    let raw = client.complete(prompt)?;
    let proposed = parse_facet_payload(&raw)?;
    let (list, dropped) = ground_facets(&proposed, kg);
    if dropped > 0 {
        log::warn!("dropped {dropped} facet(s) unknown to the knowledge graph");
    }
    Ok((list, dropped))
}

/// Renders the generation prompt for `ctx` and asks the model for facets.
pub fn llm_facets_for(client: &LlmClient, ctx: &SessionContext, kg: &KnowledgeGraph) -> Result<(FacetList, usize), LlmError> {
    let prompt = render_prompt(&GENERATION_TEMPLATE, &generation_slots(ctx))?;
    llm_generate_facets(client, &prompt, kg)
}

/// Raw rewrite from the model, trimmed.
pub fn llm_rewrite_raw(client: &LlmClient, rw: &RewriteContext) -> Result<String, LlmError> {
    let prompt = render_prompt(&REWRITE_TEMPLATE, &rewrite_slots(rw))?;
    Ok(client.complete(&prompt)?.trim().to_string())
}

/// Model rewrite guaranteed to mention the selected value.
pub fn llm_rewrite(client: &LlmClient, rw: &RewriteContext) -> Result<String, LlmError> {
    Ok(ground_rewrite(&llm_rewrite_raw(client, rw)?, rw))
}
