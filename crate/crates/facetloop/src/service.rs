//! Session-aware serving of the facet → select → search loop.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use facetloop_core::context::{assemble_generation_context, Behavior, KnowledgeProvider, SessionContext};
use facetloop_core::facetgen::{FacetList, FacetSelection};
use facetloop_core::pipeline::{FacetStrategy, Pipeline, RefineStrategy, SearchState, POOL_DEPTH};
use facetloop_core::rewrite::DecodeMode;
use facetloop_core::trainer::PolicyParams;
use facetloop_core::usersim::LatentIntent;
use facetloop_core::{rng, SearchEnv};
use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

/// Monotonic time source, injectable for expiry tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Clock that moves only when told to.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        self.0.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_millis(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Generative,
    Boolean,
}

impl std::str::FromStr for Mode {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, ApiError> {
        match s {
            "generative" => Ok(Mode::Generative),
            "boolean" => Ok(Mode::Boolean),
            other => Err(ApiError::BadRequest(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::BadRequest(_) => 400,
            ApiError::NotFound(_) => 404,
            ApiError::Conflict(_) => 409,
            ApiError::Internal(_) => 500,
        }
    }
}

impl From<facetloop_core::Error> for ApiError {
    fn from(e: facetloop_core::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheStatus {
    Hit,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetsRequest {
    pub session_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetsResponse {
    pub facets: FacetList,
    pub cache: CacheStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRequest {
    pub session_id: String,
    pub facet_name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub id: String,
    pub title: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectResponse {
    pub rewritten_query: String,
    pub results: Vec<ResultItem>,
    pub facets: FacetList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRequest {
    pub session_id: String,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResponse {
    pub session_id: String,
    pub mode: Mode,
}

type CacheKey = (String, String, u64);

struct CacheEntry {
    facets: FacetList,
    context: SessionContext,
    created: Duration,
}

/// Server-side state of one session.
pub struct Session {
    pub click_history: Vec<FacetSelection>,
    pub last_facets: Option<FacetList>,
    pub mode: Mode,
    pub created: Duration,
    pub updated: Duration,
    search: Option<SearchState>,
    cache_keys: Vec<CacheKey>,
}

impl Session {
    fn new(now: Duration) -> Self {
        Self {
            click_history: Vec::new(),
            last_facets: None,
            mode: Mode::default(),
            created: now,
            updated: now,
            search: None,
            cache_keys: Vec::new(),
        }
    }

    pub fn current_query(&self) -> Option<&str> {
        self.search.as_ref().map(SearchState::query)
    }
}

/// Stable hash of the personalization signals, so a change in any of them
/// misses the cache.
pub fn context_hash(profile: &[(String, f64)], behaviors: &[Behavior], trends: &[(String, f64)]) -> u64 {
    let text = serde_json::to_string(&(profile, behaviors, trends)).unwrap_or_default();
    rng::fnv1a(text.as_bytes())
}

const SWEEP_EVERY: Duration = Duration::from_secs(60);

pub struct FacetService {
    env: Arc<SearchEnv>,
    params: PolicyParams,
    provider: Option<Arc<dyn KnowledgeProvider>>,
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    cache: Mutex<LruCache<CacheKey, CacheEntry>>,
    last_sweep: Mutex<Duration>,
}

impl FacetService {
    pub fn new(
        env: Arc<SearchEnv>,
        params: PolicyParams,
        provider: Option<Arc<dyn KnowledgeProvider>>,
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let cap = NonZeroUsize::new(config.cache_capacity.max(1)).expect("nonzero");
        let now = clock.now();
        Self {
            env,
            params,
            provider,
            config,
            clock,
            sessions: Mutex::new(HashMap::new()),
            cache: Mutex::new(LruCache::new(cap)),
            last_sweep: Mutex::new(now),
        }
    }

    pub fn env(&self) -> &SearchEnv {
        &self.env
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn ttl(&self) -> Duration {
        Duration::from_secs(self.config.cache_ttl_secs)
    }

    fn idle(&self) -> Duration {
        Duration::from_secs(self.config.session_idle_secs)
    }

    fn pipeline(&self, mode: Mode) -> Pipeline<'_> {
        let facets = FacetStrategy::Policy { params: self.params.facet.clone(), decode: DecodeMode::Argmax };
        let refine = match mode {
            Mode::Generative => RefineStrategy::Rewrite { params: self.params.rewrite.clone(), decode: DecodeMode::Argmax },
            Mode::Boolean => RefineStrategy::Boolean,
        };
        Pipeline::new(&self.env, facets, refine)
    }

    /// Drops idle sessions at most once per minute.
    fn sweep(&self, now: Duration) {
        {
            let mut last = self.last_sweep.lock().expect("sweep lock");
            if now.saturating_sub(*last) < SWEEP_EVERY {
                return;
            }
            *last = now;
        }
        let idle = self.idle();
        let mut expired = Vec::new();
        self.sessions.lock().expect("sessions lock").retain(|_, s| {
            let keep = s.try_lock().map(|s| now.saturating_sub(s.updated) < idle).unwrap_or(true);
            if !keep {
                expired.push(Arc::clone(s));
            }
            keep
        });
        for s in expired {
            self.evict(&s);
        }
    }

    fn evict(&self, session: &Mutex<Session>) {
        let keys = match session.lock() {
            Ok(g) => g.cache_keys.clone(),
            Err(p) => p.into_inner().cache_keys.clone(),
        };
        let mut cache = self.cache.lock().expect("cache lock");
        for k in &keys {
            cache.pop(k);
        }
    }

    /// Live session handle; an idle-expired one counts as absent.
    fn session(&self, id: &str, create: bool, now: Duration) -> Option<Arc<Mutex<Session>>> {
        let mut map = self.sessions.lock().expect("sessions lock");
        if let Some(s) = map.get(id) {
            // A session busy with another request is alive by definition.
            let alive = match s.try_lock() {
                Ok(g) => now.saturating_sub(g.updated) < self.idle(),
                Err(std::sync::TryLockError::WouldBlock) => true,
                Err(std::sync::TryLockError::Poisoned(_)) => false,
            };
            if alive {
                return Some(Arc::clone(s));
            }
            if let Some(stale) = map.remove(id) {
                self.evict(&stale);
            }
        }
        if !create {
            return None;
        }
        let s = Arc::new(Mutex::new(Session::new(now)));
        map.insert(id.to_string(), Arc::clone(&s));
        Some(s)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    /// Click history of a live session.
    pub fn click_history(&self, id: &str) -> Option<Vec<FacetSelection>> {
        let s = self.session(id, false, self.clock.now())?;
        let g = s.lock().expect("session lock");
        Some(g.click_history.clone())
    }

    pub fn handle_facets(&self, req: &FacetsRequest) -> Result<FacetsResponse, ApiError> {
        let query = req.query.trim();
        if query.is_empty() {
            return Err(ApiError::BadRequest("empty query".into()));
        }
        if req.session_id.is_empty() {
            return Err(ApiError::BadRequest("empty session_id".into()));
        }
        let now = self.clock.now();
        self.sweep(now);
        let handle = self.session(&req.session_id, true, now).expect("created");
        let mut session = handle.lock().expect("session lock");
        session.updated = now;

        let ctx = assemble_generation_context(query, Vec::new(), Vec::new(), &self.env.kg, self.provider.as_deref());
        let key: CacheKey = (req.session_id.clone(), query.to_string(), context_hash(&ctx.profile, &ctx.behaviors, &ctx.web_trends));

        let cached = {
            let mut cache = self.cache.lock().expect("cache lock");
            match cache.get(&key) {
                Some(e) if now.saturating_sub(e.created) < self.ttl() => Some((e.facets.clone(), e.context.clone())),
                Some(_) => {
                    cache.pop(&key);
                    None
                }
                None => None,
            }
        };
        let (facets, status, ctx) = match cached {
            Some((facets, ctx)) => (facets, CacheStatus::Hit, ctx),
            None => {
                let state = SearchState::start(&self.env, ctx.clone());
                let shown = self.pipeline(session.mode).show_facets(&state, &LatentIntent::default(), self.config.facet_k, &mut rng::stream(0, &[]))?;
                self.cache.lock().expect("cache lock").put(
                    key.clone(),
                    CacheEntry { facets: shown.list.clone(), context: ctx.clone(), created: now },
                );
                session.cache_keys.push(key);
                (shown.list, CacheStatus::Miss, ctx)
            }
        };
        session.search = Some(SearchState::start(&self.env, ctx));
        session.last_facets = Some(facets.clone());
        Ok(FacetsResponse { facets, cache: status })
    }

    pub fn handle_select(&self, req: &SelectRequest) -> Result<SelectResponse, ApiError> {
        let now = self.clock.now();
        let handle = self
            .session(&req.session_id, false, now)
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{}`", req.session_id)))?;
        let mut session = handle.lock().expect("session lock");
        let shown = session
            .last_facets
            .as_ref()
            .ok_or_else(|| ApiError::Conflict("no facets have been shown in this session".into()))?;
        let facet = shown
            .get(&req.facet_name)
            .ok_or_else(|| ApiError::Conflict(format!("facet `{}` is not among those last shown", req.facet_name)))?;
        if !facet.values.contains(&req.value) {
            return Err(ApiError::Conflict(format!("value `{}` is not offered for `{}`", req.value, req.facet_name)));
        }
        session.updated = now;
        let selection = FacetSelection::new(&req.facet_name, &req.value);
        let pipeline = self.pipeline(session.mode);
        let intent = LatentIntent::default();
        let mut state = session.search.take().expect("facets shown implies a search state");
        let seed = rng::fnv1a(req.session_id.as_bytes());
        let depth = session.click_history.len() as u64;
        let refined = pipeline.refine(&mut state, &selection, &intent, &mut rng::stream(seed, &[depth]));
        let rewritten_query = match refined {
            Ok(q) => q,
            Err(e) => {
                session.search = Some(state);
                return Err(e.into());
            }
        };
        session.click_history.push(selection);
        {
            let mut cache = self.cache.lock().expect("cache lock");
            for k in session.cache_keys.drain(..) {
                cache.pop(&k);
            }
        }
        let results = self.items(&state.ranking, self.config.search_k);
        let next = pipeline.show_facets(&state, &intent, self.config.facet_k, &mut rng::stream(seed, &[depth, 1]))?;
        session.search = Some(state);
        session.last_facets = Some(next.list.clone());
        Ok(SelectResponse { rewritten_query, results, facets: next.list })
    }

    pub fn handle_search(&self, query: &str, k: Option<usize>) -> Result<SearchResponse, ApiError> {
        let k = k.unwrap_or(self.config.search_k);
        if k > POOL_DEPTH {
            return Err(ApiError::BadRequest(format!("k must be at most {POOL_DEPTH}")));
        }
        let scored = self.env.index.score_all(query);
        Ok(SearchResponse { results: self.items(&scored, k) })
    }

    pub fn handle_mode(&self, req: &ModeRequest) -> Result<ModeResponse, ApiError> {
        let mode: Mode = req.mode.parse()?;
        let now = self.clock.now();
        let handle = self
            .session(&req.session_id, false, now)
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{}`", req.session_id)))?;
        let mut s = handle.lock().expect("session lock");
        s.mode = mode;
        s.updated = now;
        Ok(ModeResponse { session_id: req.session_id.clone(), mode })
    }

    fn items(&self, scored: &[(u32, f64)], k: usize) -> Vec<ResultItem> {
        scored
            .iter()
            .take(k)
            .map(|&(d, score)| {
                let p = &self.env.catalog.products()[d as usize];
                ResultItem { id: p.id.clone(), title: p.title.clone(), score }
            })
            .collect()
    }
}
