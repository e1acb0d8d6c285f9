//! Search state and the facet/refinement strategies a session runs through.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::context::{RewriteContext, SessionContext};
use crate::facetgen::{self, feature, CandidateFacet, FacetList, FacetPolicyParams, FacetSelection};
use crate::lexindex::{boolean_filter_scored, tokenize};
use crate::reward::RewardConfig;
use crate::rewrite::{self, DecodeMode, RewritePolicyParams};
use crate::trainer;
use crate::usersim::LatentIntent;
use crate::{Result, SearchEnv};

/// Depth of the ranked pool that result-dependent features look at.
pub const POOL_DEPTH: usize = 100;

/// One user's position in the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    /// `ctx.query` is the current query; the KG view stays that of the
    /// opening query.
    pub ctx: SessionContext,
    pub category: Option<String>,
    pub clicks: Vec<FacetSelection>,
    /// Hard filters, boolean refinement only.
    pub filters: Vec<FacetSelection>,
    /// Top [`POOL_DEPTH`] `(ordinal, score)` pairs for the current query.
    pub ranking: Vec<(u32, f64)>,
}

impl SearchState {
    pub fn start(env: &SearchEnv, ctx: SessionContext) -> Self {
        let category = env.kg.infer_category(&tokenize(&ctx.query)).map(str::to_string);
        let mut ranking = env.index.score_all(&ctx.query);
        ranking.truncate(POOL_DEPTH);
        Self { ctx, category, clicks: Vec::new(), filters: Vec::new(), ranking }
    }

    pub fn query(&self) -> &str {
        &self.ctx.query
    }

    pub fn top_ids(&self, env: &SearchEnv, k: usize) -> Vec<String> {
        self.ranking.iter().take(k).map(|&(d, _)| env.index.doc_id(d).to_string()).collect()
    }

    pub fn pool(&self) -> Vec<u32> {
        self.ranking.iter().map(|&(d, _)| d).collect()
    }

    /// Mined candidates minus attributes already clicked.
    pub fn candidates(&self, env: &SearchEnv) -> Vec<CandidateFacet> {
        let mut c = facetgen::mine_candidates(&self.ctx, env, &self.pool());
        c.retain(|f| !self.clicks.iter().any(|s| s.name == f.name));
        c
    }

    pub fn rewrite_context(&self, selection: &FacetSelection) -> RewriteContext {
        RewriteContext {
            original_query: self.ctx.query.clone(),
            selection: selection.clone(),
            click_history: self.clicks.clone(),
        }
    }

    /// Moves to `q_prime` after clicking `selection`.
    pub fn apply_rewrite(&mut self, env: &SearchEnv, selection: &FacetSelection, q_prime: &str) {
        self.clicks.push(selection.clone());
        self.ctx.query = q_prime.to_string();
        self.ranking = env.index.score_all(q_prime);
        self.ranking.truncate(POOL_DEPTH);
    }

    /// Adds `selection` as a hard filter; the query is unchanged.
    pub fn apply_filter(&mut self, env: &SearchEnv, selection: &FacetSelection) {
        self.clicks.push(selection.clone());
        self.filters.push(selection.clone());
        self.ranking = boolean_filter_scored(&env.index, &env.catalog, &self.ctx.query, &self.filters, POOL_DEPTH);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FacetStrategy {
    Policy { params: FacetPolicyParams, decode: DecodeMode },
    /// Static category list by KG prior.
    Rule,
    /// Impurity ranking over the current results.
    Gini,
    /// Intent-aware teacher.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefineStrategy {
    Rewrite { params: RewritePolicyParams, decode: DecodeMode },
    Boolean,
    Oracle,
}

/// Facets as shown, with the candidate features each was scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct ShownFacets {
    pub list: FacetList,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Pipeline<'a> {
    pub env: &'a SearchEnv,
    pub facets: FacetStrategy,
    pub refine: RefineStrategy,
    pub reward: RewardConfig,
}

fn drop_clicked(list: FacetList, state: &SearchState, k: usize) -> FacetList {
    let mut facets: Vec<_> = list.facets.into_iter().filter(|f| !state.clicks.iter().any(|c| c.name == f.name)).collect();
    facets.truncate(k);
    FacetList { facets }
}

impl<'a> Pipeline<'a> {
    pub fn new(env: &'a SearchEnv, facets: FacetStrategy, refine: RefineStrategy) -> Self {
        Self { env, facets, refine, reward: RewardConfig::default() }
    }

    /// Up to `k` facets for `state`. `intent` is read by the oracle strategies
    /// only.
    pub fn show_facets<R: Rng + ?Sized>(
        &self,
        state: &SearchState,
        intent: &LatentIntent,
        k: usize,
        rng: &mut R,
    ) -> Result<ShownFacets> {
        let env = self.env;
        let candidates = state.candidates(env);
        let list = match &self.facets {
            FacetStrategy::Policy { params, decode } => {
                let kk = k.min(candidates.len());
                match decode {
                    DecodeMode::Sample => facetgen::sample_facet_list(params, &candidates, kk, rng)?.0,
                    DecodeMode::Argmax => facetgen::rank_facets(params, &candidates, kk),
                }
            }
            FacetStrategy::Rule => match &state.category {
                Some(c) => drop_clicked(facetgen::rule_based_facets(&env.kg, c, k + state.clicks.len()), state, k),
                None => FacetList::default(),
            },
            FacetStrategy::Gini => {
                let results = env.index.to_results(&state.ranking);
                drop_clicked(facetgen::gini_rank_facets(&results, &env.catalog, k + state.clicks.len()), state, k)
            }
            FacetStrategy::Oracle => trainer::gold_facets(env, state, intent, &candidates, k),
        };
        let features = list
            .facets
            .iter()
            .map(|f| match candidates.iter().find(|c| c.name == f.name) {
                Some(c) => c.features.clone(),
                None => {
                    let mut x = vec![0.0; feature::DIM];
                    x[feature::BIAS] = 1.0;
                    x
                }
            })
            .collect();
        Ok(ShownFacets { list, features })
    }

    /// Applies a click to `state` and returns the query now in force.
    pub fn refine<R: Rng + ?Sized>(
        &self,
        state: &mut SearchState,
        selection: &FacetSelection,
        intent: &LatentIntent,
        rng: &mut R,
    ) -> Result<String> {
        let env = self.env;
        match &self.refine {
            RefineStrategy::Rewrite { params, decode } => {
                let out = rewrite::decide_rewrite(params, &state.rewrite_context(selection), &env.kg, *decode, rng)?;
                state.apply_rewrite(env, selection, &out.query);
                Ok(out.query)
            }
            RefineStrategy::Boolean => {
                state.apply_filter(env, selection);
                Ok(state.query().to_string())
            }
            RefineStrategy::Oracle => {
                let gold = trainer::gold_rewrite(env, &self.reward, &state.rewrite_context(selection), intent)?;
                state.apply_rewrite(env, selection, &gold.query);
                Ok(gold.query)
            }
        }
    }
}
