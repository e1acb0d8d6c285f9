//! Oracle distillation, joint supervised fitting and group-relative policy
//! optimization of the facet and rewrite policies.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{RewriteContext, SessionContext, TrendTable};
use crate::facetgen::{
    self, feature, CandidateFacet, Facet, FacetList, FacetPolicyParams, FacetSelection,
};
use crate::math;
use crate::pipeline::SearchState;
use crate::reward::{self, CtrModel, RewardConfig};
use crate::rewrite::{self, DecodeMode, RewriteAction, RewritePolicyParams};
use crate::rng::{self, tag};
use crate::usersim::{self, LatentIntent, SimConfig};
use crate::{Error, Result, SearchEnv};

/// An attribute is gold when its information gain about the intent reaches
/// this share of the target entropy.
pub const IG_SHARE: f64 = 0.25;
/// Gold list length when nothing is informative.
pub const FALLBACK_FACETS: usize = 3;
/// Largest candidate set whose list distribution is enumerated for KL.
pub const EXACT_KL_MAX_CANDIDATES: usize = 8;

/// Both policies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub facet: FacetPolicyParams,
    pub rewrite: RewritePolicyParams,
}

impl PolicyParams {
    pub fn dim(&self) -> usize {
        self.facet.weights.len() + self.rewrite.weights.len()
    }

    /// Facet weights then rewrite weights.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.facet.weights.clone();
        v.extend_from_slice(&self.rewrite.weights);
        v
    }

    /// Same shape and temperatures, weights from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: flat.len() });
        }
        let nf = self.facet.weights.len();
        let mut out = self.clone();
        out.facet.weights = flat[..nf].to_vec();
        out.rewrite.weights = flat[nf..].to_vec();
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMix {
    /// Both policies share advantages of `R_facet + R_query`.
    #[default]
    Joint,
    /// The facet policy sees `R_facet` advantages, the rewrite policy `R_query`.
    PerTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub group_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub clip_epsilon: Option<f64>,
    pub seed: u64,
    pub sft_learning_rate: f64,
    pub sft_iterations: usize,
    pub distill_size: usize,
    pub reward_mix: RewardMix,
    /// Generate group members concurrently when built with `parallel`.
    pub parallel_rollouts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            group_size: 8,
            beta: 0.04,
            learning_rate: 0.05,
            iterations: 500,
            clip_epsilon: None,
            seed: 1,
            sft_learning_rate: 0.1,
            sft_iterations: 25,
            distill_size: 1000,
            reward_mix: RewardMix::Joint,
            parallel_rollouts: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        let ok = self.lambda >= 0.0
            && self.beta >= 0.0
            && self.learning_rate.is_finite()
            && self.sft_learning_rate.is_finite()
            && self.clip_epsilon.is_none_or(|e| e > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!("invalid training config {self:?}")))
        }
    }
}

// ---------------------------------------------------------------------------
// Oracle teacher

/// Ordinals of products in the state's category consistent with every click.
pub fn consistent_set(env: &SearchEnv, state: &SearchState) -> Vec<u32> {
    env.catalog
        .products()
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            state.category.as_ref().is_none_or(|c| &p.category == c)
                && state.clicks.iter().all(|s| env.effective[*i].get(&s.name) == Some(&s.value))
        })
        .map(|(i, _)| i as u32)
        .collect()
}

/// Information gain of `attr` about target membership over `set`, and the
/// Gini impurity of its values there. Missing values form their own bucket.
pub fn information_gain(env: &SearchEnv, set: &[u32], is_target: &[bool], attr: &str) -> (f64, f64) {
    if set.is_empty() {
        return (0.0, 0.0);
    }
    let n = set.len() as f64;
    let pos = is_target.iter().filter(|t| **t).count() as f64;
    let h = math::bernoulli_entropy(pos / n);
    let mut buckets: BTreeMap<Option<&str>, (usize, usize)> = BTreeMap::new();
    for (d, t) in set.iter().zip(is_target) {
        let e = buckets.entry(env.value_of(*d, attr)).or_insert((0, 0));
        e.0 += 1;
        if *t {
            e.1 += 1;
        }
    }
    let mut cond = 0.0;
    let mut sq = 0.0;
    for (count, hits) in buckets.values() {
        let w = *count as f64 / n;
        cond += w * math::bernoulli_entropy(*hits as f64 / *count as f64);
        sq += w * w;
    }
    ((h - cond).max(0.0), 1.0 - sq)
}

fn by_prior(candidates: &[CandidateFacet], k: usize) -> FacetList {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (candidates[a].features[feature::KG_PRIOR], candidates[b].features[feature::KG_PRIOR]);
        pb.partial_cmp(&pa).unwrap_or(core::cmp::Ordering::Equal).then(candidates[a].name.cmp(&candidates[b].name))
    });
    FacetList {
        facets: idx
            .into_iter()
            .take(FALLBACK_FACETS.min(k))
            .map(|i| Facet {
                name: candidates[i].name.clone(),
                values: candidates[i].values.clone(),
                score: candidates[i].features[feature::KG_PRIOR],
            })
            .collect(),
    }
}

/// Candidates whose information gain about the intent reaches
/// [`IG_SHARE`] of the target entropy, by gain, then impurity, then name;
/// the top KG-prior candidates when none qualifies.
pub fn gold_facets(
    env: &SearchEnv,
    state: &SearchState,
    intent: &LatentIntent,
    candidates: &[CandidateFacet],
    k: usize,
) -> FacetList {
    let set = consistent_set(env, state);
    let is_target: Vec<bool> = set.iter().map(|d| intent.target_docs.contains(env.index.doc_id(*d))).collect();
    let pos = is_target.iter().filter(|t| **t).count();
    let h = if set.is_empty() { 0.0 } else { math::bernoulli_entropy(pos as f64 / set.len() as f64) };
    if h <= 1e-12 {
        return by_prior(candidates, k);
    }
    let mut scored: Vec<(usize, f64, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (ig, gini) = information_gain(env, &set, &is_target, &c.name);
            (i, ig, gini)
        })
        .filter(|&(_, ig, _)| ig >= IG_SHARE * h)
        .collect();
    if scored.is_empty() {
        return by_prior(candidates, k);
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(b.2.partial_cmp(&a.2).unwrap_or(core::cmp::Ordering::Equal))
            .then(candidates[a.0].name.cmp(&candidates[b.0].name))
    });
    FacetList {
        facets: scored
            .into_iter()
            .take(k)
            .map(|(i, ig, _)| Facet { name: candidates[i].name.clone(), values: candidates[i].values.clone(), score: ig })
            .collect(),
    }
}

/// The click the teacher expects: the first gold facet naming an open
/// constraint, else the first open constraint.
pub fn gold_selection(intent: &LatentIntent, gold: &FacetList, clicks: &[FacetSelection]) -> Option<FacetSelection> {
    let open: BTreeMap<&String, &String> = intent.unsatisfied(clicks).collect();
    gold.facets
        .iter()
        .find_map(|f| open.get(&f.name).map(|v| FacetSelection::new(f.name.clone(), (*v).clone())))
        .or_else(|| open.iter().next().map(|(a, v)| FacetSelection::new((*a).clone(), (*v).clone())))
}

/// Best action for a rewrite context by query reward.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldRewrite {
    pub actions: Vec<RewriteAction>,
    pub features: Vec<Vec<f64>>,
    pub index: usize,
    pub query: String,
    pub reward: f64,
}

/// Evaluates every action's rewritten query and keeps the first maximum.
pub fn gold_rewrite(env: &SearchEnv, config: &RewardConfig, rw: &RewriteContext, intent: &LatentIntent) -> Result<GoldRewrite> {
    let actions = rewrite::enumerate_actions(rw, &env.kg);
    let features: Vec<Vec<f64>> = actions.iter().map(|a| rewrite::action_features(rw, &env.kg, a)).collect();
    let mut best: Option<(usize, String, f64)> = None;
    for (i, a) in actions.iter().enumerate() {
        let q = rewrite::apply_action(&rw.original_query, &rw.selection, a);
        let r = reward::r_query(config, &env.index, &q, intent)?;
        if best.as_ref().is_none_or(|b| r > b.2) {
            best = Some((i, q, r));
        }
    }
    let (index, query, reward) = best.ok_or(Error::EmptyActions)?;
    Ok(GoldRewrite { actions, features, index, query, reward })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleLabel {
    pub candidates: Vec<CandidateFacet>,
    pub facets: FacetList,
    pub selection: Option<FacetSelection>,
    pub rewrite: Option<(RewriteContext, GoldRewrite)>,
}

/// Gold facets for `state`, the expected click and the best rewrite for it.
pub fn oracle_teacher(
    env: &SearchEnv,
    config: &RewardConfig,
    state: &SearchState,
    intent: &LatentIntent,
    k: usize,
) -> Result<OracleLabel> {
    let candidates = state.candidates(env);
    let facets = gold_facets(env, state, intent, &candidates, k);
    let selection = gold_selection(intent, &facets, &state.clicks);
    let rewrite = match &selection {
        Some(sel) => {
            let rw = state.rewrite_context(sel);
            let gold = gold_rewrite(env, config, &rw, intent)?;
            Some((rw, gold))
        }
        None => None,
    };
    Ok(OracleLabel { candidates, facets, selection, rewrite })
}

// ---------------------------------------------------------------------------
// Distillation dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub context: SessionContext,
    pub candidates: Vec<CandidateFacet>,
    pub gold_facets: FacetList,
    pub rewrite_context: RewriteContext,
    pub actions: Vec<RewriteAction>,
    pub action_features: Vec<Vec<f64>>,
    pub gold_action: usize,
}

/// Simulator settings the dataset, training and evaluation share.
#[derive(Debug, Clone, Copy)]
pub struct SimEnv<'a> {
    pub env: &'a SearchEnv,
    pub trends: Option<&'a TrendTable>,
    pub sim: &'a SimConfig,
    pub reward: &'a RewardConfig,
}

impl SimEnv<'_> {
    /// Draws an intent and a matching context.
    pub fn session<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(LatentIntent, SessionContext)> {
        let env = self.env;
        let intent = usersim::sample_intent_from(&env.catalog, &env.kg, &env.effective, self.trends, self.sim, rng)?;
        let ctx = usersim::sample_context(env, &intent, self.trends, self.sim, rng);
        Ok((intent, ctx))
    }
}

fn record_from(label: OracleLabel, state: &SearchState) -> Option<DistillRecord> {
    let (rw, gold) = label.rewrite?;
    if label.facets.is_empty() {
        return None;
    }
    Some(DistillRecord {
        context: state.ctx.clone(),
        candidates: label.candidates,
        gold_facets: label.facets,
        rewrite_context: rw,
        actions: gold.actions,
        action_features: gold.features,
        gold_action: gold.index,
    })
}

/// `n` teacher-labelled states. Each comes from a fresh simulated session:
/// its opening state, or with probability one half the state after the
/// teacher's first click and rewrite.
pub fn build_distill_dataset(sim: &SimEnv<'_>, n: usize, seed: u64) -> Result<Vec<DistillRecord>> {
    let env = sim.env;
    let k = sim.sim.facet_k;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng::stream(seed, &[tag::DISTILL, i as u64]);
        let mut record = None;
        for _ in 0..32 {
            let (intent, ctx) = sim.session(&mut rng)?;
            let mut state = SearchState::start(env, ctx);
            if rng.random_bool(0.5) {
                let first = oracle_teacher(env, sim.reward, &state, &intent, k)?;
                if let (Some(sel), Some((_, gold))) = (&first.selection, &first.rewrite) {
                    let mut next = state.clone();
                    next.apply_rewrite(env, sel, &gold.query);
                    if intent.unsatisfied(&next.clicks).next().is_some() {
                        state = next;
                    }
                }
            }
            let label = oracle_teacher(env, sim.reward, &state, &intent, k)?;
            record = record_from(label, &state);
            if record.is_some() {
                break;
            }
        }
        out.push(record.ok_or(Error::NoSatisfiableIntent)?);
    }
    Ok(out)
}

/// Automated validity check standing in for human review.
pub fn validate_record(record: &DistillRecord, kg: &crate::catalog::KnowledgeGraph) -> bool {
    let names = record.gold_facets.names();
    let unique = names.iter().collect::<alloc::collections::BTreeSet<_>>().len() == names.len();
    let grounded = names
        .iter()
        .all(|n| kg.has_attribute(n) && record.candidates.iter().any(|c| c.name == *n));
    let dims = record.candidates.iter().all(|c| c.features.len() == feature::DIM && c.features.iter().all(|x| x.is_finite()));
    let actions_ok = record.actions == rewrite::enumerate_actions(&record.rewrite_context, kg)
        && record.gold_action < record.actions.len()
        && record.action_features.len() == record.actions.len();
    !names.is_empty() && unique && grounded && dims && actions_ok
}

/// Fits the click model on `n` sessions served by `pipeline`; session `i`
/// draws from stream `(seed, i)`.
pub fn bootstrap_ctr(sim: &SimEnv<'_>, pipeline: &crate::pipeline::Pipeline<'_>, prior: &CtrModel, n: usize, seed: u64) -> Result<CtrModel> {
    let mut logs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng::stream(seed, &[tag::FLYWHEEL, i as u64]);
        let (intent, ctx) = sim.session(&mut rng)?;
        logs.push(usersim::run_session(pipeline, &intent, &ctx, sim.sim, &mut rng)?);
    }
    usersim::refit_ctr(prior, &logs)
}

// ---------------------------------------------------------------------------
// Supervised stage

/// Joint negative log-likelihood of one record and its gradient with respect
/// to the flat parameters.
pub fn sft_loss_grad(params: &PolicyParams, record: &DistillRecord, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let order = facetgen::resolve_order(&record.candidates, &record.gold_facets.names())?;
    for c in &record.candidates {
        if c.features.len() != params.facet.weights.len() {
            return Err(Error::DimensionMismatch { expected: params.facet.weights.len(), got: c.features.len() });
        }
    }
    if record.gold_action >= record.action_features.len() {
        return Err(Error::EmptyActions);
    }
    let (lp_f, g_f) =
        facetgen::plackett_luce_logprob_grad(&params.facet.weights, params.facet.temperature, &record.candidates, &order);
    let (lp_a, g_a) = rewrite::action_logprob_grad(
        &params.rewrite.weights,
        params.rewrite.temperature,
        &record.action_features,
        record.gold_action,
    );
    let mut grad: Vec<f64> = g_f.into_iter().map(|g| -g).collect();
    grad.extend(g_a.into_iter().map(|g| -lambda * g));
    Ok((-lp_f - lambda * lp_a, grad))
}

pub fn sft_loss(params: &PolicyParams, record: &DistillRecord, lambda: f64) -> Result<f64> {
    sft_loss_grad(params, record, lambda).map(|(l, _)| l)
}

/// Mean loss and gradient over a dataset.
pub fn mean_sft_loss_grad(params: &PolicyParams, dataset: &[DistillRecord], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.dim()];
    for r in dataset {
        let (l, g) = sft_loss_grad(params, r, lambda)?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = dataset.len() as f64;
    Ok((loss / n, grad.into_iter().map(|g| g / n).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRun {
    pub params: PolicyParams,
    /// Mean loss before each step, then after the last.
    pub losses: Vec<f64>,
}

/// Plain gradient descent on the mean joint loss.
pub fn train_sft(params: &PolicyParams, dataset: &[DistillRecord], config: &TrainConfig) -> Result<SftRun> {
    let mut p = params.clone();
    let mut losses = Vec::with_capacity(config.sft_iterations + 1);
    for it in 0..=config.sft_iterations {
        let (loss, grad) = mean_sft_loss_grad(&p, dataset, config.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, last_good: p.to_flat() });
        }
        losses.push(loss);
        if it == config.sft_iterations {
            break;
        }
        let flat: Vec<f64> = p.to_flat().iter().zip(&grad).map(|(w, g)| w - config.sft_learning_rate * g).collect();
        let next = p.with_flat(&flat)?;
        if !next.is_finite() {
            return Err(Error::Divergence { iteration: it, last_good: p.to_flat() });
        }
        p = next;
    }
    Ok(SftRun { params: p, losses })
}

// ---------------------------------------------------------------------------
// Group-relative optimization

/// `(r − mean) / std` with the population std; zeros for a flat group.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }
    let (mean, std) = math::mean_std(rewards);
    if std < 1e-12 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// KL between two softmax distributions given by logits, and its gradient
/// with respect to the first set of logits.
pub fn softmax_kl_grad(p_logits: &[f64], r_logits: &[f64]) -> (f64, Vec<f64>) {
    if p_logits.is_empty() {
        return (0.0, Vec::new());
    }
    let lp = math::logsumexp(p_logits);
    let lr = math::logsumexp(r_logits);
    let mut kl = 0.0;
    let mut terms = Vec::with_capacity(p_logits.len());
    for (zp, zr) in p_logits.iter().zip(r_logits) {
        let log_p = zp - lp;
        let log_r = zr - lr;
        let p = math::exp(log_p);
        kl += p * (log_p - log_r);
        terms.push((p, log_p - log_r));
    }
    let grad = terms.into_iter().map(|(p, d)| p * (d - kl)).collect();
    (kl.max(0.0), grad)
}

/// Calls `f` on every ordered `len`-subset of `0..n`.
fn for_each_list(n: usize, len: usize, f: &mut impl FnMut(&[usize])) {
    fn go(n: usize, len: usize, cur: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if cur.len() == len {
            f(cur);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(n, len, cur, used, f);
                cur.pop();
                used[i] = false;
            }
        }
    }
    go(n, len.min(n), &mut Vec::new(), &mut vec![false; n], f);
}

/// KL(π_p ‖ π_r) of the facet policy on one candidate set and its gradient in
/// the weights of `p`. Exact over ordered lists of length `list_len` up to
/// [`EXACT_KL_MAX_CANDIDATES`] candidates, first pick only above that.
pub fn facet_kl_grad<F: AsRef<[f64]>>(
    p: &FacetPolicyParams,
    r: &FacetPolicyParams,
    candidates: &[F],
    list_len: usize,
) -> (f64, Vec<f64>) {
    let d = p.weights.len();
    let n = candidates.len();
    if n == 0 || list_len == 0 {
        return (0.0, vec![0.0; d]);
    }
    if n <= EXACT_KL_MAX_CANDIDATES {
        let mut kl = 0.0;
        let mut grad = vec![0.0; d];
        for_each_list(n, list_len, &mut |order| {
            let (lp, g) = facetgen::plackett_luce_logprob_grad(&p.weights, p.temperature, candidates, order);
            let lr = facetgen::plackett_luce_logprob(&r.weights, r.temperature, candidates, order);
            let prob = math::exp(lp);
            kl += prob * (lp - lr);
            for (a, b) in grad.iter_mut().zip(g) {
                *a += prob * (lp - lr) * b;
            }
        });
        return (kl.max(0.0), grad);
    }
    let zp = facetgen::logits(&p.weights, p.temperature, candidates);
    let zr = facetgen::logits(&r.weights, r.temperature, candidates);
    let (kl, gz) = softmax_kl_grad(&zp, &zr);
    let mut grad = vec![0.0; d];
    for (c, g) in candidates.iter().zip(gz) {
        for (a, x) in grad.iter_mut().zip(c.as_ref()) {
            *a += g * x / p.temperature;
        }
    }
    (kl, grad)
}

/// Facet-policy KL on one candidate set.
pub fn kl_divergence<F: AsRef<[f64]>>(
    params_p: &FacetPolicyParams,
    params_ref: &FacetPolicyParams,
    candidates: &[F],
    list_len: usize,
) -> f64 {
    facet_kl_grad(params_p, params_ref, candidates, list_len).0
}

/// Rewrite-policy KL on one action set and its gradient.
pub fn action_kl_grad(p: &RewritePolicyParams, r: &RewritePolicyParams, features: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let zp: Vec<f64> = features.iter().map(|f| math::dot(&p.weights, f) / p.temperature).collect();
    let zr: Vec<f64> = features.iter().map(|f| math::dot(&r.weights, f) / r.temperature).collect();
    let (kl, gz) = softmax_kl_grad(&zp, &zr);
    let mut grad = vec![0.0; p.weights.len()];
    for (f, g) in features.iter().zip(gz) {
        for (a, x) in grad.iter_mut().zip(f) {
            *a += g * x / p.temperature;
        }
    }
    (kl, grad)
}

/// A sampled rewrite decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChoice {
    pub features: Vec<Vec<f64>>,
    pub chosen: usize,
}

/// One group member's trajectory: facet list, then the rewrite the click led
/// to (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub order: Vec<usize>,
    pub action: Option<ActionChoice>,
    pub reward_facet: f64,
    pub reward_query: f64,
}

impl Rollout {
    pub fn reward(&self) -> f64 {
        self.reward_facet + self.reward_query
    }
}

/// G trajectories from one state with their old-policy log-probabilities and
/// joint advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub candidates: Vec<Vec<f64>>,
    pub list_len: usize,
    pub rollouts: Vec<Rollout>,
    pub logprob_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    /// Fills log-probabilities under `old`, rewards and advantages.
    pub fn new(candidates: Vec<Vec<f64>>, list_len: usize, rollouts: Vec<Rollout>, old: &PolicyParams) -> Result<Self> {
        let rewards: Vec<f64> = rollouts.iter().map(Rollout::reward).collect();
        let advantages = compute_advantages(&rewards)?;
        let mut g = GroupRollout { candidates, list_len, rollouts, logprob_old: Vec::new(), rewards, advantages };
        g.logprob_old = (0..g.rollouts.len())
            .map(|i| {
                let (lp_f, _, lp_a, _) = trajectory_logprob(old, &g, i);
                lp_f + lp_a
            })
            .collect();
        Ok(g)
    }
}

/// `(facet lp, facet grad, action lp, action grad)` of rollout `i`; the action
/// parts are zero when there was no click.
fn trajectory_logprob(params: &PolicyParams, group: &GroupRollout, i: usize) -> (f64, Vec<f64>, f64, Vec<f64>) {
    let r = &group.rollouts[i];
    let (lp_f, g_f) =
        facetgen::plackett_luce_logprob_grad(&params.facet.weights, params.facet.temperature, &group.candidates, &r.order);
    match &r.action {
        Some(a) => {
            let (lp_a, g_a) =
                rewrite::action_logprob_grad(&params.rewrite.weights, params.rewrite.temperature, &a.features, a.chosen);
            (lp_f, g_f, lp_a, g_a)
        }
        None => (lp_f, g_f, 0.0, vec![0.0; params.rewrite.weights.len()]),
    }
}

/// Surrogate term `ρ·Â` (clipped when configured) and its derivative in `ρ`.
fn surrogate(ratio: f64, adv: f64, clip: Option<f64>) -> (f64, f64) {
    match clip {
        None => (ratio * adv, adv),
        Some(eps) => {
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            if ratio * adv <= clipped * adv {
                (ratio * adv, adv)
            } else {
                (clipped * adv, 0.0)
            }
        }
    }
}

/// Mean policy KL to the reference on the group's state: facet KL plus the
/// mean rewrite KL over clicking members.
pub fn group_kl_grad(params: &PolicyParams, reference: &PolicyParams, group: &GroupRollout) -> (f64, Vec<f64>) {
    let (kl_f, g_f) = facet_kl_grad(&params.facet, &reference.facet, &group.candidates, group.list_len);
    let mut kl_a = 0.0;
    let mut g_a = vec![0.0; params.rewrite.weights.len()];
    let with_action: Vec<&ActionChoice> = group.rollouts.iter().filter_map(|r| r.action.as_ref()).collect();
    if !with_action.is_empty() {
        let m = with_action.len() as f64;
        for a in with_action {
            let (k, g) = action_kl_grad(&params.rewrite, &reference.rewrite, &a.features);
            kl_a += k / m;
            for (x, y) in g_a.iter_mut().zip(g) {
                *x += y / m;
            }
        }
    }
    let mut grad = g_f;
    grad.extend(g_a);
    (kl_f + kl_a, grad)
}

/// Objective value, its gradient in the flat parameters, and the KL term.
///
/// Surrogate terms over group-centred advantages are accumulated as
/// `(ρ·Â − Â)`: the subtracted terms sum to zero, and the value is exactly 0
/// at `θ = θ_old = θ_ref` instead of a rounding residue.
pub fn grpo_objective_grad(
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    group: &GroupRollout,
    beta: f64,
    clip: Option<f64>,
    mix: RewardMix,
) -> Result<(f64, Vec<f64>, f64)> {
    let g = group.rollouts.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let nf = params.facet.weights.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; params.dim()];
    let (adv_f, adv_q) = match mix {
        RewardMix::Joint => (group.advantages.clone(), group.advantages.clone()),
        RewardMix::PerTask => (
            compute_advantages(&group.rollouts.iter().map(|r| r.reward_facet).collect::<Vec<_>>())?,
            compute_advantages(&group.rollouts.iter().map(|r| r.reward_query).collect::<Vec<_>>())?,
        ),
    };
    for i in 0..g {
        let (lp_f, g_f, lp_a, g_a) = trajectory_logprob(params, group, i);
        let (old_f, _, old_a, _) = trajectory_logprob(params_old, group, i);
        match mix {
            RewardMix::Joint => {
                let ratio = math::exp((lp_f - old_f) + (lp_a - old_a));
                if !ratio.is_finite() {
                    return Err(Error::NonFinite("importance ratio"));
                }
                let (v, dv) = surrogate(ratio, adv_f[i], clip);
                value += (v - adv_f[i]) / g as f64;
                let s = dv * ratio / g as f64;
                for (j, x) in g_f.iter().enumerate() {
                    grad[j] += s * x;
                }
                for (j, x) in g_a.iter().enumerate() {
                    grad[nf + j] += s * x;
                }
            }
            RewardMix::PerTask => {
                let ratio_f = math::exp(lp_f - old_f);
                let ratio_a = math::exp(lp_a - old_a);
                if !ratio_f.is_finite() || !ratio_a.is_finite() {
                    return Err(Error::NonFinite("importance ratio"));
                }
                let (v, dv) = surrogate(ratio_f, adv_f[i], clip);
                value += (v - adv_f[i]) / g as f64;
                for (j, x) in g_f.iter().enumerate() {
                    grad[j] += dv * ratio_f * x / g as f64;
                }
                if group.rollouts[i].action.is_some() {
                    let (v, dv) = surrogate(ratio_a, adv_q[i], clip);
                    value += v / g as f64;
                    for (j, x) in g_a.iter().enumerate() {
                        grad[nf + j] += dv * ratio_a * x / g as f64;
                    }
                }
            }
        }
    }
    let (kl, g_kl) = group_kl_grad(params, params_ref, group);
    value -= beta * kl;
    for (a, b) in grad.iter_mut().zip(g_kl) {
        *a -= beta * b;
    }
    Ok((value, grad, kl))
}

/// `(1/G)·Σ ρ_i·Â_i − β·KL(π_θ ‖ π_ref)`.
pub fn grpo_objective(
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    group: &GroupRollout,
    beta: f64,
) -> Result<f64> {
    grpo_objective_grad(params, params_old, params_ref, group, beta, None, RewardMix::Joint).map(|(v, _, _)| v)
}

/// Everything rollouts need besides the policy.
#[derive(Debug, Clone)]
pub struct RolloutEnv<'a> {
    pub sim: SimEnv<'a>,
    pub ctr: CtrModel,
}

/// A sampled session's opening state with the teacher's reference list.
#[derive(Debug, Clone)]
pub struct RolloutState {
    pub intent: LatentIntent,
    pub state: SearchState,
    pub candidates: Vec<CandidateFacet>,
    pub reference: FacetList,
}

impl RolloutEnv<'_> {
    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RolloutState> {
        let env = self.sim.env;
        let (intent, ctx) = self.sim.session(rng)?;
        let state = SearchState::start(env, ctx);
        let candidates = state.candidates(env);
        let reference = gold_facets(env, &state, &intent, &candidates, self.sim.sim.facet_k);
        Ok(RolloutState { intent, state, candidates, reference })
    }

    /// One trajectory under `params` drawing from `rng`.
    pub fn rollout<R: Rng + ?Sized>(&self, params: &PolicyParams, s: &RolloutState, rng: &mut R) -> Result<Rollout> {
        let env = self.sim.env;
        let cfg = self.sim.reward;
        let k = self.sim.sim.facet_k.min(s.candidates.len());
        let order = facetgen::sample_order(&params.facet.weights, params.facet.temperature, &s.candidates, k, rng)?;
        let list = facetgen::to_facet_list(&params.facet, &s.candidates, &order);
        let feats: Vec<Vec<f64>> = order.iter().map(|&i| s.candidates[i].features.clone()).collect();
        let reward_facet = if s.reference.is_empty() {
            0.0
        } else {
            reward::r_facet(cfg, &self.ctr, &list, &feats, &s.reference)?
        };
        let click = usersim::click_decision(&s.intent, &list, &s.state.clicks, self.sim.sim, rng);
        let (action, reward_query) = match click {
            Some((_, sel)) => {
                let out = rewrite::decide_rewrite(&params.rewrite, &s.state.rewrite_context(&sel), &env.kg, DecodeMode::Sample, rng)?;
                let ranked: Vec<String> =
                    env.index.search(&out.query, cfg.k_eval).into_iter().map(|r| r.doc_id).collect();
                let r = reward::r_query_ranked(cfg, &env.index, &ranked, &out.query, &s.intent)?;
                (Some(ActionChoice { features: out.features, chosen: out.index }), r)
            }
            None => {
                let ranked = s.state.top_ids(env, cfg.k_eval);
                (None, reward::r_query_ranked(cfg, &env.index, &ranked, s.state.query(), &s.intent)?)
            }
        };
        Ok(Rollout { order, action, reward_facet, reward_query })
    }

    /// `g` members for iteration `iter`; member `i` draws from stream
    /// `(seed, iter, i)`, so the concurrent schedule equals the sequential one.
    pub fn group(&self, params: &PolicyParams, s: &RolloutState, seed: u64, iter: u64, g: usize, parallel: bool) -> Result<Vec<Rollout>> {
        let member = |i: usize| self.rollout(params, s, &mut rng::stream(seed, &[tag::GRPO_MEMBER, iter, i as u64]));
        #[cfg(feature = "parallel")]
        if parallel {
            use rayon::prelude::*;
            return (0..g).into_par_iter().map(member).collect();
        }
        let _ = parallel;
        (0..g).map(member).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoLogRecord {
    pub iter: usize,
    pub mean_reward: f64,
    pub kl: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoRun {
    pub params: PolicyParams,
    pub log: Vec<GrpoLogRecord>,
}

/// Each iteration: snapshot θ_old, sample a session from stream
/// `(seed, iter)`, roll out a group, ascend the objective once.
pub fn train_grpo(params: &PolicyParams, reference: &PolicyParams, renv: &RolloutEnv<'_>, config: &TrainConfig) -> Result<GrpoRun> {
    config.validate()?;
    let mut p = params.clone();
    let mut log = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let old = p.clone();
        let mut srng = rng::stream(config.seed, &[tag::GRPO_SESSION, iter as u64]);
        let s = renv.sample_state(&mut srng)?;
        if s.candidates.is_empty() {
            log.push(GrpoLogRecord { iter, mean_reward: 0.0, kl: 0.0, loss: 0.0 });
            continue;
        }
        let rollouts = renv.group(&old, &s, config.seed, iter as u64, config.group_size, config.parallel_rollouts)?;
        let feats: Vec<Vec<f64>> = s.candidates.iter().map(|c| c.features.clone()).collect();
        let list_len = renv.sim.sim.facet_k.min(feats.len());
        let group = GroupRollout::new(feats, list_len, rollouts, &old)?;
        let (value, grad, kl) =
            grpo_objective_grad(&p, &old, reference, &group, config.beta, config.clip_epsilon, config.reward_mix)?;
        let flat: Vec<f64> = p.to_flat().iter().zip(&grad).map(|(w, g)| w + config.learning_rate * g).collect();
        let next = p.with_flat(&flat)?;
        if !next.is_finite() || !value.is_finite() {
            return Err(Error::Divergence { iteration: iter, last_good: p.to_flat() });
        }
        p = next;
        let (mean_reward, _) = math::mean_std(&group.rewards);
        log.push(GrpoLogRecord { iter, mean_reward, kl, loss: -value });
    }
    Ok(GrpoRun { params: p, log })
}

/// Expected combined reward of `params` on `n` held-out sessions, `samples`
/// trajectories each, with streams shared across compared policies.
pub fn mean_policy_reward(renv: &RolloutEnv<'_>, params: &PolicyParams, n: usize, samples: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let s = renv.sample_state(&mut rng::stream(seed, &[tag::EVAL, i as u64]))?;
        if s.candidates.is_empty() {
            continue;
        }
        for j in 0..samples {
            let r = renv.rollout(params, &s, &mut rng::stream(seed, &[tag::EVAL, i as u64, j as u64]))?;
            total += r.reward();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean facet-plus-rewrite KL to `reference` over `n` held-out opening states.
/// The rewrite part uses the teacher's expected click in each state.
pub fn mean_policy_kl(renv: &RolloutEnv<'_>, params: &PolicyParams, reference: &PolicyParams, n: usize, seed: u64) -> Result<f64> {
    let env = renv.sim.env;
    let mut total = 0.0;
    for i in 0..n {
        let s = renv.sample_state(&mut rng::stream(seed, &[tag::EVAL, i as u64]))?;
        let len = renv.sim.sim.facet_k.min(s.candidates.len());
        total += kl_divergence(&params.facet, &reference.facet, &s.candidates, len);
        if let Some(sel) = gold_selection(&s.intent, &s.reference, &s.state.clicks) {
            let rw = s.state.rewrite_context(&sel);
            let feats: Vec<Vec<f64>> =
                rewrite::enumerate_actions(&rw, &env.kg).iter().map(|a| rewrite::action_features(&rw, &env.kg, a)).collect();
            total += action_kl_grad(&params.rewrite, &reference.rewrite, &feats).0;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantages_example() {
        let a = compute_advantages(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        for (x, y) in a.iter().zip([-1.341641, -0.447214, 0.447214, 1.341641]) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(compute_advantages(&[0.3; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(compute_advantages(&[1.0]), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn kl_example() {
        // p = [0.5, 0.5], r = [0.25, 0.75] as one-hot candidates, k = 1
        let cands = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = FacetPolicyParams { weights: vec![0.0, 0.0], temperature: 1.0 };
        let r = FacetPolicyParams { weights: vec![0.0, 3f64.ln()], temperature: 1.0 };
        assert!((kl_divergence(&p, &r, &cands, 1) - 0.143841).abs() < 1e-6);
        assert_eq!(kl_divergence(&p, &p, &cands, 1), 0.0);
    }

    #[test]
    fn flat_roundtrip() {
        let p = PolicyParams::default();
        let flat: Vec<f64> = (0..p.dim()).map(|i| i as f64).collect();
        assert_eq!(p.with_flat(&flat).unwrap().to_flat(), flat);
        assert!(p.with_flat(&[1.0]).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let mut n = 0;
        for_each_list(4, 2, &mut |_| n += 1);
        assert_eq!(n, 12);
    }
}
