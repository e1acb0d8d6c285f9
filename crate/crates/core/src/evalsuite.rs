//! Facet and ranking metrics, the synthetic benchmark and the ablation runner.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::context::SessionContext;
use crate::facetgen::FacetList;
use crate::math;
use crate::pipeline::{FacetStrategy, Pipeline, RefineStrategy, SearchState};
use crate::rewrite::DecodeMode;
use crate::rng::{self, tag};
use crate::trainer::{self, PolicyParams, SimEnv};
use crate::usersim::{self, LatentIntent, SessionLog};
use crate::{Error, Result};

fn name_hits(generated: &FacetList, gold: &FacetList, k: usize) -> usize {
    let gold: BTreeSet<&str> = gold.facets.iter().map(|f| f.name.as_str()).collect();
    let mut seen = BTreeSet::new();
    generated
        .facets
        .iter()
        .take(k)
        .filter(|f| seen.insert(f.name.as_str()) && gold.contains(f.name.as_str()))
        .count()
}

/// Gold hits among the top `k` generated names, over `k`.
pub fn precision_at_k(generated: &FacetList, gold: &FacetList, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(name_hits(generated, gold, k) as f64 / k as f64)
}

/// Gold hits among the top `k` generated names, over the gold size.
pub fn recall_at_k(generated: &FacetList, gold: &FacetList, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n_gold = gold.facets.iter().map(|f| f.name.as_str()).collect::<BTreeSet<_>>().len();
    if n_gold == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(name_hits(generated, gold, k) as f64 / n_gold as f64)
}

/// nDCG@k with linear gains; the ideal ordering is taken over every graded
/// document. Unlisted documents have grade 0.
pub fn ndcg_at_k(ranked: &[String], grades: &BTreeMap<String, u8>, k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(j, d)| f64::from(grades.get(d).copied().unwrap_or(0)) / math::log2(j as f64 + 2.0))
        .sum();
    let mut ideal: Vec<u8> = grades.values().copied().filter(|g| *g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(j, g)| f64::from(*g) / math::log2(j as f64 + 2.0))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSession {
    pub intent: LatentIntent,
    pub context: SessionContext,
    pub gold_facets: FacetList,
    /// Teacher rewrite of the expected first click.
    pub gold_rewrite: Option<String>,
    /// Grade 1 for every target document.
    pub grades: BTreeMap<String, u8>,
}

/// `n` simulated sessions labelled by the teacher. Session `i` draws from
/// stream `(seed, i)`.
pub fn build_benchmark(sim: &SimEnv<'_>, n: usize, seed: u64) -> Result<Vec<BenchmarkSession>> {
    (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, &[tag::BENCHMARK, i as u64]);
            let (intent, context) = sim.session(&mut rng)?;
            let state = SearchState::start(sim.env, context.clone());
            let label = trainer::oracle_teacher(sim.env, sim.reward, &state, &intent, sim.sim.facet_k)?;
            let grades = intent.target_docs.iter().map(|d| (d.clone(), 1u8)).collect();
            Ok(BenchmarkSession {
                gold_rewrite: label.rewrite.map(|(_, g)| g.query),
                gold_facets: label.facets,
                intent,
                context,
                grades,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    /// Facet turns in the nDCG interaction cycle.
    pub interaction_turns: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 10, interaction_turns: 3, seed: 1 }
    }
}

/// Row names in report order.
pub const ROWS: [&str; 7] =
    ["rule-based", "gini-rank", "zero-shot", "full", "w/o GRPO", "w/o multi-task SFT", "w/o rewriting"];
pub const BASELINE_ROW: &str = "rule-based";

/// Trained parameter sets the learned rows need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub full: Option<PolicyParams>,
    pub sft_only: Option<PolicyParams>,
    pub per_task: Option<PolicyParams>,
}

/// Facet and refinement strategy of row `name`.
pub fn system_for(name: &str, artifacts: &Artifacts) -> Result<(FacetStrategy, RefineStrategy)> {
    let need = |p: &Option<PolicyParams>| p.clone().ok_or_else(|| Error::MissingArtifact(name.to_string()));
    let policy = |p: PolicyParams| {
        (
            FacetStrategy::Policy { params: p.facet, decode: DecodeMode::Sample },
            RefineStrategy::Rewrite { params: p.rewrite, decode: DecodeMode::Sample },
        )
    };
    Ok(match name {
        "rule-based" => (FacetStrategy::Rule, RefineStrategy::Boolean),
        "gini-rank" => (FacetStrategy::Gini, RefineStrategy::Boolean),
        "zero-shot" => policy(PolicyParams::default()),
        "full" => policy(need(&artifacts.full)?),
        "w/o GRPO" => policy(need(&artifacts.sft_only)?),
        "w/o multi-task SFT" => policy(need(&artifacts.per_task)?),
        "w/o rewriting" => {
            let p = need(&artifacts.full)?;
            (FacetStrategy::Policy { params: p.facet, decode: DecodeMode::Sample }, RefineStrategy::Boolean)
        }
        other => return Err(Error::InvalidArgument(format!("unknown system `{other}`"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub p_at_10: f64,
    pub r_at_10: f64,
    pub ndcg_at_10: f64,
    pub ctr: f64,
    pub ucvr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDelta {
    pub system: String,
    pub p_at_10: Option<f64>,
    pub r_at_10: Option<f64>,
    pub ndcg_at_10: Option<f64>,
    pub ctr: Option<f64>,
    pub ucvr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub sessions: usize,
    pub rows: Vec<ReportRow>,
    pub deltas: Vec<RowDelta>,
}

/// `(x − base)/base`, `None` when the base is zero.
pub fn relative_delta(x: f64, base: f64) -> Option<f64> {
    if base == 0.0 {
        None
    } else {
        Some((x - base) / base)
    }
}

impl Report {
    pub fn new(baseline: &str, sessions: usize, rows: Vec<ReportRow>) -> Self {
        let base = rows.iter().find(|r| r.system == baseline).cloned();
        let deltas = match &base {
            Some(b) => rows
                .iter()
                .map(|r| RowDelta {
                    system: r.system.clone(),
                    p_at_10: relative_delta(r.p_at_10, b.p_at_10),
                    r_at_10: relative_delta(r.r_at_10, b.r_at_10),
                    ndcg_at_10: relative_delta(r.ndcg_at_10, b.ndcg_at_10),
                    ctr: relative_delta(r.ctr, b.ctr),
                    ucvr: relative_delta(r.ucvr, b.ucvr),
                })
                .collect(),
            None => Vec::new(),
        };
        Self { baseline: baseline.to_string(), sessions, rows, deltas }
    }

    pub fn row(&self, system: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// Aligned plain-text table; deltas against the baseline in brackets.
    pub fn to_text(&self) -> String {
        let pct = |d: Option<f64>| match d {
            Some(v) => format!("{:+.1}%", v * 100.0),
            None => "n/a".to_string(),
        };
        let mut out = format!(
            "{:<20} {:>16} {:>16} {:>16} {:>16} {:>16}\n",
            "system", "P@10", "R@10", "nDCG@10", "CTR", "UCVR"
        );
        for r in &self.rows {
            let d = self.deltas.iter().find(|d| d.system == r.system);
            let cell = |v: f64, dv: Option<f64>| {
                if r.system == self.baseline || d.is_none() {
                    format!("{v:.4}")
                } else {
                    format!("{v:.4} ({})", pct(dv))
                }
            };
            out.push_str(&format!(
                "{:<20} {:>16} {:>16} {:>16} {:>16} {:>16}\n",
                r.system,
                cell(r.p_at_10, d.and_then(|d| d.p_at_10)),
                cell(r.r_at_10, d.and_then(|d| d.r_at_10)),
                cell(r.ndcg_at_10, d.and_then(|d| d.ndcg_at_10)),
                cell(r.ctr, d.and_then(|d| d.ctr)),
                cell(r.ucvr, d.and_then(|d| d.ucvr)),
            ));
        }
        out.push_str(&format!("sessions: {}, deltas relative to {}\n", self.sessions, self.baseline));
        out
    }
}

/// Per-session outcome of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionScore {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub log: SessionLog,
}

/// Scores one session. Facet metrics use the opening list; nDCG is taken
/// after an interaction cycle of up to `interaction_turns` facet turns that
/// ends early once every constraint is clicked. Each turn's facet, click and
/// refinement draws come from their own streams so systems share randomness.
pub fn score_session(
    pipeline: &Pipeline<'_>,
    sim: &SimEnv<'_>,
    session: &BenchmarkSession,
    index: usize,
    config: &EvalConfig,
) -> Result<SessionScore> {
    let env = pipeline.env;
    let s = index as u64;
    let mut state = SearchState::start(env, session.context.clone());
    let mut precision = 0.0;
    let mut recall = 0.0;
    for t in 0..config.interaction_turns {
        if session.intent.unsatisfied(&state.clicks).next().is_none() {
            break;
        }
        let turn = t as u64;
        let shown = pipeline.show_facets(&state, &session.intent, config.k, &mut rng::stream(config.seed, &[tag::EVAL, s, turn, 0]))?;
        if t == 0 {
            precision = precision_at_k(&shown.list, &session.gold_facets, config.k)?;
            recall = recall_at_k(&shown.list, &session.gold_facets, config.k)?;
        }
        let click = usersim::click_decision(
            &session.intent,
            &shown.list,
            &state.clicks,
            sim.sim,
            &mut rng::stream(config.seed, &[tag::EVAL, s, turn, 1]),
        );
        if let Some((_, sel)) = click {
            pipeline.refine(&mut state, &sel, &session.intent, &mut rng::stream(config.seed, &[tag::EVAL, s, turn, 2]))?;
        }
    }
    let ndcg = ndcg_at_k(&state.top_ids(env, config.k), &session.grades, config.k);
    let log = usersim::run_session(
        pipeline,
        &session.intent,
        &session.context,
        sim.sim,
        &mut rng::stream(config.seed, &[tag::SIMULATE, s]),
    )?;
    Ok(SessionScore { precision, recall, ndcg, log })
}

/// Scores every session for one system and aggregates a row.
pub fn evaluate_system(
    name: &str,
    pipeline: &Pipeline<'_>,
    sim: &SimEnv<'_>,
    benchmark: &[BenchmarkSession],
    config: &EvalConfig,
) -> Result<(ReportRow, Vec<SessionLog>)> {
    let score = |(i, s): (usize, &BenchmarkSession)| score_session(pipeline, sim, s, i, config);
    #[cfg(feature = "parallel")]
    let scores: Vec<SessionScore> = {
        use rayon::prelude::*;
        benchmark.par_iter().enumerate().map(score).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let scores: Vec<SessionScore> = benchmark.iter().enumerate().map(score).collect::<Result<_>>()?;
    let n = scores.len().max(1) as f64;
    let logs: Vec<SessionLog> = scores.iter().map(|s| s.log.clone()).collect();
    let (ctr, ucvr) = usersim::simulated_ctr_ucvr(&logs);
    let row = ReportRow {
        system: name.to_string(),
        p_at_10: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        r_at_10: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        ndcg_at_10: scores.iter().map(|s| s.ndcg).sum::<f64>() / n,
        ctr,
        ucvr,
    };
    Ok((row, logs))
}

/// Evaluates the named rows (all of [`ROWS`] when `systems` is empty) over
/// identical sessions and streams.
pub fn run_ablation_suite(
    sim: &SimEnv<'_>,
    benchmark: &[BenchmarkSession],
    artifacts: &Artifacts,
    systems: &[&str],
    config: &EvalConfig,
) -> Result<Report> {
    let names: Vec<&str> = if systems.is_empty() { ROWS.to_vec() } else { systems.to_vec() };
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let (facets, refine) = system_for(name, artifacts)?;
        let pipeline = Pipeline { env: sim.env, facets, refine, reward: sim.reward.clone() };
        rows.push(evaluate_system(name, &pipeline, sim, benchmark, config)?.0);
    }
    Ok(Report::new(BASELINE_ROW, benchmark.len(), rows))
}
