//! End-to-end experiment steps shared by the command line and the tests.

use anyhow::Context;
use facetloop_core::catalog::generate_catalog;
use facetloop_core::context::TrendTable;
use facetloop_core::evalsuite::{build_benchmark, run_ablation_suite, Artifacts, Report};
use facetloop_core::pipeline::{FacetStrategy, Pipeline, RefineStrategy};
use facetloop_core::reward::CtrModel;
use facetloop_core::trainer::{
    bootstrap_ctr, build_distill_dataset, mean_policy_kl, mean_policy_reward, train_grpo, train_sft, GrpoRun, PolicyParams,
    RewardMix, RolloutEnv, SftRun, SimEnv, TrainConfig,
};
use facetloop_core::usersim::generate_trends;
use facetloop_core::SearchEnv;

use crate::config::Config;
use crate::io;

/// Offset from the run seed for the benchmark sessions, keeping them apart
/// from every training stream.
pub const BENCHMARK_SEED_OFFSET: u64 = 100;
/// Offset for held-out reward and KL estimates.
pub const HELD_OUT_SEED_OFFSET: u64 = 999;
pub const HELD_OUT_SESSIONS: usize = 200;
pub const HELD_OUT_SAMPLES: usize = 8;

/// Catalog, graph, index and trend table for one run.
pub struct World {
    pub env: SearchEnv,
    pub trends: TrendTable,
}

impl World {
    pub fn generate(config: &Config) -> anyhow::Result<Self> {
        config.catalog.validate()?;
        let (catalog, kg) = generate_catalog(&config.catalog);
        let trends = generate_trends(&kg, config.catalog.seed);
        Ok(Self { env: SearchEnv::new(catalog, kg), trends })
    }

    /// Reads the world named in `config.paths`; the index is rebuilt when no
    /// index file is given and trends default to empty.
    pub fn load(config: &Config) -> anyhow::Result<Self> {
        let p = &config.paths;
        let catalog = io::read_catalog(p.catalog.as_deref().context("no catalog path (use --catalog)")?)?;
        let kg = io::read_kg(p.kg.as_deref().context("no knowledge graph path (use --kg)")?)?;
        let problems = catalog.validate(&kg);
        anyhow::ensure!(problems.is_empty(), "catalog does not match the graph: {}", problems.join("; "));
        let env = match &p.index {
            Some(path) => {
                let index = io::read_index(path)?;
                anyhow::ensure!(index.doc_ids().len() == catalog.len(), "index was built from a different catalog");
                SearchEnv::with_index(catalog, kg, index)
            }
            None => SearchEnv::new(catalog, kg),
        };
        let trends = match &p.trends {
            Some(path) => io::read_trends(path)?,
            None => TrendTable::default(),
        };
        Ok(Self { env, trends })
    }

    pub fn sim<'a>(&'a self, config: &'a Config) -> SimEnv<'a> {
        SimEnv { env: &self.env, trends: Some(&self.trends), sim: &config.sim, reward: &config.reward }
    }
}

/// Click model fitted on rule-baseline sessions.
pub fn bootstrap_click_model(world: &World, config: &Config) -> anyhow::Result<CtrModel> {
    let rule = Pipeline::new(&world.env, FacetStrategy::Rule, RefineStrategy::Boolean);
    Ok(bootstrap_ctr(&world.sim(config), &rule, &CtrModel::default(), config.run.ctr_bootstrap_sessions, config.train.seed)?)
}

pub fn sft(world: &World, config: &Config) -> anyhow::Result<SftRun> {
    let data = build_distill_dataset(&world.sim(config), config.train.distill_size, config.train.seed)?;
    Ok(train_sft(&PolicyParams::default(), &data, &config.train)?)
}

pub fn grpo(world: &World, config: &Config, init: &PolicyParams, ctr: &CtrModel, train: &TrainConfig) -> anyhow::Result<GrpoRun> {
    let renv = RolloutEnv { sim: world.sim(config), ctr: ctr.clone() };
    Ok(train_grpo(init, init, &renv, train)?)
}

/// Expected combined reward of `params` on held-out states.
pub fn held_out_reward(world: &World, config: &Config, ctr: &CtrModel, params: &PolicyParams) -> anyhow::Result<f64> {
    let renv = RolloutEnv { sim: world.sim(config), ctr: ctr.clone() };
    let seed = config.train.seed + HELD_OUT_SEED_OFFSET;
    Ok(mean_policy_reward(&renv, params, HELD_OUT_SESSIONS, HELD_OUT_SAMPLES, seed)?)
}

/// Mean KL to `reference` on held-out states.
pub fn held_out_kl(world: &World, config: &Config, ctr: &CtrModel, params: &PolicyParams, reference: &PolicyParams) -> anyhow::Result<f64> {
    let renv = RolloutEnv { sim: world.sim(config), ctr: ctr.clone() };
    let seed = config.train.seed + HELD_OUT_SEED_OFFSET;
    Ok(mean_policy_kl(&renv, params, reference, HELD_OUT_SESSIONS, seed)?)
}

/// Everything one seeded run trains.
pub struct Trained {
    pub sft: SftRun,
    pub ctr: CtrModel,
    pub full: GrpoRun,
    pub per_task: GrpoRun,
}

impl Trained {
    pub fn artifacts(&self) -> Artifacts {
        Artifacts {
            full: Some(self.full.params.clone()),
            sft_only: Some(self.sft.params.clone()),
            per_task: Some(self.per_task.params.clone()),
        }
    }
}

pub fn train_all(world: &World, config: &Config) -> anyhow::Result<Trained> {
    config.train.validate()?;
    let sft = sft(world, config)?;
    let ctr = bootstrap_click_model(world, config)?;
    let full = grpo(world, config, &sft.params, &ctr, &config.train)?;
    let per_task_cfg = TrainConfig { reward_mix: RewardMix::PerTask, ..config.train.clone() };
    let per_task = grpo(world, config, &sft.params, &ctr, &per_task_cfg)?;
    Ok(Trained { sft, ctr, full, per_task })
}

pub fn evaluate(world: &World, config: &Config, artifacts: &Artifacts, systems: &[&str]) -> anyhow::Result<Report> {
    let sim = world.sim(config);
    let bench = build_benchmark(&sim, config.run.benchmark_sessions, config.eval.seed + BENCHMARK_SEED_OFFSET)?;
    Ok(run_ablation_suite(&sim, &bench, artifacts, systems, &config.eval)?)
}

pub struct Experiment {
    pub trained: Trained,
    pub report: Report,
}

/// Generates the world, trains every artifact and runs the full ablation
/// suite, all from `config`.
pub fn run_experiment(config: &Config) -> anyhow::Result<(World, Experiment)> {
    let world = World::generate(config)?;
    let trained = train_all(&world, config)?;
    let report = evaluate(&world, config, &trained.artifacts(), &[])?;
    Ok((world, Experiment { trained, report }))
}
