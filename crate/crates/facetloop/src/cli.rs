//! Command-line entry point. Stages talk to each other only through files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use facetloop_core::context::KnowledgeProvider;
use facetloop_core::evalsuite::{system_for, Artifacts, ROWS};
use facetloop_core::lexindex::build_index;
use facetloop_core::pipeline::Pipeline;
use facetloop_core::rng::{self, tag};
use facetloop_core::trainer::{build_distill_dataset, train_sft, DistillRecord, PolicyParams, RewardMix};
use facetloop_core::usersim::{click_examples, harvest_preferences, refit_ctr, run_session, simulated_ctr_ucvr};

use crate::config::Config;
use crate::io::{self, Checkpoint};
use crate::provider::DeadlineProvider;
use crate::service::{FacetService, SystemClock};
use crate::workflow::{self, World};

#[derive(Debug, Parser)]
#[command(name = "facetloop", version, about = "Generative faceted search toolkit", subcommand_required = true, arg_required_else_help = true)]
pub struct Cli {
    /// Root seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file; defaults to $FACETLOOP_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct WorldArgs {
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub kg: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub trends: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mix {
    Joint,
    PerTask,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic catalog, its knowledge graph and a trend table.
    GenCatalog {
        #[arg(long)]
        products: Option<usize>,
        #[arg(long)]
        categories: Option<usize>,
        /// Catalog JSON Lines output.
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.kg.json`.
        #[arg(long)]
        kg_out: Option<PathBuf>,
        /// Defaults to `<out stem>.trends.json`.
        #[arg(long)]
        trends_out: Option<PathBuf>,
    },
    /// Build the inverted index of a catalog.
    Index {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label simulated states with the oracle teacher.
    Distill {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised fit of both policies on a distilled dataset.
    TrainSft {
        #[arg(long)]
        distill: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Group-relative policy optimisation from an SFT checkpoint.
    TrainGrpo {
        #[command(flatten)]
        world: WorldArgs,
        /// SFT checkpoint; also the KL reference.
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration JSON Lines log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long, value_enum)]
        reward_mix: Option<Mix>,
    },
    /// Run simulated sessions and write their event log.
    Simulate {
        #[command(flatten)]
        world: WorldArgs,
        /// Report row whose pipeline to run; learned rows read `--params`.
        #[arg(long, default_value = "full")]
        system: String,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        sessions: usize,
        #[arg(long)]
        out: PathBuf,
        /// Refit the click model on the harvested preferences and write it here.
        #[arg(long)]
        ctr_out: Option<PathBuf>,
    },
    /// Score systems on the synthetic benchmark.
    Eval {
        #[command(flatten)]
        world: WorldArgs,
        /// `all` or one row name.
        #[arg(long, default_value = "all")]
        ablation: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Checkpoint for the full pipeline.
        #[arg(long)]
        full: Option<PathBuf>,
        /// Checkpoint after SFT only.
        #[arg(long)]
        sft: Option<PathBuf>,
        /// Checkpoint trained with per-task rewards.
        #[arg(long)]
        per_task: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        cache_ttl_secs: Option<u64>,
        #[arg(long)]
        cache_capacity: Option<usize>,
        #[arg(long)]
        facet_k: Option<usize>,
    },
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn apply_world(config: &mut Config, w: WorldArgs) {
    set_path(&mut config.paths.catalog, w.catalog);
    set_path(&mut config.paths.kg, w.kg);
    set_path(&mut config.paths.index, w.index);
    set_path(&mut config.paths.trends, w.trends);
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("catalog");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn load_params(path: Option<&Path>) -> anyhow::Result<Checkpoint> {
    io::read_checkpoint(path.context("no parameter checkpoint given (use --params)")?)
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(config.seed) {
        config = config.with_seed(seed);
    }
    let seed = config.seed();
    match cli.command {
        Command::GenCatalog { products, categories, out, kg_out, trends_out } => {
            set(&mut config.catalog.num_products, products);
            set(&mut config.catalog.num_categories, categories);
            let world = World::generate(&config)?;
            let kg_out = kg_out.unwrap_or_else(|| sibling(&out, ".kg.json"));
            let trends_out = trends_out.unwrap_or_else(|| sibling(&out, ".trends.json"));
            io::write_catalog(&out, &world.env.catalog)?;
            io::write_json(&kg_out, &world.env.kg)?;
            io::write_json(&trends_out, &world.trends)?;
            log::info!("wrote {} products to {}", world.env.catalog.len(), out.display());
        }
        Command::Index { catalog, out } => {
            set_path(&mut config.paths.catalog, catalog);
            let path = config.paths.catalog.as_deref().context("no catalog path (use --catalog)")?;
            let index = build_index(&io::read_catalog(path)?);
            io::write_index(&out, &index)?;
            log::info!("indexed {} documents, {} terms", index.doc_count(), index.postings().len());
        }
        Command::Distill { world, size, out } => {
            apply_world(&mut config, world);
            set(&mut config.train.distill_size, size);
            let world = World::load(&config)?;
            let data = build_distill_dataset(&world.sim(&config), config.train.distill_size, seed)?;
            io::write_jsonl(&out, &data)?;
            log::info!("wrote {} records to {}", data.len(), out.display());
        }
        Command::TrainSft { distill, out, iterations, learning_rate, lambda } => {
            set(&mut config.train.sft_iterations, iterations);
            set(&mut config.train.sft_learning_rate, learning_rate);
            set(&mut config.train.lambda, lambda);
            config.train.validate()?;
            let data: Vec<DistillRecord> = io::read_jsonl(&distill)?;
            let run = train_sft(&PolicyParams::default(), &data, &config.train)?;
            log::info!(
                "sft loss {:.4} -> {:.4}",
                run.losses.first().copied().unwrap_or(f64::NAN),
                run.losses.last().copied().unwrap_or(f64::NAN)
            );
            io::write_checkpoint(&out, &Checkpoint::new(run.params, None, config.hash()))?;
        }
        Command::TrainGrpo { world, init, out, log: log_path, iterations, beta, learning_rate, group_size, reward_mix } => {
            apply_world(&mut config, world);
            set(&mut config.train.iterations, iterations);
            set(&mut config.train.beta, beta);
            set(&mut config.train.learning_rate, learning_rate);
            set(&mut config.train.group_size, group_size);
            if let Some(m) = reward_mix {
                config.train.reward_mix = match m {
                    Mix::Joint => RewardMix::Joint,
                    Mix::PerTask => RewardMix::PerTask,
                };
            }
            config.train.validate()?;
            let world = World::load(&config)?;
            let init = io::read_checkpoint(&init)?;
            let ctr = workflow::bootstrap_click_model(&world, &config)?;
            let run = workflow::grpo(&world, &config, &init.params, &ctr, &config.train)?;
            if let Some(path) = log_path {
                io::write_jsonl(&path, &run.log)?;
            }
            io::write_checkpoint(&out, &Checkpoint::new(run.params, Some(ctr), config.hash()))?;
        }
        Command::Simulate { world, system, params, sessions, out, ctr_out } => {
            apply_world(&mut config, world);
            let world = World::load(&config)?;
            let ck = params.as_deref().map(io::read_checkpoint).transpose()?;
            let p = ck.as_ref().map(|c| c.params.clone());
            let artifacts = Artifacts { full: p.clone(), sft_only: p.clone(), per_task: p };
            let (facets, refine) = system_for(&system, &artifacts)?;
            let pipeline = Pipeline { env: &world.env, facets, refine, reward: config.reward.clone() };
            let sim = world.sim(&config);
            let mut logs = Vec::with_capacity(sessions);
            for i in 0..sessions as u64 {
                let (intent, ctx) = sim.session(&mut rng::stream(seed, &[tag::SIMULATE, i, 0]))?;
                logs.push(run_session(&pipeline, &intent, &ctx, &config.sim, &mut rng::stream(seed, &[tag::SIMULATE, i, 1]))?);
            }
            io::write_jsonl(&out, &io::session_events("s", &logs)?)?;
            let (ctr, ucvr) = simulated_ctr_ucvr(&logs);
            log::info!("{sessions} sessions, facet CTR {ctr:.4}, UCVR {ucvr:.4}");
            if let Some(path) = ctr_out {
                let prior = ck.and_then(|c| c.ctr).unwrap_or_default();
                let refit = refit_ctr(&prior, &logs)?;
                let data = click_examples(&harvest_preferences(&logs));
                if !data.is_empty() {
                    log::info!("click-model log-loss {:.4} -> {:.4}", prior.log_loss(&data)?, refit.log_loss(&data)?);
                }
                io::write_json(&path, &refit)?;
            }
        }
        Command::Eval { world, ablation, format, full, sft, per_task, sessions, out } => {
            apply_world(&mut config, world);
            set(&mut config.run.benchmark_sessions, sessions);
            let systems: Vec<&str> = match ablation.as_str() {
                "all" => ROWS.to_vec(),
                name => vec![ROWS.iter().copied().find(|r| *r == name).with_context(|| {
                    format!("unknown ablation `{name}`; expected all or one of: {}", ROWS.join(", "))
                })?],
            };
            let read = |p: Option<PathBuf>| -> anyhow::Result<Option<PolicyParams>> {
                Ok(p.as_deref().map(io::read_checkpoint).transpose()?.map(|c| c.params))
            };
            let artifacts = Artifacts { full: read(full)?, sft_only: read(sft)?, per_task: read(per_task)? };
            let world = World::load(&config)?;
            let report = workflow::evaluate(&world, &config, &artifacts, &systems)?;
            let text = match format {
                Format::Text => report.to_text(),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Serve { world, params, bind, cache_ttl_secs, cache_capacity, facet_k } => {
            apply_world(&mut config, world);
            set_path(&mut config.paths.params, params);
            set(&mut config.service.bind, bind);
            set(&mut config.service.cache_ttl_secs, cache_ttl_secs);
            set(&mut config.service.cache_capacity, cache_capacity);
            set(&mut config.service.facet_k, facet_k);
            let world = World::load(&config)?;
            let ck = load_params(config.paths.params.as_deref())?;
            let trends: Arc<dyn KnowledgeProvider> = Arc::new(world.trends);
            let provider: Arc<dyn KnowledgeProvider> =
                Arc::new(DeadlineProvider::new(trends, Duration::from_millis(config.service.provider_timeout_ms)));
            let svc = FacetService::new(
                Arc::new(world.env),
                ck.params,
                Some(provider),
                config.service.clone(),
                Arc::new(SystemClock::default()),
            );
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(crate::http::serve(Arc::new(svc), &config.service.bind))?;
        }
    }
    Ok(())
}
