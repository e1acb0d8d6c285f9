#![allow(dead_code)]

use facetloop_core::catalog::{generate_catalog, CatalogConfig};
use facetloop_core::context::TrendTable;
use facetloop_core::reward::RewardConfig;
use facetloop_core::trainer::SimEnv;
use facetloop_core::usersim::{generate_trends, SimConfig};
use facetloop_core::SearchEnv;

pub struct World {
    pub env: SearchEnv,
    pub trends: TrendTable,
    pub sim: SimConfig,
    pub reward: RewardConfig,
}

impl World {
    pub fn new(seed: u64, products: usize) -> Self {
        Self::with_catalog(&CatalogConfig { seed, num_products: products, ..Default::default() })
    }

    pub fn with_catalog(config: &CatalogConfig) -> Self {
        let (catalog, kg) = generate_catalog(config);
        let trends = generate_trends(&kg, config.seed);
        Self { env: SearchEnv::new(catalog, kg), trends, sim: SimConfig::default(), reward: RewardConfig::default() }
    }

    pub fn sim_env(&self) -> SimEnv<'_> {
        SimEnv { env: &self.env, trends: Some(&self.trends), sim: &self.sim, reward: &self.reward }
    }
}
