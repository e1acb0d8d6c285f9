mod common;

use std::collections::{BTreeMap, BTreeSet};

use facetloop_core::catalog::{AttributeSpec, Catalog, KnowledgeGraph, Product};
use facetloop_core::context::{RewriteContext, SessionContext};
use facetloop_core::facetgen::{feature, plackett_luce_logprob, CandidateFacet, FacetList, FacetPolicyParams, FacetSelection};
use facetloop_core::pipeline::SearchState;
use facetloop_core::reward::{r_query, CtrModel, RewardConfig};
use facetloop_core::rewrite::{action_logprob_grad, apply_action, enumerate_actions, RewritePolicyParams};
use facetloop_core::rng;
use facetloop_core::trainer::{
    build_distill_dataset, gold_facets, gold_rewrite, grpo_objective_grad, kl_divergence, sft_loss, train_grpo, train_sft,
    validate_record, DistillRecord, GroupRollout, PolicyParams, RewardMix, RolloutEnv, TrainConfig,
};
use facetloop_core::usersim::LatentIntent;
use facetloop_core::SearchEnv;
use rand::Rng;

fn product(id: &str, title: &str, attrs: &[(&str, &str)]) -> Product {
    Product {
        id: id.into(),
        title: title.into(),
        category: "dress".into(),
        attrs: attrs.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect(),
        popularity: 0.5,
    }
}

/// Eight dresses covering every combination of three binary attributes.
fn cube() -> SearchEnv {
    let spec = |values: &[&str], prior: f64| AttributeSpec { values: values.iter().map(|s| s.to_string()).collect(), prior };
    let mut attrs = BTreeMap::new();
    attrs.insert("color".to_string(), spec(&["red", "blue"], 0.2));
    attrs.insert("size".to_string(), spec(&["small", "large"], 0.9));
    attrs.insert("material".to_string(), spec(&["cotton", "silk"], 0.5));
    let kg = KnowledgeGraph { categories: [("dress".to_string(), attrs)].into_iter().collect() };
    let mut products = Vec::new();
    for (i, c) in ["red", "blue"].iter().enumerate() {
        for (j, s) in ["small", "large"].iter().enumerate() {
            for (k, m) in ["cotton", "silk"].iter().enumerate() {
                let id = format!("p{}", i * 4 + j * 2 + k);
                products.push(product(&id, "dress", &[("color", c), ("size", s), ("material", m)]));
            }
        }
    }
    SearchEnv::new(Catalog::new(products), kg)
}

fn intent(env: &SearchEnv, constraints: &[(&str, &str)]) -> LatentIntent {
    let constraints: BTreeMap<String, String> = constraints.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect();
    let target_docs: BTreeSet<String> = env
        .catalog
        .products()
        .iter()
        .enumerate()
        .filter(|(i, _)| constraints.iter().all(|(a, v)| env.value_of(*i as u32, a) == Some(v)))
        .map(|(_, p)| p.id.clone())
        .collect();
    let description = constraints.values().cloned().collect::<Vec<_>>().join(" ") + " dress";
    LatentIntent { category: "dress".into(), constraints, description, target_docs }
}

fn opening(env: &SearchEnv) -> (SearchState, Vec<CandidateFacet>) {
    let ctx = facetloop_core::context::assemble_generation_context("dress", vec![], vec![], &env.kg, None);
    let state = SearchState::start(env, ctx);
    let cands = state.candidates(env);
    (state, cands)
}

#[test]
fn teacher_puts_the_only_informative_attribute_first() {
    let env = cube();
    let (state, cands) = opening(&env);
    let gold = gold_facets(&env, &state, &intent(&env, &[("color", "red")]), &cands, 10);
    assert_eq!(gold.names(), ["color"]);
}

#[test]
fn teacher_falls_back_to_prior_order() {
    let env = cube();
    let (state, cands) = opening(&env);
    let gold = gold_facets(&env, &state, &intent(&env, &[]), &cands, 10);
    assert_eq!(gold.names(), ["size", "material", "color"]);
}

#[test]
fn gold_rewrite_is_the_exhaustive_argmax() {
    let mut products = Vec::new();
    let colors = ["red", "blue", "green", "black"];
    for i in 0..20 {
        let c = colors[i % 4];
        // half the items only mention the colour in the title
        let attrs: Vec<(&str, &str)> = if i % 2 == 0 { vec![("color", c)] } else { vec![] };
        let title = if i % 2 == 0 { "linen dress".to_string() } else { format!("{c} linen dress") };
        products.push(product(&format!("d{i:02}"), &title, &attrs));
    }
    let mut attrs = BTreeMap::new();
    attrs.insert(
        "color".to_string(),
        AttributeSpec { values: colors.iter().map(|s| s.to_string()).collect(), prior: 1.0 },
    );
    let kg = KnowledgeGraph { categories: [("dress".to_string(), attrs)].into_iter().collect() };
    let env = SearchEnv::new(Catalog::new(products), kg);
    let config = RewardConfig::default();
    for (query, value) in [("linen dress", "red"), ("blue linen dress", "green"), ("dress", "black")] {
        let it = intent(&env, &[("color", value)]);
        let rw = RewriteContext {
            original_query: query.into(),
            selection: FacetSelection::new("color", value),
            click_history: vec![],
        };
        let gold = gold_rewrite(&env, &config, &rw, &it).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut best_q = String::new();
        for a in enumerate_actions(&rw, &env.kg) {
            let q = apply_action(query, &rw.selection, &a);
            let r = r_query(&config, &env.index, &q, &it).unwrap();
            if r > best {
                best = r;
                best_q = q;
            }
        }
        assert_eq!(gold.query, best_q);
        assert_eq!(gold.reward, best);
    }
}

#[test]
fn distillation_is_deterministic_and_valid() {
    let world = common::World::new(3, 2000);
    let sim = world.sim_env();
    assert!(build_distill_dataset(&sim, 0, 3).unwrap().is_empty());
    let a = build_distill_dataset(&sim, 100, 3).unwrap();
    assert_eq!(a.len(), 100);
    assert!(a.iter().all(|r| validate_record(r, &world.env.kg)));
    assert_eq!(build_distill_dataset(&sim, 100, 3).unwrap(), a);
    assert_ne!(build_distill_dataset(&sim, 100, 4).unwrap(), a);
}

fn toy_record(cands: Vec<Vec<f64>>, gold: &[usize], action_features: Vec<Vec<f64>>, gold_action: usize) -> DistillRecord {
    let candidates: Vec<CandidateFacet> = cands
        .into_iter()
        .enumerate()
        .map(|(i, features)| CandidateFacet { name: format!("a{i}"), values: vec![], features })
        .collect();
    let names: Vec<String> = gold.iter().map(|i| format!("a{i}")).collect();
    DistillRecord {
        context: SessionContext::default(),
        candidates,
        gold_facets: FacetList::from_names(&names),
        rewrite_context: RewriteContext {
            original_query: "q".into(),
            selection: FacetSelection::new("a0", "v"),
            click_history: vec![],
        },
        actions: vec![],
        action_features,
        gold_action,
    }
}

fn unit(i: usize) -> Vec<f64> {
    let mut x = vec![0.0; feature::DIM];
    x[i] = 1.0;
    x
}

#[test]
fn sft_loss_closed_forms() {
    let rec = toy_record(vec![unit(0), unit(1), unit(2)], &[1], vec![vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]], 0);
    let p = PolicyParams {
        facet: FacetPolicyParams::default(),
        rewrite: RewritePolicyParams { weights: vec![0.3, -0.2, 0.0, 0.0, 0.0], temperature: 1.0 },
    };
    assert!((sft_loss(&p, &rec, 0.0).unwrap() - 3f64.ln()).abs() < 1e-12);
    let l0 = sft_loss(&p, &rec, 0.0).unwrap();
    let l1 = sft_loss(&p, &rec, 1.0).unwrap();
    let l2 = sft_loss(&p, &rec, 2.0).unwrap();
    assert!(((l2 - l0) - 2.0 * (l1 - l0)).abs() < 1e-12);
    // a policy concentrated on the gold list has vanishing loss
    let mut sharp = p.clone();
    sharp.facet.weights[1] = 1.0;
    sharp.facet.temperature = 1e-3;
    sharp.rewrite.weights = vec![1.0, 0.0, 0.0, 0.0, 0.0];
    sharp.rewrite.temperature = 1e-3;
    assert!(sft_loss(&sharp, &rec, 1.0).unwrap() < 1e-12);
}

#[test]
fn sft_reaches_the_brute_force_minimum() {
    // two informative features, full three-item ordering: the optimum is finite
    let f = |a: f64, b: f64| {
        let mut x = vec![0.0; feature::DIM];
        x[0] = a;
        x[1] = b;
        x[feature::BIAS] = 1.0;
        x
    };
    let rec = toy_record(vec![f(1.0, 0.0), f(0.0, 1.0), f(2.0, 1.5)], &[0, 1, 2], vec![vec![0.0; 5], vec![0.0; 5]], 0);
    let mut best = f64::INFINITY;
    for i in -400..=400 {
        for j in -400..=400 {
            let mut p = PolicyParams::default();
            p.facet.weights[0] = i as f64 * 0.01;
            p.facet.weights[1] = j as f64 * 0.01;
            best = best.min(sft_loss(&p, &rec, 0.0).unwrap());
        }
    }
    let config = TrainConfig { sft_iterations: 3000, sft_learning_rate: 0.5, lambda: 0.0, ..Default::default() };
    let run = train_sft(&PolicyParams::default(), std::slice::from_ref(&rec), &config).unwrap();
    assert!(*run.losses.last().unwrap() <= best + 1e-3, "{} vs {best}", run.losses.last().unwrap());
    let zero = train_sft(&PolicyParams::default(), std::slice::from_ref(&rec), &TrainConfig { sft_iterations: 0, ..config }).unwrap();
    assert_eq!(zero.params, PolicyParams::default());
}

#[test]
fn objective_matches_the_displayed_formula() {
    let mut rng = rng::stream(41, &[]);
    let world = common::World::new(6, 1500);
    let renv = RolloutEnv { sim: world.sim_env(), ctr: CtrModel::default() };
    for case in 0..30 {
        let old = PolicyParams::default().with_flat(&(0..11).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let theta = old.with_flat(&old.to_flat().iter().map(|x| x + rng.random_range(-0.3..0.3)).collect::<Vec<_>>()).unwrap();
        let reference = PolicyParams::default();
        let s = renv.sample_state(&mut rng::stream(41, &[case])).unwrap();
        if s.candidates.len() < 2 {
            continue;
        }
        let rollouts = renv.group(&old, &s, 41, case, 6, false).unwrap();
        let feats: Vec<Vec<f64>> = s.candidates.iter().map(|c| c.features.clone()).collect();
        let list_len = world.sim.facet_k.min(feats.len());
        let group = GroupRollout::new(feats.clone(), list_len, rollouts, &old).unwrap();
        let beta = 0.04;
        let (value, _, kl) = grpo_objective_grad(&theta, &old, &reference, &group, beta, None, RewardMix::Joint).unwrap();
        let mut surrogate = 0.0;
        for (r, a) in group.rollouts.iter().zip(&group.advantages) {
            let lp = |p: &PolicyParams| {
                let f = plackett_luce_logprob(&p.facet.weights, p.facet.temperature, &feats, &r.order);
                let q = r
                    .action
                    .as_ref()
                    .map(|c| action_logprob_grad(&p.rewrite.weights, p.rewrite.temperature, &c.features, c.chosen).0)
                    .unwrap_or(0.0);
                f + q
            };
            surrogate += (lp(&theta) - lp(&old)).exp() * a / group.rollouts.len() as f64;
        }
        assert!((value - (surrogate - beta * kl)).abs() < 1e-12);
        assert!(kl >= kl_divergence(&theta.facet, &reference.facet, &feats, list_len) - 1e-12);
    }
}

#[test]
fn grpo_with_zero_iterations_keeps_parameters() {
    let world = common::World::new(7, 1000);
    let renv = RolloutEnv { sim: world.sim_env(), ctr: CtrModel::default() };
    let p = PolicyParams::default();
    let run = train_grpo(&p, &p, &renv, &TrainConfig { iterations: 0, ..Default::default() }).unwrap();
    assert_eq!(run.params, p);
    assert!(run.log.is_empty());
}

#[test]
fn training_is_bit_reproducible() {
    let world = common::World::new(8, 1500);
    let sim = world.sim_env();
    let data = build_distill_dataset(&sim, 60, 8).unwrap();
    let config = TrainConfig { seed: 8, iterations: 25, sft_iterations: 10, ..Default::default() };
    let a = train_sft(&PolicyParams::default(), &data, &config).unwrap();
    let b = train_sft(&PolicyParams::default(), &data, &config).unwrap();
    assert_eq!(a, b);
    let renv = RolloutEnv { sim, ctr: CtrModel::default() };
    let g1 = train_grpo(&a.params, &a.params, &renv, &config).unwrap();
    let g2 = train_grpo(&a.params, &a.params, &renv, &config).unwrap();
    let seq = train_grpo(&a.params, &a.params, &renv, &TrainConfig { parallel_rollouts: false, ..config.clone() }).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(g1, seq);
    let bits = |p: &PolicyParams| p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&g1.params), bits(&seq.params));
}
