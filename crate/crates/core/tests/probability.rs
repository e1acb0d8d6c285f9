use facetloop_core::facetgen::{
    list_logprob, plackett_luce_logprob, plackett_luce_logprob_grad, sample_order, CandidateFacet, FacetList, FacetPolicyParams,
    feature,
};
use facetloop_core::math::softmax;
use facetloop_core::rewrite::{action_probs, choose_action, DecodeMode, RewritePolicyParams};
use facetloop_core::rng;
use rand::Rng;

fn random_features<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..feature::DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            x[feature::BIAS] = 1.0;
            x
        })
        .collect()
}

fn random_weights<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Every ordered `k`-subset of `0..n`, built independently of the library.
fn ordered_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for prefix in &out {
            for i in 0..n {
                if !prefix.contains(&i) {
                    let mut p = prefix.clone();
                    p.push(i);
                    next.push(p);
                }
            }
        }
        out = next;
    }
    out
}

#[test]
fn list_probabilities_sum_to_one() {
    let mut rng = rng::stream(21, &[]);
    for n in 1..=6 {
        for k in 1..=3.min(n) {
            for _ in 0..20 {
                let feats = random_features(&mut rng, n);
                let w = random_weights(&mut rng, feature::DIM, 3.0);
                let t = rng.random_range(0.3..3.0);
                let total: f64 = ordered_subsets(n, k).iter().map(|o| plackett_luce_logprob(&w, t, &feats, o).exp()).sum();
                assert!((total - 1.0).abs() <= 1e-9, "n={n} k={k} total={total}");
            }
        }
    }
}

#[test]
fn named_list_probabilities_sum_to_one() {
    let mut rng = rng::stream(22, &[]);
    let feats = random_features(&mut rng, 5);
    let cands: Vec<CandidateFacet> = feats
        .into_iter()
        .enumerate()
        .map(|(i, features)| CandidateFacet { name: format!("a{i}"), values: vec![], features })
        .collect();
    let params = FacetPolicyParams { weights: random_weights(&mut rng, feature::DIM, 2.0), temperature: 0.7 };
    let total: f64 = ordered_subsets(5, 3)
        .iter()
        .map(|o| {
            let names: Vec<&str> = o.iter().map(|&i| cands[i].name.as_str()).collect();
            list_logprob(&params, &cands, &FacetList::from_names(&names)).unwrap().exp()
        })
        .sum();
    assert!((total - 1.0).abs() <= 1e-9);
}

#[test]
fn shifting_all_scores_leaves_probabilities_unchanged() {
    let mut rng = rng::stream(23, &[]);
    for _ in 0..200 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() <= 1e-12);
        }
        // a bias-weight change shifts every candidate score equally
        let feats = random_features(&mut rng, 5);
        let w = random_weights(&mut rng, feature::DIM, 2.0);
        let mut w2 = w.clone();
        w2[feature::BIAS] += rng.random_range(-3.0..3.0);
        for o in ordered_subsets(5, 2) {
            let a = plackett_luce_logprob(&w, 1.0, &feats, &o).exp();
            let b = plackett_luce_logprob(&w2, 1.0, &feats, &o).exp();
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn sampling_frequencies_match_list_probabilities() {
    let mut rng = rng::stream(24, &[]);
    let feats = random_features(&mut rng, 4);
    let w = random_weights(&mut rng, feature::DIM, 1.5);
    let lists = ordered_subsets(4, 2);
    let n = 40_000;
    let mut counts = vec![0usize; lists.len()];
    let mut draw = rng::stream(25, &[]);
    for _ in 0..n {
        let order = sample_order(&w, 1.0, &feats, 2, &mut draw).unwrap();
        counts[lists.iter().position(|l| *l == order).unwrap()] += 1;
    }
    for (l, c) in lists.iter().zip(counts) {
        let p = plackett_luce_logprob(&w, 1.0, &feats, l).exp();
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() < 5.0 * sd + 1e-4, "{l:?}");
    }
}

#[test]
fn sampling_is_reproducible_per_seed() {
    let mut rng = rng::stream(26, &[]);
    let feats = random_features(&mut rng, 8);
    let w = random_weights(&mut rng, feature::DIM, 1.0);
    let a = sample_order(&w, 1.0, &feats, 5, &mut rng::stream(7, &[1])).unwrap();
    let b = sample_order(&w, 1.0, &feats, 5, &mut rng::stream(7, &[1])).unwrap();
    assert_eq!(a, b);
}

#[test]
fn logprob_gradient_is_the_score_function() {
    // E[∇ log π] = 0 over the full list distribution
    let mut rng = rng::stream(27, &[]);
    for _ in 0..20 {
        let feats = random_features(&mut rng, 5);
        let w = random_weights(&mut rng, feature::DIM, 2.0);
        let mut mean = vec![0.0; feature::DIM];
        for o in ordered_subsets(5, 3) {
            let (lp, g) = plackett_luce_logprob_grad(&w, 1.3, &feats, &o);
            for (m, x) in mean.iter_mut().zip(g) {
                *m += lp.exp() * x;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 1e-9), "{mean:?}");
    }
}

#[test]
fn action_distribution_is_normalized_and_argmax_scale_free() {
    let mut rng = rng::stream(28, &[]);
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(0.2..3.0);
        let p = action_probs(&w, t, &feats);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = rng.random_range(0.1..10.0);
        let a = RewritePolicyParams { weights: w.clone(), temperature: t };
        let b = RewritePolicyParams { weights: w.iter().map(|x| x * c).collect(), temperature: t * c };
        let ia = choose_action(&a, &feats, DecodeMode::Argmax, &mut rng::stream(0, &[])).unwrap().0;
        let ib = choose_action(&b, &feats, DecodeMode::Argmax, &mut rng::stream(0, &[])).unwrap().0;
        assert_eq!(ia, ib);
    }
}
