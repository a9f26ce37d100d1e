//! Training, evaluation and generation cross-checked against exact values.

use radar_core::dataset::build_points;
use radar_core::engine::{bench, generate, BenchConfig, Controller, GenLimits};
use radar_core::oracle::random_point;
use radar_core::policy::{
    action_probs, evaluate_greedy, evaluate_sampled, expected_return_at, forward, train, OptimizerKind, PolicyParams,
    PolicyState, TrainConfig,
};
use radar_core::rng::seeded;
use radar_core::synth::{random_lookup, sample_corpus, ChainWorld};
use radar_core::{CostModel, DataPoint, DraftConfig, MdpConfig, PrefixRule, Vocabulary};

/// P(stop after t calls) for the stochastic policy, t = 1..=t_max.
fn stop_law(params: &PolicyParams, point: &DataPoint, t_max: usize) -> Vec<f64> {
    let mut law = Vec::new();
    let mut reach = 1.0;
    let mut h = PolicyState::zeros(params.hidden());
    for t in 1..t_max {
        let (logits, next) = forward(params, &h, &point.states[t - 1]).unwrap();
        h = next;
        let p_stop = action_probs(logits)[0];
        law.push(reach * p_stop);
        reach *= 1.0 - p_stop;
    }
    law.push(reach);
    law
}

#[test]
fn sampled_evaluation_matches_enumerated_return() {
    let mdp = MdpConfig { t_max: 5, k: 4, ..Default::default() };
    let cost = CostModel { t_o: 3.0, ..Default::default() };
    let mut rng = seeded(2);
    let data: Vec<DataPoint> = (0..20).map(|_| random_point(mdp.t_max, mdp.k, &mut rng)).collect();
    let params = PolicyParams::init(mdp.k, 6, 5);
    let exact: f64 = data
        .iter()
        .map(|p| {
            stop_law(&params, p, mdp.t_max)
                .iter()
                .enumerate()
                .map(|(i, w)| w * expected_return_at(p, i + 1, &mdp, &cost).unwrap())
                .sum::<f64>()
        })
        .sum::<f64>()
        / data.len() as f64;
    let (mean, se) = evaluate_sampled(&params, &data, &mdp, &cost, 20_000, 9).unwrap();
    assert!((mean - exact).abs() <= 4.0 * se, "sampled {mean} +- {se}, exact {exact}");
}

#[test]
fn greedy_evaluation_matches_first_stop_depth() {
    let mdp = MdpConfig { t_max: 6, k: 3, ..Default::default() };
    let cost = CostModel::default();
    let mut rng = seeded(3);
    let data: Vec<DataPoint> = (0..30).map(|_| random_point(mdp.t_max, mdp.k, &mut rng)).collect();
    let params = PolicyParams::init(mdp.k, 5, 8);
    let summary = evaluate_greedy(&params, &data, &mdp, &cost).unwrap();
    let mut total = 0.0;
    let mut hist = vec![0usize; mdp.t_max];
    for p in &data {
        let law = stop_law(&params, p, mdp.t_max);
        // Greedy stops at the first step where stopping is strictly preferred.
        let mut reach = 1.0;
        let mut t = mdp.t_max;
        for (i, w) in law.iter().take(mdp.t_max - 1).enumerate() {
            if w / reach > 0.5 {
                t = i + 1;
                break;
            }
            reach -= w;
        }
        hist[t - 1] += 1;
        total += expected_return_at(p, t, &mdp, &cost).unwrap();
    }
    assert_eq!(summary.calls_hist, hist);
    assert!((summary.mean_return - total / data.len() as f64).abs() < 1e-12);
}

#[test]
fn trained_policy_beats_fixed_depths_on_mixed_depth_data() {
    let world = ChainWorld::default();
    let m = world.models().unwrap();
    let cfg = DraftConfig::default();
    let points = |docs, seed| {
        let corpus = sample_corpus(&m.target, &m.separators, docs, 200, &mut seeded(seed)).unwrap();
        build_points(&corpus, &m.target, &m.draft, &cfg, &PrefixRule::default(), 2).unwrap()
    };
    let (train_set, held_out) = (points(40, 1), points(10, 2));
    let mdp = MdpConfig::default();
    let cost = CostModel { t_o: 10.0, ..Default::default() };
    let tc = TrainConfig {
        epochs: 40,
        lr: 3e-3,
        seed: 3,
        optimizer: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        baseline: true,
        ..Default::default()
    };
    let (params, logs) = train(&train_set, PolicyParams::init(cfg.k, tc.hidden_size, 3), &tc, &mdp, &cost).unwrap();
    assert_eq!(logs.len(), 40);
    let policy = evaluate_greedy(&params, &held_out, &mdp, &cost).unwrap();
    let best_fixed = (1..=mdp.t_max)
        .map(|t| held_out.iter().map(|p| expected_return_at(p, t, &mdp, &cost).unwrap()).sum::<f64>() / held_out.len() as f64)
        .fold(f64::MIN, f64::max);
    assert!(policy.mean_return >= best_fixed * 0.99, "policy {} vs best fixed {best_fixed}", policy.mean_return);
    assert!(policy.mean_calls < mdp.t_max as f64);
}

#[test]
fn matching_draft_chain_accepts_every_call() {
    let mut rng = seeded(6);
    let model = random_lookup(Vocabulary::new(5, 0).unwrap(), 1, 0.5, false, &mut rng).unwrap();
    let cfg = DraftConfig { k: 2, branch: 1, frontier_cap: 1, t_max: 4, ..Default::default() };
    let limits = GenLimits { max_tokens: 200, seed: 1, measure_wall_time: false };
    let g = generate(&model, &model, Controller::FixedDepth(4), &[1], &limits, &cfg, &CostModel::default()).unwrap();
    assert!(g.cycles.iter().all(|c| c.accepted_len == 4 && c.calls == 4));
    assert_eq!(g.tokens.len(), 200);
    assert_eq!(g.metrics.tau, 5.0);
}

#[test]
fn vanilla_decoding_has_unit_tau_and_speedup() {
    let mut rng = seeded(7);
    let vocab = Vocabulary::new(6, 0).unwrap();
    let target = random_lookup(vocab, 1, 0.5, false, &mut rng).unwrap();
    let draft = random_lookup(vocab, 1, 0.5, false, &mut rng).unwrap();
    let limits = GenLimits { max_tokens: 50, seed: 2, measure_wall_time: false };
    let g = generate(&target, &draft, Controller::FixedDepth(0), &[2], &limits, &DraftConfig::default(), &CostModel::default()).unwrap();
    assert_eq!((g.metrics.tau, g.metrics.speedup_sim, g.metrics.avg_calls), (1.0, 1.0, 0.0));
    assert_eq!(g.metrics.cycles, 50);
}

#[test]
fn bench_rows_do_not_depend_on_workers() {
    let mut rng = seeded(11);
    let vocab = Vocabulary::new(6, 0).unwrap();
    let target = random_lookup(vocab, 1, 0.5, true, &mut rng).unwrap();
    let draft = random_lookup(vocab, 1, 0.5, true, &mut rng).unwrap();
    let prompts: Vec<Vec<u32>> = (1..6).map(|t| vec![t]).collect();
    let params = PolicyParams::init(10, 8, 1);
    let run = |workers| {
        let bc = BenchConfig { baselines: vec![0, 2, 5], limits: GenLimits { max_tokens: 40, seed: 3, measure_wall_time: false }, workers };
        bench(&target, &draft, Some(&params), &prompts, &DraftConfig::default(), &CostModel::default(), &bc).unwrap()
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
    assert_eq!(a.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["radar", "vanilla", "fixed-2", "fixed-5"]);
}
