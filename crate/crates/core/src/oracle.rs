//! Independent oracles: exact enumeration, Monte-Carlo re-verification and
//! finite-difference gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accept_dist::{length_distribution, node_probs, AcceptanceDistribution};
use crate::dataset::{DataPoint, PointMeta};
use crate::drafting::{DraftConfig, DraftMode, DraftTree};
use crate::engine::{generate_with_rng, Controller, GenLimits};
use crate::error::Result;
use crate::lm::{LookupModel, TokenId, TokenModel, Vocabulary};
use crate::mdp::{discounted_returns, Action, CostModel, MdpConfig};
use crate::policy::lstm::{forward, PolicyParams, PolicyState, BLOCK_NAMES};
use crate::policy::train::{log_softmax, reinforce_gradient, rollout, ActMode, Trajectory};
use crate::rng::{seeded, substream};
use crate::synth::{random_distribution, random_lookup};
use crate::verify::verify_tree;

pub type Law = BTreeMap<Vec<TokenId>, f64>;

/// Exact law of `len` autoregressive target samples after `prompt`;
/// sequences end early at eos.
pub fn exact_law<M: TokenModel + ?Sized>(target: &M, prompt: &[TokenId], len: usize) -> Result<Law> {
    let eos = target.vocab().eos();
    let mut law = Law::new();
    let mut stack = vec![(Vec::new(), 1.0)];
    while let Some((seq, p)) = stack.pop() {
        if seq.len() == len || seq.last() == Some(&eos) {
            *law.entry(seq).or_default() += p;
            continue;
        }
        let mut ctx = prompt.to_vec();
        ctx.extend(&seq);
        for (tok, &q) in target.distribution(&ctx)?.probs().iter().enumerate() {
            if q > 0.0 {
                let mut next = seq.clone();
                next.push(tok as TokenId);
                stack.push((next, p * q));
            }
        }
    }
    Ok(law)
}

/// Empirical law of engine generations, `runs` split across `chunks`
/// independent substreams.
#[allow(clippy::too_many_arguments)]
pub fn engine_law<T, D>(
    target: &T,
    draft: &D,
    controller: Controller,
    prompt: &[TokenId],
    len: usize,
    cfg: &DraftConfig,
    runs: usize,
    seed: u64,
) -> Result<Law>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    let chunks = 64usize;
    let limits = GenLimits { max_tokens: len, seed, measure_wall_time: false };
    let cost = CostModel::default();
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = runs / chunks + usize::from(c < runs % chunks);
            let mut rng = substream(seed, c as u64);
            let mut local: BTreeMap<Vec<TokenId>, usize> = BTreeMap::new();
            for _ in 0..n {
                let g = generate_with_rng(target, draft, controller, prompt, &limits, cfg, &cost, &mut rng)?;
                *local.entry(g.tokens).or_default() += 1;
            }
            Ok(local)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut law = Law::new();
    for local in counts {
        for (k, v) in local {
            *law.entry(k).or_default() += v as f64 / runs as f64;
        }
    }
    Ok(law)
}

pub fn total_variation(a: &Law, b: &Law) -> f64 {
    let mut keys: Vec<&Vec<TokenId>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys.iter().map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// TV between two probability vectors.
pub fn tv_vec(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n).map(|i| (a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Histogram of `verify_tree` acceptance lengths over `trials` runs.
pub fn mc_length_histogram<M: TokenModel + ?Sized, R: Rng + ?Sized>(tree: &DraftTree, target: &M, trials: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; tree.calls_made() + 1];
    for _ in 0..trials {
        counts[verify_tree(target, tree, rng)?.accepted_len] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / trials as f64).collect())
}

#[derive(Debug, Clone)]
pub struct TreeInstance {
    pub target: LookupModel,
    pub tree: DraftTree,
}

/// Random tree over random order-1 models: vocab 2..=5, depth 1..=4,
/// branch 1..=3, either draft mode.
pub fn random_tree_instance(seed: u64) -> Result<TreeInstance> {
    let mut rng = seeded(seed);
    let v = rng.gen_range(2..=5);
    let vocab = Vocabulary::new(v, 0)?;
    let conc = [0.3, 1.0, 3.0][rng.gen_range(0..3)];
    let target = random_lookup(vocab, 1, conc, true, &mut rng)?;
    let draft = random_lookup(vocab, 1, conc, true, &mut rng)?;
    let cfg = DraftConfig {
        k: 10,
        branch: rng.gen_range(1..=3),
        frontier_cap: rng.gen_range(1..=4),
        t_max: rng.gen_range(1..=4),
        draft_mode: if rng.gen() { DraftMode::Topk } else { DraftMode::SampleWithoutReplacement },
    };
    let mut tree = DraftTree::new(vec![rng.gen_range(0..v as TokenId)])?;
    for _ in 0..cfg.t_max {
        tree.expand_level(&draft, &cfg, &mut rng)?;
    }
    Ok(TreeInstance { target, tree })
}

pub struct DistCheck {
    pub tv: f64,
    pub sum_error: f64,
}

/// Analytic length distribution vs Monte Carlo on one random instance.
pub fn check_length_distribution(seed: u64, trials: usize) -> Result<DistCheck> {
    let inst = random_tree_instance(seed)?;
    let d = length_distribution(&inst.tree, &inst.target, inst.tree.calls_made())?;
    // `length_distribution` renormalizes; check the raw stop mass too.
    let raw: f64 = node_probs(&inst.tree, &inst.target)?.iter().map(|n| n.stop).sum();
    let mc = mc_length_histogram(&inst.tree, &inst.target, trials, &mut substream(seed, 1))?;
    Ok(DistCheck { tv: tv_vec(d.probs(), &mc), sum_error: (raw - 1.0).abs() })
}

/// REINFORCE loss recomputed step by step with `forward`, without
/// the batched unroll used by training.
pub fn reinforce_loss(params: &PolicyParams, batch: &[Trajectory], mdp: &MdpConfig) -> Result<f64> {
    let mut loss = 0.0;
    for traj in batch {
        let g = discounted_returns(&traj.rewards, mdp.gamma);
        let mut state = PolicyState::zeros(params.hidden());
        for ((x, action), gt) in traj.states.iter().zip(&traj.actions).zip(&g).take(traj.decisions()) {
            let (logits, next) = forward(params, &state, x)?;
            state = next;
            loss -= gt * log_softmax(logits)[action.index()];
        }
    }
    Ok(loss / batch.len() as f64)
}

/// Central finite differences of `f` with respect to every parameter.
pub fn fd_gradient(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> Result<f64>) -> Result<PolicyParams> {
    let flat = params.flatten();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let fp = f(&PolicyParams::from_flat(params.k(), params.hidden(), &plus)?)?;
        let fm = f(&PolicyParams::from_flat(params.k(), params.hidden(), &minus)?)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    PolicyParams::from_flat(params.k(), params.hidden(), &grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||b||, 1e-8)` for each parameter block.
pub fn block_relative_errors(a: &PolicyParams, b: &PolicyParams) -> Vec<(&'static str, f64)> {
    BLOCK_NAMES
        .iter()
        .zip(a.blocks().into_iter().zip(b.blocks()))
        .map(|(name, (x, y))| {
            let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            (*name, norm(&diff) / norm(y).max(1e-8))
        })
        .collect()
}

/// Random point with `t_max` steps of `k`-wide states.
pub fn random_point<R: Rng + ?Sized>(t_max: usize, k: usize, rng: &mut R) -> DataPoint {
    DataPoint {
        meta: PointMeta::default(),
        states: (0..t_max)
            .map(|_| {
                let mut s: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                s
            })
            .collect(),
        dists: (1..=t_max)
            .map(|i| {
                let d = random_distribution(i + 1, 1.0, None, rng);
                let mut p = d.probs().to_vec();
                p.resize(t_max + 1, 0.0);
                AcceptanceDistribution::new(p).expect("normalized")
            })
            .collect(),
    }
}

/// BPTT vs finite differences of the REINFORCE loss on sampled fixed
/// trajectories, per block.
pub fn check_bptt(k: usize, hidden: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = seeded(seed);
    let mdp = MdpConfig { t_max: 5, k, ..Default::default() };
    let cost = CostModel { t_o: 2.0, ..Default::default() };
    let mut params = PolicyParams::init(k, hidden, seed);
    params.b_out = vec![0.3, -0.2];
    let mut batch = Vec::new();
    while batch.len() < 6 {
        let point = random_point(mdp.t_max, k, &mut rng);
        let traj = rollout(&params, &point, &mdp, &cost, &mut rng, ActMode::Sample)?;
        if traj.decisions() > 0 {
            batch.push(traj);
        }
    }
    let (bptt, _) = reinforce_gradient(&params, &batch, &mdp, false)?;
    let fd = fd_gradient(&params, 1e-5, |p| reinforce_loss(p, &batch, &mdp))?;
    Ok(block_relative_errors(&bptt, &fd))
}

/// One-step bandit with rewards `r` for (stop, continue): gradient of the
/// exactly enumerated expected loss, via the REINFORCE machinery and via
/// finite differences.
pub fn check_bandit(hidden: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = seeded(seed);
    let mut params = PolicyParams::init(1, hidden, seed);
    params.b_out = vec![0.4, -0.1];
    let s = vec![rng.gen::<f64>()];
    let r = [0.7, -0.3];
    let mdp = MdpConfig { t_max: 2, k: 1, ..Default::default() };
    let traj = |a: Action| Trajectory {
        states: vec![s.clone()],
        actions: vec![a],
        rewards: vec![r[a.index()]],
        log_probs: vec![0.0],
        capped: false,
        accepted_len: 0,
    };
    let (logits, _) = forward(&params, &PolicyState::zeros(hidden), &s)?;
    let pi = log_softmax(logits).map(f64::exp);
    let mut analytic = params.zeros_like();
    for a in [Action::Stop, Action::Continue] {
        let (g, _) = reinforce_gradient(&params, &[traj(a)], &mdp, false)?;
        analytic.add_scaled(&g, pi[a.index()]);
    }
    let fd = fd_gradient(&params, 1e-5, |p| {
        let (l, _) = forward(p, &PolicyState::zeros(hidden), &s)?;
        let pi = log_softmax(l).map(f64::exp);
        Ok(-(pi[0] * r[0] + pi[1] * r[1]))
    })?;
    Ok(block_relative_errors(&analytic, &fd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    pub direction: String,
    pub exact: f64,
    pub mc_mean: f64,
    pub std_error: f64,
}

impl ProjectionCheck {
    pub fn z(&self) -> f64 {
        (self.mc_mean - self.exact).abs() / self.std_error.max(1e-300)
    }
}

/// Exact expectation of the REINFORCE gradient for the two-decision MDP
/// (`t_max = 3`: stop at 1, stop at 2, or continue to the cap), enumerating
/// trajectories and acceptance lengths with `grad log pi` from finite
/// differences; compared against the Monte-Carlo batch mean of `batch`
/// sampled trajectories along several directions.
pub fn check_expected_gradient(hidden: usize, batch: usize, seed: u64) -> Result<Vec<ProjectionCheck>> {
    let k = 2;
    let mut rng = seeded(seed);
    let mdp = MdpConfig { t_max: 3, k, alpha: 0.05, ..Default::default() };
    let cost = CostModel { t_o: 1.0, ..Default::default() };
    let mut params = PolicyParams::init(k, hidden, seed);
    params.b_out = vec![-0.2, 0.3];
    let point = random_point(mdp.t_max, k, &mut rng);

    // grad log pi(a_t | s_1..s_t) by finite differences.
    let log_pi = |p: &PolicyParams, t: usize, a: Action| -> Result<f64> {
        let mut st = PolicyState::zeros(hidden);
        let mut lp = 0.0;
        for s in &point.states[..=t] {
            let (l, next) = forward(p, &st, s)?;
            st = next;
            lp = log_softmax(l)[a.index()];
        }
        Ok(lp)
    };
    let action_paths: [&[Action]; 3] =
        [&[Action::Stop], &[Action::Continue, Action::Stop], &[Action::Continue, Action::Continue, Action::Stop]];
    let mut exact = params.zeros_like();
    for actions in action_paths {
        let calls = actions.len();
        let decisions = calls.min(mdp.t_max - 1);
        let mut p_path = 1.0;
        for (t, &a) in actions[..decisions].iter().enumerate() {
            p_path *= log_pi(&params, t, a)?.exp();
        }
        let grads: Vec<PolicyParams> = (0..decisions)
            .map(|t| fd_gradient(&params, 1e-6, |p| log_pi(p, t, actions[t])))
            .collect::<Result<_>>()?;
        for (ell, &p_ell) in point.dists[calls - 1].probs().iter().enumerate() {
            if p_ell == 0.0 {
                continue;
            }
            let mut rewards = vec![-mdp.alpha; calls - 1];
            rewards.push(cost.terminal_reward(ell, calls, mdp.t_max)?);
            let g = discounted_returns(&rewards, mdp.gamma);
            for (t, grad) in grads.iter().enumerate() {
                exact.add_scaled(grad, -p_path * p_ell * g[t]);
            }
        }
    }

    let mut dirs: Vec<(String, Vec<f64>)> = Vec::new();
    let block_lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut offset = 0;
    for (name, len) in BLOCK_NAMES.iter().zip(&block_lens) {
        let mut u = vec![0.0; params.num_params()];
        for x in &mut u[offset..offset + len] {
            *x = rng.gen::<f64>() * 2.0 - 1.0;
        }
        offset += len;
        dirs.push((format!("random {name}"), u));
    }
    let e = exact.flatten();
    let en = norm(&e).max(1e-300);
    dirs.push(("exact direction".into(), e.iter().map(|x| x / en).collect()));

    let sums = (0..batch)
        .into_par_iter()
        .map(|i| {
            let mut r = substream(seed, i as u64 + 1);
            let traj = rollout(&params, &point, &mdp, &cost, &mut r, ActMode::Sample)?;
            let (g, _) = reinforce_gradient(&params, &[traj], &mdp, false)?;
            let f = g.flatten();
            Ok(dirs.iter().map(|(_, u)| u.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dirs
        .iter()
        .enumerate()
        .map(|(j, (name, u))| {
            let xs: Vec<f64> = sums.iter().map(|s| s[j]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            ProjectionCheck {
                direction: name.clone(),
                exact: u.iter().zip(&e).map(|(a, b)| a * b).sum(),
                mc_mean: mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Losslessness: engine output law vs the exact target law on random
/// lookup models, vocab 3, generation length 3.
pub fn check_losslessness(controller_seed: Option<u64>, mode: DraftMode, runs: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let vocab = Vocabulary::new(3, 0)?;
    let target = random_lookup(vocab, 1, 1.0, true, &mut rng)?;
    let draft = random_lookup(vocab, 1, 1.0, true, &mut rng)?;
    let cfg = DraftConfig { draft_mode: mode, t_max: 3, ..Default::default() };
    let prompt = [1];
    let exact = exact_law(&target, &prompt, 3)?;
    let policy;
    let controller = match controller_seed {
        Some(s) => {
            policy = PolicyParams::init(cfg.k, 8, s);
            Controller::Policy { params: &policy, carry_state: false }
        }
        None => Controller::FixedDepth(2),
    };
    let law = engine_law(&target, &draft, controller, &prompt, 3, &cfg, runs, seed)?;
    Ok(total_variation(&exact, &law))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub suite: String,
    pub name: String,
    pub metric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub lossless_runs: usize,
    pub dist_instances: usize,
    pub dist_trials: usize,
    pub grad_batch: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { lossless_runs: 1_000_000, dist_instances: 50, dist_trials: 100_000, grad_batch: 100_000, seed: 0 }
    }
}

fn check(suite: &str, name: String, metric: f64, tolerance: f64) -> OracleCheck {
    OracleCheck { suite: suite.into(), name, metric, tolerance, passed: metric <= tolerance }
}

/// Runs every oracle suite.
pub fn run_all(cfg: &OracleConfig) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    let tv = check_losslessness(None, DraftMode::SampleWithoutReplacement, cfg.lossless_runs, cfg.seed)?;
    out.push(check("losslessness", "fixed-depth engine vs exact law (TV)".into(), tv, 0.005));
    let tv = check_losslessness(Some(cfg.seed), DraftMode::SampleWithoutReplacement, cfg.lossless_runs, cfg.seed + 1)?;
    out.push(check("losslessness", "policy engine vs exact law (TV)".into(), tv, 0.005));

    let (mut worst_tv, mut worst_sum) = (0.0f64, 0.0f64);
    for i in 0..cfg.dist_instances {
        let c = check_length_distribution(cfg.seed.wrapping_add(i as u64), cfg.dist_trials)?;
        worst_tv = worst_tv.max(c.tv);
        worst_sum = worst_sum.max(c.sum_error);
    }
    out.push(check("length-distribution", format!("worst TV over {} instances", cfg.dist_instances), worst_tv, 0.01));
    out.push(check("length-distribution", "worst |sum p - 1|".into(), worst_sum, 1e-9));

    for (name, err) in check_bptt(4, 5, cfg.seed)? {
        out.push(check("gradient", format!("BPTT vs finite differences, {name}"), err, 1e-4));
    }
    for (name, err) in check_bandit(4, cfg.seed)? {
        out.push(check("gradient", format!("bandit expected loss, {name}"), err, 1e-4));
    }
    for p in check_expected_gradient(3, cfg.grad_batch, cfg.seed)? {
        out.push(check("gradient", format!("expected gradient, {} (z)", p.direction), p.z(), 3.0));
    }
    Ok(out)
}
