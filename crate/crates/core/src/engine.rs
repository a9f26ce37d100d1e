//! The draft, decide, verify loop and its metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drafting::{DraftConfig, DraftTree};
use crate::error::{Error, Result};
use crate::lm::{TokenId, TokenModel};
use crate::mdp::CostModel;
use crate::policy::lstm::{forward, PolicyParams, PolicyState};
use crate::policy::train::{act, ActMode};
use crate::rng::{substream, StreamRng};
use crate::verify::verify_tree;

/// Decides how many draft calls each cycle makes.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Greedy stopping policy, consulted after every call below `t_max`.
    Policy { params: &'a PolicyParams, carry_state: bool },
    /// Exactly `d` calls per cycle; `0` is plain autoregressive sampling.
    FixedDepth(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenLimits {
    pub max_tokens: usize,
    pub seed: u64,
    /// Record wall-clock time; off keeps output byte-reproducible.
    pub measure_wall_time: bool,
}

impl Default for GenLimits {
    fn default() -> Self {
        Self { max_tokens: 64, seed: 0, measure_wall_time: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub calls: usize,
    pub accepted_len: usize,
    /// Tokens kept after eos / length truncation.
    pub appended: usize,
    pub sim_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tokens_generated: usize,
    pub cycles: usize,
    /// Mean tokens produced per cycle, `mean accepted_len + 1`.
    pub tau: f64,
    pub avg_calls: f64,
    pub sim_time: f64,
    pub wall_time: f64,
    pub speedup_sim: f64,
}

impl RunMetrics {
    /// Aggregates cycle logs; `sim_time` is split into target passes and
    /// draft time so that vanilla decoding has speedup exactly 1.
    pub fn from_cycles(logs: &[CycleLog], cost: &CostModel, wall_time: f64) -> Self {
        let cycles = logs.len();
        let tokens: usize = logs.iter().map(|c| c.appended).sum();
        let accepted: usize = logs.iter().map(|c| c.accepted_len).sum();
        let calls: usize = logs.iter().map(|c| c.calls).sum();
        let draft_time: f64 = logs.iter().map(|c| c.sim_cost - cost.target_cost()).sum();
        let sim_time = cycles as f64 * cost.target_cost() + draft_time;
        let n = cycles.max(1) as f64;
        Self {
            tokens_generated: tokens,
            cycles,
            tau: (accepted + cycles) as f64 / n,
            avg_calls: calls as f64 / n,
            sim_time,
            wall_time,
            speedup_sim: if sim_time > 0.0 { tokens as f64 * cost.target_cost() / sim_time } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated tokens, prompt excluded.
    pub tokens: Vec<TokenId>,
    pub metrics: RunMetrics,
    pub cycles: Vec<CycleLog>,
}

/// Draft-phase cost of a cycle, target verification pass included.
fn cycle_cost(calls: usize, cost: &CostModel, t_max: usize) -> Result<f64> {
    Ok(cost.target_cost() + if calls == 0 { 0.0 } else { cost.gen_time(calls, t_max)? })
}

/// Builds one cycle's tree under the controller.
fn draft_cycle<D: TokenModel + ?Sized>(
    draft: &D,
    controller: &Controller,
    context: &[TokenId],
    cfg: &DraftConfig,
    lstm: &mut PolicyState,
    rng: &mut StreamRng,
) -> Result<DraftTree> {
    let mut tree = DraftTree::new(context.to_vec())?;
    match *controller {
        Controller::FixedDepth(d) => {
            for _ in 0..d {
                tree.expand_level(draft, cfg, rng)?;
            }
        }
        Controller::Policy { params, carry_state } => {
            if !carry_state {
                *lstm = PolicyState::zeros(params.hidden());
            }
            loop {
                let state = tree.expand_level(draft, cfg, rng)?;
                if tree.calls_made() >= cfg.t_max {
                    break;
                }
                let (logits, next) = forward(params, lstm, &state)?;
                *lstm = next;
                if act(logits, rng, ActMode::Greedy).0 == crate::mdp::Action::Stop {
                    break;
                }
            }
        }
    }
    Ok(tree)
}

/// Generates until eos or `max_tokens` new tokens.
pub fn generate<T, D>(
    target: &T,
    draft: &D,
    controller: Controller,
    prompt: &[TokenId],
    limits: &GenLimits,
    cfg: &DraftConfig,
    cost: &CostModel,
) -> Result<Generation>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    generate_with_rng(target, draft, controller, prompt, limits, cfg, cost, &mut crate::rng::seeded(limits.seed))
}

#[allow(clippy::too_many_arguments)]
pub fn generate_with_rng<T, D>(
    target: &T,
    draft: &D,
    controller: Controller,
    prompt: &[TokenId],
    limits: &GenLimits,
    cfg: &DraftConfig,
    cost: &CostModel,
    rng: &mut StreamRng,
) -> Result<Generation>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    cfg.validate()?;
    cost.validate()?;
    if prompt.is_empty() {
        return Err(Error::input("prompt must be non-empty"));
    }
    let vocab = target.vocab();
    if draft.vocab() != vocab {
        return Err(Error::input(format!("vocabulary mismatch: target {:?}, draft {:?}", vocab, draft.vocab())));
    }
    vocab.check_tokens(prompt)?;
    match controller {
        Controller::FixedDepth(d) if d > cfg.t_max => {
            return Err(Error::input(format!("fixed depth {d} exceeds t_max {}", cfg.t_max)));
        }
        Controller::Policy { params, .. } if params.k() != cfg.k => {
            return Err(Error::input(format!("policy expects k = {}, draft config has k = {}", params.k(), cfg.k)));
        }
        _ => {}
    }

    let start = limits.measure_wall_time.then(Instant::now);
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    let mut logs = Vec::new();
    let mut lstm = match controller {
        Controller::Policy { params, .. } => PolicyState::zeros(params.hidden()),
        Controller::FixedDepth(_) => PolicyState::zeros(0),
    };
    let mut finished = limits.max_tokens == 0;
    while !finished {
        let tree = draft_cycle(draft, &controller, &context, cfg, &mut lstm, rng)?;
        let result = verify_tree(target, &tree, rng)?;
        let mut produced: Vec<TokenId> = result.accepted_path.iter().map(|&i| tree.node(i).token).collect();
        produced.push(result.bonus_token);
        let mut appended = 0;
        for tok in produced {
            out.push(tok);
            context.push(tok);
            appended += 1;
            if tok == vocab.eos() || out.len() >= limits.max_tokens {
                finished = true;
                break;
            }
        }
        logs.push(CycleLog {
            calls: tree.calls_made(),
            accepted_len: result.accepted_len,
            appended,
            sim_cost: cycle_cost(tree.calls_made(), cost, cfg.t_max)?,
        });
    }
    let wall = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
    let metrics = RunMetrics::from_cycles(&logs, cost, wall);
    Ok(Generation { tokens: out, metrics, cycles: logs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Fixed depths to compare against; `0` is vanilla decoding.
    pub baselines: Vec<usize>,
    pub limits: GenLimits,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { baselines: (0..=8).collect(), limits: GenLimits::default(), workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub tau: f64,
    pub avg_calls: f64,
    pub speedup_sim: f64,
    pub wall_time: f64,
    pub tokens: usize,
    pub cycles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Cycle logs per method, in row order.
    pub logs: Vec<Vec<CycleLog>>,
}

pub fn method_name(controller: &Controller) -> String {
    match controller {
        Controller::Policy { .. } => "radar".into(),
        Controller::FixedDepth(0) => "vanilla".into(),
        Controller::FixedDepth(d) => format!("fixed-{d}"),
    }
}

/// Runs every method over every prompt. Prompt `i` uses substream `i` of
/// the seed for every method.
pub fn bench<T, D>(
    target: &T,
    draft: &D,
    policy: Option<&PolicyParams>,
    prompts: &[Vec<TokenId>],
    cfg: &DraftConfig,
    cost: &CostModel,
    bench_cfg: &BenchConfig,
) -> Result<BenchReport>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    if prompts.is_empty() {
        return Err(Error::input("empty eval set"));
    }
    let mut controllers = Vec::new();
    if let Some(params) = policy {
        controllers.push(Controller::Policy { params, carry_state: false });
    }
    controllers.extend(bench_cfg.baselines.iter().map(|&d| Controller::FixedDepth(d)));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(bench_cfg.workers.max(1))
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?;
    let limits = bench_cfg.limits;
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for controller in &controllers {
        let start = limits.measure_wall_time.then(Instant::now);
        let runs = pool.install(|| {
            prompts
                .par_iter()
                .enumerate()
                .map(|(i, prompt)| {
                    let mut rng = substream(limits.seed, i as u64);
                    generate_with_rng(target, draft, *controller, prompt, &limits, cfg, cost, &mut rng)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let cycles: Vec<CycleLog> = runs.into_iter().flat_map(|g| g.cycles).collect();
        let wall = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let m = RunMetrics::from_cycles(&cycles, cost, wall);
        rows.push(BenchRow {
            method: method_name(controller),
            tau: m.tau,
            avg_calls: m.avg_calls,
            speedup_sim: m.speedup_sim,
            wall_time: m.wall_time,
            tokens: m.tokens_generated,
            cycles: m.cycles,
        });
        logs.push(cycles);
    }
    Ok(BenchReport { rows, logs })
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,tau,avg_calls,speedup_sim,wall_time,tokens,cycles\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.method, r.tau, r.avg_calls, r.speedup_sim, r.wall_time, r.tokens, r.cycles);
    }
    out
}

pub fn rows_to_json(rows: &[BenchRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Histograms {
    pub accepted_len: BTreeMap<usize, usize>,
    pub calls: BTreeMap<usize, usize>,
}

pub fn histograms(logs: &[CycleLog]) -> Histograms {
    let mut h = Histograms::default();
    for c in logs {
        *h.accepted_len.entry(c.accepted_len).or_default() += 1;
        *h.calls.entry(c.calls).or_default() += 1;
    }
    h
}

pub fn histogram_csv(hist: &BTreeMap<usize, usize>) -> String {
    let mut out = String::from("value,count\n");
    for (v, c) in hist {
        let _ = writeln!(out, "{v},{c}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drafting::DraftMode;
    use crate::lm::{LookupModel, TokenDistribution, Vocabulary};

    /// Order-1 model over 4 tokens where eos (0) never appears.
    fn model() -> LookupModel {
        let vocab = Vocabulary::new(4, 0).unwrap();
        let mut m = LookupModel::new(vocab, 1, TokenDistribution::new(vec![0.0, 0.3, 0.3, 0.4]).unwrap()).unwrap();
        m.insert(vec![1], TokenDistribution::new(vec![0.0, 0.1, 0.6, 0.3]).unwrap()).unwrap();
        m.insert(vec![2], TokenDistribution::new(vec![0.0, 0.5, 0.2, 0.3]).unwrap()).unwrap();
        m
    }

    fn never_stop(k: usize) -> PolicyParams {
        let mut p = PolicyParams::zeros(k, 2);
        p.b_out = vec![0.0, 30.0];
        p
    }

    #[test]
    fn matching_chain_never_stop_appends_t_max_plus_one() {
        let m = model();
        let cfg = DraftConfig { branch: 1, frontier_cap: 1, t_max: 5, ..Default::default() };
        let limits = GenLimits { max_tokens: 60, seed: 3, ..Default::default() };
        let p = never_stop(cfg.k);
        let g = generate(&m, &m, Controller::Policy { params: &p, carry_state: false }, &[1], &limits, &cfg, &CostModel::default()).unwrap();
        assert_eq!(g.metrics.cycles, 10);
        assert!(g.cycles.iter().all(|c| c.appended == 6 && c.calls == 5));
        assert_eq!(g.metrics.tau, 6.0);
        assert_eq!(g.tokens.len(), 60);
    }

    #[test]
    fn always_stop_uses_one_call() {
        let m = model();
        let cfg = DraftConfig::default();
        let mut p = PolicyParams::zeros(cfg.k, 2);
        p.b_out = vec![30.0, 0.0];
        let g = generate(&m, &m, Controller::Policy { params: &p, carry_state: false }, &[2], &GenLimits::default(), &cfg, &CostModel::default()).unwrap();
        assert_eq!(g.metrics.avg_calls, 1.0);
        assert!(g.metrics.tau >= 1.0 && g.metrics.tau <= 2.0);
    }

    #[test]
    fn vanilla_speedup_is_exactly_one() {
        let m = model();
        for cost in [CostModel::default(), CostModel { t_o: 3.7, t_f: 0.3, t_eye: 0.01, target_pass: Some(1.3) }] {
            let g = generate(&m, &m, Controller::FixedDepth(0), &[1], &GenLimits::default(), &DraftConfig::default(), &cost).unwrap();
            assert_eq!(g.metrics.speedup_sim, 1.0);
            assert_eq!(g.metrics.tau, 1.0);
        }
    }

    #[test]
    fn tau_matches_raw_logs() {
        let m = model();
        let d = LookupModel::new(m.vocab(), 0, TokenDistribution::new(vec![0.0, 0.4, 0.4, 0.2]).unwrap()).unwrap();
        let g = generate(&m, &d, Controller::FixedDepth(3), &[1], &GenLimits { max_tokens: 500, ..Default::default() }, &DraftConfig::default(), &CostModel::default()).unwrap();
        let acc: usize = g.cycles.iter().map(|c| c.accepted_len).sum();
        assert_eq!(g.metrics.tau, (acc + g.cycles.len()) as f64 / g.cycles.len() as f64);
        assert!(g.cycles.iter().all(|c| c.calls == 3));
        assert_eq!(g.tokens.len(), 500);
    }

    #[test]
    fn eos_stops_generation() {
        let vocab = Vocabulary::new(3, 0).unwrap();
        let m = LookupModel::new(vocab, 0, TokenDistribution::new(vec![0.5, 0.25, 0.25]).unwrap()).unwrap();
        let cfg = DraftConfig { draft_mode: DraftMode::SampleWithoutReplacement, ..Default::default() };
        let g = generate(&m, &m, Controller::FixedDepth(2), &[1], &GenLimits { max_tokens: 1000, seed: 5, ..Default::default() }, &cfg, &CostModel::default()).unwrap();
        assert_eq!(*g.tokens.last().unwrap(), 0);
        assert!(!g.tokens[..g.tokens.len() - 1].contains(&0));
    }

    #[test]
    fn bench_rows_and_histograms() {
        let m = model();
        let cfg = DraftConfig::default();
        let p = never_stop(cfg.k);
        let prompts = vec![vec![1], vec![2, 3]];
        let bc = BenchConfig { limits: GenLimits { max_tokens: 40, ..Default::default() }, ..Default::default() };
        let report = bench(&m, &m, Some(&p), &prompts, &cfg, &CostModel::default(), &bc).unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names[..3], ["radar", "vanilla", "fixed-1"]);
        let fixed8 = report.rows.iter().position(|r| r.method == "fixed-8").unwrap();
        assert_eq!(report.rows[fixed8].avg_calls, 8.0);
        assert_eq!(histograms(&report.logs[fixed8]).calls.keys().copied().collect::<Vec<_>>(), vec![8]);
        assert!(report.rows[0].avg_calls <= 8.0);
        assert!(rows_to_csv(&report.rows).starts_with("method,tau"));
        assert!(matches!(bench(&m, &m, None, &[], &cfg, &CostModel::default(), &bc), Err(Error::Input(msg)) if msg == "empty eval set"));
    }

    #[test]
    fn single_cycle_histogram() {
        let h = histograms(&[CycleLog { calls: 3, accepted_len: 2, appended: 3, sim_cost: 1.0 }]);
        assert_eq!(h.accepted_len, BTreeMap::from([(2, 1)]));
        assert_eq!(histogram_csv(&h.calls), "value,count\n3,1\n");
    }

    #[test]
    fn same_seed_same_output() {
        let m = model();
        let d = LookupModel::new(m.vocab(), 0, TokenDistribution::new(vec![0.0, 0.4, 0.4, 0.2]).unwrap()).unwrap();
        let p = PolicyParams::init(10, 8, 1);
        let run = || generate(&m, &d, Controller::Policy { params: &p, carry_state: false }, &[1], &GenLimits { seed: 7, ..Default::default() }, &DraftConfig::default(), &CostModel::default()).unwrap();
        assert_eq!(run(), run());
    }
}
