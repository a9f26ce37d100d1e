//! Action selection, trajectories and REINFORCE training.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backward, forward, unroll, PolicyParams, PolicyState, BLOCK_NAMES};
use super::optim::{Optimizer, OptimizerKind};
use crate::dataset::{sample_acceptance_length, DataPoint};
use crate::error::{Error, Result};
use crate::mdp::{discounted_returns, step, Action, CostModel, EnvState, MdpConfig};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Greedy,
}

/// `[log pi(stop), log pi(continue)]`.
pub fn log_softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

pub fn action_probs(logits: [f64; 2]) -> [f64; 2] {
    log_softmax(logits).map(f64::exp)
}

/// Chooses an action and returns it with its log-probability. Sampling
/// consumes one uniform; greedy consumes none and breaks ties toward
/// continuing.
pub fn act<R: Rng + ?Sized>(logits: [f64; 2], rng: &mut R, mode: ActMode) -> (Action, f64) {
    let lp = log_softmax(logits);
    let action = match mode {
        ActMode::Greedy => {
            if lp[0] > lp[1] {
                Action::Stop
            } else {
                Action::Continue
            }
        }
        ActMode::Sample => {
            if rng.gen::<f64>() < lp[0].exp() {
                Action::Stop
            } else {
                Action::Continue
            }
        }
    };
    (action, lp[action.index()])
}

/// One episode. At the cap the last entry is a forced stop that the policy
/// never evaluated: its log-probability is 0 and it carries no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub capped: bool,
    pub accepted_len: usize,
}

impl Trajectory {
    /// Number of draft calls `T`.
    pub fn calls(&self) -> usize {
        self.states.len()
    }

    /// Steps at which the policy actually chose the action.
    pub fn decisions(&self) -> usize {
        if self.capped {
            self.states.len() - 1
        } else {
            self.states.len()
        }
    }

    pub fn terminal_reward(&self) -> f64 {
        *self.rewards.last().expect("trajectories are never empty")
    }
}

/// Runs the policy against an environment defined by two callbacks:
/// `next_state(t)` returns the state after draft call `t`, and
/// `accepted_len(T, rng)` produces the acceptance length on termination.
pub fn rollout_with<R, S, L>(
    params: &PolicyParams,
    mdp: &MdpConfig,
    cost: &CostModel,
    rng: &mut R,
    mode: ActMode,
    mut next_state: S,
    accepted_len: L,
) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    S: FnMut(usize) -> Result<Vec<f64>>,
    L: FnOnce(usize, &mut R) -> Result<usize>,
{
    let mut env = EnvState::start(next_state(1)?);
    let mut lstm = PolicyState::zeros(params.hidden());
    let mut traj = Trajectory {
        states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        log_probs: Vec::new(),
        capped: false,
        accepted_len: 0,
    };
    let mut accepted_len = Some(accepted_len);
    loop {
        traj.states.push(env.state_vec.clone());
        let (action, log_prob) = if env.t < mdp.t_max {
            let (logits, next) = forward(params, &lstm, &env.state_vec)?;
            lstm = next;
            act(logits, rng, mode)
        } else {
            traj.capped = true;
            (Action::Stop, 0.0)
        };
        let t_next = env.t + 1;
        let mut ell = 0;
        let out = step(
            &mut env,
            action,
            mdp,
            cost,
            || next_state(t_next),
            |t| {
                ell = (accepted_len.take().expect("episode terminates once"))(t, rng)?;
                Ok(ell)
            },
        )?;
        traj.actions.push(action);
        traj.log_probs.push(log_prob);
        traj.rewards.push(out.reward);
        if out.done {
            traj.accepted_len = ell;
            return Ok(traj);
        }
    }
}

/// Offline rollout: states replay the data point, and the acceptance length
/// is drawn from `d_T`.
pub fn rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    point: &DataPoint,
    mdp: &MdpConfig,
    cost: &CostModel,
    rng: &mut R,
    mode: ActMode,
) -> Result<Trajectory> {
    if point.states.len() < mdp.t_max || point.dists.len() < mdp.t_max {
        return Err(Error::input(format!(
            "data point has {} states, need t_max = {}",
            point.states.len(),
            mdp.t_max
        )));
    }
    rollout_with(
        params,
        mdp,
        cost,
        rng,
        mode,
        |t| Ok(point.states[t - 1].clone()),
        |t, rng| sample_acceptance_length(&point.dists[t - 1], rng),
    )
}

/// Gradient of `-(1/B) sum_traj sum_t (G_t - b) log pi(a_t | s_t)` and the
/// loss value. `b` is the batch-mean return when `baseline` is set, else 0.
pub fn reinforce_gradient(
    params: &PolicyParams,
    batch: &[Trajectory],
    mdp: &MdpConfig,
    baseline: bool,
) -> Result<(PolicyParams, f64)> {
    if batch.is_empty() {
        return Err(Error::input("empty trajectory batch"));
    }
    let returns: Vec<Vec<f64>> = batch.iter().map(|t| discounted_returns(&t.rewards, mdp.gamma)).collect();
    let b = if baseline {
        let (sum, n) = batch
            .iter()
            .zip(&returns)
            .flat_map(|(t, g)| g[..t.decisions()].iter())
            .fold((0.0, 0usize), |(s, n), g| (s + g, n + 1));
        if n > 0 {
            sum / n as f64
        } else {
            0.0
        }
    } else {
        0.0
    };
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (traj, g) in batch.iter().zip(&returns) {
        let n = traj.decisions();
        if n == 0 {
            continue;
        }
        let (logits, caches) = unroll(params, &traj.states[..n])?;
        let dlogits: Vec<[f64; 2]> = (0..n)
            .map(|t| {
                let pi = action_probs(logits[t]);
                let a = traj.actions[t].index();
                let w = (g[t] - b) * scale;
                loss -= w * log_softmax(logits[t])[a];
                // d(-w log pi_a)/d logit_j = -w (1[j = a] - pi_j)
                [0, 1].map(|j| -w * (f64::from(u8::from(j == a)) - pi[j]))
            })
            .collect();
        backward(params, &caches, &dlogits, &mut grads);
    }
    Ok((grads, loss))
}

/// One REINFORCE step; returns the updated parameters and the batch loss.
pub fn reinforce_update(
    params: &PolicyParams,
    batch: &[Trajectory],
    mdp: &MdpConfig,
    optimizer: &mut Optimizer,
    lr: f64,
    baseline: bool,
) -> Result<(PolicyParams, f64)> {
    let (grads, loss) = reinforce_gradient(params, batch, mdp, baseline)?;
    for (name, block) in BLOCK_NAMES.iter().zip(grads.blocks()) {
        if let Some(pos) = block.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient in {name}[{pos}] (loss {loss}, batch of {})",
                batch.len()
            )));
        }
    }
    let mut next = params.clone();
    optimizer.step(&mut next, &grads, lr);
    Ok((next, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden_size: usize,
    pub optimizer: OptimizerKind,
    /// Subtract the batch-mean return from every return.
    pub baseline: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 32,
            lr: 1e-4,
            seed: 0,
            hidden_size: 64,
            optimizer: OptimizerKind::Sgd,
            baseline: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.hidden_size == 0 {
            return Err(Error::input("epochs, batch and hidden_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::input(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean discounted return from the first step.
    pub mean_return: f64,
    /// Mean terminal reward `l_acc / T_gen(T)`.
    pub mean_reward: f64,
    pub mean_calls: f64,
    pub mean_accepted: f64,
    pub loss: f64,
}

/// REINFORCE over shuffled offline data. Deterministic for a given seed.
pub fn train(
    data: &[DataPoint],
    init: PolicyParams,
    cfg: &TrainConfig,
    mdp: &MdpConfig,
    cost: &CostModel,
) -> Result<(PolicyParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::input("training dataset is empty"));
    }
    let mut rng = seeded(cfg.seed);
    let mut params = init;
    let mut optimizer = Optimizer::new(cfg.optimizer, params.num_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut ret, mut rew, mut calls, mut acc, mut loss) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch = chunk
                .iter()
                .map(|&i| rollout(&params, &data[i], mdp, cost, &mut rng, ActMode::Sample))
                .collect::<Result<Vec<_>>>()?;
            for t in &batch {
                ret += discounted_returns(&t.rewards, mdp.gamma)[0];
                rew += t.terminal_reward();
                calls += t.calls() as f64;
                acc += t.accepted_len as f64;
            }
            let (next, l) = reinforce_update(&params, &batch, mdp, &mut optimizer, cfg.lr, cfg.baseline)?;
            params = next;
            loss += l;
            batches += 1;
        }
        let n = data.len() as f64;
        logs.push(EpochLog {
            epoch: epoch + 1,
            mean_return: ret / n,
            mean_reward: rew / n,
            mean_calls: calls / n,
            mean_accepted: acc / n,
            loss: loss / batches as f64,
        });
    }
    Ok((params, logs))
}

/// Expected first-step return of stopping after exactly `calls` draft calls,
/// taken exactly over `d_calls`.
pub fn expected_return_at(point: &DataPoint, calls: usize, mdp: &MdpConfig, cost: &CostModel) -> Result<f64> {
    let d = point
        .dists
        .get(calls.wrapping_sub(1))
        .ok_or_else(|| Error::input(format!("no acceptance distribution for {calls} calls")))?;
    let penalty: f64 = (0..calls - 1).map(|i| mdp.gamma.powi(i as i32)).sum::<f64>() * mdp.alpha;
    Ok(mdp.gamma.powi(calls as i32 - 1) * d.mean() / cost.gen_time(calls, mdp.t_max)? - penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub mean_calls: f64,
    /// `calls_hist[t - 1]` counts points stopped after `t` calls.
    pub calls_hist: Vec<usize>,
}

/// Greedy evaluation: each point's stopping depth is deterministic and its
/// return is taken exactly over the acceptance distribution.
pub fn evaluate_greedy(params: &PolicyParams, data: &[DataPoint], mdp: &MdpConfig, cost: &CostModel) -> Result<EvalSummary> {
    let mut calls_hist = vec![0; mdp.t_max];
    let mut ret = 0.0;
    let mut rng = seeded(0);
    for point in data {
        let traj = rollout(params, point, mdp, cost, &mut rng, ActMode::Greedy)?;
        calls_hist[traj.calls() - 1] += 1;
        ret += expected_return_at(point, traj.calls(), mdp, cost)?;
    }
    let n = data.len().max(1) as f64;
    let mean_calls = calls_hist.iter().enumerate().map(|(i, c)| (i + 1) as f64 * *c as f64).sum::<f64>() / n;
    Ok(EvalSummary { mean_return: ret / n, mean_calls, calls_hist })
}

/// Monte-Carlo evaluation of the sampling policy: `repeats` rollouts per
/// point. Returns the mean first-step return and its standard error.
pub fn evaluate_sampled(
    params: &PolicyParams,
    data: &[DataPoint],
    mdp: &MdpConfig,
    cost: &CostModel,
    repeats: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = seeded(seed);
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    for _ in 0..repeats {
        for point in data {
            let traj = rollout(params, point, mdp, cost, &mut rng, ActMode::Sample)?;
            let g = discounted_returns(&traj.rewards, mdp.gamma)[0];
            s += g;
            s2 += g * g;
            n += 1.0;
        }
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}
