//! The draft-call decision process: per-step penalty, terminal
//! throughput reward and the draft-phase latency model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpConfig {
    /// Penalty charged for every continue decision.
    pub alpha: f64,
    pub gamma: f64,
    pub t_max: usize,
    pub k: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self { alpha: 0.01, gamma: 0.99, t_max: 8, k: 10 }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::input(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.t_max == 0 || self.k == 0 {
            return Err(Error::input("t_max and k must be >= 1"));
        }
        Ok(())
    }
}

/// Latencies in draft-forward units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Fixed per-cycle overhead of the draft phase.
    pub t_o: f64,
    /// One draft-model forward pass.
    pub t_f: f64,
    /// One stopping-policy evaluation.
    pub t_eye: f64,
    /// One target-model verification pass; `None` means `10 * t_f`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_pass: Option<f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { t_o: 0.0, t_f: 1.0, t_eye: 0.1, target_pass: None }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.t_o) && ok(self.t_eye) && self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(Error::input(format!("invalid cost model {self:?}")));
        }
        if let Some(t) = self.target_pass {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::input(format!("target_pass must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn target_cost(&self) -> f64 {
        self.target_pass.unwrap_or(10.0 * self.t_f)
    }

    /// Draft-phase latency after `t` calls. Below the cap the policy runs
    /// once more than the draft model; at the cap it does not run after the
    /// final call.
    pub fn gen_time(&self, t: usize, t_max: usize) -> Result<f64> {
        if t == 0 || t > t_max {
            return Err(Error::input(format!("gen_time step {t} outside 1..={t_max}")));
        }
        let tf = t as f64;
        let evals = if t < t_max { tf + 1.0 } else { tf };
        Ok(self.t_o + self.t_f * tf + self.t_eye * evals)
    }

    /// Terminal reward `l_acc / gen_time(T)`.
    pub fn terminal_reward(&self, accepted_len: usize, t: usize, t_max: usize) -> Result<f64> {
        Ok(accepted_len as f64 / self.gen_time(t, t_max)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Stop = 0,
    Continue = 1,
}

impl Action {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Stop
        } else {
            Action::Continue
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Draft calls made so far (1-based).
    pub t: usize,
    pub state_vec: Vec<f64>,
    pub done: bool,
}

impl EnvState {
    /// State after the first draft call.
    pub fn start(state_vec: Vec<f64>) -> Self {
        Self { t: 1, state_vec, done: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// Advances the environment. `accepted_len` supplies the acceptance length
/// on termination (sampled offline from `d_T`, or measured online);
/// `next_state` runs the next draft call on continuation.
pub fn step(
    env: &mut EnvState,
    action: Action,
    mdp: &MdpConfig,
    cost: &CostModel,
    next_state: impl FnOnce() -> Result<Vec<f64>>,
    accepted_len: impl FnOnce(usize) -> Result<usize>,
) -> Result<StepOutcome> {
    if env.done {
        return Err(Error::State("step called on a finished episode".into()));
    }
    if action == Action::Continue && env.t < mdp.t_max {
        env.state_vec = next_state()?;
        env.t += 1;
        return Ok(StepOutcome { reward: -mdp.alpha, done: false });
    }
    env.done = true;
    let ell = accepted_len(env.t)?;
    Ok(StepOutcome { reward: cost.terminal_reward(ell, env.t, mdp.t_max)?, done: true })
}

/// Returns-to-go `G_t = sum_{t' >= t} gamma^(t' - t) r_t'`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost() -> CostModel {
        CostModel { t_o: 0.0, t_f: 1.0, t_eye: 0.1, target_pass: None }
    }

    #[test]
    fn gen_time_examples() {
        let c = cost();
        assert_eq!(c.gen_time(3, 8).unwrap(), 0.0 + 1.0 * 3.0 + 0.1 * 4.0);
        assert_eq!(c.gen_time(8, 8).unwrap(), 0.0 + 1.0 * 8.0 + 0.1 * 8.0);
        assert!((c.gen_time(3, 8).unwrap() - 3.4).abs() < 1e-15);
        assert!((c.gen_time(8, 8).unwrap() - 8.8).abs() < 1e-15);
        let free = CostModel { t_eye: 0.0, ..c };
        for t in 1..=8 {
            assert_eq!(free.gen_time(t, 8).unwrap(), t as f64);
        }
        assert!(c.gen_time(0, 8).is_err());
        assert!(c.gen_time(9, 8).is_err());
    }

    #[test]
    fn gen_time_is_increasing() {
        let c = cost();
        for t in 1..8 {
            assert!(c.gen_time(t + 1, 8).unwrap() > c.gen_time(t, 8).unwrap());
        }
    }

    #[test]
    fn continue_is_penalized() {
        let mdp = MdpConfig::default();
        let mut env = EnvState { t: 2, state_vec: vec![0.0; 10], done: false };
        let out = step(&mut env, Action::Continue, &mdp, &cost(), || Ok(vec![0.5; 10]), |_| unreachable!()).unwrap();
        assert_eq!(out, StepOutcome { reward: -0.01, done: false });
        assert_eq!(env.t, 3);
        assert_eq!(env.state_vec, vec![0.5; 10]);
    }

    #[test]
    fn stop_pays_throughput() {
        let mdp = MdpConfig::default();
        let mut env = EnvState { t: 3, state_vec: vec![0.0; 10], done: false };
        let out = step(&mut env, Action::Stop, &mdp, &cost(), || unreachable!(), |_| Ok(5)).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 5.0 / cost().gen_time(3, 8).unwrap());
        assert!((out.reward - 1.4706).abs() < 1e-4);
        assert!(step(&mut env, Action::Stop, &mdp, &cost(), || unreachable!(), |_| Ok(5)).is_err());
    }

    #[test]
    fn continue_at_cap_terminates() {
        let mdp = MdpConfig::default();
        let mut env = EnvState { t: 8, state_vec: vec![0.0; 10], done: false };
        let out = step(&mut env, Action::Continue, &mdp, &cost(), || unreachable!(), Ok).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 8.0 / 8.8);
    }

    #[test]
    fn returns_to_go() {
        let a = 0.01;
        let r = 2.0;
        let g = discounted_returns(&[-a, -a, r], 0.99);
        assert_eq!(g[0], -a + 0.99 * (-a + 0.99 * r));
        assert!((g[0] - (-a - 0.99 * a + 0.9801 * r)).abs() < 1e-15);
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(discounted_returns(&[r], 0.99), vec![r]);
    }
}
