//! Exact acceptance-length distributions of draft trees.
//!
//! Under the sequential residual scheme in [`crate::verify`], sibling
//! acceptances are disjoint events, so "node accepted and all of its children
//! rejected" partitions the outcome space:
//!
//! ```text
//! A(c_j)    = prod_{i<j} (1 - a_i) * a_j     a_i from the evolving (w, q') pair
//! P_acc(v)  = A(v) * P_acc(parent(v))        P_acc(root) = 1
//! P_stop(v) = P_acc(v) * (1 - sum_c A(c))
//! p_i       = sum_{depth(v) = i} P_stop(v)
//! ```

use serde::{Deserialize, Serialize};

use crate::drafting::DraftTree;
use crate::error::{Error, Result};
use crate::lm::{residual, TokenModel, SUM_TOLERANCE};
use crate::verify::acceptance_prob;

/// Acceptance ratios this close to 1 are treated as certain acceptance.
const CERTAIN: f64 = 1.0 - 1e-12;

/// Law of the acceptance length: `probs[j]` is P(exactly j drafted tokens
/// accepted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AcceptanceDistribution {
    probs: Vec<f64>,
}

impl AcceptanceDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::input("empty acceptance distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::input(format!("invalid acceptance probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::input(format!("acceptance distribution sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn point(len: usize, at: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[at] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }

    /// Inverse-CDF lookup for a quantile in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
        last
    }
}

impl TryFrom<Vec<f64>> for AcceptanceDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AcceptanceDistribution> for Vec<f64> {
    fn from(d: AcceptanceDistribution) -> Self {
        d.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeProb {
    /// P(node accepted), marginal over the whole verification run.
    pub acc_marginal: f64,
    /// P(node accepted | parent accepted).
    pub acc_given_parent: f64,
    /// P(node accepted and all of its children rejected).
    pub stop: f64,
}

/// Exact per-node acceptance and stopping probabilities, indexed like the
/// tree's nodes.
pub fn node_probs<M: TokenModel + ?Sized>(tree: &DraftTree, target: &M) -> Result<Vec<NodeProb>> {
    let n = tree.len();
    let mut out = vec![NodeProb { acc_marginal: 0.0, acc_given_parent: 0.0, stop: 0.0 }; n];
    out[0].acc_marginal = 1.0;
    out[0].acc_given_parent = 1.0;
    // Parents always precede children in index order.
    for v in 0..n {
        let node = tree.node(v);
        let mut child_mass = 0.0;
        if !node.children.is_empty() {
            let mut q = node
                .q_dist
                .clone()
                .ok_or_else(|| Error::Invariant(format!("node {v} has children but no draft distribution")))?;
            let mut w = target.distribution(&tree.node_context(v))?;
            let mut reach = 1.0;
            for (j, &c) in node.children.iter().enumerate() {
                let token = tree.node(c).token;
                let a = acceptance_prob(&w, &q, token)?;
                let accept = reach * a;
                out[c].acc_given_parent = accept;
                out[c].acc_marginal = accept * out[v].acc_marginal;
                child_mass += accept;
                if a >= CERTAIN {
                    child_mass += reach * (1.0 - a);
                    out[c].acc_given_parent += reach * (1.0 - a);
                    out[c].acc_marginal = out[c].acc_given_parent * out[v].acc_marginal;
                    break;
                }
                reach *= 1.0 - a;
                if j + 1 == node.children.len() {
                    break;
                }
                w = residual(&w, &q)?;
                match q.without(token) {
                    Some(next) => q = next,
                    None => break,
                }
            }
        }
        out[v].stop = out[v].acc_marginal * (1.0 - child_mass).max(0.0);
    }
    Ok(out)
}

/// `p_i = sum of P_stop over nodes at depth i`, zero-padded to `t_max + 1`
/// entries.
pub fn length_distribution<M: TokenModel + ?Sized>(
    tree: &DraftTree,
    target: &M,
    t_max: usize,
) -> Result<AcceptanceDistribution> {
    let probs = node_probs(tree, target)?;
    let mut p = vec![0.0; t_max.max(tree.calls_made()) + 1];
    for (node, np) in tree.nodes().iter().zip(&probs) {
        p[node.depth] += np.stop;
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Invariant(format!("stop probabilities sum to {sum}")));
    }
    p.iter_mut().for_each(|x| *x /= sum);
    AcceptanceDistribution::new(p)
}

/// `d_i = length_distribution(truncate(max_tree, i))` for `i = 1..=calls_made`.
pub fn distributions_per_call<M: TokenModel + ?Sized>(
    max_tree: &DraftTree,
    target: &M,
    t_max: usize,
) -> Result<Vec<AcceptanceDistribution>> {
    (1..=max_tree.calls_made())
        .map(|i| length_distribution(&max_tree.truncate(i)?, target, t_max))
        .collect()
}
