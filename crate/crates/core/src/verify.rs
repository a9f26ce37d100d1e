//! Lossless speculative verification of draft chains and trees.
//!
//! Randomness contract: every acceptance test consumes exactly one uniform
//! draw, followed by one draw for the bonus token. Trees are walked in
//! pre-order, siblings in their stored order, so a seed fixes the outcome.

use rand::Rng;

use crate::drafting::DraftTree;
use crate::error::{Error, Result};
use crate::lm::{residual, TokenDistribution, TokenId, TokenModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyResult {
    /// Accepted node indices from the root's child downward. For chains the
    /// indices are positions `1..=n`.
    pub accepted_path: Vec<usize>,
    pub accepted_len: usize,
    pub bonus_token: TokenId,
}

/// `min(1, p(x) / q(x))`.
pub fn acceptance_prob(p: &TokenDistribution, q: &TokenDistribution, token: TokenId) -> Result<f64> {
    let qx = q.prob(token);
    if qx <= 0.0 {
        return Err(Error::input(format!("token {token} has zero draft probability")));
    }
    Ok((p.prob(token) / qx).min(1.0))
}

/// Classic chain verification: each drafted token carries the draft
/// distribution it was proposed from.
pub fn verify_chain<M, R>(
    target: &M,
    context: &[TokenId],
    drafted: &[(TokenId, TokenDistribution)],
    rng: &mut R,
) -> Result<VerifyResult>
where
    M: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut ctx = context.to_vec();
    let mut accepted_path = Vec::new();
    for (i, (token, q)) in drafted.iter().enumerate() {
        let p = target.distribution(&ctx)?;
        let a = acceptance_prob(&p, q, *token)?;
        if rng.gen::<f64>() < a {
            accepted_path.push(i + 1);
            ctx.push(*token);
        } else {
            let w = residual(&p, q)?;
            let bonus_token = w.quantile(rng.gen());
            return Ok(VerifyResult { accepted_len: accepted_path.len(), accepted_path, bonus_token });
        }
    }
    let p = target.distribution(&ctx)?;
    let bonus_token = p.quantile(rng.gen());
    Ok(VerifyResult { accepted_len: accepted_path.len(), accepted_path, bonus_token })
}

/// Multi-candidate recursive rejection sampling over a draft tree.
///
/// At each accepted node the children are tried in order against a working
/// target `w` and working draft `q'`; each rejection replaces `w` by the
/// residual and removes the rejected token from `q'`. At most one child is
/// accepted per node.
pub fn verify_tree<M, R>(target: &M, tree: &DraftTree, rng: &mut R) -> Result<VerifyResult>
where
    M: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut ctx = tree.context().to_vec();
    let mut node = 0;
    let mut accepted_path = Vec::new();
    'walk: loop {
        let mut w = target.distribution(&ctx)?;
        let children = &tree.node(node).children;
        if !children.is_empty() {
            let mut q = tree
                .node(node)
                .q_dist
                .clone()
                .ok_or_else(|| Error::Invariant(format!("node {node} has children but no draft distribution")))?;
            for (j, &child) in children.iter().enumerate() {
                let token = tree.node(child).token;
                let a = acceptance_prob(&w, &q, token)?;
                if rng.gen::<f64>() < a {
                    accepted_path.push(child);
                    ctx.push(token);
                    node = child;
                    continue 'walk;
                }
                w = residual(&w, &q).map_err(|e| match e {
                    Error::DegenerateResidual => {
                        Error::Invariant(format!("degenerate residual after rejecting child {child} of node {node}"))
                    }
                    other => other,
                })?;
                if j + 1 < children.len() {
                    q = q
                        .without(token)
                        .ok_or_else(|| Error::Invariant(format!("draft mass exhausted at node {node}")))?;
                }
            }
        }
        let bonus_token = w.quantile(rng.gen());
        return Ok(VerifyResult { accepted_len: accepted_path.len(), accepted_path, bonus_token });
    }
}
