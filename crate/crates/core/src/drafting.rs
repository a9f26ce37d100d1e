//! Level-wise draft-tree construction.
//!
//! One call to the draft model expands every frontier node by one level and
//! reports the top-k child confidences, which is the state the stopping
//! policy observes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{TokenDistribution, TokenId, TokenModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DraftMode {
    /// The `b` most probable tokens per node. Deterministic.
    #[default]
    Topk,
    /// `b` distinct tokens drawn without replacement from the draft
    /// distribution. Required for lossless verification.
    SampleWithoutReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DraftConfig {
    /// Width of the confidence state vector.
    pub k: usize,
    /// Candidate children generated per frontier node.
    pub branch: usize,
    /// Frontier nodes kept after each level.
    pub frontier_cap: usize,
    /// Maximum number of draft calls per cycle.
    pub t_max: usize,
    pub draft_mode: DraftMode,
}

impl Default for DraftConfig {
    fn default() -> Self {
        Self { k: 10, branch: 3, frontier_cap: 4, t_max: 8, draft_mode: DraftMode::Topk }
    }
}

impl DraftConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("branch", self.branch), ("frontier_cap", self.frontier_cap), ("t_max", self.t_max)] {
            if v == 0 {
                return Err(Error::input(format!("draft config: {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftNode {
    pub token: TokenId,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Draft distribution at this node's context; set once the node has been
    /// expanded.
    pub q_dist: Option<TokenDistribution>,
    /// Draft probability of `token` given the parent's context.
    pub confidence: f64,
    /// Product of confidences along the root path.
    pub path_confidence: f64,
    /// Children in verification order.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    context: Vec<TokenId>,
    nodes: Vec<DraftNode>,
    frontier: Vec<usize>,
    calls_made: usize,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    confidence: f64,
    path_confidence: f64,
}

impl DraftTree {
    /// A root-only tree. The root token is the last token of `context`.
    pub fn new(context: Vec<TokenId>) -> Result<Self> {
        let &root = context.last().ok_or_else(|| Error::input("draft tree needs a non-empty context"))?;
        let node = DraftNode {
            token: root,
            parent: None,
            depth: 0,
            q_dist: None,
            confidence: 1.0,
            path_confidence: 1.0,
            children: Vec::new(),
        };
        Ok(Self { context, nodes: vec![node], frontier: vec![0], calls_made: 0 })
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    pub fn root_token(&self) -> TokenId {
        self.nodes[0].token
    }

    pub fn nodes(&self) -> &[DraftNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &DraftNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frontier(&self) -> &[usize] {
        &self.frontier
    }

    pub fn calls_made(&self) -> usize {
        self.calls_made
    }

    /// Tokens on the path from the root (exclusive) down to `idx`.
    pub fn path_tokens(&self, idx: usize) -> Vec<TokenId> {
        let mut path = Vec::with_capacity(self.nodes[idx].depth);
        let mut cur = idx;
        while let Some(parent) = self.nodes[cur].parent {
            path.push(self.nodes[cur].token);
            cur = parent;
        }
        path.reverse();
        path
    }

    /// Full model context at `idx`: the tree context followed by the path.
    pub fn node_context(&self, idx: usize) -> Vec<TokenId> {
        let mut ctx = self.context.clone();
        ctx.extend(self.path_tokens(idx));
        ctx
    }

    /// Runs one draft call over the frontier and returns the state vector
    /// (top-k child confidences, descending, zero-padded to `k`).
    pub fn expand_level<M, R>(&mut self, draft: &M, cfg: &DraftConfig, rng: &mut R) -> Result<Vec<f64>>
    where
        M: TokenModel + ?Sized,
        R: Rng + ?Sized,
    {
        if self.calls_made >= cfg.t_max {
            return Err(Error::State(format!("draft tree already has {} calls (t_max {})", self.calls_made, cfg.t_max)));
        }
        if self.frontier.is_empty() {
            return Err(Error::State("cannot expand an empty frontier".into()));
        }

        let mut candidates = Vec::new();
        for &parent in &self.frontier {
            let q = draft.distribution(&self.node_context(parent))?;
            let tokens = match cfg.draft_mode {
                DraftMode::Topk => q.ranked().into_iter().take(cfg.branch).collect(),
                DraftMode::SampleWithoutReplacement => sample_distinct(&q, cfg.branch, rng),
            };
            let base = self.nodes[parent].path_confidence;
            for token in tokens {
                let confidence = q.prob(token);
                candidates.push(Candidate { parent, token, confidence, path_confidence: base * confidence });
            }
            self.nodes[parent].q_dist = Some(q);
        }

        let mut state: Vec<f64> = candidates.iter().map(|c| c.confidence).collect();
        state.sort_by(|a, b| b.total_cmp(a));
        state.resize(cfg.k, 0.0);

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&candidates[a], &candidates[b]);
            cb.path_confidence
                .total_cmp(&ca.path_confidence)
                .then(ca.parent.cmp(&cb.parent))
                .then(ca.token.cmp(&cb.token))
        });
        let mut survives = vec![false; candidates.len()];
        order.iter().take(cfg.frontier_cap).for_each(|&i| survives[i] = true);
        // Sampled siblings stay in the tree as unexpanded leaves, so every
        // parent keeps its complete draw sequence for verification.
        let keep_all = cfg.draft_mode == DraftMode::SampleWithoutReplacement;

        let depth = self.calls_made + 1;
        let mut frontier = Vec::with_capacity(cfg.frontier_cap);
        // Candidates are already grouped by parent, in generation order.
        for (i, c) in candidates.iter().enumerate() {
            if !(survives[i] || keep_all) {
                continue;
            }
            let idx = self.nodes.len();
            self.nodes.push(DraftNode {
                token: c.token,
                parent: Some(c.parent),
                depth,
                q_dist: None,
                confidence: c.confidence,
                path_confidence: c.path_confidence,
                children: Vec::new(),
            });
            self.nodes[c.parent].children.push(idx);
            if survives[i] {
                frontier.push(idx);
            }
        }
        self.frontier = frontier;
        self.calls_made = depth;
        Ok(state)
    }

    /// Subtree of every node with `depth <= depth`. Nodes at the cut lose
    /// their draft distribution, matching a tree that was never expanded
    /// past that level.
    pub fn truncate(&self, depth: usize) -> Result<DraftTree> {
        if depth > self.calls_made {
            return Err(Error::input(format!("truncation depth {depth} exceeds calls made {}", self.calls_made)));
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.depth <= depth {
                remap[i] = nodes.len();
                nodes.push(n.clone());
            }
        }
        for n in &mut nodes {
            n.parent = n.parent.map(|p| remap[p]);
            n.children = n.children.iter().filter(|&&c| remap[c] != usize::MAX).map(|&c| remap[c]).collect();
            if n.depth == depth {
                n.q_dist = None;
            }
        }
        let frontier = (0..nodes.len()).filter(|&i| nodes[i].depth == depth).collect();
        Ok(DraftTree { context: self.context.clone(), nodes, frontier, calls_made: depth })
    }

    /// Attaches a hand-specified child; `parent_q` becomes the parent's draft
    /// distribution. Used to build trees directly (tests, oracles).
    pub fn add_child(&mut self, parent: usize, token: TokenId, parent_q: &TokenDistribution) -> Result<usize> {
        let p = self.nodes.get(parent).ok_or_else(|| Error::input(format!("no node {parent}")))?;
        if let Some(existing) = &p.q_dist {
            if existing != parent_q {
                return Err(Error::input("conflicting draft distributions for one node"));
            }
        }
        if p.children.iter().any(|&c| self.nodes[c].token == token) {
            return Err(Error::input(format!("token {token} already a child of node {parent}")));
        }
        let confidence = parent_q.prob(token);
        if confidence <= 0.0 {
            return Err(Error::input(format!("token {token} has zero draft probability")));
        }
        let depth = p.depth + 1;
        let path_confidence = p.path_confidence * confidence;
        let idx = self.nodes.len();
        self.nodes[parent].q_dist = Some(parent_q.clone());
        self.nodes[parent].children.push(idx);
        self.nodes.push(DraftNode {
            token,
            parent: Some(parent),
            depth,
            q_dist: None,
            confidence,
            path_confidence,
            children: Vec::new(),
        });
        self.calls_made = self.calls_made.max(depth);
        self.frontier = (0..self.nodes.len()).filter(|&i| self.nodes[i].depth == self.calls_made).collect();
        Ok(idx)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(m));
        if self.nodes[0].parent.is_some() || self.nodes.iter().skip(1).any(|n| n.parent.is_none()) {
            return bad("tree must have exactly one root at index 0".into());
        }
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            let parent = &self.nodes[n.parent.unwrap()];
            if n.depth != parent.depth + 1 {
                return bad(format!("node {i} depth {} under parent depth {}", n.depth, parent.depth));
            }
            if !parent.children.contains(&i) {
                return bad(format!("node {i} missing from its parent's children"));
            }
            let q = parent.q_dist.as_ref().map(|q| q.prob(n.token));
            if q != Some(n.confidence) {
                return bad(format!("node {i} confidence does not match parent draft distribution"));
            }
            if (n.path_confidence - parent.path_confidence * n.confidence).abs() > 1e-12 {
                return bad(format!("node {i} path confidence is not the root-path product"));
            }
        }
        if self.frontier.iter().any(|&f| self.nodes[f].depth != self.calls_made) {
            return bad("frontier nodes must sit at depth calls_made".into());
        }
        Ok(())
    }

    /// Debug dump: context plus `(token, parent, depth, confidence)` per node.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| {
                serde_json::json!({
                    "token": n.token,
                    "parent": n.parent,
                    "depth": n.depth,
                    "confidence": n.confidence,
                })
            })
            .collect();
        serde_json::json!({
            "context": self.context,
            "calls_made": self.calls_made,
            "nodes": nodes,
        })
    }
}

/// Up to `n` distinct tokens drawn sequentially without replacement, one
/// uniform per draw.
fn sample_distinct<R: Rng + ?Sized>(q: &TokenDistribution, n: usize, rng: &mut R) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(n);
    let mut remaining = Some(q.clone());
    while out.len() < n {
        let Some(dist) = remaining.take() else { break };
        let tok = dist.quantile(rng.gen());
        out.push(tok);
        remaining = dist.without(tok);
    }
    out
}
