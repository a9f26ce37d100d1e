//! Synthetic models, corpora and datasets for tests, oracles and benches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accept_dist::AcceptanceDistribution;
use crate::dataset::{Corpus, DataPoint, PointMeta};
use crate::error::{Error, Result};
use crate::lm::{sample, LookupModel, TokenDistribution, TokenId, TokenModel, Vocabulary};
use crate::rng::seeded;

/// Dirichlet(`concentration`) draw over `n` entries via normalized gammas
/// (exponentials when `concentration` is 1), optionally with `zero` masked.
pub fn random_distribution<R: Rng + ?Sized>(n: usize, concentration: f64, zero: Option<TokenId>, rng: &mut R) -> TokenDistribution {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|i| if zero == Some(i as TokenId) { 0.0 } else { gamma(concentration, rng) })
            .collect();
        if let Ok(d) = TokenDistribution::from_weights(w) {
            return d;
        }
    }
}

/// Marsaglia-Tsang gamma sampler, with the boost for shape < 1.
fn gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.gen();
        return gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Lookup model with an independent random row for every context of length
/// `order`. With `eos_mass = false` the eos token never appears.
pub fn random_lookup<R: Rng + ?Sized>(vocab: Vocabulary, order: usize, concentration: f64, eos_mass: bool, rng: &mut R) -> Result<LookupModel> {
    let n = vocab.size();
    let zero = (!eos_mass).then_some(vocab.eos());
    let mut model = LookupModel::new(vocab, order, random_distribution(n, concentration, zero, rng))?;
    let contexts = n.checked_pow(order as u32).filter(|c| *c <= 100_000).ok_or_else(|| Error::input("random lookup model too large"))?;
    for idx in 0..contexts {
        let mut ctx = vec![0; order];
        let mut rest = idx;
        for slot in ctx.iter_mut().rev() {
            *slot = (rest % n) as TokenId;
            rest /= n;
        }
        model.insert(ctx, random_distribution(n, concentration, zero, rng))?;
    }
    Ok(model)
}

/// Documents sampled from `model`, each started from a token drawn from
/// `start` and running until eos or `len` tokens.
pub fn sample_corpus<M: TokenModel + ?Sized, R: Rng + ?Sized>(model: &M, start: &[TokenId], docs: usize, len: usize, rng: &mut R) -> Result<Corpus> {
    let vocab = model.vocab();
    let mut documents = Vec::with_capacity(docs);
    for _ in 0..docs {
        let mut doc = vec![start[rng.gen_range(0..start.len())]];
        while doc.len() < len {
            let tok = sample(&model.distribution(&doc)?, rng, 1.0)?;
            doc.push(tok);
            if tok == vocab.eos() {
                break;
            }
        }
        documents.push(doc);
    }
    Corpus::new(vocab, documents)
}

/// Layout of the chain world: eos, separator tokens, chains of
/// deterministic continuations, then decoy tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainWorld {
    pub separators: usize,
    pub chain_lengths: Vec<usize>,
    /// Draft and target probability of the next chain token.
    pub draft_follow: f64,
    pub target_follow: f64,
    /// Tokens the target never emits but the draft favours wherever no
    /// chain continues.
    pub decoys: usize,
    pub decoy_mass: f64,
}

impl Default for ChainWorld {
    fn default() -> Self {
        Self {
            separators: 6,
            chain_lengths: vec![3, 5, 7, 9, 11, 13],
            draft_follow: 0.9,
            target_follow: 0.95,
            decoys: 3,
            decoy_mass: 0.2,
        }
    }
}

pub struct ChainModels {
    pub target: LookupModel,
    pub draft: LookupModel,
    pub separators: Vec<TokenId>,
    pub chain_starts: Vec<TokenId>,
}

impl ChainWorld {
    /// Token ids of every chain, in order.
    pub fn chains(&self) -> Vec<Vec<TokenId>> {
        let mut next = 1 + self.separators as TokenId;
        self.chain_lengths
            .iter()
            .map(|&len| {
                let c: Vec<TokenId> = (next..next + len as TokenId).collect();
                next += len as TokenId;
                c
            })
            .collect()
    }

    pub fn vocab_size(&self) -> usize {
        1 + self.separators + self.chain_lengths.iter().sum::<usize>() + self.decoys
    }

    /// Order-1 target and draft. Inside a chain both models follow it, the
    /// target at least as strongly as the draft, so the drafted step is
    /// always accepted. At separators and chain ends the draft favours
    /// decoys, so every drafted child is rejected and the state shows low
    /// confidence.
    pub fn models(&self) -> Result<ChainModels> {
        if self.separators == 0 || self.chain_lengths.is_empty() || self.chain_lengths.iter().any(|&l| l < 2) {
            return Err(Error::input("chain world needs separators and chains of length >= 2"));
        }
        if !(self.target_follow >= self.draft_follow && self.target_follow < 1.0) {
            return Err(Error::input("chain world needs draft_follow <= target_follow < 1"));
        }
        let n = self.vocab_size();
        let vocab = Vocabulary::new(n, 0)?;
        let separators: Vec<TokenId> = (1..=self.separators as TokenId).collect();
        let chains = self.chains();
        let chain_starts: Vec<TokenId> = chains.iter().map(|c| c[0]).collect();
        let first_decoy = (n - self.decoys) as TokenId;
        let decoys: Vec<TokenId> = (first_decoy..n as TokenId).collect();
        if self.decoys == 0 || self.decoys as f64 * self.decoy_mass >= 1.0 {
            return Err(Error::input("chain world cannot place the requested decoys"));
        }

        let spread = |tokens: &[TokenId], mass: f64, w: &mut [f64]| {
            for &t in tokens {
                w[t as usize] += mass / tokens.len() as f64;
            }
        };
        // Draft after a separator or chain end: decoys, then the remainder
        // spread over every other non-eos token.
        let mut confused = vec![0.0; n];
        spread(&decoys, self.decoys as f64 * self.decoy_mass, &mut confused);
        let others: Vec<TokenId> = (1..n as TokenId).filter(|t| !decoys.contains(t)).collect();
        spread(&others, 1.0 - self.decoys as f64 * self.decoy_mass, &mut confused);
        let confused = TokenDistribution::from_weights(confused)?;

        let mut to_starts = vec![0.0; n];
        spread(&chain_starts, 1.0, &mut to_starts);
        let to_starts = TokenDistribution::from_weights(to_starts)?;
        let mut to_seps = vec![0.0; n];
        spread(&separators, 1.0, &mut to_seps);
        let to_seps = TokenDistribution::from_weights(to_seps)?;

        let follow = |next: TokenId, p: f64| {
            let mut w = vec![0.0; n];
            w[next as usize] = p;
            spread(&separators, 1.0 - p, &mut w);
            TokenDistribution::from_weights(w)
        };

        let mut target = LookupModel::new(vocab, 1, to_starts.clone())?;
        let mut draft = LookupModel::new(vocab, 1, confused.clone())?;
        for &s in separators.iter().chain(&decoys) {
            target.insert(vec![s], to_starts.clone())?;
            draft.insert(vec![s], confused.clone())?;
        }
        for chain in &chains {
            for pair in chain.windows(2) {
                target.insert(vec![pair[0]], follow(pair[1], self.target_follow)?)?;
                draft.insert(vec![pair[0]], follow(pair[1], self.draft_follow)?)?;
            }
            let end = *chain.last().expect("chains are non-empty");
            target.insert(vec![end], to_seps.clone())?;
            draft.insert(vec![end], confused.clone())?;
        }
        Ok(ChainModels { target, draft, separators, chain_starts })
    }
}

/// Points whose distributions are identical at every call count: extra
/// calls only add cost.
pub fn constant_dataset(points: usize, t_max: usize, k: usize, seed: u64) -> Vec<DataPoint> {
    let mut rng = seeded(seed);
    (0..points)
        .map(|id| {
            let mut p: Vec<f64> = (0..=t_max).map(|j| if j <= 2 { rng.gen::<f64>() + 0.1 } else { 0.0 }).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            let d = AcceptanceDistribution::new(p).expect("normalized");
            DataPoint {
                meta: PointMeta { prefix_id: id, doc: 0, offset: 0 },
                states: (0..t_max).map(|_| random_state(k, &mut rng)).collect(),
                dists: vec![d; t_max],
            }
        })
        .collect()
}

/// Points where `i` calls accept exactly `i` tokens.
pub fn growth_dataset(points: usize, t_max: usize, k: usize, seed: u64) -> Vec<DataPoint> {
    let mut rng = seeded(seed);
    (0..points)
        .map(|id| DataPoint {
            meta: PointMeta { prefix_id: id, doc: 0, offset: 0 },
            states: (0..t_max).map(|_| random_state(k, &mut rng)).collect(),
            dists: (1..=t_max).map(|i| AcceptanceDistribution::point(t_max + 1, i)).collect(),
        })
        .collect()
}

/// Non-increasing confidences in `[0, 1]`.
fn random_state<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut s: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}
