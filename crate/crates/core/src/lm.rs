//! Exact toy token models and the distribution arithmetic used by verification.
//!
//! Every model here returns a fully materialized categorical distribution, so
//! acceptance probabilities, residuals and output laws can be computed exactly
//! instead of estimated.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Sum tolerance accepted when validating a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Residual mass at or below this is treated as identically zero.
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    eos: TokenId,
}

impl Vocabulary {
    pub fn new(size: usize, eos: TokenId) -> Result<Self> {
        if size < 2 {
            return Err(Error::input(format!("vocabulary size must be >= 2, got {size}")));
        }
        if eos as usize >= size {
            return Err(Error::input(format!("eos {eos} outside vocabulary of size {size}")));
        }
        Ok(Self { size, eos })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.size) {
            Some(t) => Err(Error::input(format!(
                "token {t} outside vocabulary of size {}",
                self.size
            ))),
            None => Ok(()),
        }
    }
}

/// A categorical distribution over token ids `0..len`.
///
/// Constructors always divide by the computed sum, so chained arithmetic does
/// not accumulate normalization drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates that `probs` is a distribution (non-negative, sums to 1
    /// within [`SUM_TOLERANCE`]) and renormalizes it exactly.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&probs)?;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::input(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self::normalized(probs, sum))
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&weights)?;
        if sum <= 0.0 {
            return Err(Error::input("weights sum to zero"));
        }
        Ok(Self::normalized(weights, sum))
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn point(n: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; n];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    fn normalized(mut probs: Vec<f64>, sum: f64) -> Self {
        probs.iter_mut().for_each(|p| *p /= sum);
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    /// `dist^(1/temperature)`, renormalized.
    pub fn tempered(&self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::input(format!("temperature must be positive, got {temperature}")));
        }
        if temperature == 1.0 {
            return Ok(self.clone());
        }
        // Work in log space so large temperatures do not underflow.
        let inv = 1.0 / temperature;
        let logs: Vec<f64> = self
            .probs
            .iter()
            .map(|&p| if p > 0.0 { p.ln() * inv } else { f64::NEG_INFINITY })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::from_weights(logs.iter().map(|&l| (l - max).exp()).collect())
    }

    /// Tokens with non-zero mass ranked by probability descending, ties by id.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.probs.len() as TokenId)
            .filter(|&t| self.probs[t as usize] > 0.0)
            .collect();
        ids.sort_by(|&a, &b| {
            self.probs[b as usize]
                .total_cmp(&self.probs[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    /// Copy with `token` zeroed and the rest renormalized. `None` when no
    /// mass remains.
    pub fn without(&self, token: TokenId) -> Option<Self> {
        let mut probs = self.probs.clone();
        probs[token as usize] = 0.0;
        let sum: f64 = probs.iter().sum();
        (sum > 0.0).then(|| Self::normalized(probs, sum))
    }

    /// Inverse-CDF lookup for a quantile in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> TokenId {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return i as TokenId;
            }
        }
        // Rounding left `acc` a hair under 1.
        last as TokenId
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(d: TokenDistribution) -> Self {
        d.probs
    }
}

fn checked_sum(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("empty distribution"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::input(format!("invalid probability {v}")));
    }
    Ok(values.iter().sum())
}

/// Draws a token from `dist^(1/temperature)` using exactly one uniform.
pub fn sample<R: Rng + ?Sized>(
    dist: &TokenDistribution,
    rng: &mut R,
    temperature: f64,
) -> Result<TokenId> {
    let u: f64 = rng.gen();
    if temperature == 1.0 {
        return Ok(dist.quantile(u));
    }
    Ok(dist.tempered(temperature)?.quantile(u))
}

/// The speculative-sampling correction `normalize(max(0, p - q))`.
pub fn residual(p: &TokenDistribution, q: &TokenDistribution) -> Result<TokenDistribution> {
    if p.len() != q.len() {
        return Err(Error::input(format!(
            "residual over mismatched vocabularies {} and {}",
            p.len(),
            q.len()
        )));
    }
    let gaps: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).max(0.0)).collect();
    let sum: f64 = gaps.iter().sum();
    if sum <= RESIDUAL_FLOOR {
        return Err(Error::DegenerateResidual);
    }
    Ok(TokenDistribution::normalized(gaps, sum))
}

/// A conditional next-token model. Implementations are immutable, so a model
/// can be shared across threads; randomness always comes from the caller.
pub trait TokenModel: Send + Sync {
    fn vocab(&self) -> Vocabulary;

    /// Next-token distribution given `context`. Implementations validate
    /// that every context token is inside the vocabulary.
    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution>;
}

impl<M: TokenModel + ?Sized> TokenModel for &M {
    fn vocab(&self) -> Vocabulary {
        (**self).vocab()
    }
    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        (**self).distribution(context)
    }
}

impl<M: TokenModel + ?Sized> TokenModel for Box<M> {
    fn vocab(&self) -> Vocabulary {
        (**self).vocab()
    }
    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        (**self).distribution(context)
    }
}

#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocabulary,
}

impl UniformModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl TokenModel for UniformModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        self.vocab.check_tokens(context)?;
        Ok(TokenDistribution::uniform(self.vocab.size()))
    }
}

/// Explicit conditional table keyed by the last `order` tokens.
///
/// Contexts shorter than `order`, or keys missing from the table, fall back
/// to the unigram row.
#[derive(Debug, Clone)]
pub struct LookupModel {
    vocab: Vocabulary,
    order: usize,
    unigram: TokenDistribution,
    table: HashMap<Vec<TokenId>, TokenDistribution>,
}

impl LookupModel {
    pub fn new(vocab: Vocabulary, order: usize, unigram: TokenDistribution) -> Result<Self> {
        check_width(&unigram, vocab)?;
        Ok(Self { vocab, order, unigram, table: HashMap::new() })
    }

    pub fn insert(&mut self, context: Vec<TokenId>, dist: TokenDistribution) -> Result<()> {
        if context.len() != self.order {
            return Err(Error::input(format!(
                "lookup key has length {}, model order is {}",
                context.len(),
                self.order
            )));
        }
        self.vocab.check_tokens(&context)?;
        check_width(&dist, self.vocab)?;
        self.table.insert(context, dist);
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn unigram(&self) -> &TokenDistribution {
        &self.unigram
    }

    /// Rows sorted by key, for deterministic serialization.
    pub fn rows(&self) -> Vec<(&Vec<TokenId>, &TokenDistribution)> {
        let mut rows: Vec<_> = self.table.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows
    }
}

impl TokenModel for LookupModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        self.vocab.check_tokens(context)?;
        if context.len() < self.order {
            return Ok(self.unigram.clone());
        }
        let key = &context[context.len() - self.order..];
        Ok(self.table.get(key).unwrap_or(&self.unigram).clone())
    }
}

fn check_width(dist: &TokenDistribution, vocab: Vocabulary) -> Result<()> {
    if dist.len() != vocab.size() {
        return Err(Error::input(format!(
            "distribution over {} tokens, vocabulary has {}",
            dist.len(),
            vocab.size()
        )));
    }
    Ok(())
}

/// Add-lambda smoothed n-gram model; `order` is the number of conditioning
/// tokens, so order 1 is a bigram model.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    lambda: f64,
    unigram_counts: Vec<u64>,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
}

impl NGramModel {
    /// Counts n-grams inside each document; n-grams never span documents.
    pub fn fit(vocab: Vocabulary, order: usize, lambda: f64, documents: &[Vec<TokenId>]) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("smoothing lambda must be positive, got {lambda}")));
        }
        let mut unigram_counts = vec![0u64; vocab.size()];
        let mut counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
        for doc in documents {
            vocab.check_tokens(doc)?;
            for (i, &tok) in doc.iter().enumerate() {
                unigram_counts[tok as usize] += 1;
                if order > 0 && i >= order {
                    *counts
                        .entry(doc[i - order..i].to_vec())
                        .or_default()
                        .entry(tok)
                        .or_default() += 1;
                }
            }
        }
        Ok(Self { vocab, order, lambda, unigram_counts, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn smoothed(&self, counts: impl Fn(TokenId) -> u64, total: u64) -> Result<TokenDistribution> {
        let v = self.vocab.size() as f64;
        let denom = total as f64 + self.lambda * v;
        let probs = (0..self.vocab.size() as TokenId)
            .map(|t| (counts(t) as f64 + self.lambda) / denom)
            .collect();
        TokenDistribution::from_weights(probs)
    }
}

impl TokenModel for NGramModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        self.vocab.check_tokens(context)?;
        if self.order == 0 || context.len() < self.order {
            let total = self.unigram_counts.iter().sum();
            return self.smoothed(|t| self.unigram_counts[t as usize], total);
        }
        let key = &context[context.len() - self.order..];
        match self.counts.get(key) {
            Some(next) => {
                let total = next.values().sum();
                self.smoothed(|t| next.get(&t).copied().unwrap_or(0), total)
            }
            None => self.smoothed(|_| 0, 0),
        }
    }
}

/// Wraps a model and tempers every distribution it returns.
pub struct Tempered<M> {
    inner: M,
    temperature: f64,
}

impl<M: TokenModel> Tempered<M> {
    pub fn new(inner: M, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::input(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { inner, temperature })
    }
}

impl<M: TokenModel> TokenModel for Tempered<M> {
    fn vocab(&self) -> Vocabulary {
        self.inner.vocab()
    }

    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        self.inner.distribution(context)?.tempered(self.temperature)
    }
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupRow {
    pub context: Vec<TokenId>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRow {
    pub context: Vec<TokenId>,
    /// `(token, count)` pairs sorted by token.
    pub next: Vec<(TokenId, u64)>,
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelFile {
    Uniform {
        vocab_size: usize,
        eos: TokenId,
    },
    Lookup {
        vocab_size: usize,
        eos: TokenId,
        order: usize,
        unigram: Vec<f64>,
        table: Vec<LookupRow>,
    },
    Ngram {
        vocab_size: usize,
        eos: TokenId,
        order: usize,
        lambda: f64,
        unigram_counts: Vec<u64>,
        counts: Vec<CountRow>,
    },
}

/// A model loaded from a [`ModelFile`].
#[derive(Debug, Clone)]
pub enum AnyModel {
    Uniform(UniformModel),
    Lookup(LookupModel),
    NGram(NGramModel),
}

impl TokenModel for AnyModel {
    fn vocab(&self) -> Vocabulary {
        match self {
            AnyModel::Uniform(m) => m.vocab(),
            AnyModel::Lookup(m) => m.vocab(),
            AnyModel::NGram(m) => m.vocab(),
        }
    }

    fn distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        match self {
            AnyModel::Uniform(m) => m.distribution(context),
            AnyModel::Lookup(m) => m.distribution(context),
            AnyModel::NGram(m) => m.distribution(context),
        }
    }
}

impl From<LookupModel> for AnyModel {
    fn from(m: LookupModel) -> Self {
        AnyModel::Lookup(m)
    }
}

impl From<NGramModel> for AnyModel {
    fn from(m: NGramModel) -> Self {
        AnyModel::NGram(m)
    }
}

impl AnyModel {
    pub fn to_file(&self) -> ModelFile {
        match self {
            AnyModel::Uniform(m) => ModelFile::Uniform { vocab_size: m.vocab.size(), eos: m.vocab.eos() },
            AnyModel::Lookup(m) => ModelFile::Lookup {
                vocab_size: m.vocab.size(),
                eos: m.vocab.eos(),
                order: m.order,
                unigram: m.unigram.probs().to_vec(),
                table: m
                    .rows()
                    .into_iter()
                    .map(|(k, d)| LookupRow { context: k.clone(), probs: d.probs().to_vec() })
                    .collect(),
            },
            AnyModel::NGram(m) => {
                let mut counts: Vec<CountRow> = m
                    .counts
                    .iter()
                    .map(|(ctx, next)| {
                        let mut next: Vec<(TokenId, u64)> = next.iter().map(|(&t, &c)| (t, c)).collect();
                        next.sort_unstable();
                        CountRow { context: ctx.clone(), next }
                    })
                    .collect();
                counts.sort_by(|a, b| a.context.cmp(&b.context));
                ModelFile::Ngram {
                    vocab_size: m.vocab.size(),
                    eos: m.vocab.eos(),
                    order: m.order,
                    lambda: m.lambda,
                    unigram_counts: m.unigram_counts.clone(),
                    counts,
                }
            }
        }
    }

    /// Builds and validates a model from its document form.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        match file {
            ModelFile::Uniform { vocab_size, eos } => {
                Ok(AnyModel::Uniform(UniformModel::new(Vocabulary::new(vocab_size, eos)?)))
            }
            ModelFile::Lookup { vocab_size, eos, order, unigram, table } => {
                let vocab = Vocabulary::new(vocab_size, eos)?;
                let mut model = LookupModel::new(vocab, order, TokenDistribution::new(unigram)?)?;
                for row in table {
                    model.insert(row.context, TokenDistribution::new(row.probs)?)?;
                }
                Ok(AnyModel::Lookup(model))
            }
            ModelFile::Ngram { vocab_size, eos, order, lambda, unigram_counts, counts } => {
                let vocab = Vocabulary::new(vocab_size, eos)?;
                if unigram_counts.len() != vocab_size {
                    return Err(Error::input("unigram_counts length differs from vocab_size"));
                }
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::input(format!("smoothing lambda must be positive, got {lambda}")));
                }
                let mut table = HashMap::new();
                for row in counts {
                    if row.context.len() != order {
                        return Err(Error::input("n-gram context length differs from order"));
                    }
                    vocab.check_tokens(&row.context)?;
                    let next: HashMap<TokenId, u64> = row.next.into_iter().collect();
                    vocab.check_tokens(&next.keys().copied().collect::<Vec<_>>())?;
                    table.insert(row.context, next);
                }
                Ok(AnyModel::NGram(NGramModel { vocab, order, lambda, unigram_counts, counts: table }))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn uniform_model_is_flat() {
        let m = UniformModel::new(Vocabulary::new(4, 0).unwrap());
        assert_eq!(m.distribution(&[1, 2]).unwrap().probs(), &[0.25; 4]);
    }

    #[test]
    fn out_of_range_context_is_rejected() {
        let m = UniformModel::new(Vocabulary::new(4, 0).unwrap());
        assert!(matches!(m.distribution(&[4]), Err(Error::Input(_))));
    }

    #[test]
    fn lookup_reads_back_rows_and_falls_back() {
        let vocab = Vocabulary::new(2, 1).unwrap();
        let mut m = LookupModel::new(vocab, 1, TokenDistribution::uniform(2)).unwrap();
        m.insert(vec![0], dist(&[0.7, 0.3])).unwrap();
        assert_eq!(m.distribution(&[1, 0]).unwrap().probs(), &[0.7, 0.3]);
        assert_eq!(m.distribution(&[]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(m.distribution(&[1]).unwrap().probs(), &[0.5, 0.5]);
    }

    #[test]
    fn bigram_add_one_on_abab() {
        // A=0, B=1: both bigrams after A are AB.
        let vocab = Vocabulary::new(2, 1).unwrap();
        let m = NGramModel::fit(vocab, 1, 1.0, &[vec![0, 1, 0, 1]]).unwrap();
        let d = m.distribution(&[0]).unwrap();
        assert!((d.prob(1) - 0.75).abs() < 1e-15);
        assert!((d.prob(0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ngram_truncates_long_contexts() {
        let vocab = Vocabulary::new(3, 2).unwrap();
        let m = NGramModel::fit(vocab, 1, 1.0, &[vec![0, 1, 2, 0, 1]]).unwrap();
        assert_eq!(m.distribution(&[2, 2, 0]).unwrap(), m.distribution(&[0]).unwrap());
    }

    #[test]
    fn point_mass_always_samples_its_token() {
        let d = dist(&[1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample(&d, &mut rng, 1.0).unwrap(), 0);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let d = dist(&[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| sample(&d, &mut rng, 1.0).unwrap() == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.002, "freq {freq}");
    }

    #[test]
    fn huge_temperature_flattens() {
        let d = dist(&[0.9, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = d.tempered(1e6).unwrap();
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| t.quantile(rng.gen()) == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let d = dist(&[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample(&d, &mut rng, 0.0).is_err());
        assert!(sample(&d, &mut rng, -1.0).is_err());
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap().probs(), &[0.0, 1.0]);
        assert_eq!(residual(&dist(&[0.6, 0.4]), &dist(&[0.2, 0.8])).unwrap().probs(), &[1.0, 0.0]);
        assert!(matches!(
            residual(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])),
            Err(Error::DegenerateResidual)
        ));
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(TokenDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(TokenDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(TokenDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(TokenDistribution::new(vec![]).is_err());
    }

    #[test]
    fn ranked_breaks_ties_by_id() {
        assert_eq!(dist(&[0.25, 0.5, 0.25, 0.0]).ranked(), vec![1, 0, 2]);
    }

    #[test]
    fn model_file_round_trip() {
        let vocab = Vocabulary::new(3, 2).unwrap();
        let ngram: AnyModel = NGramModel::fit(vocab, 2, 0.5, &[vec![0, 1, 2, 0, 1, 1]]).unwrap().into();
        let back = AnyModel::from_file(serde_json::from_str(&serde_json::to_string(&ngram.to_file()).unwrap()).unwrap())
            .unwrap();
        for ctx in [vec![], vec![0], vec![0, 1], vec![1, 1], vec![2, 2]] {
            assert_eq!(ngram.distribution(&ctx).unwrap(), back.distribution(&ctx).unwrap());
        }
    }

    #[test]
    fn loader_rejects_bad_rows() {
        let text = r#"{"kind":"lookup","vocab_size":2,"eos":0,"order":1,"unigram":[0.5,0.5],
                       "table":[{"context":[0],"probs":[0.9,0.3]}]}"#;
        let file: ModelFile = serde_json::from_str(text).unwrap();
        assert!(AnyModel::from_file(file).is_err());
        let unknown = r#"{"kind":"uniform","vocab_size":2,"eos":0,"extra":1}"#;
        assert!(serde_json::from_str::<ModelFile>(unknown).is_err());
    }
}
