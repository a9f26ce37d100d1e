//! Offline training data: corpus prefixes, per-prefix state sequences and
//! per-call-count acceptance-length distributions, plus JSONL persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accept_dist::{distributions_per_call, AcceptanceDistribution};
use crate::drafting::{DraftConfig, DraftMode, DraftTree};
use crate::error::{Error, Result};
use crate::lm::{TokenId, TokenModel, Vocabulary};

pub const DATASET_VERSION: u32 = 1;
pub const CORPUS_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMeta {
    pub prefix_id: usize,
    pub doc: usize,
    /// Prefix length within the document.
    pub offset: usize,
}

/// One training example: the state after each draft call and the
/// acceptance-length law after each call count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPoint {
    pub meta: PointMeta,
    pub states: Vec<Vec<f64>>,
    pub dists: Vec<AcceptanceDistribution>,
}

impl DataPoint {
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.states.len() != self.dists.len() {
            return Err(Error::input(format!(
                "data point has {} states and {} distributions",
                self.states.len(),
                self.dists.len()
            )));
        }
        let k = self.states[0].len();
        for s in &self.states {
            if s.len() != k {
                return Err(Error::input("state vectors differ in length"));
            }
            if let Some(x) = s.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::input(format!("state entry {x} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One document per line, whitespace-separated token ids.
    Ids,
    /// One document per line, each byte is a token (vocabulary 256).
    Bytes,
}

/// Token documents with the vocabulary they are written in.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub documents: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn new(vocab: Vocabulary, documents: Vec<Vec<TokenId>>) -> Result<Self> {
        for d in &documents {
            vocab.check_tokens(d)?;
        }
        Ok(Self { vocab, documents })
    }

    /// Parses `# radar-corpus v1 format=ids|bytes vocab=V eos=E` followed
    /// by one document per line. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse { line: 1, msg: "missing corpus header".into() })?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("#") || fields.next() != Some("radar-corpus") {
            return Err(Error::Parse { line: 1, msg: "expected '# radar-corpus' header".into() });
        }
        if fields.next() != Some(CORPUS_VERSION) {
            return Err(Error::Parse { line: 1, msg: format!("unsupported corpus version (expected {CORPUS_VERSION})") });
        }
        let (mut format, mut size, mut eos) = (None, None, None);
        for f in fields {
            let bad = || Error::Parse { line: 1, msg: format!("bad header field {f:?}") };
            let (key, value) = f.split_once('=').ok_or_else(bad)?;
            match key {
                "format" => {
                    format = Some(match value {
                        "ids" => CorpusFormat::Ids,
                        "bytes" => CorpusFormat::Bytes,
                        _ => return Err(bad()),
                    })
                }
                "vocab" => size = Some(value.parse::<usize>().map_err(|_| bad())?),
                "eos" => eos = Some(value.parse::<TokenId>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let format = format.unwrap_or(CorpusFormat::Ids);
        let size = match (format, size) {
            (CorpusFormat::Bytes, None) => 256,
            (_, Some(v)) => v,
            (CorpusFormat::Ids, None) => return Err(Error::Parse { line: 1, msg: "missing vocab=".into() }),
        };
        let vocab = Vocabulary::new(size, eos.unwrap_or(0))?;
        let mut documents = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Vec<TokenId> = match format {
                CorpusFormat::Ids => line
                    .split_whitespace()
                    .map(|t| t.parse::<TokenId>().map_err(|e| Error::Parse { line: lineno, msg: format!("{t:?}: {e}") }))
                    .collect::<Result<_>>()?,
                CorpusFormat::Bytes => line.bytes().map(TokenId::from).collect(),
            };
            vocab.check_tokens(&doc).map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
            documents.push(doc);
        }
        Ok(Self { vocab, documents })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Writes the `ids` format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# radar-corpus {CORPUS_VERSION} format=ids vocab={} eos={}\n",
            self.vocab.size(),
            self.vocab.eos()
        );
        for d in &self.documents {
            let line: Vec<String> = d.iter().map(|t| t.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Prefixes `doc[..offset]` for `offset = min_context, min_context +
    /// stride, ...` up to the document length, in document order.
    pub fn prefixes(&self, rule: &PrefixRule) -> Vec<(PointMeta, Vec<TokenId>)> {
        let mut out = Vec::new();
        let start = rule.min_context.max(1);
        'docs: for (doc, tokens) in self.documents.iter().enumerate() {
            let mut offset = start;
            while offset <= tokens.len() {
                if rule.max_prefixes.is_some_and(|m| out.len() >= m) {
                    break 'docs;
                }
                out.push((PointMeta { prefix_id: out.len(), doc, offset }, tokens[..offset].to_vec()));
                offset += rule.stride;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefixRule {
    pub stride: usize,
    pub min_context: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_prefixes: Option<usize>,
}

impl Default for PrefixRule {
    fn default() -> Self {
        Self { stride: 4, min_context: 1, max_prefixes: None }
    }
}

impl PrefixRule {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::input("prefix stride must be >= 1"));
        }
        Ok(())
    }
}

/// Builds one data point: a maximal top-k tree with `t_max` calls, its
/// states, and the exact distribution of every truncation.
pub fn build_point<T, D>(
    target: &T,
    draft: &D,
    cfg: &DraftConfig,
    meta: PointMeta,
    prefix: Vec<TokenId>,
) -> Result<DataPoint>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    let cfg = DraftConfig { draft_mode: DraftMode::Topk, ..*cfg };
    let mut tree = DraftTree::new(prefix)?;
    // Top-k drafting never touches the generator.
    let mut rng = crate::rng::seeded(0);
    let states = (0..cfg.t_max).map(|_| tree.expand_level(draft, &cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
    let dists = distributions_per_call(&tree, target, cfg.t_max)?;
    Ok(DataPoint { meta, states, dists })
}

/// Builds data points for every prefix, in prefix order, on `workers`
/// threads.
pub fn build_points<T, D>(
    corpus: &Corpus,
    target: &T,
    draft: &D,
    cfg: &DraftConfig,
    rule: &PrefixRule,
    workers: usize,
) -> Result<Vec<DataPoint>>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    cfg.validate()?;
    rule.validate()?;
    if target.vocab() != corpus.vocab || draft.vocab() != corpus.vocab {
        return Err(Error::input(format!(
            "vocabulary mismatch: corpus {:?}, target {:?}, draft {:?}",
            corpus.vocab,
            target.vocab(),
            draft.vocab()
        )));
    }
    let prefixes = corpus.prefixes(rule);
    let build = || {
        prefixes
            .into_par_iter()
            .map(|(meta, prefix)| build_point(target, draft, cfg, meta, prefix))
            .collect::<Result<Vec<_>>>()
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?
        .install(build)
}

/// Builds the dataset and writes it to `out`; returns the point count.
pub fn build_dataset<T, D>(
    corpus: &Corpus,
    target: &T,
    draft: &D,
    cfg: &DraftConfig,
    rule: &PrefixRule,
    workers: usize,
    out: &Path,
) -> Result<usize>
where
    T: TokenModel + ?Sized,
    D: TokenModel + ?Sized,
{
    let points = build_points(corpus, target, draft, cfg, rule, workers)?;
    write_dataset(out, &points)?;
    Ok(points.len())
}

/// Inverse-CDF draw of an acceptance length using one uniform.
pub fn sample_acceptance_length<R: Rng + ?Sized>(d: &AcceptanceDistribution, rng: &mut R) -> Result<usize> {
    let sum: f64 = d.probs().iter().sum();
    if (sum - 1.0).abs() > crate::lm::SUM_TOLERANCE {
        return Err(Error::input(format!("acceptance distribution sums to {sum}")));
    }
    Ok(d.quantile(rng.gen()))
}

#[derive(Serialize)]
struct RecordOut<'a> {
    version: u32,
    meta: &'a PointMeta,
    states: &'a [Vec<f64>],
    dists: &'a [AcceptanceDistribution],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    version: u32,
    meta: PointMeta,
    states: Vec<Vec<f64>>,
    dists: Vec<AcceptanceDistribution>,
}

pub fn encode_dataset(points: &[DataPoint]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in points {
        let rec = RecordOut { version: DATASET_VERSION, meta: &p.meta, states: &p.states, dists: &p.dists };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn decode_dataset(text: &str) -> Result<Vec<DataPoint>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
            if v != u64::from(DATASET_VERSION) {
                return Err(Error::Version { found: v as u32, expected: DATASET_VERSION });
            }
        }
        let rec: RecordIn = serde_json::from_value(value).map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        debug_assert_eq!(rec.version, DATASET_VERSION);
        let point = DataPoint { meta: rec.meta, states: rec.states, dists: rec.dists };
        point.validate().map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        points.push(point);
    }
    Ok(points)
}

pub fn write_dataset(path: &Path, points: &[DataPoint]) -> Result<()> {
    let bytes = encode_dataset(points)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DataPoint>> {
    decode_dataset(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{LookupModel, TokenDistribution};
    use crate::rng::seeded;

    fn toy_point(id: usize) -> DataPoint {
        DataPoint {
            meta: PointMeta { prefix_id: id, doc: 0, offset: id + 1 },
            states: vec![vec![0.1 * id as f64, 0.0], vec![1.0 / 3.0, 0.0]],
            dists: vec![
                AcceptanceDistribution::new(vec![0.5, 0.5, 0.0]).unwrap(),
                AcceptanceDistribution::new(vec![0.5, 0.3, 0.2]).unwrap(),
            ],
        }
    }

    #[test]
    fn counts_by_construction() {
        let vocab = Vocabulary::new(12, 0).unwrap();
        let model = LookupModel::new(vocab, 0, TokenDistribution::from_weights((1..=12).map(f64::from).collect()).unwrap()).unwrap();
        let corpus = Corpus::new(vocab, vec![vec![1, 2, 3, 4, 5, 6, 7, 8, 9]]).unwrap();
        let points = build_points(&corpus, &model, &model, &DraftConfig::default(), &PrefixRule::default(), 1).unwrap();
        assert_eq!(points.len(), 3);
        for p in &points {
            assert_eq!(p.states.len(), 8);
            assert!(p.states.iter().all(|s| s.len() == 10));
            assert!(p.dists.iter().all(|d| d.len() == 9));
        }
        assert_eq!(points.iter().map(|p| p.meta.offset).collect::<Vec<_>>(), vec![1, 5, 9]);
    }

    #[test]
    fn matching_chain_draft_gives_point_masses() {
        let vocab = Vocabulary::new(4, 0).unwrap();
        let mut model = LookupModel::new(vocab, 1, TokenDistribution::uniform(4)).unwrap();
        model.insert(vec![1], TokenDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap()).unwrap();
        model.insert(vec![3], TokenDistribution::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap()).unwrap();
        let cfg = DraftConfig { branch: 1, frontier_cap: 1, t_max: 5, k: 3, ..Default::default() };
        let p = build_point(&model, &model, &cfg, PointMeta::default(), vec![1]).unwrap();
        for (i, d) in p.dists.iter().enumerate() {
            assert_eq!(d, &AcceptanceDistribution::point(6, i + 1));
        }
    }

    #[test]
    fn shallow_prefix_agreement() {
        let vocab = Vocabulary::new(5, 0).unwrap();
        let target = LookupModel::new(vocab, 0, TokenDistribution::new(vec![0.1, 0.2, 0.3, 0.2, 0.2]).unwrap()).unwrap();
        let draft = LookupModel::new(vocab, 0, TokenDistribution::new(vec![0.3, 0.1, 0.2, 0.3, 0.1]).unwrap()).unwrap();
        let cfg = DraftConfig { t_max: 4, k: 4, ..Default::default() };
        let p = build_point(&target, &draft, &cfg, PointMeta::default(), vec![2]).unwrap();
        // d_(a+1) has `a + 1` calls; its entries p_0..p_a are final.
        for a in 0..4 {
            for b in a + 1..4 {
                for e in 0..=a {
                    let (x, y) = (p.dists[a].probs()[e], p.dists[b].probs()[e]);
                    assert!((x - y).abs() < 1e-12, "d_{} vs d_{} at {e}", a + 1, b + 1);
                }
            }
        }
    }

    #[test]
    fn sampling_examples() {
        let mut rng = seeded(4);
        let point = AcceptanceDistribution::point(4, 0);
        assert!((0..100).all(|_| sample_acceptance_length(&point, &mut rng).unwrap() == 0));
        let d = AcceptanceDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_acceptance_length(&d, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(d.probs()) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.002);
        }
    }

    #[test]
    fn persistence_contract() {
        let points: Vec<_> = (0..5).map(toy_point).collect();
        let bytes = encode_dataset(&points).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(decode_dataset(&text).unwrap(), points);
        assert!(decode_dataset("").unwrap().is_empty());

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.extend((5..7).map(|i| String::from_utf8(encode_dataset(&[toy_point(i)]).unwrap()).unwrap().trim().to_string()));
        lines[6] = lines[6].replace("\"states\"", "\"stat");
        let err = decode_dataset(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
        assert!(err.to_string().contains("line 7"));

        let wrong = text.lines().next().unwrap().replace("\"version\":1", "\"version\":2");
        assert!(matches!(decode_dataset(&wrong), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn corpus_parsing() {
        let c = Corpus::parse("# radar-corpus v1 format=ids vocab=5 eos=0\n1 2 3\n\n4 0\n").unwrap();
        assert_eq!(c.documents, vec![vec![1, 2, 3], vec![4, 0]]);
        assert_eq!(Corpus::parse(&c.to_text()).unwrap(), c);
        let b = Corpus::parse("# radar-corpus v1 format=bytes eos=10\nab\n").unwrap();
        assert_eq!((b.vocab.size(), b.documents[0].clone()), (256, vec![97, 98]));
        assert!(matches!(Corpus::parse("# radar-corpus v1 vocab=3\n1 2\n0 7\n"), Err(Error::Parse { line: 3, .. })));
        assert!(Corpus::parse("1 2 3\n").is_err());
    }
}
