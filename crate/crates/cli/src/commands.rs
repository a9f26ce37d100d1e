//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use log::info;
use radar_core::dataset::{build_dataset, read_dataset};
use radar_core::engine::{bench, generate, histogram_csv, histograms, rows_to_csv, rows_to_json, BenchConfig, Controller, GenLimits};
use radar_core::oracle::run_all;
use radar_core::policy::{checkpoint, evaluate_greedy, train, OptimizerKind, PolicyParams};
use radar_core::rng::substream;
use radar_core::synth::{random_lookup, sample_corpus, ChainWorld};
use radar_core::{AnyModel, Corpus, NGramModel, TokenId, Vocabulary};
use serde::Serialize;

use crate::config::{self, ConfigError, RunConfig};
use crate::{Cli, Command, Format, SyntheticKind};

/// A failure reported to the user as one JSON object on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    /// 2 for configuration and usage problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self.kind {
            "config" | "usage" => 2,
            _ => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new("config", e.0)
    }
}

impl From<radar_core::Error> for CliError {
    fn from(e: radar_core::Error) -> Self {
        use radar_core::Error::*;
        let kind = match &e {
            Input(_) => "input",
            DegenerateResidual => "degenerate-residual",
            State(_) => "state",
            Invariant(_) => "invariant",
            Training(_) => "training",
            Parse { .. } => "parse",
            Version { .. } => "version",
            Io { .. } => "io",
            Json(_) => "json",
        };
        Self::new(kind, e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::new("config", format!("paths.{key} is not set")))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display())))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// One record: a JSON object or a two-line CSV.
fn render_one<T: Serialize>(format: Format, record: &T) -> CliResult<String> {
    render(format, std::slice::from_ref(record), true)
}

/// Renders flat records as CSV (header from the first record) or JSON.
fn render<T: Serialize>(format: Format, records: &[T], single: bool) -> CliResult<String> {
    let values: Vec<serde_json::Value> = records
        .iter()
        .map(serde_json::to_value)
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new("json", e.to_string()))?;
    match format {
        Format::Json => {
            let text = if single {
                serde_json::to_string_pretty(&values[0])
            } else {
                serde_json::to_string_pretty(&values)
            };
            Ok(text.map_err(|e| CliError::new("json", e.to_string()))? + "\n")
        }
        Format::Csv => {
            let cell = |v: &serde_json::Value| match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
                other => other.to_string(),
            };
            let mut out = String::new();
            if let Some(serde_json::Value::Object(first)) = values.first() {
                out += &first.keys().cloned().collect::<Vec<_>>().join(",");
                out.push('\n');
            }
            for v in &values {
                if let serde_json::Value::Object(map) = v {
                    out += &map.values().map(cell).collect::<Vec<_>>().join(",");
                    out.push('\n');
                }
            }
            Ok(out)
        }
    }
}

fn load_models(cfg: &RunConfig) -> CliResult<(AnyModel, AnyModel)> {
    let target = AnyModel::load(require(&cfg.paths.target, "target")?)?;
    let draft = AnyModel::load(require(&cfg.paths.draft, "draft")?)?;
    Ok((target, draft))
}

fn load_policy(path: &Path, cfg: &RunConfig) -> CliResult<PolicyParams> {
    let (params, header) = checkpoint::load(path)?;
    if header.k != cfg.draft.k {
        return Err(CliError::new("config", format!("checkpoint has k = {}, config has draft.k = {}", header.k, cfg.draft.k)));
    }
    Ok(params)
}

pub fn run(cli: Cli) -> CliResult<ExitCode> {
    let g = &cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(w) = g.workers {
        overrides.push(format!("workers={w}"));
    }
    // make-synthetic writes a config rather than reading one.
    if let Command::MakeSynthetic { kind, dir, docs, doc_len, eval_docs, eval_len } = &cli.command {
        return make_synthetic(*kind, dir, g.seed.unwrap_or(0), [*docs, *doc_len, *eval_docs, *eval_len]);
    }
    let cfg = config::load(g.config.as_deref(), &overrides)?;
    if g.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let out = g.out.as_deref();
    match &cli.command {
        Command::MakeModel { corpus, order, lambda } => make_model(corpus, *order, *lambda, out),
        Command::MakeSynthetic { .. } => unreachable!("handled above"),
        Command::BuildDataset => cmd_build_dataset(&cfg, out, g.format),
        Command::Train => cmd_train(&cfg, out, g.format),
        Command::Generate { prompt, depth } => cmd_generate(&cfg, prompt, *depth, out, g.format),
        Command::Bench { no_policy } => cmd_bench(&cfg, *no_policy, out, g.format),
        Command::VerifyOracles => cmd_verify_oracles(&cfg, out, g.format),
    }
}

fn make_model(corpus: &Path, order: usize, lambda: f64, out: Option<&Path>) -> CliResult<ExitCode> {
    let out = out.ok_or_else(|| CliError::new("usage", "make-model needs --out"))?;
    let corpus = Corpus::load(corpus)?;
    let model = AnyModel::from(NGramModel::fit(corpus.vocab, order, lambda, &corpus.documents)?);
    model.save(out)?;
    info!("wrote order-{order} model over {} documents to {}", corpus.documents.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn make_synthetic(kind: SyntheticKind, dir: &Path, seed: u64, sizes: [Option<usize>; 4]) -> CliResult<ExitCode> {
    fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("cannot create {}: {e}", dir.display())))?;
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.paths.target = Some("target.json".into());
    cfg.paths.draft = Some("draft.json".into());
    cfg.paths.corpus = Some("corpus.txt".into());
    cfg.paths.eval_corpus = Some("eval.txt".into());
    cfg.paths.dataset = Some("dataset.jsonl".into());
    cfg.paths.checkpoint = Some("policy.ckpt".into());

    let (target, draft, corpus, eval) = match kind {
        SyntheticKind::Chain => {
            let [docs, len, eval_docs, eval_len] = [sizes[0].unwrap_or(40), sizes[1].unwrap_or(200), sizes[2].unwrap_or(20), sizes[3].unwrap_or(8)];
            let m = ChainWorld::default().models()?;
            let corpus = sample_corpus(&m.target, &m.separators, docs, len, &mut substream(seed, 0))?;
            let eval = sample_corpus(&m.target, &m.separators, eval_docs, eval_len, &mut substream(seed, 1))?;
            // Chains only pay off once the per-cycle overhead is visible.
            cfg.cost.t_o = 10.0;
            cfg.train.epochs = 40;
            cfg.train.lr = 3e-3;
            cfg.train.optimizer = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
            cfg.train.baseline = true;
            cfg.bench.max_tokens = 400;
            (AnyModel::from(m.target), AnyModel::from(m.draft), corpus, eval)
        }
        SyntheticKind::Random => {
            let [docs, len, eval_docs, eval_len] = [sizes[0].unwrap_or(30), sizes[1].unwrap_or(64), sizes[2].unwrap_or(10), sizes[3].unwrap_or(4)];
            let vocab = Vocabulary::new(12, 0)?;
            let target = random_lookup(vocab, 2, 0.3, true, &mut substream(seed, 2))?;
            let start: Vec<TokenId> = (1..vocab.size() as TokenId).collect();
            let corpus = sample_corpus(&target, &start, docs, len, &mut substream(seed, 0))?;
            let eval = sample_corpus(&target, &start, eval_docs, eval_len, &mut substream(seed, 1))?;
            let draft = NGramModel::fit(vocab, 1, 0.1, &corpus.documents)?;
            cfg.bench.max_tokens = 64;
            (AnyModel::from(target), AnyModel::from(draft), corpus, eval)
        }
    };
    target.save(&dir.join("target.json"))?;
    draft.save(&dir.join("draft.json"))?;
    corpus.save(&dir.join("corpus.txt"))?;
    eval.save(&dir.join("eval.txt"))?;
    cfg.validate()?;
    write_file(&dir.join("radar.toml"), cfg.to_toml()?.as_bytes())?;
    info!("wrote synthetic {kind:?} world to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DatasetSummary {
    points: usize,
    path: String,
}

fn cmd_build_dataset(cfg: &RunConfig, out: Option<&Path>, format: Format) -> CliResult<ExitCode> {
    let (target, draft) = load_models(cfg)?;
    let corpus = Corpus::load(require(&cfg.paths.corpus, "corpus")?)?;
    let path = match out {
        Some(p) => p,
        None => require(&cfg.paths.dataset, "dataset")?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("cannot create {}: {e}", dir.display())))?;
    }
    let points = build_dataset(&corpus, &target, &draft, &cfg.draft, &cfg.prefix, cfg.workers, path)?;
    print!("{}", render_one(format, &DatasetSummary { points, path: path.display().to_string() })?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cfg: &RunConfig, out: Option<&Path>, format: Format) -> CliResult<ExitCode> {
    let data = read_dataset(require(&cfg.paths.dataset, "dataset")?)?;
    let ckpt = match out {
        Some(p) => p,
        None => require(&cfg.paths.checkpoint, "checkpoint")?,
    };
    let tc = cfg.train_config();
    let mdp = cfg.mdp();
    let init = PolicyParams::init(cfg.draft.k, tc.hidden_size, cfg.seed);
    let (params, logs) = train(&data, init, &tc, &mdp, &cfg.cost)?;
    let eval = evaluate_greedy(&params, &data, &mdp, &cfg.cost)?;
    info!("greedy training return {:.6}, mean calls {:.3}", eval.mean_return, eval.mean_calls);
    let bytes = checkpoint::encode(&params, cfg.seed)?;
    write_file(ckpt, &bytes)?;
    print!("{}", render(format, &logs, false)?);
    Ok(ExitCode::SUCCESS)
}

fn parse_prompt(text: &str) -> CliResult<Vec<TokenId>> {
    text.split_whitespace()
        .map(|t| t.parse::<TokenId>().map_err(|e| CliError::new("usage", format!("bad prompt token {t:?}: {e}"))))
        .collect()
}

#[derive(Serialize)]
struct GenerateOutput {
    method: String,
    tokens: Vec<TokenId>,
    tau: f64,
    avg_calls: f64,
    speedup_sim: f64,
    wall_time: f64,
    cycles: usize,
}

fn cmd_generate(cfg: &RunConfig, prompt: &str, depth: Option<usize>, out: Option<&Path>, format: Format) -> CliResult<ExitCode> {
    let (target, draft) = load_models(cfg)?;
    let prompt = parse_prompt(prompt)?;
    let params;
    let controller = match depth {
        Some(d) => Controller::FixedDepth(d),
        None => {
            let path = cfg
                .paths
                .checkpoint
                .as_deref()
                .ok_or_else(|| CliError::new("config", "generate needs --depth or paths.checkpoint"))?;
            params = load_policy(path, cfg)?;
            Controller::Policy { params: &params, carry_state: false }
        }
    };
    let limits = GenLimits { max_tokens: cfg.generate.max_tokens, seed: cfg.seed, measure_wall_time: cfg.generate.measure_wall_time };
    let g = generate(&target, &draft, controller, &prompt, &limits, &cfg.draft, &cfg.cost)?;
    let record = GenerateOutput {
        method: radar_core::engine::method_name(&controller),
        tokens: g.tokens,
        tau: g.metrics.tau,
        avg_calls: g.metrics.avg_calls,
        speedup_sim: g.metrics.speedup_sim,
        wall_time: g.metrics.wall_time,
        cycles: g.metrics.cycles,
    };
    emit_text(out, &render_one(format, &record)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(cfg: &RunConfig, no_policy: bool, out: Option<&Path>, format: Format) -> CliResult<ExitCode> {
    let (target, draft) = load_models(cfg)?;
    let eval = Corpus::load(require(&cfg.paths.eval_corpus, "eval_corpus")?)?;
    let prompts: Vec<Vec<TokenId>> = eval
        .documents
        .iter()
        .map(|d| match cfg.bench.prompt_tokens {
            Some(n) => d[..n.min(d.len())].to_vec(),
            None => d.clone(),
        })
        .filter(|p| !p.is_empty())
        .collect();
    let policy = match (&cfg.paths.checkpoint, no_policy) {
        (Some(p), false) => Some(load_policy(p, cfg)?),
        _ => None,
    };
    let bench_cfg = BenchConfig {
        baselines: cfg.bench.baselines.clone(),
        limits: GenLimits { max_tokens: cfg.bench.max_tokens, seed: cfg.seed, measure_wall_time: cfg.bench.measure_wall_time },
        workers: cfg.workers,
    };
    let report = bench(&target, &draft, policy.as_ref(), &prompts, &cfg.draft, &cfg.cost, &bench_cfg)?;
    let table = match format {
        Format::Csv => rows_to_csv(&report.rows),
        Format::Json => rows_to_json(&report.rows)?,
    };
    emit_text(out.or(cfg.paths.bench_out.as_deref()), &table)?;
    if let Some(dir) = &cfg.paths.histograms {
        for (row, logs) in report.rows.iter().zip(&report.logs) {
            let h = histograms(logs);
            write_file(&dir.join(format!("{}-accepted.csv", row.method)), histogram_csv(&h.accepted_len).as_bytes())?;
            write_file(&dir.join(format!("{}-calls.csv", row.method)), histogram_csv(&h.calls).as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify_oracles(cfg: &RunConfig, out: Option<&Path>, format: Format) -> CliResult<ExitCode> {
    let checks = run_all(&cfg.oracle_config())?;
    let text = match format {
        Format::Json => render(Format::Json, &checks, false)?,
        Format::Csv => checks
            .iter()
            .map(|c| {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                format!("{tag} [{}] {}: {:.3e} (tolerance {:.1e})\n", c.suite, c.name, c.metric, c.tolerance)
            })
            .collect(),
    };
    emit_text(out, &text)?;
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
