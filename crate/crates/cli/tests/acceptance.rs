//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use radar_core::mdp::{step, EnvState};
use radar_core::oracle::{check_bandit, check_bptt, check_expected_gradient, check_length_distribution, check_losslessness};
use radar_core::policy::{evaluate_greedy, expected_return_at, train, OptimizerKind, PolicyParams, TrainConfig};
use radar_core::synth::{constant_dataset, growth_dataset};
use radar_core::{Action, CostModel, DraftMode, MdpConfig};
use serde_json::Value;

type Outcome = Result<(bool, String), String>;

fn losslessness() -> Outcome {
    let runs = 1_000_000;
    let fixed = check_losslessness(None, DraftMode::SampleWithoutReplacement, runs, 11).map_err(|e| e.to_string())?;
    let policy = check_losslessness(Some(12), DraftMode::SampleWithoutReplacement, runs, 13).map_err(|e| e.to_string())?;
    let ok = fixed <= 0.005 && policy <= 0.005;
    Ok((ok, format!("TV fixed-depth {fixed:.5}, policy {policy:.5} over {runs} generations (limit 0.005)")))
}

fn length_distribution_oracle() -> Outcome {
    let (mut tv, mut sum) = (0.0f64, 0.0f64);
    for i in 0..50 {
        let c = check_length_distribution(1000 + i, 100_000).map_err(|e| e.to_string())?;
        tv = tv.max(c.tv);
        sum = sum.max(c.sum_error);
    }
    Ok((tv <= 0.01 && sum <= 1e-9, format!("50 instances x 1e5 trials: worst TV {tv:.5} (limit 0.01), worst |sum p - 1| {sum:.1e} (limit 1e-9)")))
}

fn gradients() -> Outcome {
    let e = |e: radar_core::Error| e.to_string();
    let mut worst = 0.0f64;
    for (_, err) in check_bptt(6, 7, 21).map_err(e)?.into_iter().chain(check_bandit(5, 22).map_err(e)?) {
        worst = worst.max(err);
    }
    let z = check_expected_gradient(3, 100_000, 23).map_err(e)?.iter().map(|p| p.z()).fold(0.0f64, f64::max);
    Ok((worst <= 1e-4 && z <= 3.0, format!("worst block relative error {worst:.2e} (limit 1e-4), worst expected-gradient z {z:.2} (limit 3)")))
}

/// Values chosen so every operation is exact in binary floating point.
fn arithmetic() -> Outcome {
    let cost = CostModel { t_o: 2.5, t_f: 1.5, t_eye: 0.25, target_pass: None };
    let t_max = 8;
    let e = |e: radar_core::Error| e.to_string();
    let mut failures = Vec::new();
    let mut expect = |what: String, got: f64, want: f64| {
        if got.to_bits() != want.to_bits() {
            failures.push(format!("{what}: got {got:?}, want {want:?}"));
        }
    };
    // Below the cap the policy runs t + 1 times.
    expect("gen_time(1)".into(), cost.gen_time(1, t_max).map_err(e)?, 2.5 + 1.5 + 0.5);
    expect("gen_time(7)".into(), cost.gen_time(7, t_max).map_err(e)?, 2.5 + 10.5 + 2.0);
    // At the cap it runs t times.
    expect("gen_time(8)".into(), cost.gen_time(8, t_max).map_err(e)?, 2.5 + 12.0 + 2.0);
    expect("jump at cap".into(), cost.gen_time(8, t_max).map_err(e)? - cost.gen_time(7, t_max).map_err(e)?, 1.5);
    expect("jump below cap".into(), cost.gen_time(7, t_max).map_err(e)? - cost.gen_time(6, t_max).map_err(e)?, 1.75);
    expect("reward(3, T=1)".into(), cost.terminal_reward(3, 1, t_max).map_err(e)?, 3.0 / 4.5);
    expect("reward(33, T=8)".into(), cost.terminal_reward(33, 8, t_max).map_err(e)?, 2.0);
    expect("reward(0, T=4)".into(), cost.terminal_reward(0, 4, t_max).map_err(e)?, 0.0);

    let mdp = MdpConfig { alpha: 0.125, gamma: 0.5, t_max, k: 2 };
    let mut env = EnvState::start(vec![0.5, 0.25]);
    let r = step(&mut env, Action::Continue, &mdp, &cost, || Ok(vec![0.5, 0.25]), |_| Ok(0)).map_err(e)?;
    expect("continue reward".into(), r.reward, -0.125);
    let mut env = EnvState { t: t_max, state_vec: vec![0.5, 0.25], done: false };
    let r = step(&mut env, Action::Continue, &mdp, &cost, || Err(radar_core::Error::State("no call past the cap".into())), |_| Ok(33)).map_err(e)?;
    expect("forced stop at cap".into(), r.reward, 2.0);
    if !r.done {
        failures.push("continue at the cap did not terminate".into());
    }
    let ok = failures.is_empty();
    Ok((ok, if ok { "11 exact equalities hold, including the cap branch".into() } else { failures.join("; ") }))
}

fn radar(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_radar"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| format!("cannot run radar: {e}"))?;
    if !out.status.success() {
        return Err(format!("radar {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

struct PipelineRun {
    dataset: Vec<u8>,
    dataset_stdout: Vec<u8>,
    train_stdout: Vec<u8>,
    checkpoint: Vec<u8>,
    bench: Vec<u8>,
    train_secs: f64,
}

fn pipeline(dir: &Path, workers: &str) -> Result<PipelineRun, String> {
    let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    radar(&["make-synthetic", "--kind", "chain", "--dir", "."], dir)?;
    let cfg = ["--config", "radar.toml", "--workers", workers];
    let dataset_stdout = radar(&[&["build-dataset"], &cfg[..]].concat(), dir)?;
    let start = Instant::now();
    let train_stdout = radar(&[&["train"], &cfg[..]].concat(), dir)?;
    let train_secs = start.elapsed().as_secs_f64();
    let bench = radar(&[&["bench", "--format", "json"], &cfg[..]].concat(), dir)?;
    Ok(PipelineRun { dataset: read("dataset.jsonl")?, dataset_stdout, train_stdout, checkpoint: read("policy.ckpt")?, bench, train_secs })
}

fn directional(run: &PipelineRun) -> Outcome {
    let rows: Vec<Value> = serde_json::from_slice(&run.bench).map_err(|e| e.to_string())?;
    let field = |r: &Value, k: &str| r[k].as_f64().ok_or_else(|| format!("bench row lacks {k}"));
    let policy = rows.iter().find(|r| r["method"] == "radar").ok_or("no policy row")?;
    let fixed: Vec<&Value> = rows.iter().filter(|r| r["method"] != "radar").collect();
    let (calls, tau, speedup) = (field(policy, "avg_calls")?, field(policy, "tau")?, field(policy, "speedup_sim")?);
    let mut tau_best = f64::MIN;
    let mut speedup_best = f64::MIN;
    for r in &fixed {
        tau_best = tau_best.max(field(r, "tau")?);
        speedup_best = speedup_best.max(field(r, "speedup_sim")?);
    }
    let a = calls <= 0.95 * 8.0;
    let b = (tau - tau_best).abs() <= 0.02 * tau_best;
    let c = speedup >= speedup_best;
    let d = run.train_secs <= 15.0 * 60.0;
    Ok((
        a && b && c && d,
        format!(
            "avg_calls {calls:.3} (limit 7.6), tau {tau:.4} vs best fixed {tau_best:.4} (within 2%), speedup {speedup:.4} vs best fixed {speedup_best:.4}, training {:.1}s",
            run.train_secs
        ),
    ))
}

fn degenerate() -> Outcome {
    let e = |e: radar_core::Error| e.to_string();
    let mdp = MdpConfig::default();
    // A visible per-cycle overhead makes deep drafting worthwhile on the
    // growth data; the constant data prefers one call under any cost.
    let cost = CostModel { t_o: 10.0, ..Default::default() };
    let tc = TrainConfig {
        epochs: 20,
        batch: 32,
        lr: 1e-2,
        seed: 0,
        hidden_size: 16,
        optimizer: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        baseline: true,
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, want, train_set, held_out) in [
        ("constant", 1, constant_dataset(512, 8, 10, 1), constant_dataset(512, 8, 10, 2)),
        ("growth", 8, growth_dataset(512, 8, 10, 1), growth_dataset(512, 8, 10, 2)),
    ] {
        let returns: Vec<f64> = (1..=8)
            .map(|t| held_out.iter().map(|p| expected_return_at(p, t, &mdp, &cost)).sum::<radar_core::Result<f64>>())
            .collect::<radar_core::Result<_>>()
            .map_err(e)?;
        let best = returns.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i + 1);
        if best != Some(want) {
            return Err(format!("{name} dataset does not have optimum T = {want}"));
        }
        let (params, _) = train(&train_set, PolicyParams::init(10, 16, 0), &tc, &mdp, &cost).map_err(e)?;
        let eval = evaluate_greedy(&params, &held_out, &mdp, &cost).map_err(e)?;
        let frac = eval.calls_hist[want - 1] as f64 / held_out.len() as f64;
        ok &= frac >= 0.95;
        parts.push(format!("{name}: {:.1}% stop at T={want}", 100.0 * frac));
    }
    Ok((ok, format!("{} (limit 95%)", parts.join(", "))))
}

fn reproducible(a: &PipelineRun, b: &PipelineRun) -> Outcome {
    let mut diffs = Vec::new();
    for (name, x, y) in [
        ("build-dataset output", &a.dataset, &b.dataset),
        ("build-dataset stdout", &a.dataset_stdout, &b.dataset_stdout),
        ("train stdout", &a.train_stdout, &b.train_stdout),
        ("checkpoint", &a.checkpoint, &b.checkpoint),
        ("bench output", &a.bench, &b.bench),
    ] {
        if x != y {
            diffs.push(name);
        }
    }
    let ok = diffs.is_empty();
    Ok((ok, if ok { "dataset, checkpoint, train log and bench table byte-identical (1 vs 3 workers)".into() } else { format!("differs: {}", diffs.join(", ")) }))
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: usize, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= ok;
        println!("{} criterion {id} ({name}): {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
    };

    let t = Instant::now();
    report(1, "losslessness", t, losslessness());
    let t = Instant::now();
    report(2, "length distribution", t, length_distribution_oracle());
    let t = Instant::now();
    report(3, "gradients", t, gradients());
    let t = Instant::now();
    report(4, "cost and reward arithmetic", t, arithmetic());

    let t = Instant::now();
    let dirs = (tempfile::tempdir(), tempfile::tempdir());
    let runs = match dirs {
        (Ok(a), Ok(b)) => pipeline(a.path(), "1").and_then(|ra| Ok((ra, pipeline(b.path(), "3")?))),
        _ => Err("cannot create temp dirs".into()),
    };
    match &runs {
        Ok((a, _)) => report(5, "directional benchmark", t, directional(a)),
        Err(e) => report(5, "directional benchmark", t, Err(e.clone())),
    }
    let t = Instant::now();
    report(6, "degenerate datasets", t, degenerate());
    let t = Instant::now();
    match &runs {
        Ok((a, b)) => report(7, "reproducibility", t, reproducible(a, b)),
        Err(e) => report(7, "reproducibility", t, Err(e.clone())),
    }

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
