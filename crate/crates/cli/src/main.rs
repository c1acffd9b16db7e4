//! `hdyn`: data generation, training, evaluation, planning, ablations and
//! plot-data export for the HyperDynamics laboratory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use hyperdyn::env::EnvKind;
use hyperdyn::harness::config::parse_pairs;
use hyperdyn::harness::eval::{eval_prediction, loco_episode_return, prediction_rows, push_mpc_trial, EpisodeOracle, PushMpcReport};
use hyperdyn::harness::gradcheck::{gradcheck_suite, TOLERANCE};
use hyperdyn::harness::metrics::{from_csv, stats, summarize, to_csv};
use hyperdyn::harness::runs::{loco_rows, push_report_rows, run_label};
use hyperdyn::harness::*;
use hyperdyn::model::{DynamicsModel, Method};
use hyperdyn::Error;

#[derive(Parser)]
#[command(name = "hdyn", version, about = "HyperDynamics laboratory: toy pushing and locomotion, hypernetwork dynamics, baselines and MPC")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the pushing dataset (train, seen and novel splits) as JSON lines.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train a model per seed; writes checkpoints, metrics CSV and a summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Method: hyperdynamics, xyz, direct, recurrent, fomaml, expert_ens [default: config value, else hyperdynamics]
        #[arg(long)]
        method: Option<String>,
        #[command(flatten)]
        seeds: SeedArgs,
        #[command(flatten)]
        jobs: JobsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Open-loop prediction error of a pushing checkpoint on held-out systems.
    Eval {
        /// Checkpoint written by `train` [required]
        #[arg(long)]
        ckpt: PathBuf,
        /// seen, novel or both
        #[arg(long, default_value = "both")]
        split: String,
        /// Comma-separated prediction horizons
        #[arg(long, default_value = "1,5")]
        horizons: String,
        /// Evaluate the ground-truth environment instead of the model [default: off]
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Closed-loop pushing with random-shooting MPC.
    PushMpc {
        /// Checkpoint written by `train` [required]
        #[arg(long)]
        ckpt: PathBuf,
        /// on or off
        #[arg(long, default_value = "off")]
        obstacles: String,
        /// Number of trials
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// seen, novel or both
        #[arg(long, default_value = "novel")]
        split: String,
        /// Sampled action sequences per plan [default: checkpoint config]
        #[arg(long)]
        sequences: Option<usize>,
        #[command(flatten)]
        jobs: JobsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Locomotion MPC episodes on fresh terrains.
    Loco {
        /// Checkpoint written by `train` on slope or pier [required]
        #[arg(long)]
        ckpt: PathBuf,
        /// Episodes per split [default: checkpoint config]
        #[arg(long)]
        episodes: Option<usize>,
        /// seen, novel or both
        #[arg(long, default_value = "both")]
        split: String,
        #[command(flatten)]
        jobs: JobsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train the default model and an ablated one under the same seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// no_decoder, canonical_shape, z_int=2|4|8 or z_vis=8|16|32 [required]
        #[arg(long)]
        mode: String,
        #[command(flatten)]
        seeds: SeedArgs,
        #[command(flatten)]
        jobs: JobsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Finite-difference gradient checks of every learned module.
    Gradcheck {
        /// Also write gradcheck.tsv into this directory [default: print only]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a metrics CSV into TSV series and a JSON summary; no rendering.
    PlotData {
        /// Metrics CSV written by another command [required]
        #[arg(long)]
        metrics: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines [default: built-in desk-scale settings]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: push, slope or pier [default: config value, else push]
    #[arg(long)]
    env: Option<String>,
    /// Override one config key, `key=value`; repeatable [default: none]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Restore the full-size experiment settings [default: off]
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args)]
struct SeedArgs {
    /// Seed [default: the config's `seed` key, else $HDYN_SEED, else 0]
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds, one run each [default: the single --seed]
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct JobsArg {
    /// Worker threads across seeds or episodes; results do not depend on it
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct OutArg {
    /// Output directory; every file is written below it
    #[arg(long, default_value = "hdyn-out")]
    out: PathBuf,
}

/// Usage errors exit with 2, runtime failures with 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::GenData { cfg, seeds, out } => gen_data(&cfg, &seeds, &out.out),
        Cmd::Train { cfg, method, seeds, jobs, out } => train(&cfg, method.as_deref(), &seeds, jobs.jobs, &out.out),
        Cmd::Eval { ckpt, split, horizons, oracle, out } => eval(&ckpt, &split, &horizons, oracle, &out.out),
        Cmd::PushMpc { ckpt, obstacles, trials, split, sequences, jobs, out } => {
            push_mpc(&ckpt, &obstacles, trials, &split, sequences, jobs.jobs, &out.out)
        }
        Cmd::Loco { ckpt, episodes, split, jobs, out } => loco(&ckpt, episodes, &split, jobs.jobs, &out.out),
        Cmd::Ablate { cfg, mode, seeds, jobs, out } => ablate(&cfg, &mode, &seeds, jobs.jobs, &out.out),
        Cmd::Gradcheck { out } => gradcheck(out.as_deref()),
        Cmd::PlotData { metrics, out } => plot_data(&metrics, &out.out),
    }
}

fn load_config(args: &ConfigArgs, method: Option<&str>) -> CliResult<ExperimentConfig> {
    let mut pairs = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    if let Some(env) = &args.env {
        pairs.retain(|(k, _)| k != "env");
        pairs.push(("env".into(), env.clone()));
    }
    if args.paper_scale {
        pairs.push(("paper_scale".into(), "true".into()));
    }
    if let Some(m) = method {
        pairs.push(("method".into(), m.into()));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    let mut cfg = ExperimentConfig::from_pairs(&pairs)?;
    if !pairs.iter().any(|(k, _)| k == "seed") {
        if let Ok(v) = std::env::var("HDYN_SEED") {
            cfg.seed = v.trim().parse().map_err(|_| usage(format!("HDYN_SEED: bad seed {v:?}")))?;
        }
    }
    Ok(cfg)
}

fn resolve_seeds(args: &SeedArgs, cfg: &ExperimentConfig) -> CliResult<Vec<u64>> {
    if let Some(list) = &args.seeds {
        let seeds = list
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| usage(format!("--seeds: bad seed {s:?}"))))
            .collect::<CliResult<Vec<_>>>()?;
        if seeds.is_empty() {
            return Err(usage("--seeds is empty"));
        }
        return Ok(seeds);
    }
    Ok(vec![args.seed.unwrap_or(cfg.seed)])
}

fn with_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig { seed, ..cfg.clone() }
}

fn splits(s: &str) -> CliResult<Vec<EvalSplit>> {
    match s {
        "both" => Ok(EvalSplit::BOTH.to_vec()),
        _ => EvalSplit::parse(s)
            .map(|x| vec![x])
            .ok_or_else(|| usage(format!("--split must be seen, novel or both, got {s:?}"))),
    }
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

/// Runs `f` for every item on `jobs` threads; results keep input order.
fn par_map<T: Sync, U: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> CliResult<U> + Sync) -> CliResult<Vec<U>> {
    let pool = pool(jobs)?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn write(out: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(out)?;
    let p = out.join(name);
    fs::write(&p, text)?;
    Ok(p)
}

fn write_metrics(out: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    let p = write(out, "metrics.csv", &to_csv(rows)?)?;
    write(out, "summary.json", &format!("{:#}\n", summarize(rows)))?;
    eprintln!("wrote {}", p.display());
    Ok(())
}

fn load_ckpt(path: &Path) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn gen_data(args: &ConfigArgs, seeds: &SeedArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, None)?;
    if cfg.env != EnvKind::Push {
        return Err(usage("gen-data covers pushing; locomotion data is collected on-policy by `train`"));
    }
    let spec = cfg.push_data()?;
    for seed in resolve_seeds(seeds, &cfg)? {
        let data = gen_push_dataset(&spec, seed)?;
        let dir = out.join(format!("seed_{seed}"));
        let mut text = String::new();
        let mut counts = BTreeMap::new();
        for (name, eps) in [("train", &data.train), ("seen", &data.seen), ("novel", &data.novel)] {
            counts.insert(name, eps.len());
            for ((ctx, sys), traj) in eps.contexts.iter().zip(&eps.systems).zip(&eps.trajectories) {
                let line = json!({
                    "split": name,
                    "system_id": ctx.system_id,
                    "shape": sys.shape.label(),
                    "mass": sys.mass,
                    "mu": sys.mu,
                    "context_len": eps.first,
                    "steps": traj.steps,
                });
                writeln!(text, "{line}").expect("writing to a string");
            }
        }
        write(&dir, "push_data.jsonl", &text)?;
        write(&dir, "config.txt", &with_seed(&cfg, seed).to_text())?;
        write(&dir, "manifest.json", &format!("{:#}\n", json!({ "seed": seed, "trajectories": counts })))?;
        eprintln!("seed {seed}: {} trajectories in {}", counts.values().sum::<usize>(), dir.display());
    }
    Ok(())
}

fn train(args: &ConfigArgs, method: Option<&str>, seeds: &SeedArgs, jobs: usize, out: &Path) -> CliResult<()> {
    if let Some(m) = method {
        Method::parse(m).ok_or_else(|| usage(format!("unknown method {m:?}")))?;
    }
    let cfg = load_config(args, method)?;
    let seeds = resolve_seeds(seeds, &cfg)?;
    pool(jobs)?;
    fs::create_dir_all(out)?;
    let runs = par_map(jobs, &seeds, |&seed| {
        let c = with_seed(&cfg, seed);
        eprintln!("training {} on {} (seed {seed})", c.method.name(), c.env.name());
        let run = run_train(&c)?;
        let dir = out.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        run.checkpoint.save(&dir.join("model.ckpt"))?;
        write(&dir, "config.txt", &c.to_text())?;
        Ok(run.rows)
    })?;
    write(out, "config.txt", &cfg.to_text())?;
    write_metrics(out, &runs.concat())
}

fn eval(ckpt: &Path, split: &str, horizons: &str, oracle: bool, out: &Path) -> CliResult<()> {
    let ck = load_ckpt(ckpt)?;
    let splits = splits(split)?;
    let horizons: Vec<usize> = horizons
        .split(',')
        .map(|h| match h.trim().parse() {
            Ok(h) if h > 0 => Ok(h),
            _ => Err(usage(format!("--horizons: bad horizon {h:?}"))),
        })
        .collect::<CliResult<_>>()?;
    let cfg = ck.config()?;
    if cfg.env != EnvKind::Push {
        return Err(usage("eval covers pushing checkpoints; use `loco` for locomotion"));
    }
    let data = gen_push_dataset(&cfg.push_data()?, cfg.seed)?;
    let mut rows = Vec::new();
    let (label, mut model): (String, Box<dyn DynamicsModel>) = if oracle {
        ("oracle".into(), Box::new(EpisodeOracle::new([&data.seen, &data.novel])))
    } else {
        (run_label(&cfg, None), ck.model()?)
    };
    for s in splits {
        let errs = eval_prediction(model.as_mut(), data.split(s), &horizons)?;
        rows.extend(prediction_rows(&label, cfg.env, s, &errs, cfg.seed, ck.step));
    }
    print!("{}", to_csv(&rows)?);
    write_metrics(out, &rows)
}

/// Contiguous index chunks, one per worker.
fn chunks(n: usize, jobs: usize) -> Vec<std::ops::Range<usize>> {
    let per = n.div_ceil(jobs.max(1)).max(1);
    (0..n).step_by(per).map(|a| a..(a + per).min(n)).collect()
}

fn push_mpc(
    ckpt: &Path,
    obstacles: &str,
    trials: usize,
    split: &str,
    sequences: Option<usize>,
    jobs: usize,
    out: &Path,
) -> CliResult<()> {
    let ck = load_ckpt(ckpt)?;
    let obstacles = match obstacles {
        "on" => true,
        "off" => false,
        _ => return Err(usage(format!("--obstacles must be on or off, got {obstacles:?}"))),
    };
    let splits = splits(split)?;
    let mut cfg = ck.config()?;
    if cfg.env != EnvKind::Push {
        return Err(usage("push-mpc needs a pushing checkpoint"));
    }
    cfg.obstacles = obstacles;
    cfg.push_trials = trials;
    if let Some(n) = sequences {
        cfg.mpc_sequences = n;
    }
    cfg.validate()?;
    let mpc = cfg.mpc()?;
    let label = run_label(&cfg, None);
    let mut rows = Vec::new();
    for s in splits {
        let parts = par_map(jobs, &chunks(trials, jobs), |r| {
            let mut m = ck.model()?;
            r.clone()
                .map(|i| Ok(push_mpc_trial(m.as_mut(), s, obstacles, i, cfg.k, &mpc, cfg.seed)?))
                .collect::<CliResult<Vec<_>>>()
        })?;
        let rep = PushMpcReport::from_episodes(&parts.concat());
        eprintln!(
            "{} {}: {}/{} successes, {} collisions, collision-sound {}",
            label,
            s.name(),
            rep.successes,
            rep.trials,
            rep.collisions,
            rep.collision_sound
        );
        rows.extend(push_report_rows(&label, s, obstacles, &rep, cfg.seed, ck.step));
    }
    write_metrics(out, &rows)
}

fn loco(ckpt: &Path, episodes: Option<usize>, split: &str, jobs: usize, out: &Path) -> CliResult<()> {
    let ck = load_ckpt(ckpt)?;
    let splits = splits(split)?;
    let cfg = ck.config()?;
    if cfg.env == EnvKind::Push {
        return Err(usage("loco needs a slope or pier checkpoint"));
    }
    let n = episodes.unwrap_or(cfg.eval_episodes);
    if n == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let mpc = cfg.mpc()?;
    let label = run_label(&cfg, None);
    let mut rows = Vec::new();
    let mut per_episode = String::from("split\tepisode\treturn\n");
    for s in splits {
        let parts = par_map(jobs, &chunks(n, jobs), |r| {
            let mut m = ck.model()?;
            r.clone()
                .map(|i| Ok(loco_episode_return(m.as_mut(), cfg.env, s, i, cfg.eval_len, cfg.terrain_segments, cfg.k, &mpc, cfg.seed)?))
                .collect::<CliResult<Vec<_>>>()
        })?;
        let returns = parts.concat();
        for (i, r) in returns.iter().enumerate() {
            writeln!(per_episode, "{}\t{i}\t{r}", s.name()).expect("writing to a string");
        }
        let st = stats(&returns);
        eprintln!("{} {}: return {:.3} ± {:.3} over {n} episodes", label, s.name(), st.mean, st.std);
        rows.extend(loco_rows(&label, s, &returns, cfg.seed, ck.step));
    }
    write(out, "episodes.tsv", &per_episode)?;
    write_metrics(out, &rows)
}

fn ablate(args: &ConfigArgs, mode: &str, seeds: &SeedArgs, jobs: usize, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, None)?;
    let mode = Ablation::parse(mode)?;
    mode.apply(&cfg)?;
    let seeds = resolve_seeds(seeds, &cfg)?;
    let rows = par_map(jobs, &seeds, |&seed| {
        eprintln!("ablation {} (seed {seed})", mode.name());
        Ok(run_ablation(&with_seed(&cfg, seed), mode)?)
    })?;
    write(out, "config.txt", &cfg.to_text())?;
    write_metrics(out, &rows.concat())
}

fn gradcheck(out: Option<&Path>) -> CliResult<()> {
    let t = std::time::Instant::now();
    let cases = gradcheck_suite()?;
    let mut text = String::from("case\tmax_rel_error\tchecked\tpassed\n");
    for c in &cases {
        println!("{:<32} {:>10.3e} {:>6} {}", c.name, c.max_rel_error, c.checked, if c.passed() { "ok" } else { "FAIL" });
        writeln!(text, "{}\t{:e}\t{}\t{}", c.name, c.max_rel_error, c.checked, c.passed()).expect("writing to a string");
    }
    let failed = cases.iter().filter(|c| !c.passed()).count();
    println!("{} cases, {failed} failed (tolerance {TOLERANCE:e}) in {:.1}s", cases.len(), t.elapsed().as_secs_f64());
    if let Some(dir) = out {
        write(dir, "gradcheck.tsv", &text)?;
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks exceed tolerance")));
    }
    Ok(())
}

fn plot_data(metrics: &Path, out: &Path) -> CliResult<()> {
    let text = fs::read_to_string(metrics).map_err(|e| usage(format!("{}: {e}", metrics.display())))?;
    let rows = from_csv(&text)?;

    // Learning curves: per (metric, method, split, step) statistics across seeds.
    let curve_metrics = ["loss", "aux_loss", "collect_return"];
    let mut curves: BTreeMap<(&str, &str, &str, u64), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| curve_metrics.contains(&r.metric.as_str())) {
        curves.entry((&r.metric, &r.method, &r.split, r.step)).or_default().push(r.value);
    }
    let mut lc = String::from("metric\tmethod\tsplit\tstep\tn\tmean\tstd\tmedian\n");
    for ((metric, method, split, step), v) in &curves {
        let s = stats(v);
        writeln!(lc, "{metric}\t{method}\t{split}\t{step}\t{}\t{}\t{}\t{}", s.n, s.mean, s.std, s.median).expect("writing to a string");
    }

    // Table-style summary of final values across seeds.
    let summary = summarize(&rows);
    let mut table = String::from("metric\tmethod\tsplit\tn\tmean\tstd\tmedian\n");
    for (metric, methods) in summary.as_object().into_iter().flatten() {
        if curve_metrics.contains(&metric.as_str()) {
            continue;
        }
        for (method, splits) in methods.as_object().into_iter().flatten() {
            for (split, st) in splits.as_object().into_iter().flatten() {
                let f = |k: &str| st[k].to_string();
                writeln!(table, "{metric}\t{method}\t{split}\t{}\t{}\t{}\t{}", f("n"), f("mean"), f("std"), f("median"))
                    .expect("writing to a string");
            }
        }
    }
    write(out, "learning_curves.tsv", &lc)?;
    write(out, "table.tsv", &table)?;
    write(out, "summary.json", &format!("{summary:#}\n"))?;
    eprintln!("wrote {} curve points and {} table rows to {}", curves.len(), table.lines().count() - 1, out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::chunks;

    #[test]
    fn chunks_cover_range_in_order() {
        for n in 0..20 {
            for jobs in 1..6 {
                let flat: Vec<usize> = chunks(n, jobs).into_iter().flatten().collect();
                assert_eq!(flat, (0..n).collect::<Vec<_>>());
                assert!(chunks(n, jobs).len() <= jobs);
            }
        }
    }
}
