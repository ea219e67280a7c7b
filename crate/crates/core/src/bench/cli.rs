//! The `pgdro` command line.
//!
//! Exit codes: 0 on success, 1 on a configuration or usage error, 2 on a
//! numerical failure (including any failed sweep cell).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use super::config::{parse_seeds, ExperimentConfig, Method, Task};
use super::consistency::run_consistency;
use super::contraction::run_contraction;
use super::heatmap::run_heatmap;
use super::io::{fmt_real, version_string, Manifest, Table};
use super::metrics::{eval_classification, eval_regression};
use super::sweep::{run_sweep, train_classifier, train_regressor, SweepReport};
use crate::models::{train_erm, train_erm_regression, LinearHead, Predictor, TrainConfig};
use crate::priors::MixturePrior;
use crate::synthgen::{generate_pair, load_dataset, make_regression, save_dataset};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "pgdro", version, about = "Prototype-guided Sinkhorn DRO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write benchmark datasets, one CSV per (level, seed).
    Gen(Common),
    /// Train one method and evaluate it on the target test split.
    Train(TrainArgs),
    /// Disturbance sweep over levels, methods and seeds.
    Sweep(Common),
    /// Mixture-weight matrices for growing support counts.
    Heatmap(Common),
    /// Damped prior-weight iteration and its noise floor.
    Contraction(Common),
    /// Robust logits under growing atom budgets.
    Consistency(Common),
    /// Evaluate a saved head on a dataset split.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, used when no config file is given.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Seed count `n` (seeds 0..n) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (default: config, then $PGDRO_OUTPUT_DIR, then ./pgdro-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    method: String,
    /// Disturbance level (default: the first configured level).
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Head JSON written by `train`.
    #[arg(long)]
    head: PathBuf,
    /// Dataset CSV written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Priors JSON; switches classification to the robust decision rule.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// DRO settings for robust evaluation.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn resolve(c: &Common, default_preset: &str) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset(default_preset)?,
    };
    if let Some(s) = &c.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Run {
    command: &'static str,
    cfg: ExperimentConfig,
    hash: String,
    dir: PathBuf,
    start: Instant,
    outputs: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
    warnings: Vec<String>,
}

impl Run {
    fn new(command: &'static str, cfg: ExperimentConfig) -> Result<Self> {
        let dir = cfg.resolved_output_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Run {
            command,
            hash: cfg.hash()?,
            cfg,
            dir,
            start: Instant::now(),
            outputs: Vec::new(),
            timings: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn table(&mut self, rel: impl Into<PathBuf>, t: &Table) -> Result<()> {
        let rel = rel.into();
        t.write(&self.dir.join(&rel))?;
        self.outputs.push(rel);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = Manifest {
            command: self.command.to_string(),
            config_hash: self.hash,
            seeds: self.cfg.seeds.clone(),
            version: version_string(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            outputs: self.outputs,
            timings: self.timings,
            warnings: self.warnings,
            config: toml::Value::try_from(&self.cfg).map_err(|e| Error::Config(e.to_string()))?,
        };
        let path = self.dir.join("manifest.toml");
        manifest.write(&path)?;
        println!("wrote {}", self.dir.display());
        Ok(())
    }
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gen(c) => gen(resolve(&c, "paper-classification")?),
        Command::Train(t) => train(resolve(&t.common, "paper-classification")?, &t.method, t.level),
        Command::Sweep(c) => sweep(resolve(&c, "paper-classification")?),
        Command::Heatmap(c) => {
            let cfg = resolve(&c, "heatmap")?;
            let mut run = Run::new("heatmap", ExperimentConfig { task: Task::Heatmap, ..cfg })?;
            let report = run_heatmap(&run.cfg)?;
            run.outputs.extend(report.write(&run.dir)?);
            for &k in &report.shots {
                println!("shots {k:>3}  mean diagonal mass {:.4}", report.mean_diagonal_mass(k));
            }
            println!("non-decreasing in {}/{} seeds", report.monotone_seeds(), report.seeds.len());
            run.finish()?;
            Ok(0)
        }
        Command::Contraction(c) => {
            let cfg = resolve(&c, "contraction")?;
            let mut run = Run::new("contraction", ExperimentConfig { task: Task::Contraction, ..cfg })?;
            let mut code = 0;
            for &seed in &run.cfg.seeds.clone() {
                let t0 = Instant::now();
                let r = run_contraction(&run.cfg.contraction, seed)?;
                let sub = PathBuf::from(format!("s{seed}"));
                for f in r.write(&run.dir.join(&sub), &run.hash)? {
                    run.outputs.push(sub.join(f));
                }
                run.timings.push((format!("seed {seed}"), t0.elapsed().as_secs_f64()));
                println!(
                    "seed {seed}: jacobian norm {:.4}, floor slope {:.3}, rates {:?}",
                    r.jacobian_norm,
                    r.floor_slope,
                    r.traces.iter().map(|t| t.fitted_rate).collect::<Vec<_>>()
                );
                if r.traces.iter().any(|t| t.diverged) {
                    run.warnings.push(format!("seed {seed}: a trajectory diverged"));
                    code = 2;
                }
            }
            run.finish()?;
            Ok(code)
        }
        Command::Consistency(c) => {
            let cfg = resolve(&c, "consistency")?;
            let mut run = Run::new("consistency", ExperimentConfig { task: Task::Consistency, ..cfg })?;
            for &seed in &run.cfg.seeds.clone() {
                let t0 = Instant::now();
                let r = run_consistency(&run.cfg.consistency, seed)?;
                let t = r.table(&run.hash);
                run.table(PathBuf::from(format!("s{seed}")).join("curves.csv"), &t)?;
                run.timings.push((format!("seed {seed}"), t0.elapsed().as_secs_f64()));
                println!(
                    "seed {seed}: non-increasing gaps in {:.1}% of pairs, {} pairs on the lower λ clamp",
                    100.0 * r.monotone_fraction(),
                    r.boundary_pairs()
                );
            }
            run.finish()?;
            Ok(0)
        }
        Command::Eval(e) => eval(e),
    }
}

fn gen(cfg: ExperimentConfig) -> Result<i32> {
    let mut run = Run::new("gen", cfg)?;
    for &level in &run.cfg.levels.clone() {
        for &seed in &run.cfg.seeds.clone() {
            let pair = generate_pair(&run.cfg.generator_at(level), seed)?;
            let reg = match run.cfg.task {
                Task::Regression => Some(make_regression(&pair, run.cfg.regression.sigma, seed)?),
                _ => None,
            };
            let rel = PathBuf::from(format!("dataset_L{level}_s{seed}.csv"));
            save_dataset(&run.dir.join(&rel), &pair, reg.as_ref(), Some(&run.hash))?;
            run.outputs.push(rel);
        }
    }
    run.finish()?;
    Ok(0)
}

fn train(cfg: ExperimentConfig, method: &str, level: Option<f64>) -> Result<i32> {
    let method: Method = method.parse()?;
    let level = level.unwrap_or(cfg.levels[0]);
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Config(format!("level must be finite and >= 0, got {level}")));
    }
    let regression = match cfg.task {
        Task::Classification => false,
        Task::Regression => true,
        t => return Err(Error::Config(format!("train needs a classification or regression task, got {t:?}"))),
    };
    let mut run = Run::new("train", cfg)?;
    let mut t = if regression {
        Table::new(&run.hash, &["level", "method", "seed", "mse", "mae", "worst10_mse"])
    } else {
        Table::new(&run.hash, &["level", "method", "seed", "avg_accuracy", "macro_accuracy", "worst10_accuracy"])
    };
    for &seed in &run.cfg.seeds.clone() {
        let t0 = Instant::now();
        let cfg = &run.cfg;
        let pair = generate_pair(&cfg.generator_at(level), seed)?;
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let stem = format!("{}_L{level}_s{seed}", method.name());
        let mut row = vec![level.to_string(), method.name().to_string(), seed.to_string()];
        let (mut head, priors) = if regression {
            let task = make_regression(&pair, cfg.regression.sigma, seed)?;
            let erm = train_erm_regression(&task.source, &tc)?.head;
            let head = train_regressor(method, &pair, &task, &erm, cfg, seed)?;
            let pred: Vec<f64> = task.test.features.row_iter().map(|x| head.predict_value(x)).collect();
            let m = eval_regression(&pred, &task.test.responses)?;
            row.extend([m.mse, m.mae, m.worst10_mse].map(fmt_real));
            (head, None)
        } else {
            let erm = train_erm(&pair.source, &tc)?.head;
            let p = train_classifier(method, &pair, &erm, cfg, seed)?;
            let test = &pair.target_test;
            let m = eval_classification(&p.predict_classes(&test.features)?, &test.labels, test.num_classes)?;
            row.extend([m.avg_accuracy, m.macro_accuracy, m.worst10_accuracy].map(fmt_real));
            match p {
                Predictor::Linear(h) => (h, None),
                Predictor::Robust { head, priors, .. } => (head, Some(priors)),
            }
        };
        t.push(row);
        head.config_hash = Some(run.hash.clone());
        let rel = PathBuf::from("heads").join(format!("{stem}.json"));
        write_json(&run.dir.join(&rel), &head)?;
        run.outputs.push(rel);
        if let Some(priors) = priors {
            let rel = PathBuf::from("priors").join(format!("{stem}.json"));
            write_json(&run.dir.join(&rel), &priors)?;
            run.outputs.push(rel);
        }
        run.timings.push((stem, t0.elapsed().as_secs_f64()));
    }
    run.table("metrics.csv", &t)?;
    run.finish()?;
    Ok(0)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    super::io::write_file(path, serde_json::to_string_pretty(v)?.as_bytes())
}

fn sweep(cfg: ExperimentConfig) -> Result<i32> {
    let mut run = Run::new("sweep", cfg)?;
    let report = run_sweep(&run.cfg)?;
    run.outputs.extend(report.write(&run.dir)?);
    for c in &report.cells {
        run.timings
            .push((SweepReport::cell_path(c).display().to_string(), c.runtime_s));
    }
    for c in report.failed_cells() {
        run.warnings.push(format!(
            "level {} method {} seed {}: {}",
            c.level,
            c.method.name(),
            c.seed,
            c.outcome.as_ref().err().map_or("", String::as_str)
        ));
    }
    for a in report.aggregate() {
        let shown: Vec<String> = a.stats.iter().map(|(n, m, s)| format!("{n} {m:.4}±{s:.4}")).collect();
        println!("level {:<4} {:<8} {}", a.level, a.method.name(), shown.join("  "));
    }
    let failed = !run.warnings.is_empty();
    for w in &run.warnings {
        eprintln!("failed cell: {w}");
    }
    run.finish()?;
    Ok(if failed { 2 } else { 0 })
}

fn eval(e: EvalArgs) -> Result<i32> {
    let head = LinearHead::load(&e.head)?;
    let splits = load_dataset(&e.data)?;
    let split = splits
        .iter()
        .find(|s| s.name == e.split)
        .ok_or_else(|| Error::Config(format!("{}: no split named `{}`", e.data.display(), e.split)))?;
    if head.dim() != split.set.dim() {
        return Err(Error::Config(format!(
            "head dimension {} does not match data dimension {}",
            head.dim(),
            split.set.dim()
        )));
    }
    let mut cfg = match &e.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &e.out {
        cfg.output_dir = o.clone();
    }
    let mut run = Run::new("eval", cfg)?;
    let set = &split.set;
    let t = if head.outputs() == 1 {
        let z = split
            .responses
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{}: regression head but no responses", e.data.display())))?;
        let pred: Vec<f64> = set.features.row_iter().map(|x| head.predict_value(x)).collect();
        let m = eval_regression(&pred, z)?;
        let mut t = Table::new(&run.hash, &["split", "mse", "mae", "worst10_mse"]);
        t.push(vec![e.split.clone(), fmt_real(m.mse), fmt_real(m.mae), fmt_real(m.worst10_mse)]);
        println!("mse {:.6} mae {:.6} worst10_mse {:.6}", m.mse, m.mae, m.worst10_mse);
        t
    } else {
        if head.outputs() != set.num_classes {
            return Err(Error::Config(format!(
                "head has {} outputs for {} classes",
                head.outputs(),
                set.num_classes
            )));
        }
        let p = match &e.priors {
            Some(path) => {
                let s = std::fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
                let priors: Vec<MixturePrior> = serde_json::from_str(&s)?;
                if priors.len() != set.num_classes || priors.iter().any(|q| q.dim() != set.dim()) {
                    return Err(Error::Config(format!("{}: priors do not match the data", path.display())));
                }
                Predictor::Robust {
                    head,
                    priors,
                    dro: run.cfg.dro.clone(),
                }
            }
            None => Predictor::Linear(head),
        };
        let m = eval_classification(&p.predict_classes(&set.features)?, &set.labels, set.num_classes)?;
        let mut t = Table::new(&run.hash, &["split", "avg_accuracy", "macro_accuracy", "worst10_accuracy"]);
        t.push(vec![
            e.split.clone(),
            fmt_real(m.avg_accuracy),
            fmt_real(m.macro_accuracy),
            fmt_real(m.worst10_accuracy),
        ]);
        println!(
            "avg {:.4} macro {:.4} worst10 {:.4}",
            m.avg_accuracy, m.macro_accuracy, m.worst10_accuracy
        );
        t
    };
    run.table("eval.csv", &t)?;
    run.finish()?;
    Ok(0)
}
