//! Disturbance sweeps over methods and seeds, for classification and
//! regression.
//!
//! Every (level, seed) pair is an independent job. The source-only ERM head
//! does not depend on the level, so it is trained once per seed and reused
//! both as a method and as the warm start of the robust methods. A failing
//! method marks its cell failed and the sweep continues.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ExperimentConfig, Method, Task};
use super::io::{fmt_real, Table};
use super::metrics::{eval_classification, eval_regression, mean_std, ClassificationMetrics, RegressionMetrics};
use crate::models::{
    train_erm, train_erm_regression, train_fewshot, train_fewshot_regression, train_ot_adapt,
    train_ot_adapt_regression, train_pgdro_classifier, train_pgdro_regressor, train_saa, train_saa_regression,
    train_wdro, wdro_priors, LinearHead, Predictor, TrainConfig,
};
use crate::priors::{build_priors, compute_class_stats, MixturePrior, SupportSet};
use crate::synthgen::{generate_pair, make_regression, DomainPair, RegressionTask};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum CellMetrics {
    Classification(ClassificationMetrics),
    Regression(RegressionMetrics),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub level: f64,
    pub method: Method,
    pub seed: u64,
    /// The error message of a failed cell.
    pub outcome: std::result::Result<CellMetrics, String>,
    pub runtime_s: f64,
}

/// One aggregated (level, method) row.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub level: f64,
    pub method: Method,
    pub ok: usize,
    pub failed: usize,
    /// `(name, mean, std)` over the successful seeds.
    pub stats: Vec<(&'static str, f64, f64)>,
}

impl Aggregate {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.stats.iter().find(|s| s.0 == metric).map(|s| s.1)
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub task: Task,
    pub config_hash: String,
    pub cells: Vec<Cell>,
}

impl Cell {
    fn metric_values(&self) -> Option<Vec<(&'static str, f64)>> {
        match self.outcome.as_ref().ok()? {
            CellMetrics::Classification(m) => Some(vec![
                ("avg_accuracy", m.avg_accuracy),
                ("macro_accuracy", m.macro_accuracy),
                ("worst10_accuracy", m.worst10_accuracy),
            ]),
            CellMetrics::Regression(m) => Some(vec![("mse", m.mse), ("mae", m.mae), ("worst10_mse", m.worst10_mse)]),
        }
    }
}

fn metric_names(task: Task) -> [&'static str; 3] {
    match task {
        Task::Regression => ["mse", "mae", "worst10_mse"],
        _ => ["avg_accuracy", "macro_accuracy", "worst10_accuracy"],
    }
}

fn level_key(level: f64) -> u64 {
    level.to_bits()
}

impl SweepReport {
    /// Mean ± std per (level, method), levels and methods in configured order.
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut order: Vec<(f64, Method)> = Vec::new();
        let mut groups: BTreeMap<(u64, Method), Vec<&Cell>> = BTreeMap::new();
        for c in &self.cells {
            let key = (level_key(c.level), c.method);
            if !groups.contains_key(&key) {
                order.push((c.level, c.method));
            }
            groups.entry(key).or_default().push(c);
        }
        order
            .into_iter()
            .map(|(level, method)| {
                let cells = &groups[&(level_key(level), method)];
                let values: Vec<Vec<(&'static str, f64)>> = cells.iter().filter_map(|c| c.metric_values()).collect();
                let stats = metric_names(self.task)
                    .iter()
                    .enumerate()
                    .map(|(k, name)| {
                        let v: Vec<f64> = values.iter().map(|m| m[k].1).collect();
                        let (m, s) = mean_std(&v);
                        (*name, m, s)
                    })
                    .collect();
                Aggregate {
                    level,
                    method,
                    ok: values.len(),
                    failed: cells.len() - values.len(),
                    stats,
                }
            })
            .collect()
    }

    pub fn find(&self, level: f64, method: Method) -> Option<Aggregate> {
        self.aggregate().into_iter().find(|a| a.level == level && a.method == method)
    }

    pub fn failed_cells(&self) -> Vec<&Cell> {
        self.cells.iter().filter(|c| c.outcome.is_err()).collect()
    }

    pub fn cell_table(&self, cell: &Cell) -> Table {
        let names = metric_names(self.task);
        let mut cols = vec!["level", "method", "seed", "status"];
        cols.extend(names);
        if self.task != Task::Regression {
            cols.push("missing_classes");
        }
        let mut t = Table::new(&self.config_hash, &cols);
        let mut row = vec![cell.level.to_string(), cell.method.name().to_string(), cell.seed.to_string()];
        match &cell.outcome {
            Ok(m) => {
                row.push("ok".into());
                row.extend(cell.metric_values().unwrap_or_default().iter().map(|v| fmt_real(v.1)));
                if let CellMetrics::Classification(m) = m {
                    row.push(m.missing_classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
                }
            }
            Err(e) => {
                row.push(format!("failed: {e}"));
                row.extend(std::iter::repeat_n(String::new(), cols.len() - 4));
            }
        }
        t.push(row);
        t
    }

    pub fn aggregate_table(&self) -> Table {
        let mut cols = vec!["level".to_string(), "method".into(), "seeds_ok".into(), "seeds_failed".into()];
        for n in metric_names(self.task) {
            cols.push(format!("{n}_mean"));
            cols.push(format!("{n}_std"));
        }
        let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut t = Table::new(&self.config_hash, &refs);
        for a in self.aggregate() {
            let mut row = vec![a.level.to_string(), a.method.name().into(), a.ok.to_string(), a.failed.to_string()];
            for (_, m, s) in &a.stats {
                row.push(fmt_real(*m));
                row.push(fmt_real(*s));
            }
            t.push(row);
        }
        t
    }

    /// Relative path of a cell's CSV inside the output directory.
    pub fn cell_path(cell: &Cell) -> PathBuf {
        PathBuf::from("cells").join(format!("L{}_{}_s{}.csv", cell.level, cell.method.name(), cell.seed))
    }

    /// Writes per-cell CSVs and `aggregate.csv`; returns the relative paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for c in &self.cells {
            let rel = Self::cell_path(c);
            self.cell_table(c).write(&dir.join(&rel))?;
            out.push(rel);
        }
        let agg = PathBuf::from("aggregate.csv");
        self.aggregate_table().write(&dir.join(&agg))?;
        out.push(agg);
        Ok(out)
    }
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train.clone()
    }
}

/// Class-adaptive priors from the labeled source and the target supports.
pub fn source_priors(pair: &DomainPair, cfg: &ExperimentConfig) -> Result<Vec<MixturePrior>> {
    let stats = compute_class_stats(&pair.source.features, &pair.source.labels)?;
    let protos: Vec<_> = (0..pair.source.num_classes).map(|c| pair.source.class_features(c)).collect();
    build_priors(&stats, &protos, &pair.target_train_supports, &cfg.prior)
}

/// Trains one classification method. `erm` is the seed's source ERM head.
pub fn train_classifier(
    method: Method,
    pair: &DomainPair,
    erm: &LinearHead,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Predictor> {
    let tc = seeded(&cfg.train, seed);
    let sup = &pair.target_train_supports;
    Ok(match method {
        Method::Erm => Predictor::Linear(erm.clone()),
        Method::Ot => Predictor::Linear(train_ot_adapt(&pair.source, sup, &cfg.ot, &tc)?.head),
        Method::Pgdro => {
            let priors = source_priors(pair, cfg)?;
            let head = train_pgdro_classifier(sup, &priors, Some(erm), &tc, &cfg.dro)?.head;
            Predictor::Robust {
                head,
                priors,
                dro: cfg.dro.clone(),
            }
        }
        Method::Saa => Predictor::Linear(train_saa(sup, &cfg.saa, &tc)?.head),
        Method::Wdro => Predictor::Robust {
            head: train_wdro(sup, Some(erm), &tc, &cfg.dro)?.head,
            priors: wdro_priors(sup)?,
            dro: cfg.dro.clone(),
        },
        Method::Fewshot => Predictor::Linear(train_fewshot(sup, &tc)?.head),
    })
}

/// Trains one regression method. `erm` is the seed's source ERM head.
pub fn train_regressor(
    method: Method,
    pair: &DomainPair,
    task: &RegressionTask,
    erm: &LinearHead,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<LinearHead> {
    let tc = seeded(&cfg.train, seed);
    let k = pair.source.num_classes;
    Ok(match method {
        Method::Erm => erm.clone(),
        Method::Ot => train_ot_adapt_regression(&task.source, &task.supports, k, &cfg.ot, &tc)?.head,
        Method::Pgdro => {
            let priors = source_priors(pair, cfg)?;
            train_pgdro_regressor(&task.supports, &priors, Some(erm), &tc, &cfg.dro)?.head
        }
        Method::Saa => train_saa_regression(&task.supports, &cfg.saa, &tc)?.head,
        Method::Wdro => {
            let priors = wdro_priors(&pair.target_train_supports)?;
            train_pgdro_regressor(&task.supports, &priors, Some(erm), &tc, &cfg.dro)?.head
        }
        Method::Fewshot => train_fewshot_regression(&task.supports, &tc)?.head,
    })
}

fn evaluate_classifier(p: &Predictor, test: &SupportSet) -> Result<CellMetrics> {
    let pred = p.predict_classes(&test.features)?;
    Ok(CellMetrics::Classification(eval_classification(&pred, &test.labels, test.num_classes)?))
}

fn evaluate_regressor(h: &LinearHead, task: &RegressionTask) -> Result<CellMetrics> {
    let pred: Vec<f64> = task.test.features.row_iter().map(|x| h.predict_value(x)).collect();
    Ok(CellMetrics::Regression(eval_regression(&pred, &task.test.responses)?))
}

struct SeedBase {
    source: SupportSet,
    erm: std::result::Result<LinearHead, String>,
}

fn seed_base(cfg: &ExperimentConfig, seed: u64) -> Result<SeedBase> {
    let level = cfg.levels[0];
    let pair = generate_pair(&cfg.generator_at(level), seed)?;
    let tc = seeded(&cfg.train, seed);
    let erm = if cfg.task == Task::Regression {
        let task = make_regression(&pair, cfg.regression.sigma, seed)?;
        train_erm_regression(&task.source, &tc)
    } else {
        train_erm(&pair.source, &tc)
    };
    Ok(SeedBase {
        source: pair.source,
        erm: erm.map(|t| t.head).map_err(|e| e.to_string()),
    })
}

fn run_job(cfg: &ExperimentConfig, level: f64, seed: u64, base: &SeedBase) -> Vec<Cell> {
    let fail_all = |msg: String| {
        cfg.methods
            .iter()
            .map(|&method| Cell {
                level,
                method,
                seed,
                outcome: Err(msg.clone()),
                runtime_s: 0.0,
            })
            .collect::<Vec<_>>()
    };
    let pair = match generate_pair(&cfg.generator_at(level), seed) {
        Ok(p) => p,
        Err(e) => return fail_all(format!("generator: {e}")),
    };
    let regression = match cfg.task {
        Task::Regression => match make_regression(&pair, cfg.regression.sigma, seed) {
            Ok(t) => Some(t),
            Err(e) => return fail_all(format!("generator: {e}")),
        },
        _ => None,
    };
    // The cached head is valid only if the source really is level-independent.
    let erm = if pair.source == base.source {
        base.erm.clone()
    } else {
        let tc = seeded(&cfg.train, seed);
        match &regression {
            Some(t) => train_erm_regression(&t.source, &tc),
            None => train_erm(&pair.source, &tc),
        }
        .map(|t| t.head)
        .map_err(|e| e.to_string())
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let t0 = Instant::now();
            let outcome = match &erm {
                Err(e) => Err(format!("source ERM failed: {e}")),
                Ok(erm) => match &regression {
                    Some(task) => train_regressor(method, &pair, task, erm, cfg, seed)
                        .and_then(|h| evaluate_regressor(&h, task)),
                    None => train_classifier(method, &pair, erm, cfg, seed)
                        .and_then(|p| evaluate_classifier(&p, &pair.target_test)),
                }
                .map_err(|e| e.to_string()),
            };
            Cell {
                level,
                method,
                seed,
                outcome,
                runtime_s: t0.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Runs every (level, method, seed) cell of a classification or regression
/// configuration. Cells come back ordered by level, seed, then method.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    if !matches!(cfg.task, Task::Classification | Task::Regression) {
        return Err(Error::Config(format!("sweep needs a classification or regression task, got {:?}", cfg.task)));
    }
    cfg.validate()?;
    let bases = par::try_map(cfg.seeds.len(), |i| seed_base(cfg, cfg.seeds[i]))?;
    let jobs: Vec<(f64, usize)> = cfg
        .levels
        .iter()
        .flat_map(|&l| (0..cfg.seeds.len()).map(move |i| (l, i)))
        .collect();
    let cells = par::map(jobs.len(), |j| {
        let (level, i) = jobs[j];
        run_job(cfg, level, cfg.seeds[i], &bases[i])
    });
    Ok(SweepReport {
        task: cfg.task,
        config_hash: cfg.hash()?,
        cells: cells.into_iter().flatten().collect(),
    })
}

/// The classification disturbance sweep.
pub fn run_table1_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    if cfg.task != Task::Classification {
        return Err(Error::Config("the table sweep needs task = \"classification\"".into()));
    }
    run_sweep(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: Task) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("smoke").unwrap();
        c.task = task;
        c.methods = Method::ALL.to_vec();
        c.seeds = vec![0, 1];
        c.levels = vec![0.0, 1.0];
        c.generator.num_classes = 3;
        c.generator.dim = 2;
        c.generator.n_train = 120;
        c.generator.n_test = 60;
        c.train.epochs = 2;
        c.prior.atoms_per_component = 8;
        c.saa.draws = 2;
        c
    }

    #[test]
    fn classification_smoke_is_deterministic() {
        let cfg = tiny(Task::Classification);
        let a = run_sweep(&cfg).unwrap();
        assert_eq!(a.cells.len(), 2 * 2 * 6);
        assert!(a.failed_cells().is_empty(), "{:?}", a.failed_cells());
        let agg = a.aggregate();
        assert_eq!(agg.len(), 12);
        for g in &agg {
            assert!(g.mean("worst10_accuracy").unwrap() <= g.mean("macro_accuracy").unwrap() + 1e-12);
        }
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.aggregate_table().to_bytes().unwrap(), b.aggregate_table().to_bytes().unwrap());
    }

    #[test]
    fn regression_smoke() {
        let cfg = tiny(Task::Regression);
        let r = run_sweep(&cfg).unwrap();
        assert!(r.failed_cells().is_empty(), "{:?}", r.failed_cells());
        let a = r.find(1.0, Method::Pgdro).unwrap();
        assert!(a.mean("worst10_mse").unwrap() >= a.mean("mse").unwrap());
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut cfg = tiny(Task::Classification);
        cfg.methods = vec![Method::Ot, Method::Erm];
        cfg.levels = vec![1.0];
        cfg.seeds = vec![0];
        cfg.ot.max_iters = 1;
        cfg.ot.tol = 1e-300;
        let r = run_sweep(&cfg).unwrap();
        let ot = r.cells.iter().find(|c| c.method == Method::Ot).unwrap();
        assert!(ot.outcome.is_err());
        assert!(r.cells.iter().find(|c| c.method == Method::Erm).unwrap().outcome.is_ok());
        let text = String::from_utf8(r.cell_table(ot).to_bytes().unwrap()).unwrap();
        assert!(text.contains("failed"));
        let agg = r.find(1.0, Method::Ot).unwrap();
        assert_eq!((agg.ok, agg.failed), (0, 1));
    }

    #[test]
    fn rejects_other_tasks() {
        assert!(run_sweep(&tiny(Task::Heatmap)).is_err());
        assert!(run_table1_sweep(&tiny(Task::Regression)).is_err());
    }
}
