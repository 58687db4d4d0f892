//! One function per subcommand. Each reads its inputs, writes its outputs
//! and returns a short summary; nothing here touches stdout except
//! [`report`], whose output is the product.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cfs_core::baselines::{run_baseline, BaselineSpec, MaskFile};
use cfs_core::eval::{
    evaluate_policy, render_report, write_series, ClusterMasks, EvalReport, GreedyActor, MaskPolicy, StaticMask,
};
use cfs_core::oracle::{exhaustive_best_per_cluster, exhaustive_best_pooled};
use cfs_core::policy::{write_log, TrainEvent};
use cfs_core::synth::{self, generate, split};
use cfs_core::{Checkpoint, Dataset, FactorMask, OracleResult, Trainer};
use log::info;

use crate::config::{CliError, CliResult, RunConfig};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| io_err(dir, e)),
        _ => Ok(()),
    }
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::new("missing-file", format!("{what} not found: {}", path.display())))
    }
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    require(path, "dataset")?;
    Ok(synth::load(path)?)
}

/// Train and test parts of a dataset under the configured split.
pub fn split_dataset(cfg: &RunConfig, dataset: &Dataset) -> CliResult<(Dataset, Dataset)> {
    Ok(split(dataset, cfg.evaluation.train_fraction)?)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let dataset: Dataset = generate(&cfg.generation)?;
    ensure_parent(out)?;
    synth::save(&dataset, out)?;
    Ok(format!("wrote {} page views (p = {}) to {}", dataset.len(), dataset.p(), out.display()))
}

/// Sidecar path of the JSON-lines training log.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.jsonl")
}

pub fn train(cfg: &RunConfig, dataset_path: &Path, out: &Path, resume: Option<&Path>) -> CliResult<String> {
    let dataset = load_dataset(dataset_path)?;
    let (train_set, _) = split_dataset(cfg, &dataset)?;
    let model = train_set.ranking_model();
    let env = cfg.environment.params();
    let mut trainer = match resume {
        Some(path) => {
            require(path, "checkpoint")?;
            let ckpt = Checkpoint::load(path)?;
            ckpt.check_dims(dataset.l(), dataset.p())?;
            Trainer::from_checkpoint(ckpt, cfg.training.clone())?
        }
        None => Trainer::new(dataset.l(), dataset.p(), cfg.training.clone())?,
    };
    ensure_parent(out)?;
    let mut log = Vec::new();
    trainer.run(&train_set, &model, &env, |ev| {
        match ev {
            TrainEvent::Log(r) => {
                info!("{}", r.to_json_line());
                log.push(r.clone());
            }
            TrainEvent::Checkpoint(c) => c.save(out)?,
        }
        Ok(())
    })?;
    trainer.checkpoint().save(out)?;
    let lp = log_path(out);
    let file = fs::File::create(&lp).map_err(|e| io_err(&lp, e))?;
    write_log(&log, std::io::BufWriter::new(file)).map_err(|e| io_err(&lp, e))?;
    Ok(format!("trained {} episodes; wrote {} and {}", trainer.episodes_done(), out.display(), lp.display()))
}

/// Default mask file name for a method, e.g. `lasso_0.05.mask`.
pub fn mask_file_name(spec: &BaselineSpec) -> String {
    format!("{}.mask", spec.to_string().replace([':', '='], "_"))
}

/// Global baselines are fitted on the training part. Norm elimination reads
/// each request's own weights, so it covers every page view.
pub fn baseline(cfg: &RunConfig, dataset_path: &Path, method: &str, out: &Path) -> CliResult<String> {
    let spec: BaselineSpec = method.parse()?;
    let dataset = load_dataset(dataset_path)?;
    spec.validate(dataset.p())?;
    let fit_on = match spec {
        BaselineSpec::NormElimination { .. } => dataset.clone(),
        _ => split_dataset(cfg, &dataset)?.0,
    };
    let table = run_baseline(&spec, &fit_on, &fit_on.ranking_model(), &cfg.baselines.tree)?;
    let file = MaskFile { method: spec.to_string(), p: dataset.p(), table };
    ensure_parent(out)?;
    file.save(out)?;
    Ok(format!("wrote {} mask to {}", spec, out.display()))
}

/// Oracle masks over the test part: the best single static mask and, when
/// the data carries cluster tags, the best mask per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFile {
    pub lambda: f64,
    pub p: usize,
    pub pooled: OracleResult,
    pub clusters: BTreeMap<u32, OracleResult>,
}

const ORACLE_HEADER: &str = "cfs-oracle 1";

fn oracle_line(r: &OracleResult) -> String {
    format!("{} {} {} {}", r.best_mask, r.best_loss, r.best_distance, r.best_cost)
}

impl OracleFile {
    pub fn render(&self) -> String {
        let mut out = format!("{ORACLE_HEADER}\nlambda {}\np {}\npooled {}\n", self.lambda, self.p, oracle_line(&self.pooled));
        for (id, r) in &self.clusters {
            out.push_str(&format!("cluster {id} {}\n", oracle_line(r)));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let err = |n: usize, m: &str| CliError::new("format", format!("{}: line {n}: {m}", path.display()));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()));
        let mut next = |n_expect: usize| lines.next().ok_or_else(|| err(n_expect, "unexpected end of file"));
        let (n, head) = next(1)?;
        if head.join(" ") != ORACLE_HEADER {
            return Err(err(n, "not an oracle file (expected `cfs-oracle 1`)"));
        }
        let (n, l) = next(2)?;
        let lambda = match l.as_slice() {
            ["lambda", v] => v.parse().map_err(|_| err(n, "lambda is not a number"))?,
            _ => return Err(err(n, "expected `lambda <value>`")),
        };
        let (n, l) = next(3)?;
        let p: usize = match l.as_slice() {
            ["p", v] => v.parse().map_err(|_| err(n, "p is not an integer"))?,
            _ => return Err(err(n, "expected `p <value>`")),
        };
        let result = |n: usize, f: &[&str]| -> CliResult<OracleResult> {
            let [mask, loss, dist, cost] = f else {
                return Err(err(n, "expected `<mask> <loss> <distance> <cost>`"));
            };
            let mask: FactorMask = mask.parse().map_err(|_| err(n, "bad mask bits"))?;
            if mask.len() != p {
                return Err(err(n, &format!("mask has {} bits, header says p = {p}", mask.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(n, "bad number"));
            Ok(OracleResult {
                best_mask: mask,
                best_loss: num(loss)?,
                best_distance: num(dist)?,
                best_cost: num(cost)?,
                evaluated_count: 1u64 << p,
            })
        };
        let (n, l) = next(4)?;
        let pooled = match l.split_first() {
            Some((&"pooled", rest)) => result(n, rest)?,
            _ => return Err(err(n, "expected `pooled ...`")),
        };
        let mut clusters = BTreeMap::new();
        for (n, l) in lines {
            match l.as_slice() {
                [] => {}
                ["cluster", id, rest @ ..] => {
                    let id: u32 = id.parse().map_err(|_| err(n, "bad cluster id"))?;
                    clusters.insert(id, result(n, rest)?);
                }
                _ => return Err(err(n, "expected `cluster <id> ...`")),
            }
        }
        Ok(OracleFile { lambda, p, pooled, clusters })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        require(path, "oracle file")?;
        Self::parse(&fs::read_to_string(path).map_err(|e| io_err(path, e))?, path)
    }
}

pub fn oracle(cfg: &RunConfig, dataset_path: &Path, out: &Path) -> CliResult<String> {
    let dataset = load_dataset(dataset_path)?;
    let (_, test) = split_dataset(cfg, &dataset)?;
    let model = test.ranking_model();
    let lambda = cfg.environment.lambda;
    let pooled = exhaustive_best_pooled(&test, &model, lambda)?;
    let clusters = if test.has_cluster_tags() {
        exhaustive_best_per_cluster(&test, &model, lambda)?
    } else {
        BTreeMap::new()
    };
    let file = OracleFile { lambda, p: test.p(), pooled, clusters };
    ensure_parent(out)?;
    fs::write(out, file.render()).map_err(|e| io_err(out, e))?;
    Ok(format!("wrote oracle over {} test page views to {}", test.len(), out.display()))
}

/// Artifacts to compare on the test part. The all-factors control row is
/// always included.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub checkpoint: Option<PathBuf>,
    pub masks: Vec<PathBuf>,
    pub oracle: Option<PathBuf>,
}

pub const CONTROL: &str = "all_factors";
pub const RANKCFS: &str = "rankcfs";

pub fn evaluate_report(cfg: &RunConfig, dataset: &Dataset, artifacts: &Artifacts) -> CliResult<EvalReport> {
    let (_, test) = split_dataset(cfg, dataset)?;
    let model = test.ranking_model();
    let env = cfg.environment.params();
    let lambda = env.lambda;
    let latency = &cfg.evaluation.latency;
    let mut evaluations = Vec::new();
    let mut add = |name: &str, policy: &dyn MaskPolicy<f64>| -> CliResult<()> {
        let e = evaluate_policy(name, &test, &model, policy, lambda)?.with_latency(latency)?;
        evaluations.push(e);
        Ok(())
    };
    add(CONTROL, &StaticMask(FactorMask::all_ones(test.p())))?;
    if let Some(path) = &artifacts.checkpoint {
        require(path, "checkpoint")?;
        let ckpt = Checkpoint::load(path)?;
        ckpt.check_dims(test.l(), test.p())?;
        let policy = GreedyActor { actor: &ckpt.actor, model: &model, costs: test.costs(), params: env };
        add(RANKCFS, &policy)?;
    }
    for path in &artifacts.masks {
        require(path, "mask file")?;
        let file = MaskFile::load(path)?;
        if file.p != test.p() {
            return Err(CliError::new(
                "shape",
                format!("{}: mask file has p = {}, dataset has p = {}", path.display(), file.p, test.p()),
            ));
        }
        add(&file.method, &file.table)?;
    }
    if let Some(path) = &artifacts.oracle {
        let file = OracleFile::load(path)?;
        if file.p != test.p() {
            return Err(CliError::new(
                "shape",
                format!("{}: oracle has p = {}, dataset has p = {}", path.display(), file.p, test.p()),
            ));
        }
        add("oracle_pooled", &StaticMask(file.pooled.best_mask.clone()))?;
        if !file.clusters.is_empty() {
            let masks = file.clusters.iter().map(|(id, r)| (*id, r.best_mask.clone())).collect();
            add("oracle_per_cluster", &ClusterMasks(masks))?;
        }
    }
    Ok(EvalReport { lambda, evaluations })
}

/// Writes `report.json`, `report.txt` and the per-page-view series into `out_dir`.
pub fn evaluate(cfg: &RunConfig, dataset_path: &Path, artifacts: &Artifacts, out_dir: &Path) -> CliResult<String> {
    let dataset = load_dataset(dataset_path)?;
    let report = evaluate_report(cfg, &dataset, artifacts)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let json = out_dir.join("report.json");
    fs::write(&json, report.to_json()).map_err(|e| io_err(&json, e))?;
    let txt = out_dir.join("report.txt");
    fs::write(&txt, render_report(&report)).map_err(|e| io_err(&txt, e))?;
    write_series(&report, out_dir)?;
    Ok(format!("evaluated {} policies; wrote {}", report.evaluations.len(), out_dir.display()))
}

/// Renders one table from one or more `report.json` files.
pub fn report(inputs: &[PathBuf]) -> CliResult<String> {
    if inputs.is_empty() {
        return Err(CliError::new("usage", "report needs at least one report.json"));
    }
    let mut merged: Option<EvalReport> = None;
    for path in inputs {
        require(path, "report")?;
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let r = EvalReport::from_json(&text)
            .map_err(|e| CliError::new("format", format!("{}: {e}", path.display())))?;
        match &mut merged {
            None => merged = Some(r),
            Some(m) if m.lambda == r.lambda => m.evaluations.extend(r.evaluations),
            Some(m) => {
                return Err(CliError::new(
                    "config",
                    format!("{}: lambda {} differs from {}", path.display(), r.lambda, m.lambda),
                ))
            }
        }
    }
    Ok(render_report(&merged.expect("non-empty")))
}
