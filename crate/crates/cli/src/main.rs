//! `lsm`: command-line driver for latent subcategory models.
//!
//! Every subcommand writes `results.json` (plus model or dataset files) into
//! the `--out` directory. Parameters come from flags, then from the optional
//! `--config` key=value file, then from built-in defaults. Nothing is written
//! until every parameter has been validated.

mod params;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use lsm_core::cluster_init::{self, BoundReport};
use lsm_core::dataio::{self, Dataset, DatasetCollection};
use lsm_core::eval::{self, GridSpec, GridTarget, ProtocolConfig};
use lsm_core::model::{self, LsmModel, MultiTaskModel};
use lsm_core::optim::{self, Sampling, SgdConfig};
use lsm_core::patchsel;
use lsm_core::{Error, LsmHyper, MtlHyper, Regularizer, SynthConfig};

use params::Params;
use report::Output;

#[derive(Parser)]
#[command(name = "lsm", version, about = "Latent subcategory models and dataset-bias undoing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    /// Stop when no weight changes by more than this over an epoch.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    cooldown: Option<u32>,
    /// `pooled` or `dataset-uniform`.
    #[arg(long)]
    sampling: Option<String>,
}

#[derive(Args, Clone)]
struct MtlArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a biased synthetic collection.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        datasets: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        pos_per_cluster: Option<usize>,
        #[arg(long)]
        neg_per_dataset: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        bias_shift: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        neg_scale: Option<f64>,
    },
    /// Train a single LSM by alternating minimization.
    TrainLsm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Dataset id to train on; all datasets concatenated when absent.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// `sum-sq`, `max-sq` or `max-norm`.
        #[arg(long)]
        reg: Option<String>,
        /// Penalize every component on negatives instead of the maximum.
        #[arg(long)]
        neg_variant: Option<bool>,
        /// `kmeans`, `random` or `zero`.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        max_outer: Option<usize>,
    },
    /// Train the multitask (bias-undoing) model.
    TrainDebias {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        mtl: MtlArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `kmeans` or `zero`.
        #[arg(long)]
        init: Option<String>,
    },
    /// Random versus K-means initialization over several seeds.
    InitCompare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        max_outer: Option<usize>,
    },
    /// Numerical check of the clustering sandwich bound.
    BoundCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        /// Absolute lambda; overrides --lambda-factor.
        #[arg(long)]
        lambda: Option<f64>,
        /// lambda as a multiple of the K-means distortion epsilon.
        #[arg(long)]
        lambda_factor: Option<f64>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Seen-dataset protocol.
    EvalSeen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        mtl: MtlArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Leave-one-dataset-out protocol.
    EvalUnseen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        mtl: MtlArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out dataset index; every dataset in turn when absent.
        #[arg(long)]
        heldout: Option<usize>,
    },
    /// Hyperparameter grid search on validation splits.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated K values.
        #[arg(long)]
        k_values: Option<String>,
        /// Comma-separated base-10 exponents for rho.
        #[arg(long)]
        rho_exponents: Option<String>,
        /// Comma-separated base-10 exponents for C1 and C2.
        #[arg(long)]
        c_exponents: Option<String>,
        /// `composed` or `visual-world`.
        #[arg(long)]
        target: Option<String>,
        /// Choose K by AP on a held-out test split instead of validation.
        #[arg(long)]
        k_from_test: Option<bool>,
    },
    /// Rank candidate patches for a subcategory.
    PatchSelect {
        #[command(flatten)]
        common: Common,
        /// Detection records of the subcategory images.
        #[arg(long)]
        pos: Option<PathBuf>,
        /// Detection records of the negative pool.
        #[arg(long)]
        neg: Option<PathBuf>,
        /// Patch metadata file.
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
}

/// CLI failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 2,
            Error::Numerical(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lsm: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn sgd_config(p: &mut Params, s: &SolverArgs, seed: u64) -> CliResult<SgdConfig> {
    let d = SgdConfig::default();
    let sampling = match p.get("sampling", s.sampling.clone(), "pooled".to_string())?.as_str() {
        "pooled" => Sampling::Pooled,
        "dataset-uniform" => Sampling::DatasetUniform,
        other => return Err(invalid(format!("unknown sampling {other:?}"))),
    };
    let cooldown_len = p.get("cooldown", s.cooldown, d.cooldown_len)?;
    let cfg = SgdConfig {
        epochs: p.get("epochs", s.epochs, d.epochs)?,
        eta0: p.get("eta0", s.eta0, d.eta0)?,
        seed,
        tol_weight_change: p.get("tol", s.tol, d.tol_weight_change)?,
        cooldown_len,
        cooldown_enabled: cooldown_len > 0,
        sampling,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn mtl_hyper(p: &mut Params, m: &MtlArgs) -> CliResult<MtlHyper> {
    let h = MtlHyper {
        k: p.get("k", m.k, 2)?,
        c1: p.get("c1", m.c1, 1.0)?,
        c2: p.get("c2", m.c2, 1.0)?,
        rho: p.get("rho", m.rho, 1.0)?,
    };
    h.validate()?;
    Ok(h)
}

fn load_data(p: &mut Params, flag: &Option<PathBuf>) -> CliResult<DatasetCollection> {
    let dir: PathBuf = p.require("data", flag.clone())?;
    Ok(dataio::load_collection(&dir)?)
}

fn pick_dataset(p: &mut Params, coll: &DatasetCollection, flag: &Option<String>) -> CliResult<Dataset> {
    let id: String = p.get("dataset", flag.clone(), String::new())?;
    if id.is_empty() {
        return Ok(coll.concatenated("all"));
    }
    coll.datasets
        .iter()
        .find(|d| d.id == id)
        .cloned()
        .ok_or_else(|| invalid(format!("no dataset with id {id:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| invalid(format!("{key}: bad list element {t:?}")))
        })
        .collect()
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth {
            common,
            datasets,
            clusters,
            dim,
            pos_per_cluster,
            neg_per_dataset,
            separation,
            bias_shift,
            noise,
            neg_scale,
        } => {
            let mut p = Params::load("synth", &common)?;
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                datasets: p.get("datasets", datasets, d.datasets)?,
                clusters: p.get("clusters", clusters, d.clusters)?,
                dim: p.get("dim", dim, d.dim)?,
                pos_per_cluster: p.get("pos_per_cluster", pos_per_cluster, d.pos_per_cluster)?,
                neg_per_dataset: p.get("neg_per_dataset", neg_per_dataset, d.neg_per_dataset)?,
                separation: p.get("separation", separation, d.separation)?,
                bias_shift: p.get("bias_shift", bias_shift, d.bias_shift)?,
                noise: p.get("noise", noise, d.noise)?,
                neg_scale: p.get("neg_scale", neg_scale, d.neg_scale)?,
                seed: p.seed,
            };
            p.finish()?;
            let (coll, truth) = dataio::synth_with_truth(&cfg)?;
            let mut out = Output::new(&p);
            for ds in &coll.datasets {
                out.file(format!("{}.ds", ds.id), dataio::format_dataset(ds));
            }
            out.results(json!({
                "datasets": coll.datasets.iter().map(|d| json!({
                    "id": d.id, "positives": d.n_pos(), "negatives": d.n_neg(),
                })).collect::<Vec<_>>(),
                "dim": coll.dim,
                "base_means": truth.base_means,
                "shifts": truth.shifts,
            }));
            out.commit()
        }
        Command::TrainLsm {
            common,
            solver,
            data,
            dataset,
            k,
            lambda,
            reg,
            neg_variant,
            init,
            max_outer,
        } => {
            let mut p = Params::load("train-lsm", &common)?;
            let coll = load_data(&mut p, &data)?;
            let ds = pick_dataset(&mut p, &coll, &dataset)?;
            let reg = reg.map(|s| s.parse::<Regularizer>()).transpose()?;
            let reg: Regularizer = p.get("reg", reg, Regularizer::MaxNorm)?;
            let mut h = LsmHyper::new(p.get("k", k, 2)?, p.get("lambda", lambda, 1.0)?, reg);
            h.neg_variant = p.get("neg_variant", neg_variant, false)?;
            h.validate()?;
            let init: String = p.get("init", init, "kmeans".to_string())?;
            let max_outer = p.get("max_outer", max_outer, 20usize)?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            ds.require_both_classes()?;
            let pos: Vec<&[f64]> = ds.positives().collect();
            let w0 = match init.as_str() {
                "kmeans" => {
                    let part = cluster_init::kmeans(&pos, h.k, p.seed, 10)?.partition();
                    cluster_init::init_lsm_from_clusters(&part, &ds, &h, &cfg)?
                }
                "random" => {
                    let part = eval::random_partition(pos.len(), h.k, p.seed)?;
                    cluster_init::init_lsm_from_clusters(&part, &ds, &h, &cfg)?
                }
                "zero" => LsmModel::zeros(h.k, ds.dim()),
                other => return Err(invalid(format!("unknown init {other:?}"))),
            };
            let (w, trace) = optim::train_lsm_alternating(&ds, &h, &w0, max_outer, &cfg)?;
            let mut out = Output::new(&p);
            out.file("model.txt".into(), model::format_lsm(&w));
            out.results(json!({
                "objective_e": lsm_core::objective::eval_e(&w, &ds, &h)?,
                "train_ap": eval::model_ap(&w, &ds)?,
                "trace": trace,
            }));
            out.commit()
        }
        Command::TrainDebias {
            common,
            solver,
            mtl,
            data,
            init,
        } => {
            let mut p = Params::load("train-debias", &common)?;
            let coll = load_data(&mut p, &data)?;
            let h = mtl_hyper(&mut p, &mtl)?;
            let init: String = p.get("init", init, "kmeans".to_string())?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            let w0 = match init.as_str() {
                "kmeans" => {
                    let part = cluster_init::kmeans(&coll.pooled_positives(), h.k, p.seed, 10)?.partition();
                    cluster_init::init_mtl_from_clusters(&part, &coll, &h, &cfg)?
                }
                "zero" => MultiTaskModel::zeros(h.k, coll.len(), coll.dim),
                other => return Err(invalid(format!("unknown init {other:?}"))),
            };
            let (mt, trace) = optim::train_mtl(&coll, &h, &w0, &cfg)?;
            let mut out = Output::new(&p);
            out.file("model.txt".into(), model::format_mtl(&mt));
            out.results(json!({
                "objective_j": lsm_core::objective::eval_j(&mt, &coll, &h)?,
                "max_bias_norm": mt.max_bias_norm(),
                "trace": trace,
            }));
            out.commit()
        }
        Command::InitCompare {
            common,
            solver,
            data,
            k,
            lambda,
            runs,
            max_outer,
        } => {
            let mut p = Params::load("init-compare", &common)?;
            let coll = load_data(&mut p, &data)?;
            let h = LsmHyper::new(p.get("k", k, 2)?, p.get("lambda", lambda, 1.0)?, Regularizer::MaxNorm);
            h.validate()?;
            let runs = p.get("runs", runs, 30usize)?;
            if runs == 0 {
                return Err(invalid("runs must be at least 1"));
            }
            let max_outer = p.get("max_outer", max_outer, 20usize)?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            let mut cells: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); coll.len()]; 4];
            let mut objectives: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); coll.len()]; 2];
            for r in 0..runs {
                let seed = p.seed.wrapping_add(r as u64);
                for (t, ds) in coll.datasets.iter().enumerate() {
                    let c = eval::compare_inits(ds, &h, max_outer, seed, &cfg.with_seed(seed))?;
                    cells[0][t].push(c.random.init_ap);
                    cells[1][t].push(c.random.final_ap);
                    cells[2][t].push(c.kmeans.init_ap);
                    cells[3][t].push(c.kmeans.final_ap);
                    objectives[0][t].push(c.random.final_objective);
                    objectives[1][t].push(c.kmeans.final_objective);
                }
            }
            let rows = ["random", "random+opt", "kmeans", "kmeans+opt"];
            let table: Vec<Value> = rows
                .iter()
                .zip(&cells)
                .map(|(name, row)| json!({"method": name, "cells": row.iter().map(|v| report::mean_std(v)).collect::<Vec<_>>()}))
                .collect();
            let mut out = Output::new(&p);
            out.results(json!({
                "columns": coll.datasets.iter().map(|d| d.id.clone()).collect::<Vec<_>>(),
                "ap_table": table,
                "final_objective": {
                    "random+opt": objectives[0].iter().map(|v| report::mean_std(v)).collect::<Vec<_>>(),
                    "kmeans+opt": objectives[1].iter().map(|v| report::mean_std(v)).collect::<Vec<_>>(),
                },
            }));
            out.commit()
        }
        Command::BoundCheck {
            common,
            solver,
            data,
            dataset,
            k,
            lambda,
            lambda_factor,
            draws,
        } => {
            let mut p = Params::load("bound-check", &common)?;
            let coll = load_data(&mut p, &data)?;
            let ds = pick_dataset(&mut p, &coll, &dataset)?;
            let k = p.get("k", k, 3)?;
            let lambda: Option<f64> = p.get_opt("lambda", lambda)?;
            let factor = p.get("lambda_factor", lambda_factor, 10.0)?;
            let draws = p.get("draws", draws, 1000usize)?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            ds.require_both_classes()?;
            let lambda = match lambda {
                Some(l) => l,
                None => {
                    let pos: Vec<&[f64]> = ds.positives().collect();
                    factor * cluster_init::kmeans(&pos, k, p.seed, 10)?.epsilon
                }
            };
            let rep: BoundReport = cluster_init::check_bound(&ds, k, lambda, p.seed, draws, &cfg)?;
            let mut out = Output::new(&p);
            out.results(serde_json::to_value(&rep).expect("serializable"));
            out.commit()
        }
        Command::EvalSeen {
            common,
            solver,
            mtl,
            data,
            train_fraction,
        } => {
            let mut p = Params::load("eval-seen", &common)?;
            let coll = load_data(&mut p, &data)?;
            let h = mtl_hyper(&mut p, &mtl)?;
            let tf = p.get("train_fraction", train_fraction, 0.75)?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            let mut pc = ProtocolConfig::new(h, cfg);
            pc.split.train_fraction = tf;
            let rep = eval::run_seen(&coll, &pc)?;
            let mut out = Output::new(&p);
            out.results(serde_json::to_value(&rep).expect("serializable"));
            out.commit()
        }
        Command::EvalUnseen {
            common,
            solver,
            mtl,
            data,
            heldout,
        } => {
            let mut p = Params::load("eval-unseen", &common)?;
            let coll = load_data(&mut p, &data)?;
            let h = mtl_hyper(&mut p, &mtl)?;
            let heldout: Option<usize> = p.get_opt("heldout", heldout)?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            let pc = ProtocolConfig::new(h, cfg);
            let targets: Vec<usize> = match heldout {
                Some(t) => vec![t],
                None => (0..coll.len()).collect(),
            };
            let reports = targets
                .into_iter()
                .map(|t| eval::run_unseen(&coll, t, &pc))
                .collect::<lsm_core::Result<Vec<_>>>()?;
            let n = reports.len() as f64;
            let mut out = Output::new(&p);
            out.results(json!({
                "reports": reports,
                "mean_improvement_over_aggregate": reports.iter().map(|r| r.improvement_over_aggregate).sum::<f64>() / n,
                "mean_improvement_over_single_template": reports.iter().map(|r| r.improvement_over_single_template).sum::<f64>() / n,
            }));
            out.commit()
        }
        Command::Grid {
            common,
            solver,
            data,
            k_values,
            rho_exponents,
            c_exponents,
            target,
            k_from_test,
        } => {
            let mut p = Params::load("grid", &common)?;
            let coll = load_data(&mut p, &data)?;
            let d = GridSpec::default();
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            let kv: String = p.get(
                "k_values",
                k_values,
                d.k_values.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            )?;
            let re: String = p.get("rho_exponents", rho_exponents, join(&d.rho_exponents))?;
            let ce: String = p.get("c_exponents", c_exponents, join(&d.c_exponents))?;
            let grid = GridSpec {
                k_values: parse_list("k_values", &kv)?,
                rho_exponents: parse_list("rho_exponents", &re)?,
                c_exponents: parse_list("c_exponents", &ce)?,
            };
            let target = match p.get("target", target, "composed".to_string())?.as_str() {
                "composed" => GridTarget::Composed,
                "visual-world" => GridTarget::VisualWorld,
                other => return Err(invalid(format!("unknown target {other:?}"))),
            };
            let k_from_test = p.get("k_from_test", k_from_test, false)?;
            let seed = p.seed;
            let cfg = sgd_config(&mut p, &solver, seed)?;
            p.finish()?;
            if grid.is_empty() {
                return Err(invalid("empty hyperparameter grid"));
            }
            let h0 = MtlHyper {
                k: 1,
                c1: 1.0,
                c2: 1.0,
                rho: 1.0,
            };
            let pc = ProtocolConfig::new(h0, cfg);
            let res = if k_from_test {
                let (train, test) = eval::split_collection(&coll, pc.split)?;
                eval::grid_search(&train, &grid, target, Some(&test), &pc)?
            } else {
                eval::grid_search(&coll, &grid, target, None, &pc)?
            };
            let mut out = Output::new(&p);
            out.results(serde_json::to_value(&res).expect("serializable"));
            out.commit()
        }
        Command::PatchSelect {
            common,
            pos,
            neg,
            patches,
            n,
        } => {
            let mut p = Params::load("patch-select", &common)?;
            let pos_path: PathBuf = p.require("pos", pos)?;
            let neg_path: PathBuf = p.require("neg", neg)?;
            let patch_path: PathBuf = p.require("patches", patches)?;
            let n: Option<usize> = p.get_opt("n", n)?;
            p.finish()?;
            let pos = patchsel::parse_detections(&read(&pos_path)?, &pos_path)?;
            let neg = patchsel::parse_detections(&read(&neg_path)?, &neg_path)?;
            let named = patchsel::parse_patches(&read(&patch_path)?, &patch_path)?;
            let pool: Vec<_> = named.iter().map(|(_, m)| m.clone()).collect();
            let n = n.unwrap_or(pool.len());
            let sel = patchsel::select_patches(&pool, &pos, &neg, n)?;
            let mut out = Output::new(&p);
            out.results(json!({
                "selected": sel.iter().map(|s| json!({
                    "patch_id": named[s.index].0,
                    "representation": s.representation,
                    "discrimination": s.discrimination,
                    "score": s.score,
                })).collect::<Vec<_>>(),
            }));
            out.commit()
        }
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io(e)))
}
