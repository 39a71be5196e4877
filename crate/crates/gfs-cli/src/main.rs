//! `gfs` — train and evaluate graph fuzzy system classifiers.
//!
//! Subcommands mirror the pipeline: `kernel` precomputes a propagation-kernel
//! Gram matrix, `cluster` runs kernel K-prototype clustering on a cache,
//! `train` fits a model end-to-end on one seeded split, `eval` scores a saved
//! checkpoint, and `grid` sweeps hyperparameters over several seeds with
//! mean (±std) reporting.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Overrides, RunConfig};
use gfs_core::cluster::{run_k2pgc, ClusterOptions};
use gfs_core::graph::stratified_split;
use gfs_core::kernel::{KernelCache, KernelContext};
use gfs_core::trainer::{self, PreparedAntecedents, TrainConfig};
use gfs_core::{GfsModel64, GraphDataset64};

#[derive(Parser)]
#[command(name = "gfs", version, about = "Graph fuzzy system classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Dataset name (directory `<data-dir>/<name>/` in TU text format).
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset root; defaults to $GFS_DATA_DIR or ./data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Node kernel scheme: hashed or rbf.
    #[arg(long)]
    kernel_scheme: Option<String>,
    /// Propagation iterations contributing to the kernel.
    #[arg(long)]
    tmax: Option<usize>,
    /// Number of fuzzy rules K.
    #[arg(long)]
    rules: Option<usize>,
    /// Consequent GNN: gcn, gat or sage.
    #[arg(long)]
    variant: Option<String>,
    /// GNN hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// L2 regularization trade-off.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory (command-dependent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and serialize the propagation-kernel Gram matrix of a dataset.
    Kernel(CommonArgs),
    /// Run kernel K-prototype clustering on a saved Gram matrix.
    Cluster {
        /// Kernel cache file produced by `gfs kernel`.
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        rules: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model end-to-end on a stratified split of a dataset.
    Train(CommonArgs),
    /// Evaluate a checkpoint on a split of a dataset. The `--seed` flag sets
    /// the split seed and defaults to the seed stored in the checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep rules × hidden × alpha over several seeds.
    Grid(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Kernel(args) => cmd_kernel(resolve_args(&args)?),
        Command::Cluster {
            cache,
            rules,
            seed,
            out,
        } => cmd_cluster(&cache, rules, seed, &out),
        Command::Train(args) => cmd_train(resolve_args(&args)?),
        Command::Eval {
            checkpoint,
            split,
            common,
        } => {
            let seed = common.seed;
            cmd_eval(&checkpoint, &split, seed, resolve_args(&common)?)
        }
        Command::Grid(args) => cmd_grid(resolve_args(&args)?),
    }
}

fn resolve_args(args: &CommonArgs) -> anyhow::Result<RunConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    config::resolve(
        file,
        Overrides {
            dataset: args.dataset.clone(),
            data_dir: args.data_dir.clone(),
            out: args.out.clone(),
            kernel_scheme: args.kernel_scheme.clone(),
            t_max: args.tmax,
            rules: args.rules,
            variant: args.variant.clone(),
            hidden: args.hidden,
            alpha: args.alpha,
            batch_size: args.batch_size,
            epochs: args.epochs,
            patience: args.patience,
            seed: args.seed,
        },
    )
}

fn load_dataset(config: &RunConfig) -> anyhow::Result<GraphDataset64> {
    let dir = config.data_dir.join(&config.dataset);
    gfs_core::tu::parse_tu_dataset(&dir, &config.dataset)
        .with_context(|| format!("loading dataset {} from {}", config.dataset, dir.display()))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn cmd_kernel(config: RunConfig) -> anyhow::Result<i32> {
    let dataset = load_dataset(&config)?;
    let start = Instant::now();
    let ctx = KernelContext::fit(&dataset, config.train.kernel.clone())?;
    let cache = ctx.kernel_matrix(&dataset)?;
    let elapsed = start.elapsed();
    ensure_parent(&config.out)?;
    cache.save(&config.out, ctx.config())?;
    println!(
        "kernel: dataset={} n={} scheme={} t_max={} wall={:.3}s -> {}",
        config.dataset,
        dataset.len(),
        ctx.config().scheme.as_str(),
        ctx.config().t_max,
        elapsed.as_secs_f64(),
        config.out.display()
    );
    Ok(0)
}

fn cmd_cluster(cache_path: &Path, rules: usize, seed: u64, out: &Path) -> anyhow::Result<i32> {
    let (cache, _) = KernelCache::load(cache_path)?;
    let model = run_k2pgc(&cache, rules, seed, &ClusterOptions::default())?;
    ensure_parent(out)?;
    model.save(out)?;
    println!(
        "cluster: n={} k={} iterations={} objective={} prototypes={:?} -> {}",
        cache.len(),
        model.k,
        model.iterations_run,
        model.objective_history.last().unwrap(),
        model.prototypes,
        out.display()
    );
    Ok(0)
}

struct SplitSets {
    train: GraphDataset64,
    val: GraphDataset64,
    test: GraphDataset64,
}

fn make_splits(
    config: &RunConfig,
    dataset: &GraphDataset64,
    seed: u64,
) -> anyhow::Result<SplitSets> {
    let (train, val, test) = stratified_split(dataset, config.split, seed)?;
    Ok(SplitSets { train, val, test })
}

fn cmd_train(config: RunConfig) -> anyhow::Result<i32> {
    let dataset = load_dataset(&config)?;
    let splits = make_splits(&config, &dataset, config.split_seed)?;
    let start = Instant::now();
    let (model, history) = trainer::train(&splits.train, &splits.val, &config.train)?;
    let elapsed = start.elapsed();
    let test_eval = trainer::evaluate(&model, &splits.test, config.train.batch_size)?;

    std::fs::create_dir_all(&config.out)?;
    let ckpt = config.out.join("model.ckpt");
    model.save(&ckpt)?;
    std::fs::write(config.out.join("history.csv"), history.to_csv())?;
    println!(
        "train: dataset={} variant={} rules={} hidden={} alpha={} seed={} epochs={} best_epoch={} \
         best_val_acc={:.4} test_acc={:.4} wall={:.3}s -> {}",
        config.dataset,
        config.train.variant.as_str(),
        config.train.rules,
        config.train.d_h,
        config.train.alpha,
        config.train.seed,
        history.epochs.len(),
        history.best_epoch,
        history.best_val_accuracy,
        test_eval.accuracy,
        elapsed.as_secs_f64(),
        ckpt.display()
    );
    Ok(0)
}

fn cmd_eval(
    checkpoint: &Path,
    split: &str,
    seed: Option<u64>,
    config: RunConfig,
) -> anyhow::Result<i32> {
    let model = GfsModel64::load(checkpoint)?;
    let dataset = load_dataset(&config)?;
    let seed = seed.unwrap_or(model.seed);
    let splits = make_splits(&config, &dataset, seed)?;
    let chosen = match split {
        "train" => &splits.train,
        "val" => &splits.val,
        "test" => &splits.test,
        other => anyhow::bail!("unknown split {other:?} (expected train, val or test)"),
    };
    let eval = trainer::evaluate(&model, chosen, config.train.batch_size)?;
    println!(
        "eval: checkpoint={} dataset={} split={split} seed={seed} n={} accuracy={:.4}",
        checkpoint.display(),
        config.dataset,
        chosen.len(),
        eval.accuracy
    );
    println!("confusion (rows = true class, cols = predicted):");
    for i in 0..eval.confusion.nrows() {
        let row: Vec<String> = (0..eval.confusion.ncols())
            .map(|j| eval.confusion[[i, j]].to_string())
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(0)
}

struct CellResult {
    rules: usize,
    hidden: usize,
    alpha: f64,
    seed: u64,
    best_val_acc: f64,
    test_acc: f64,
    epochs: usize,
    error: Option<String>,
}

fn cmd_grid(config: RunConfig) -> anyhow::Result<i32> {
    let dataset = load_dataset(&config)?;
    std::fs::create_dir_all(&config.out)?;

    // Antecedents depend only on (seed, K); reuse them across the
    // hidden/alpha axes of the grid.
    let mut split_memo: HashMap<u64, SplitSets> = HashMap::new();
    let mut antecedent_memo: HashMap<(u64, usize), PreparedAntecedents<f64>> = HashMap::new();

    let mut results: Vec<CellResult> = Vec::new();
    let start = Instant::now();
    for &rules in &config.grid_rules {
        for &hidden in &config.grid_hidden {
            for &alpha in &config.grid_alpha {
                for &seed in &config.grid_seeds {
                    let cell = run_cell(
                        &config,
                        &dataset,
                        rules,
                        hidden,
                        alpha,
                        seed,
                        &mut split_memo,
                        &mut antecedent_memo,
                    );
                    match &cell.error {
                        None => println!(
                            "grid: rules={rules} hidden={hidden} alpha={alpha} seed={seed} \
                             val={:.4} test={:.4}",
                            cell.best_val_acc, cell.test_acc
                        ),
                        Some(err) => eprintln!(
                            "grid: rules={rules} hidden={hidden} alpha={alpha} seed={seed} failed: {err}"
                        ),
                    }
                    results.push(cell);
                }
            }
        }
    }

    std::fs::write(
        config.out.join("results.csv"),
        render_results_csv(&config, &results),
    )?;
    let (summary_csv, summary_txt) = render_summaries(&config, &results);
    std::fs::write(config.out.join("summary.csv"), summary_csv)?;
    std::fs::write(config.out.join("summary.txt"), &summary_txt)?;
    print!("{summary_txt}");
    println!(
        "grid: {} runs in {:.3}s -> {}",
        results.len(),
        start.elapsed().as_secs_f64(),
        config.out.display()
    );

    let failures = results.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!("grid: {failures} of {} runs failed", results.len());
        return Ok(1);
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &RunConfig,
    dataset: &GraphDataset64,
    rules: usize,
    hidden: usize,
    alpha: f64,
    seed: u64,
    split_memo: &mut HashMap<u64, SplitSets>,
    antecedent_memo: &mut HashMap<(u64, usize), PreparedAntecedents<f64>>,
) -> CellResult {
    let mut cell = CellResult {
        rules,
        hidden,
        alpha,
        seed,
        best_val_acc: f64::NAN,
        test_acc: f64::NAN,
        epochs: 0,
        error: None,
    };
    let outcome = (|| -> anyhow::Result<()> {
        if let std::collections::hash_map::Entry::Vacant(e) = split_memo.entry(seed) {
            e.insert(make_splits(config, dataset, seed)?);
        }
        let train_config = TrainConfig {
            rules,
            d_h: hidden,
            alpha,
            seed,
            kernel: gfs_core::kernel::KernelConfig {
                seed,
                ..config.train.kernel.clone()
            },
            ..config.train.clone()
        };
        let splits = &split_memo[&seed];
        if let std::collections::hash_map::Entry::Vacant(e) = antecedent_memo.entry((seed, rules)) {
            let prepared = trainer::prepare_antecedents(&splits.train, &train_config)?;
            e.insert(prepared);
        }
        let antecedents = antecedent_memo[&(seed, rules)].clone();
        let (model, history) = trainer::train_with_antecedents(
            &splits.train,
            &splits.val,
            antecedents,
            &train_config,
        )?;
        let eval = trainer::evaluate(&model, &splits.test, train_config.batch_size)?;
        cell.best_val_acc = history.best_val_accuracy;
        cell.test_acc = eval.accuracy;
        cell.epochs = history.epochs.len();
        Ok(())
    })();
    if let Err(err) = outcome {
        cell.error = Some(format!("{err:#}"));
    }
    cell
}

fn render_results_csv(config: &RunConfig, results: &[CellResult]) -> String {
    let mut out = String::from(
        "dataset,variant,rules,hidden,alpha,seed,best_val_acc,test_acc,epochs,status\n",
    );
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            config.dataset,
            config.train.variant.as_str(),
            r.rules,
            r.hidden,
            r.alpha,
            r.seed,
            r.best_val_acc,
            r.test_acc,
            r.epochs,
            if r.error.is_some() { "failed" } else { "ok" }
        ));
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn render_summaries(config: &RunConfig, results: &[CellResult]) -> (String, String) {
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for r in results {
        let key = (r.rules, r.hidden, r.alpha);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    let mut csv = String::from(
        "dataset,variant,rules,hidden,alpha,seeds,mean_test_acc,std_test_acc,mean_val_acc,std_val_acc\n",
    );
    let mut txt = format!(
        "{:<12} {:<7} {:>5} {:>6} {:>9}   {:>16} {:>16}\n",
        "dataset", "variant", "rules", "hidden", "alpha", "test acc", "val acc"
    );
    for (rules, hidden, alpha) in cells {
        let ok: Vec<&CellResult> = results
            .iter()
            .filter(|r| {
                r.rules == rules && r.hidden == hidden && r.alpha == alpha && r.error.is_none()
            })
            .collect();
        if ok.is_empty() {
            continue;
        }
        let tests: Vec<f64> = ok.iter().map(|r| r.test_acc).collect();
        let vals: Vec<f64> = ok.iter().map(|r| r.best_val_acc).collect();
        let (tm, ts) = mean_std(&tests);
        let (vm, vs) = mean_std(&vals);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            config.dataset,
            config.train.variant.as_str(),
            rules,
            hidden,
            alpha,
            ok.len(),
            tm,
            ts,
            vm,
            vs
        ));
        txt.push_str(&format!(
            "{:<12} {:<7} {:>5} {:>6} {:>9.0e}   {:>16} {:>16}\n",
            config.dataset,
            config.train.variant.as_str(),
            rules,
            hidden,
            alpha,
            format!("{:.2} (±{:.2})", tm * 100.0, ts * 100.0),
            format!("{:.2} (±{:.2})", vm * 100.0, vs * 100.0),
        ));
    }
    (csv, txt)
}
