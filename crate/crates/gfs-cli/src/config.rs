//! Run configuration: JSON manifest merged with command-line overrides.
//!
//! Every field is optional in the file; unset values fall back to the
//! defaults below, and any CLI flag overrides the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use gfs_core::cluster::ClusterOptions;
use gfs_core::gcpu::GnnVariant;
use gfs_core::graph::SplitRatios;
use gfs_core::kernel::{KernelConfig, KernelScheme};
use gfs_core::trainer::TrainConfig;

/// Hyperparameter search sets used when a grid run does not specify its own.
pub fn default_rule_grid() -> Vec<usize> {
    (2..=10).collect()
}

pub fn default_hidden_grid() -> Vec<usize> {
    vec![16, 32, 64, 128, 256]
}

pub fn default_alpha_grid() -> Vec<f64> {
    (-10..=6).map(|e| 10f64.powi(e)).collect()
}

pub fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileKernelConfig {
    pub scheme: Option<String>,
    pub t_max: Option<usize>,
    pub seed: Option<u64>,
    pub hash_width_label: Option<f64>,
    pub hash_width_attr: Option<f64>,
    pub rbf_gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSplitConfig {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileGridConfig {
    pub rules: Option<Vec<usize>>,
    pub hidden: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

/// The JSON manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub kernel: Option<FileKernelConfig>,
    pub split: Option<FileSplitConfig>,
    pub rules: Option<usize>,
    pub variant: Option<String>,
    pub hidden: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub alpha: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr0: Option<f64>,
    pub decay: Option<f64>,
    pub seed: Option<u64>,
    pub reg_squared: Option<bool>,
    pub farthest_first_init: Option<bool>,
    pub grid: Option<FileGridConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// CLI flag values that may override the file. `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub kernel_scheme: Option<String>,
    pub t_max: Option<usize>,
    pub rules: Option<usize>,
    pub variant: Option<String>,
    pub hidden: Option<usize>,
    pub alpha: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub grid_rules: Vec<usize>,
    pub grid_hidden: Vec<usize>,
    pub grid_alpha: Vec<f64>,
    pub grid_seeds: Vec<u64>,
}

fn parse_variant(s: &str) -> anyhow::Result<GnnVariant> {
    Ok(GnnVariant::parse(s)?)
}

fn parse_scheme(s: &str) -> anyhow::Result<KernelScheme> {
    Ok(KernelScheme::parse(s)?)
}

/// Default data directory: `$GFS_DATA_DIR` or `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("GFS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Merges (file, flags) into a resolved [`RunConfig`]; flags win.
pub fn resolve(file: FileConfig, flags: Overrides) -> anyhow::Result<RunConfig> {
    let dataset = match flags.dataset.or(file.dataset) {
        Some(d) => d,
        None => bail!("no dataset given (use --dataset or the config file)"),
    };
    let data_dir = flags
        .data_dir
        .or(file.data_dir)
        .unwrap_or_else(default_data_dir);
    let out = flags
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("out"));

    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let fk = file.kernel.unwrap_or_default();
    let kernel_defaults = KernelConfig::default();
    let kernel = KernelConfig {
        t_max: flags.t_max.or(fk.t_max).unwrap_or(kernel_defaults.t_max),
        scheme: match flags.kernel_scheme.or(fk.scheme) {
            Some(s) => parse_scheme(&s)?,
            None => kernel_defaults.scheme,
        },
        hash_width_label: fk
            .hash_width_label
            .unwrap_or(kernel_defaults.hash_width_label),
        hash_width_attr: fk
            .hash_width_attr
            .unwrap_or(kernel_defaults.hash_width_attr),
        rbf_gamma: fk.rbf_gamma,
        seed: fk.seed.unwrap_or(seed),
    };

    let fs = file.split.unwrap_or_default();
    let defaults = SplitRatios::default();
    let split = SplitRatios {
        train: fs.train.unwrap_or(defaults.train),
        val: fs.val.unwrap_or(defaults.val),
        test: fs.test.unwrap_or(defaults.test),
    };
    let split_seed = fs.seed.unwrap_or(seed);

    let train_defaults = TrainConfig::default();
    let train = TrainConfig {
        rules: flags.rules.or(file.rules).unwrap_or(train_defaults.rules),
        variant: match flags.variant.or(file.variant) {
            Some(v) => parse_variant(&v)?,
            None => train_defaults.variant,
        },
        d_h: flags.hidden.or(file.hidden).unwrap_or(train_defaults.d_h),
        d_mlp: file.mlp_hidden,
        alpha: flags.alpha.or(file.alpha).unwrap_or(train_defaults.alpha),
        batch_size: flags
            .batch_size
            .or(file.batch_size)
            .unwrap_or(train_defaults.batch_size),
        max_epochs: flags
            .epochs
            .or(file.epochs)
            .unwrap_or(train_defaults.max_epochs),
        lr0: file.lr0.unwrap_or(train_defaults.lr0),
        decay: file.decay.unwrap_or(train_defaults.decay),
        patience: flags
            .patience
            .or(file.patience)
            .unwrap_or(train_defaults.patience),
        seed,
        kernel,
        cluster: ClusterOptions {
            farthest_first_init: file.farthest_first_init.unwrap_or(false),
            ..ClusterOptions::default()
        },
        reg_squared: file.reg_squared.unwrap_or(false),
    };

    let grid = file.grid.unwrap_or_default();
    Ok(RunConfig {
        dataset,
        data_dir,
        out,
        split,
        split_seed,
        train,
        grid_rules: grid.rules.unwrap_or_else(default_rule_grid),
        grid_hidden: grid.hidden.unwrap_or_else(default_hidden_grid),
        grid_alpha: grid.alpha.unwrap_or_else(default_alpha_grid),
        grid_seeds: grid.seeds.unwrap_or_else(default_seeds),
    })
}
