use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vpn_core::data_io::DatasetSplit;
use vpn_core::models::{default_cap, default_gamma, BaseArch, DEFAULT_HIDDEN};
use vpn_core::training::{Mode, TrainConfig};

pub const DATA_DIR_ENV: &str = "VPN_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    FashionMnist,
    Mnist,
    /// Gaussian clusters, no image shape.
    Blobs,
    /// Synthetic grayscale rectangles.
    Glyphs,
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::FashionMnist => "fashion-mnist",
            Dataset::Mnist => "mnist",
            Dataset::Blobs => "blobs",
            Dataset::Glyphs => "glyphs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorArch {
    Dnn3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Noisy,
    Clean,
}

/// Every run setting, as given on the command line or in a config file.
/// Unset values fall back to the config file, then to defaults.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Flat TOML file with the same keys as the written run spec.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Base classifier.
    #[arg(long)]
    pub model: Option<BaseArch>,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorArch>,
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    /// Directory with the IDX files; defaults to $VPN_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Noise draws per sample per step.
    #[arg(long)]
    pub m: Option<usize>,
    /// Label-bias coefficient (default 0.01 / classes).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Bound on the noise scale norm (default 0.1 * sqrt(d)).
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub random_pixel_fraction: Option<f64>,
    /// Hidden width of DNN3 networks.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub base_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub generator_ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub eval_mode: Option<EvalMode>,
    /// Test-set sample indices to visualize.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub indices: Option<Vec<usize>>,
    /// Synthetic datasets: number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Synthetic datasets: training samples per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Synthetic datasets: feature count (blobs) or image side (glyphs).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(skip)]
    pub tool_version: Option<String>,
    #[arg(skip)]
    pub command: Option<String>,
}

macro_rules! prefer {
    ($flags:ident, $file:ident, $($field:ident),+ $(,)?) => {
        Overrides {
            config: $flags.config,
            $($field: $flags.$field.or($file.$field),)+
        }
    };
}

impl Overrides {
    /// Fills unset flags from the config file, if any.
    pub fn with_config_file(self) -> anyhow::Result<Overrides> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: Overrides =
            toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        let flags = self;
        Ok(prefer!(
            flags, file, mode, model, generator, dataset, data_dir, epochs, lr, batch_size, m, gamma, cap,
            seed, out_dir, samples_per_class, random_pixel_fraction, hidden, base_ckpt, generator_ckpt,
            eval_mode, indices, classes, per_class, dim, tool_version, command,
        ))
    }
}

/// Fully resolved settings of one invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSpec {
    pub tool_version: String,
    pub command: String,
    pub mode: Mode,
    pub model: BaseArch,
    pub generator: GeneratorArch,
    pub dataset: Dataset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    pub seed: u64,
    pub samples_per_class: usize,
    pub random_pixel_fraction: f64,
    pub hidden: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_ckpt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_ckpt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_mode: Option<EvalMode>,
    pub indices: Vec<usize>,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
}

impl RunSpec {
    pub fn resolve(command: &str, o: Overrides) -> anyhow::Result<RunSpec> {
        let o = o.with_config_file()?;
        let dataset = o.dataset.unwrap_or(Dataset::FashionMnist);
        let data_dir = match dataset {
            Dataset::FashionMnist | Dataset::Mnist => {
                o.data_dir.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            }
            Dataset::Blobs | Dataset::Glyphs => o.data_dir,
        };
        let spec = RunSpec {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            mode: o.mode.unwrap_or(Mode::Baseline),
            model: o.model.unwrap_or(BaseArch::Sr),
            generator: o.generator.unwrap_or(GeneratorArch::Dnn3),
            dataset,
            data_dir,
            out_dir: o.out_dir.unwrap_or_else(|| PathBuf::from("vpn-out")),
            epochs: o.epochs.unwrap_or(40),
            lr: o.lr.unwrap_or(0.001),
            batch_size: o.batch_size.unwrap_or(256),
            m: o.m.unwrap_or(1),
            gamma: o.gamma,
            cap: o.cap,
            seed: o.seed.unwrap_or(0),
            samples_per_class: o.samples_per_class.unwrap_or(1),
            random_pixel_fraction: o.random_pixel_fraction.unwrap_or(0.10),
            hidden: o.hidden.unwrap_or(DEFAULT_HIDDEN),
            base_ckpt: o.base_ckpt,
            generator_ckpt: o.generator_ckpt,
            eval_mode: o.eval_mode,
            indices: o.indices.unwrap_or_else(|| vec![0]),
            classes: o.classes.unwrap_or(4),
            per_class: o.per_class.unwrap_or(100),
            dim: o.dim.unwrap_or(match dataset {
                Dataset::Glyphs => 12,
                _ => 16,
            }),
        };
        spec.train_config().validate()?;
        if spec.hidden == 0 {
            bail!("hidden width must be at least 1");
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            noise_size: self.m,
            gamma: self.gamma,
            cap: self.cap,
            seed: self.seed,
            random_pixel_fraction: self.random_pixel_fraction,
            samples_per_class: self.samples_per_class,
        }
    }

    /// Records the gamma and cap actually used for `split`.
    pub fn resolve_noise_scales(&mut self, split: &DatasetSplit) {
        self.gamma = Some(self.gamma.unwrap_or_else(|| default_gamma(split.class_count())));
        self.cap = Some(self.cap.unwrap_or_else(|| default_cap(split.dim())));
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = toml::to_string(self).context("cannot serialize run spec")?;
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}
