use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{Map, Value};

use hgnl_core::aggregator::{AggregatorConfig, AggregatorKind};
use hgnl_core::pipeline::{DatasetSpec, TrainConfig};
use hgnl_core::Execution;

use crate::Failure;

#[derive(Parser, Debug)]
#[command(name = "hgnl", version, about = "NL / HG-NL frame aggregation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parameter and multiply-add counts.
    Cost(CostCmd),
    /// Finite-difference check of the hand-written gradients.
    Gradcheck(GradcheckCmd),
    /// Generate a synthetic dataset file.
    GenData(GenDataCmd),
    /// Train an aggregator and classifier head; prints one JSON line per epoch.
    Train(TrainCmd),
    /// Evaluate a checkpoint with centre-frame sampling.
    Eval(EvalCmd),
    /// Time sequential against parallel evaluation.
    Bench(BenchCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => Execution::Sequential,
            ExecArg::Parallel => Execution::Parallel,
        }
    }
}

/// Declares a group of optional settings that can come from flags or from
/// the `--config` JSON document (same field names, snake_case).
macro_rules! settings {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident: $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(Args, Deserialize, Debug, Clone, Default)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $($(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl $name {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Fields set here win over `other`.
            pub fn over(self, other: Self) -> Self {
                Self { $($field: self.$field.or(other.$field),)* }
            }
        }
    };
}

settings!(AggArgs {
    /// nl, hgnl, avg or max.
    kind: AggregatorKind,
    m: usize,
    m1: usize,
    g1: usize,
    g2: usize,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    shared: bool,
});

settings!(DataArgs {
    classes: usize,
    samples: usize,
    n_total: usize,
    signal_frames: usize,
    noise: f64,
    partition: u64,
});

settings!(TrainArgs {
    segments: usize,
    epochs: usize,
    learning_rate: f64,
    #[arg(value_delimiter = ',')]
    decay_epochs: Vec<usize>,
    decay_factor: f64,
    batch_size: usize,
});

settings!(RunArgs {
    seed: u64,
    execution: ExecArg,
    format: Format,
});

#[derive(Args, Debug)]
pub struct ConfigFile {
    /// JSON document whose fields mirror the flags; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CostCmd {
    #[command(flatten)]
    pub file: ConfigFile,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Frame count at which MAdds are evaluated.
    #[arg(long)]
    pub n: Option<usize>,
    /// Both reference tables (m = 1024; NL m1 = 512 and 128; HG-NL g1 = 16, g2 = 8).
    #[arg(long)]
    pub paper_tables: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckCmd {
    #[command(flatten)]
    pub file: ConfigFile,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, hide = true)]
    pub corrupt_adjoint: bool,
}

#[derive(Args, Debug)]
pub struct GenDataCmd {
    #[command(flatten)]
    pub file: ConfigFile,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub file: ConfigFile,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Training set; generated from the data flags when absent.
    #[arg(long, value_name = "PATH")]
    pub data_file: Option<PathBuf>,
    /// Validation set file.
    #[arg(long, value_name = "PATH")]
    pub val_file: Option<PathBuf>,
    /// Generate this many validation samples from the next partition.
    #[arg(long)]
    pub val_samples: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Also write the epoch records to this file.
    #[arg(long, value_name = "PATH")]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    #[command(flatten)]
    pub file: ConfigFile,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "PATH")]
    pub data_file: Option<PathBuf>,
    #[arg(long, value_name = "PATH", required_unless_present = "untrained")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialised model instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub untrained: bool,
    #[arg(long)]
    pub n_eval: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchCmd {
    #[command(flatten)]
    pub file: ConfigFile,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

/// Settings read from `--config`, split per group.
pub struct FileSettings {
    doc: Map<String, Value>,
    path: Option<PathBuf>,
}

impl FileSettings {
    /// `extra` lists command-specific scalar keys (e.g. `n`, `tolerance`).
    pub fn load(file: &ConfigFile, groups: &[&[&str]], extra: &[&str]) -> Result<Self, Failure> {
        let Some(path) = &file.config else {
            return Ok(Self { doc: Map::new(), path: None });
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let doc = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(map)) => map,
            Ok(_) => return Err(Failure::config(format!("{}: expected a JSON object", path.display()))),
            Err(e) => return Err(Failure::config(format!("{}: {e}", path.display()))),
        };
        for key in doc.keys() {
            let known = groups.iter().any(|g| g.contains(&key.as_str())) || extra.contains(&key.as_str());
            if !known {
                return Err(Failure::config(format!("{}: unknown field {key:?}", path.display())));
            }
        }
        Ok(Self { doc, path: Some(path.clone()) })
    }

    fn label(&self) -> String {
        self.path.as_deref().map_or_else(String::new, |p| p.display().to_string())
    }

    pub fn group<T: for<'de> Deserialize<'de> + Default>(&self, fields: &[&str]) -> Result<T, Failure> {
        let sub: Map<String, Value> =
            self.doc.iter().filter(|(k, _)| fields.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        serde_json::from_value(Value::Object(sub)).map_err(|e| Failure::config(format!("{}: {e}", self.label())))
    }

    pub fn scalar<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<Option<T>, Failure> {
        self.doc
            .get(key)
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()
            .map_err(|e| Failure::config(format!("{}: {key}: {e}", self.label())))
    }
}

pub fn aggregator_config(a: &AggArgs, defaults: AggregatorConfig) -> Result<AggregatorConfig, Failure> {
    let kind = a.kind.unwrap_or(defaults.kind);
    let m = a.m.unwrap_or(defaults.m);
    let cfg = match kind {
        AggregatorKind::Avg => AggregatorConfig::avg(m),
        AggregatorKind::Max => AggregatorConfig::max(m),
        AggregatorKind::Nl => AggregatorConfig {
            g1: a.g1.unwrap_or(1),
            g2: a.g2.unwrap_or(1),
            shared: a.shared.unwrap_or(false),
            ..AggregatorConfig::nl(m, a.m1.unwrap_or(defaults.m1))
        },
        AggregatorKind::Hgnl => AggregatorConfig::hgnl(
            m,
            a.m1.unwrap_or(defaults.m1),
            a.g1.unwrap_or(defaults.g1),
            a.g2.unwrap_or(defaults.g2),
            a.shared.unwrap_or(defaults.shared),
        ),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn dataset_spec(d: &DataArgs, m: usize, seed: u64) -> Result<DatasetSpec, Failure> {
    let spec = DatasetSpec {
        classes: d.classes.unwrap_or(4),
        samples: d.samples.unwrap_or(400),
        m,
        n_total: d.n_total.unwrap_or(16),
        signal_frames: d.signal_frames.unwrap_or(1),
        noise: d.noise.unwrap_or(0.5),
        seed,
        partition: d.partition.unwrap_or(0),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn train_config(t: &TrainArgs, seed: u64, execution: Execution) -> Result<TrainConfig, Failure> {
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        segments: t.segments.unwrap_or(base.segments),
        epochs: t.epochs.unwrap_or(base.epochs),
        learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
        decay_epochs: t.decay_epochs.clone().unwrap_or(base.decay_epochs),
        decay_factor: t.decay_factor.unwrap_or(base.decay_factor),
        batch_size: t.batch_size.unwrap_or(base.batch_size),
        seed,
        execution,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Fails early when an output file could not be created.
pub fn check_writable(path: &Path) -> Result<(), Failure> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Failure::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist")));
    }
    Ok(())
}
