//! Flag and config-file layering.
//!
//! Every setting is resolved as: command-line flag, then the JSON config
//! file, then the per-command default.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use oim_core::mpsk::PairPrior;
use oim_core::{model, ImperfectionModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Posterior,
    Equal,
}

impl From<PriorArg> for PairPrior {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Posterior => PairPrior::Posterior,
            PriorArg::Equal => PairPrior::Equal,
        }
    }
}

/// DAC resolution from the command line: an integer or `none`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacBits(pub Option<u32>);

fn parse_dac_bits(s: &str) -> Result<DacBits, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "none" | "off" => Ok(DacBits(None)),
        other => other
            .parse::<u32>()
            .map(|b| DacBits(Some(b)))
            .map_err(|e| format!("cannot parse dac_bits {s:?}: {e}")),
    }
}

/// Options shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with default values for any of the options below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output file; defaults to $OIM_OUTPUT_DIR/<command>.<format>, else stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Master seed of randomized commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Does not affect results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Mean photon numbers, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha_sq: Option<Vec<f64>>,
    /// Prior of the +α state.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub p: Option<f64>,
    /// Target inconclusive probabilities, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub pi: Option<Vec<f64>>,
    /// Number of points of the automatic inconclusive-probability grid.
    #[arg(long, global = true)]
    pub pi_points: Option<usize>,

    /// Start from the laboratory imperfection preset.
    #[arg(long, global = true)]
    pub experimental: bool,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub xi: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub nu: Option<f64>,
    /// LO-to-signal power bound, a number or `inf`.
    #[arg(long, global = true, value_parser = model::parse_r_max)]
    pub r_max: Option<f64>,
    /// DAC resolution in bits, or `none`.
    #[arg(long, global = true, value_parser = parse_dac_bits)]
    pub dac_bits: Option<DacBits>,
    #[arg(long, global = true)]
    pub n_bins: Option<usize>,

    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub batches: Option<usize>,
    /// Write per-trial records of the first N trials to this CSV file.
    #[arg(long, global = true, value_name = "FILE")]
    pub dump_trials: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub dump_limit: Option<u64>,

    /// Elimination energy fractions, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub f: Option<Vec<f64>>,
    /// Alphabet size.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub m_min: Option<usize>,
    #[arg(long, global = true)]
    pub m_max: Option<usize>,
    /// Energies per bit, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub per_bit: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    pub pair_prior: Option<PriorArg>,
    /// LO power bounds of the gap study, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub r_values: Option<Vec<f64>>,
    /// Solver tolerance on the achieved inconclusive probability.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

/// Contents of a `--config` file. Keys mirror the long flags with
/// underscores.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub alpha_sq: Option<Vec<f64>>,
    pub p: Option<f64>,
    pub pi: Option<Vec<f64>>,
    pub pi_points: Option<usize>,
    pub experimental: Option<bool>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    pub nu: Option<f64>,
    /// Number or `"inf"`.
    pub r_max: Option<Value>,
    /// Integer, `null` or `"none"`.
    #[serde(default, deserialize_with = "present")]
    pub dac_bits: Option<Value>,
    pub n_bins: Option<usize>,
    pub trials: Option<u64>,
    pub batches: Option<usize>,
    pub f: Option<Vec<f64>>,
    pub m: Option<usize>,
    pub m_min: Option<usize>,
    pub m_max: Option<usize>,
    pub per_bit: Option<Vec<f64>>,
    pub pair_prior: Option<PairPrior>,
    pub r_values: Option<Vec<f64>>,
    pub tol: Option<f64>,
}

/// Keeps an explicit `null` distinguishable from an absent key.
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Resolved view over the flag and file layers.
pub struct Settings {
    pub flags: Flags,
    pub file: FileConfig,
}

macro_rules! layered {
    ($($name:ident: $ty:ty),* $(,)?) => {
        $(
            pub fn $name(&self, default: $ty) -> $ty {
                self.flags.$name.clone().or_else(|| self.file.$name.clone()).unwrap_or(default)
            }
        )*
    };
}

impl Settings {
    pub fn new(flags: Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Ok(Settings { flags, file })
    }

    layered! {
        alpha_sq: Vec<f64>,
        p: f64,
        pi_points: usize,
        trials: u64,
        batches: usize,
        f: Vec<f64>,
        m: usize,
        m_min: usize,
        m_max: usize,
        per_bit: Vec<f64>,
        r_values: Vec<f64>,
        tol: f64,
    }

    pub fn pi(&self) -> Option<Vec<f64>> {
        self.flags.pi.clone().or_else(|| self.file.pi.clone())
    }

    pub fn seed(&self) -> Option<u64> {
        self.flags.seed.or(self.file.seed)
    }

    pub fn format(&self) -> Format {
        self.flags.format.or(self.file.format).unwrap_or_default()
    }

    pub fn out(&self) -> Option<PathBuf> {
        self.flags.out.clone().or_else(|| self.file.out.clone())
    }

    pub fn pair_prior(&self) -> PairPrior {
        self.flags
            .pair_prior
            .map(PairPrior::from)
            .or(self.file.pair_prior)
            .unwrap_or_default()
    }

    /// Device model: the ideal or experimental preset with individual
    /// fields overridden. `default_bins` applies when neither layer sets
    /// `n_bins`.
    pub fn imperfections(&self, default_bins: usize) -> Result<ImperfectionModel, CliError> {
        let experimental = self.flags.experimental || self.file.experimental.unwrap_or(false);
        let mut imp = if experimental {
            ImperfectionModel::experimental()
        } else {
            ImperfectionModel::ideal(default_bins)
        };
        let (fl, fi) = (&self.flags, &self.file);
        if let Some(x) = fl.eta.or(fi.eta) {
            imp.eta = x;
        }
        if let Some(x) = fl.xi.or(fi.xi) {
            imp.xi = x;
        }
        if let Some(x) = fl.nu.or(fi.nu) {
            imp.nu = x;
        }
        if let Some(x) = fl.r_max {
            imp.r_max = x;
        } else if let Some(v) = &fi.r_max {
            imp.r_max = match v {
                Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
                Value::String(s) => model::parse_r_max(s).map_err(CliError::Usage)?,
                other => return Err(CliError::Usage(format!("invalid r_max: {other}"))),
            };
        }
        if let Some(DacBits(b)) = fl.dac_bits {
            imp.dac_bits = b;
        } else if let Some(v) = &fi.dac_bits {
            imp.dac_bits = match v {
                Value::Null => None,
                Value::String(s) => parse_dac_bits(s).map_err(CliError::Usage)?.0,
                Value::Number(n) => Some(
                    n.as_u64()
                        .and_then(|b| u32::try_from(b).ok())
                        .ok_or_else(|| CliError::Usage(format!("invalid dac_bits: {n}")))?,
                ),
                other => return Err(CliError::Usage(format!("invalid dac_bits: {other}"))),
            };
        }
        if let Some(n) = fl.n_bins.or(fi.n_bins) {
            imp.n_bins = n;
        }
        imp.validate()?;
        Ok(imp)
    }
}
