//! Run configuration: an optional TOML file, overridden by flags, resolved
//! and validated before any solve.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use mutsel_core::equilibrium::FixedPointOptions;
use mutsel_core::spectral::PowerOptions;
use mutsel_core::{ConvMode, GridOptions, ModelSpec, Preset};

/// Invalid invocation or configuration; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["preset", "config"])))]
pub struct CommonArgs {
    /// Built-in scenario: fig1, fig2 or fig3.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mutation scale; repeat or separate with commas for a list.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub epsilon: Vec<f64>,
    /// Multiply both infection efficiencies by this factor.
    #[arg(long)]
    pub scale_beta: Option<f64>,
    /// Fixed node count for the trait grid.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Padding around the infection-efficiency supports.
    #[arg(long)]
    pub padding: Option<f64>,
    /// Convolution backend: fast or direct.
    #[arg(long)]
    pub mode: Option<ConvMode>,
    /// Fixed-point tolerance on the L1 residual.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of tabular outputs.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "MUTSEL_JOBS", default_value_t = 0)]
    pub jobs: usize,
    /// Keep going and exit 0 when some entries fail to converge.
    #[arg(long)]
    pub allow_partial: bool,
    /// Seed for randomized starts.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub model: Option<ModelSpec>,
    pub epsilon: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub scale_beta: Option<f64>,
    pub grid: Option<GridOptions>,
    pub mode: Option<ConvMode>,
    pub fixed_point_tol: Option<f64>,
    pub power_tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved configuration; echoed verbatim into every manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub source: String,
    pub scale_beta: f64,
    /// Model after β scaling.
    pub model: ModelSpec,
    /// Explicitly requested mutation scales; empty means the command default.
    pub epsilons: Vec<f64>,
    pub grid: GridOptions,
    pub mode: ConvMode,
    pub fixed_point: FixedPointOptions,
    pub power: PowerOptions,
    pub format: Format,
    pub out: PathBuf,
    pub jobs: usize,
    pub seed: u64,
    pub allow_partial: bool,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let (source, base) = match (args.preset, file.preset, file.model) {
            (Some(p), _, _) => (p.to_string(), p.spec()),
            (None, Some(_), Some(_)) => {
                return Err(usage("config sets both `preset` and `model`"));
            }
            (None, Some(p), None) => (p.to_string(), p.spec()),
            (None, None, Some(m)) => (
                args.config.as_ref().map_or("model".into(), |p| p.display().to_string()),
                m,
            ),
            (None, None, None) => return Err(usage("config needs a `preset` or a `model` table")),
        };
        let scale_beta = args.scale_beta.or(file.scale_beta).unwrap_or(1.0);
        if !(scale_beta > 0.0 && scale_beta.is_finite()) {
            return Err(usage(format!("--scale-beta {scale_beta} must be positive")));
        }
        let model = if scale_beta == 1.0 { base } else { base.scale_beta(scale_beta) };

        let epsilons = if !args.epsilon.is_empty() {
            args.epsilon.clone()
        } else if let Some(list) = file.epsilons {
            if list.is_empty() {
                return Err(usage("empty epsilon list"));
            }
            list
        } else {
            file.epsilon.map(|e| vec![e]).unwrap_or_default()
        };
        if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(usage(format!("epsilon {e} must be positive")));
        }

        let mut grid = file.grid.unwrap_or_default();
        if args.nodes.is_some() {
            grid.nodes = args.nodes;
        }
        if args.padding.is_some() {
            grid.padding = args.padding;
        }

        let mut fixed_point = FixedPointOptions::default();
        if let Some(tol) = args.tol.or(file.fixed_point_tol) {
            fixed_point.tol = tol;
        }
        let mut power = PowerOptions::default();
        if let Some(tol) = file.power_tol {
            power.tol = tol;
        }

        Ok(Self {
            source,
            scale_beta,
            model,
            epsilons,
            grid,
            mode: args.mode.or(file.mode).unwrap_or_default(),
            fixed_point,
            power,
            format: args.format.or(file.format).unwrap_or_default(),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            jobs: args.jobs,
            seed: args.seed.or(file.seed).unwrap_or(0),
            allow_partial: args.allow_partial,
        })
    }

    /// Mutation scales for commands that sweep; falls back to `default`.
    pub fn sweep_epsilons(&self, default: &[f64]) -> Vec<f64> {
        if self.epsilons.is_empty() {
            default.to_vec()
        } else {
            self.epsilons.clone()
        }
    }

    /// The single mutation scale of a one-shot command.
    pub fn single_epsilon(&self) -> Result<f64> {
        match self.epsilons.as_slice() {
            [] => Ok(self.model.epsilon),
            [e] => Ok(*e),
            _ => Err(usage("this command takes a single --epsilon")),
        }
    }
}
