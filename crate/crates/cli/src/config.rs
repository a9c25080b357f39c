//! Run configuration: an optional TOML file overlaid by command-line flags.
//!
//! The file uses the same keys as [`RunConfig`]. Every key is optional;
//! anything missing from both the file and the flags takes the default of
//! the Gaussian location preset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

pub const DEFAULT_M: usize = 200;
pub const DEFAULT_LO: f64 = -5.0;
pub const DEFAULT_HI: f64 = 0.0;
pub const DEFAULT_THETA1: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_GRID: EvalGridSpec = EvalGridSpec {
    lo: -6.0,
    hi: 6.0,
    count: 401,
};
pub const DEFAULT_RUNS: usize = 100;

/// Equally spaced evaluation points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl EvalGridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.lo],
            n => {
                let step = (self.hi - self.lo) / (n - 1) as f64;
                (0..n)
                    .map(|i| {
                        if i == n - 1 {
                            self.hi
                        } else {
                            self.lo + step * i as f64
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Contents of a config file. Same keys as [`RunConfig`], all optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub theta1: Option<f64>,
    pub discrete_csv: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub n_draws: Option<usize>,
    pub omega: Option<f64>,
    pub seed: Option<u64>,
    pub eval_draws: Option<usize>,
    #[serde(rename = "T")]
    pub t: Option<u64>,
    pub eta: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub record_trace: Option<bool>,
    pub run_oracle: Option<bool>,
    pub randomized_epoch_y: Option<Vec<f64>>,
    pub runs: Option<usize>,
    pub draw_counts: Option<Vec<usize>>,
    pub grid_points: Option<usize>,
    pub eval_grid: Option<EvalGridSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // a relative table path is taken relative to the config file
        if let (Some(csv), Some(dir)) = (cfg.discrete_csv.as_mut(), path.parent()) {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in problem (only `gaussian`).
    #[arg(long, conflicts_with = "discrete")]
    pub preset: Option<String>,
    /// Discrete problem as CSV with columns atom,f_1..f_M,g.
    #[arg(long, value_name = "CSV")]
    pub discrete: Option<PathBuf>,
    /// Number of null locations.
    #[arg(long = "M")]
    pub m: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta1: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Draws per null per epoch.
    #[arg(long = "N")]
    pub n_draws: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo draws per distribution for evaluation.
    #[arg(long)]
    pub eval_draws: Option<usize>,
    /// Override the number of epochs.
    #[arg(long = "T")]
    pub t: Option<u64>,
    /// Override the step size.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Which problem to solve.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Gaussian {
        m: usize,
        lo: f64,
        hi: f64,
        theta1: f64,
    },
    Discrete {
        csv: PathBuf,
    },
}

/// Fully resolved configuration, written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrete_csv: Option<PathBuf>,
    pub alpha: f64,
    pub epsilon: f64,
    pub n_draws: usize,
    pub omega: f64,
    pub seed: u64,
    pub eval_draws: usize,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub output_dir: PathBuf,
    pub record_trace: bool,
    pub run_oracle: bool,
    pub randomized_epoch_y: Vec<f64>,
    pub runs: usize,
    pub draw_counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Absent for discrete problems, which are evaluated on their atoms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_grid: Option<EvalGridSpec>,
}

/// Subcommand-specific values that can also come from the file.
#[derive(Debug, Clone, Default)]
pub struct ExtraArgs {
    pub record_trace: bool,
    pub run_oracle: bool,
    pub randomized_epoch_y: Option<Vec<f64>>,
    pub runs: Option<usize>,
    pub draw_counts: Option<Vec<usize>>,
    pub grid_points: Option<usize>,
    pub eval_grid: Option<EvalGridSpec>,
}

impl RunConfig {
    /// Merges flags over the file over the defaults.
    pub fn resolve(common: &CommonArgs, extra: &ExtraArgs) -> Result<Self> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        // a problem named on the command line replaces the file's choice
        let (preset, discrete_csv) = match (&common.preset, &common.discrete) {
            (Some(p), _) => (Some(p.clone()), None),
            (None, Some(d)) => (None, Some(d.clone())),
            (None, None) => match (file.preset.clone(), file.discrete_csv.clone()) {
                (Some(_), Some(_)) => bail!("set either a preset or a discrete table, not both"),
                (None, Some(d)) => (None, Some(d)),
                (p, None) => (Some(p.unwrap_or_else(|| "gaussian".into())), None),
            },
        };
        if let Some(p) = &preset {
            if p != "gaussian" {
                bail!("unknown preset {p:?} (expected \"gaussian\")");
            }
        }
        let gaussian = preset.is_some();

        let alpha = common.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            bail!("alpha must lie in (0,1), got {alpha}");
        }
        let pick = |cli: Option<f64>, f: Option<f64>, d: f64| {
            if gaussian {
                Some(cli.or(f).unwrap_or(d))
            } else {
                None
            }
        };
        let cfg = RunConfig {
            m: if gaussian {
                Some(common.m.or(file.m).unwrap_or(DEFAULT_M))
            } else {
                None
            },
            lo: pick(common.lo, file.lo, DEFAULT_LO),
            hi: pick(common.hi, file.hi, DEFAULT_HI),
            theta1: pick(common.theta1, file.theta1, DEFAULT_THETA1),
            preset,
            discrete_csv,
            alpha,
            epsilon: common.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON),
            n_draws: common.n_draws.or(file.n_draws).unwrap_or(1),
            omega: common
                .omega
                .or(file.omega)
                .unwrap_or_else(|| (1.0 / alpha).ln().sqrt()),
            seed: common.seed.or(file.seed).unwrap_or(0),
            eval_draws: common
                .eval_draws
                .or(file.eval_draws)
                .unwrap_or(lfd_core::eval::DEFAULT_EVAL_DRAWS),
            t: common.t.or(file.t),
            eta: common.eta.or(file.eta),
            output_dir: common
                .out
                .clone()
                .or(file.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            record_trace: extra.record_trace || file.record_trace.unwrap_or(false),
            run_oracle: extra.run_oracle || file.run_oracle.unwrap_or(false),
            randomized_epoch_y: extra
                .randomized_epoch_y
                .clone()
                .or(file.randomized_epoch_y)
                .unwrap_or_default(),
            runs: extra.runs.or(file.runs).unwrap_or(DEFAULT_RUNS),
            draw_counts: extra
                .draw_counts
                .clone()
                .or(file.draw_counts)
                .unwrap_or_else(|| vec![1, 10, 100]),
            grid_points: extra.grid_points.or(file.grid_points),
            eval_grid: if gaussian {
                Some(extra.eval_grid.or(file.eval_grid).unwrap_or(DEFAULT_GRID))
            } else {
                None
            },
        };
        if cfg.eval_draws == 0 {
            bail!("eval_draws must be at least 1");
        }
        if let Some(g) = cfg.eval_grid {
            if !g.lo.is_finite() || !g.hi.is_finite() || g.lo > g.hi {
                bail!("eval_grid needs finite lo <= hi, got [{}, {}]", g.lo, g.hi);
            }
        }
        Ok(cfg)
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        match &self.discrete_csv {
            Some(csv) => ProblemSpec::Discrete { csv: csv.clone() },
            None => ProblemSpec::Gaussian {
                m: self.m.unwrap_or(DEFAULT_M),
                lo: self.lo.unwrap_or(DEFAULT_LO),
                hi: self.hi.unwrap_or(DEFAULT_HI),
                theta1: self.theta1.unwrap_or(DEFAULT_THETA1),
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
