//! Run configuration: the JSON document, command-line overrides, and the
//! validated form the commands consume.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stringstab_core::chain::ChainSize;
use stringstab_core::freq::FrequencyGrid;
use stringstab_core::sim::{check_step, DisturbanceSpec};
use stringstab_core::{AffineTerm, ControllerGains, Error};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gains: GainsSection,
    pub chain: ChainSection,
    pub frequency: FrequencySection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
    pub tuning: TuningSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self {
            a1: 1.0,
            b1: 1.0,
            a2: 10.0,
            b2: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub n: usize,
    /// Chain lengths for `sweep-n`; `1..=n` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Vehicle index for `freq-response`.
    pub vehicle: usize,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            n: 12,
            n_list: None,
            vehicle: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencySection {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
}

impl Default for FrequencySection {
    fn default() -> Self {
        let g = FrequencyGrid::default();
        Self {
            omega_min: g.omega_min(),
            omega_max: g.omega_max(),
            points: g.points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Step; derived from the gains when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Horizon; derived from the slowest mode when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub disturbances: Vec<DisturbanceSpec>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: None,
            disturbances: vec![DisturbanceSpec::default_pulse()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for result files. Reports also go to stdout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSection {
    pub base_a: f64,
    pub base_b: f64,
    pub kappa: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            base_a: 1.0,
            base_b: 1.0,
            kappa: 2.0,
            alpha_min: 1.0,
            alpha_max: 1e3,
        }
    }
}

/// Command-line values that replace the matching file entries.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub a1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub b1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub a2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub b2: Option<f64>,
    /// Chain length (number of followers).
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated chain lengths for sweep-n.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Vehicle index k for freq-response.
    #[arg(long)]
    pub vehicle: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub base_a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub base_b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha_max: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config {
            field: "config".into(),
            reason: e.to_string(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.gains.a1, &o.a1);
        set(&mut self.gains.b1, &o.b1);
        set(&mut self.gains.a2, &o.a2);
        set(&mut self.gains.b2, &o.b2);
        set(&mut self.chain.n, &o.n);
        set(&mut self.chain.vehicle, &o.vehicle);
        set(&mut self.frequency.omega_min, &o.omega_min);
        set(&mut self.frequency.omega_max, &o.omega_max);
        set(&mut self.frequency.points, &o.points);
        set(&mut self.tuning.base_a, &o.base_a);
        set(&mut self.tuning.base_b, &o.base_b);
        set(&mut self.tuning.kappa, &o.kappa);
        set(&mut self.tuning.alpha_min, &o.alpha_min);
        set(&mut self.tuning.alpha_max, &o.alpha_max);
        set(&mut self.output.format, &o.format);
        if o.n_list.is_some() {
            self.chain.n_list = o.n_list.clone();
        }
        if o.dt.is_some() {
            self.simulation.dt = o.dt;
        }
        if o.t_end.is_some() {
            self.simulation.t_end = o.t_end;
        }
        if o.out.is_some() {
            self.output.dir = o.out.clone();
        }
    }

    /// Check every field against the core invariants.
    pub fn validate(&self) -> Result<RunConfig, CliError> {
        let gs = &self.gains;
        let gains =
            ControllerGains::from_coefficients(gs.a1, gs.b1, gs.a2, gs.b2).map_err(|e| in_section("gains", e))?;
        let n = ChainSize::new(self.chain.n).map_err(|e| in_section("chain", e))?;

        let mut n_list = match &self.chain.n_list {
            Some(list) if list.is_empty() => return Err(config_error("chain.n_list", "must not be empty")),
            Some(list) => list
                .iter()
                .map(|&k| ChainSize::new(k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    Error::InvalidParameter { reason, .. } => config_error("chain.n_list", reason),
                    other => CliError::Core(other),
                })?,
            None => (1..=n.get()).map(|k| ChainSize::new(k).expect("k >= 1")).collect(),
        };
        n_list.sort();
        n_list.dedup();

        let f = &self.frequency;
        let grid = FrequencyGrid::new(f.omega_min, f.omega_max, f.points).map_err(|e| in_section("frequency", e))?;

        if let Some(dt) = self.simulation.dt {
            check_step(&gains, dt).map_err(|e| in_section("simulation", e))?;
        }
        if let Some(t_end) = self.simulation.t_end {
            if !(t_end.is_finite() && t_end > 0.0) {
                return Err(config_error(
                    "simulation.t_end",
                    format!("must be positive, got {t_end}"),
                ));
            }
        }
        let largest = n_list.last().copied().unwrap_or(n).max(n);
        for d in &self.simulation.disturbances {
            d.validate(largest).map_err(|e| in_section("simulation", e))?;
        }

        let t = &self.tuning;
        let base = AffineTerm::named(t.base_a, t.base_b, "base_a", "base_b").map_err(|e| in_section("tuning", e))?;
        if !(t.kappa.is_finite() && t.kappa > 0.0) {
            return Err(config_error(
                "tuning.kappa",
                format!("must be positive, got {}", t.kappa),
            ));
        }
        if !(t.alpha_min.is_finite() && t.alpha_min >= 1.0) {
            return Err(config_error(
                "tuning.alpha_min",
                format!("must be at least 1, got {}", t.alpha_min),
            ));
        }
        if !(t.alpha_max.is_finite() && t.alpha_max >= t.alpha_min) {
            return Err(config_error(
                "tuning.alpha_max",
                format!("must be at least alpha_min = {}, got {}", t.alpha_min, t.alpha_max),
            ));
        }

        Ok(RunConfig {
            gains,
            n,
            n_list,
            vehicle: self.chain.vehicle,
            grid,
            dt: self.simulation.dt,
            t_end: self.simulation.t_end,
            disturbances: self.simulation.disturbances.clone(),
            out_dir: self.output.dir.clone(),
            format: self.output.format,
            tune_base: base,
            kappa: t.kappa,
            alpha_range: (t.alpha_min, t.alpha_max),
        })
    }
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gains: ControllerGains,
    pub n: ChainSize,
    /// Ascending, without duplicates.
    pub n_list: Vec<ChainSize>,
    /// Checked by `freq-response` only.
    pub vehicle: usize,
    pub grid: FrequencyGrid,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub disturbances: Vec<DisturbanceSpec>,
    pub out_dir: Option<PathBuf>,
    pub format: Format,
    pub tune_base: AffineTerm,
    pub kappa: f64,
    pub alpha_range: (f64, f64),
}

fn config_error(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Qualify a core validation error with its config section.
pub fn in_section(section: &str, e: Error) -> CliError {
    match e {
        Error::InvalidParameter { name, reason } => config_error(&format!("{section}.{name}"), reason),
        other => CliError::Core(other),
    }
}
