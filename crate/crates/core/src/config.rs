//! Run configuration: a key-value file (TOML syntax) merged with
//! command-line overrides, resolved into validated settings before any data
//! is read.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Family, Location};
use crate::parallel::{DEFAULT_BATCH_FLOOR, DEFAULT_REJUVENATION_PERIOD};
use crate::smc::{IbisConfig, DEFAULT_SCALE, DEFAULT_SHAPE, DEFAULT_UPPER};

/// A site in a configuration file or sites table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteEntry {
    pub name: String,
    pub east_km: f64,
    pub north_km: f64,
}

/// Every tunable, all optional. Used both as the file schema and as the
/// command-line flag set; flags win over file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Master RNG seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total number of particles.
    #[arg(long)]
    pub particles: Option<usize>,
    /// ESS fraction that triggers resample-move.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Window width in hours, or `inf` for full IBIS.
    #[arg(long)]
    pub window: Option<String>,
    /// Number of independent particle batches.
    #[arg(long)]
    pub batches: Option<usize>,
    /// Forced resample-move every K records (0 disables).
    #[arg(long)]
    pub rejuvenation_period: Option<usize>,
    /// MH steps per particle per trigger.
    #[arg(long)]
    pub moves_per_trigger: Option<usize>,
    /// Smallest allowed batch.
    #[arg(long)]
    pub batch_floor: Option<usize>,
    /// Worker threads for batched runs.
    #[arg(long)]
    pub workers: Option<usize>,
    /// `sinusoid`, `fourier:q` or `humidity`.
    #[arg(long)]
    pub model: Option<String>,
    /// Restrict every system variance below its site's observation variance.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub constrain_w_lt_v: Option<bool>,
    /// Inverse-gamma shape for every free parameter.
    #[arg(long)]
    pub prior_shape: Option<f64>,
    /// Inverse-gamma scale.
    #[arg(long)]
    pub prior_scale: Option<f64>,
    /// Truncation bound of the prior.
    #[arg(long)]
    pub prior_upper: Option<f64>,
    /// Sites table with columns `name,east_km,north_km`.
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Inline sites (file only).
    #[arg(skip)]
    pub site: Option<Vec<SiteEntry>>,

    /// Series length for `simulate`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Hours between records (simulation and forecasts).
    #[arg(long)]
    pub step_hours: Option<f64>,
    /// True system variance, every component.
    #[arg(long)]
    pub truth_w: Option<f64>,
    /// True observation variance, every site.
    #[arg(long)]
    pub truth_v: Option<f64>,
    /// True GP variance, every channel.
    #[arg(long)]
    pub truth_sigma2: Option<f64>,
    /// True GP decay in 1/km, every channel.
    #[arg(long)]
    pub truth_psi: Option<f64>,
    /// Per-site probability that an hour is missing.
    #[arg(long)]
    pub missing_prob: Option<f64>,
    /// Also simulate humidity from the conditional model.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub humidity: Option<bool>,

    /// Canonical series to fit.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Posterior dump written by `fit`.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    /// Forecast horizon in steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Posterior draws used by `predict`.
    #[arg(long)]
    pub draws: Option<usize>,

    /// Comma-separated model list for `compare`; the last is the reference.
    #[arg(long)]
    pub models: Option<String>,
    /// Independent fits per model.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Sites drawn at random per replicate.
    #[arg(long)]
    pub subsample_sites: Option<usize>,
    /// Consecutive records drawn at random per replicate.
    #[arg(long)]
    pub subsample_length: Option<usize>,
}

macro_rules! merge_fields {
    ($base:ident, $over:ident, $($f:ident),* $(,)?) => {
        $( if $over.$f.is_some() { $base.$f = $over.$f; } )*
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Values in `over` replace those in `self`.
    pub fn merged(mut self, over: Settings) -> Self {
        merge_fields!(
            self,
            over,
            seed,
            particles,
            delta,
            window,
            batches,
            rejuvenation_period,
            moves_per_trigger,
            batch_floor,
            workers,
            model,
            constrain_w_lt_v,
            prior_shape,
            prior_scale,
            prior_upper,
            sites,
            site,
            n,
            step_hours,
            truth_w,
            truth_v,
            truth_sigma2,
            truth_psi,
            missing_prob,
            humidity,
            data,
            out,
            posterior,
            horizon,
            draws,
            models,
            replicates,
            subsample_sites,
            subsample_length,
        );
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Fit,
    Forecast,
    Predict,
    Compare,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Simulate => "simulate",
            Mode::Fit => "fit",
            Mode::Forecast => "forecast",
            Mode::Predict => "predict",
            Mode::Compare => "compare",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorSettings {
    pub shape: f64,
    pub scale: f64,
    pub upper: f64,
    pub constrain_w_lt_v: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSettings {
    pub n: usize,
    pub truth_w: f64,
    pub truth_v: f64,
    pub truth_sigma2: f64,
    pub truth_psi: f64,
    pub missing_prob: f64,
    pub humidity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSettings {
    pub models: Vec<String>,
    pub replicates: usize,
    pub subsample_sites: Option<usize>,
    pub subsample_length: Option<usize>,
}

/// Fully resolved and validated settings for one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub particles: usize,
    pub delta: f64,
    /// `None` is an infinite window.
    pub window_hours: Option<f64>,
    pub batches: usize,
    pub rejuvenation_period: usize,
    pub moves_per_trigger: usize,
    pub batch_floor: usize,
    pub workers: Option<usize>,
    pub model: String,
    pub prior: PriorSettings,
    pub sites: Vec<SiteEntry>,
    pub simulate: Option<SimulateSettings>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub posterior: Option<PathBuf>,
    /// Record spacing used by `simulate` and `forecast`.
    pub step_hours: f64,
    pub horizon: usize,
    pub draws: usize,
    pub compare: Option<CompareSettings>,
}

fn parse_window(s: &str) -> Result<Option<f64>> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(w) if w > 0.0 && w.is_finite() => Ok(Some(w)),
        _ => Err(Error::config(
            "window",
            format!("expected hours > 0 or `inf`, got `{s}`"),
        )),
    }
}

fn read_sites(path: &Path) -> Result<Vec<SiteEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SiteEntry>().enumerate() {
        out.push(rec.map_err(|e| Error::InputRow {
            row: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Two sites 20 km apart.
pub fn default_sites() -> Vec<SiteEntry> {
    vec![
        SiteEntry {
            name: "site1".into(),
            east_km: 0.0,
            north_km: 0.0,
        },
        SiteEntry {
            name: "site2".into(),
            east_km: 20.0,
            north_km: 0.0,
        },
    ]
}

fn positive(field: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::config(
            field,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

impl RunConfig {
    /// Applies defaults and checks every setting needed by `mode`. Only the
    /// sites table (if given as a path) is read from disk.
    pub fn resolve(mode: Mode, s: &Settings) -> Result<Self> {
        let seed = s
            .seed
            .ok_or_else(|| Error::config("seed", "a seed is required for reproducible runs"))?;
        let particles = s.particles.unwrap_or(10_000);
        let delta = s.delta.unwrap_or(0.5);
        let window_hours = match &s.window {
            Some(w) => parse_window(w)?,
            None => None,
        };
        let batches = s.batches.unwrap_or(1);
        let rejuvenation_period = s.rejuvenation_period.unwrap_or(if batches > 1 {
            DEFAULT_REJUVENATION_PERIOD
        } else {
            0
        });
        let moves_per_trigger = s.moves_per_trigger.unwrap_or(1);
        let batch_floor = s.batch_floor.unwrap_or(DEFAULT_BATCH_FLOOR);
        let model = s.model.clone().unwrap_or_else(|| "sinusoid".into());
        let family: Family = model.parse()?;
        let prior = PriorSettings {
            shape: positive("prior_shape", s.prior_shape.unwrap_or(DEFAULT_SHAPE))?,
            scale: positive("prior_scale", s.prior_scale.unwrap_or(DEFAULT_SCALE))?,
            upper: positive("prior_upper", s.prior_upper.unwrap_or(DEFAULT_UPPER))?,
            constrain_w_lt_v: s.constrain_w_lt_v.unwrap_or(false),
        };
        let sites = match (&s.sites, &s.site) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "sites",
                    "give either a sites file or inline sites",
                ))
            }
            (Some(p), None) => read_sites(p)?,
            (None, Some(v)) => v.clone(),
            (None, None) => default_sites(),
        };
        if sites.is_empty() {
            return Err(Error::config("sites", "at least one site is required"));
        }
        let out = s
            .out
            .clone()
            .ok_or_else(|| Error::config("out", "an output directory is required"))?;

        if mode == Mode::Simulate && family == Family::HumidityConditional {
            return Err(Error::config(
                "model",
                "simulate a temperature family; use `humidity = true` to add humidity",
            ));
        }
        let simulate = (mode == Mode::Simulate)
            .then(|| -> Result<SimulateSettings> {
                let missing_prob = s.missing_prob.unwrap_or(0.0);
                if !(0.0..=1.0).contains(&missing_prob) {
                    return Err(Error::config("missing_prob", "must lie in [0, 1]"));
                }
                let n = s.n.unwrap_or(1300);
                if n == 0 {
                    return Err(Error::config("n", "must be at least 1"));
                }
                Ok(SimulateSettings {
                    n,
                    truth_w: positive("truth_w", s.truth_w.unwrap_or(0.01))?,
                    truth_v: positive("truth_v", s.truth_v.unwrap_or(1.0))?,
                    truth_sigma2: positive("truth_sigma2", s.truth_sigma2.unwrap_or(1.0))?,
                    truth_psi: positive("truth_psi", s.truth_psi.unwrap_or(0.01))?,
                    missing_prob,
                    humidity: s.humidity.unwrap_or(false),
                })
            })
            .transpose()?;

        let needs_data = matches!(
            mode,
            Mode::Fit | Mode::Forecast | Mode::Predict | Mode::Compare
        );
        if needs_data && s.data.is_none() {
            return Err(Error::config("data", "a data file is required"));
        }
        if mode == Mode::Forecast && s.posterior.is_none() {
            return Err(Error::config(
                "posterior",
                "a posterior dump from `fit` is required",
            ));
        }
        let horizon = s.horizon.unwrap_or(2);
        if mode == Mode::Forecast && horizon < 1 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        let draws = s.draws.unwrap_or(200);
        if draws == 0 {
            return Err(Error::config("draws", "must be at least 1"));
        }
        let compare = (mode == Mode::Compare)
            .then(|| -> Result<CompareSettings> {
                let models: Vec<String> = s
                    .models
                    .as_deref()
                    .unwrap_or("")
                    .split(',')
                    .map(|m| m.trim().to_string())
                    .filter(|m| !m.is_empty())
                    .collect();
                if models.len() < 2 {
                    return Err(Error::config("models", "compare needs at least two models"));
                }
                for m in &models {
                    m.parse::<Family>()?;
                }
                let replicates = s.replicates.unwrap_or(1);
                if replicates == 0 {
                    return Err(Error::config("replicates", "must be at least 1"));
                }
                if let Some(k) = s.subsample_sites {
                    if k == 0 || k > sites.len() {
                        return Err(Error::config(
                            "subsample_sites",
                            "must lie in 1..=number of sites",
                        ));
                    }
                }
                if s.subsample_length == Some(0) {
                    return Err(Error::config("subsample_length", "must be at least 1"));
                }
                Ok(CompareSettings {
                    models,
                    replicates,
                    subsample_sites: s.subsample_sites,
                    subsample_length: s.subsample_length,
                })
            })
            .transpose()?;

        let cfg = Self {
            mode,
            seed,
            particles,
            delta,
            window_hours,
            batches,
            rejuvenation_period,
            moves_per_trigger,
            batch_floor,
            workers: s.workers,
            model,
            prior,
            sites,
            simulate,
            data: s.data.clone(),
            out,
            posterior: s.posterior.clone(),
            step_hours: positive("step_hours", s.step_hours.unwrap_or(1.0))?,
            horizon,
            draws,
            compare,
        };
        cfg.ibis().validate()?;
        if matches!(mode, Mode::Fit | Mode::Compare) {
            crate::parallel::BatchPlan::new(
                particles,
                batches,
                rejuvenation_period,
                seed,
                if batches > 1 { batch_floor } else { 2 },
            )?;
        }
        if s.workers == Some(0) {
            return Err(Error::config("workers", "must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn family(&self) -> Family {
        self.model.parse().expect("validated at resolve time")
    }

    pub fn locations(&self) -> Vec<Location> {
        self.sites
            .iter()
            .enumerate()
            .map(|(i, s)| Location::new(i, s.name.clone(), s.east_km, s.north_km))
            .collect()
    }

    /// IBIS settings for a serial run over all particles.
    pub fn ibis(&self) -> IbisConfig {
        IbisConfig {
            n_particles: self.particles,
            delta: self.delta,
            window: self.window_hours,
            rejuvenation_period: self.rejuvenation_period,
            moves_per_trigger: self.moves_per_trigger,
        }
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Provenance lines placed at the top of every output file.
    pub fn header(&self) -> Vec<String> {
        vec![
            format!("dlm-ibis {} {}", env!("CARGO_PKG_VERSION"), self.mode),
            format!("config_hash={}", self.hash()),
            format!("seed={}", self.seed),
        ]
    }

    /// Resolved settings as `key = value` text.
    pub fn to_meta(&self) -> String {
        let mut s = String::new();
        for line in self.header() {
            s.push_str(&format!("# {line}\n"));
        }
        s.push_str(&toml::to_string(self).expect("config serialises"));
        s
    }
}
