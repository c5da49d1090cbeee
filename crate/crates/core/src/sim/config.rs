//! Scenario configuration: a flat `key = value` file (TOML syntax).
//!
//! Every key is optional. Sweep axes (`antennas`, `paths`, `btot`,
//! `power_dbm`) accept either a scalar or an array. Unknown keys are
//! rejected so typos do not silently fall back to defaults.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `antennas` | `64` | array size N (grid) |
//! | `users` | `8` | users K |
//! | `paths` | `3` | paths per user L (grid) |
//! | `btot` | `[0, 3, …, 21]` | feedback bits per user (grid) |
//! | `power_dbm` | `30` | total transmit power (grid) |
//! | `lambda_ul`, `lambda_dl` | c/10 GHz, c/12 GHz | carrier wavelengths, m |
//! | `spacing` | `lambda_ul / 2` | element spacing, m |
//! | `isd` | `500` | inter-site distance, m; cell radius is `isd/2` |
//! | `min_distance` | `35` | closest user distance, m |
//! | `noise_dbm` | `-113` | receiver noise power |
//! | `pl_exponent` | `3.908` | path-loss exponent |
//! | `pl_ref_loss_db` | `35.12` | path loss at the reference distance, dB |
//! | `pl_ref_distance` | `1` | reference distance, m |
//! | `decay_ratio` | `0.7` | per-path power ratio ρ |
//! | `excess_distance_max` | `100` | max extra path length, m |
//! | `aoa_sigma` | `0` | AoA estimation error std, rad |
//! | `gain_rel_sigma` | `0` | relative gain estimation error std |
//! | `reconstruction` | `"mmse"` | `mmse`, `no_feedback` or `dft` |
//! | `nofb_covariance` | `"full"` | `full` or `zero` |
//! | `precoder` | `"gpip"` | `gpip`, `zf` or `wmmse` |
//! | `allocator` | `"greedy"` | `greedy`, `uniform` or `none` |
//! | `gpip_epsilon` | `1e-4` | GPIP relative-improvement tolerance |
//! | `gpip_max_iter` | `50` | GPIP iteration cap |
//! | `gpip_keep_best` | `true` | return the best GPIP iterate |
//! | `wmmse_iters` | `100` | WMMSE iteration cap |
//! | `trials` | `200` | Monte Carlo drops |
//! | `seed` | `0` | master seed |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use toml::{Table, Value};

use crate::channel::{ArrayGeometry, EstimationNoise, PathLoss, SceneParams, SPEED_OF_LIGHT};
use crate::precoding::GpipConfig;
use crate::reconstruction::NoFeedbackCovariance;
use crate::{Error, Result};

macro_rules! choice_enum {
    ($name:ident, $field:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::Config {
                        field: $field.into(),
                        reason: format!(
                            "unknown value {other:?}; expected one of {}",
                            [$($text),+].join(", ")
                        ),
                    }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

choice_enum!(AllocatorChoice, "allocator", {
    Greedy => "greedy",
    Uniform => "uniform",
    None => "none",
});

choice_enum!(PrecoderChoice, "precoder", {
    Gpip => "gpip",
    Zf => "zf",
    Wmmse => "wmmse",
});

choice_enum!(ReconstructionChoice, "reconstruction", {
    Mmse => "mmse",
    NoFeedback => "no_feedback",
    Dft => "dft",
});

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub antennas: Vec<usize>,
    pub users: usize,
    pub paths: Vec<usize>,
    pub btot: Vec<u32>,
    pub power_dbm: Vec<f64>,
    pub lambda_ul: f64,
    pub lambda_dl: f64,
    pub spacing: f64,
    pub isd: f64,
    pub min_distance: f64,
    pub noise_dbm: f64,
    pub pl_exponent: f64,
    pub pl_ref_loss_db: f64,
    pub pl_ref_distance: f64,
    pub decay_ratio: f64,
    pub excess_distance_max: f64,
    pub aoa_sigma: f64,
    pub gain_rel_sigma: f64,
    pub reconstruction: ReconstructionChoice,
    pub nofb_covariance: NoFeedbackCovariance,
    pub precoder: PrecoderChoice,
    pub allocator: AllocatorChoice,
    pub gpip: GpipConfig,
    pub wmmse_iters: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let lambda_ul = SPEED_OF_LIGHT / 10e9;
        Self {
            antennas: vec![64],
            users: 8,
            paths: vec![3],
            btot: (0..=21).step_by(3).collect(),
            power_dbm: vec![30.0],
            lambda_ul,
            lambda_dl: SPEED_OF_LIGHT / 12e9,
            spacing: lambda_ul / 2.0,
            isd: 500.0,
            min_distance: 35.0,
            noise_dbm: -113.0,
            // urban-macro NLOS log-distance fit at 12 GHz: 13.54 + 20·log10(12) dB at 1 m
            pl_exponent: 3.908,
            pl_ref_loss_db: 35.12,
            pl_ref_distance: 1.0,
            decay_ratio: 0.7,
            excess_distance_max: 100.0,
            aoa_sigma: 0.0,
            gain_rel_sigma: 0.0,
            reconstruction: ReconstructionChoice::Mmse,
            nofb_covariance: NoFeedbackCovariance::Full,
            precoder: PrecoderChoice::Gpip,
            allocator: AllocatorChoice::Greedy,
            gpip: GpipConfig::default(),
            wmmse_iters: 100,
            trials: 200,
            seed: 0,
        }
    }
}

/// Parsed configuration plus the keys that fell back to defaults.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub config: ScenarioConfig,
    pub defaulted: Vec<&'static str>,
}

const KEYS: &[&str] = &[
    "antennas",
    "users",
    "paths",
    "btot",
    "power_dbm",
    "lambda_ul",
    "lambda_dl",
    "spacing",
    "isd",
    "min_distance",
    "noise_dbm",
    "pl_exponent",
    "pl_ref_loss_db",
    "pl_ref_distance",
    "decay_ratio",
    "excess_distance_max",
    "aoa_sigma",
    "gain_rel_sigma",
    "reconstruction",
    "nofb_covariance",
    "precoder",
    "allocator",
    "gpip_epsilon",
    "gpip_max_iter",
    "gpip_keep_best",
    "wmmse_iters",
    "trials",
    "seed",
];

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), reason: reason.into() }
}

struct Reader {
    table: Table,
    defaulted: Vec<&'static str>,
}

impl Reader {
    fn take(&mut self, key: &'static str) -> Option<Value> {
        let v = self.table.remove(key);
        if v.is_none() {
            self.defaulted.push(key);
        }
        v
    }

    fn float(&mut self, key: &'static str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => as_float(key, &v),
        }
    }

    fn uint(&mut self, key: &'static str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => as_uint(key, &v),
        }
    }

    fn boolean(&mut self, key: &'static str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(other) => Err(config_err(key, format!("expected a boolean, got {}", other.type_str()))),
        }
    }

    fn string(&mut self, key: &'static str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(config_err(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn choice<T: FromStr<Err = Error>>(&mut self, key: &'static str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::String(s)) => s.parse(),
            Some(other) => Err(config_err(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn grid<T>(
        &mut self,
        key: &'static str,
        default: Vec<T>,
        conv: impl Fn(&'static str, &Value) -> Result<T>,
    ) -> Result<Vec<T>> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Array(items)) => {
                if items.is_empty() {
                    return Err(config_err(key, "grid must not be empty"));
                }
                items.iter().map(|v| conv(key, v)).collect()
            }
            Some(v) => Ok(vec![conv(key, &v)?]),
        }
    }
}

fn as_float(key: &str, v: &Value) -> Result<f64> {
    let x = match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        other => return Err(config_err(key, format!("expected a number, got {}", other.type_str()))),
    };
    if !x.is_finite() {
        return Err(config_err(key, "must be finite"));
    }
    Ok(x)
}

fn as_uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(i) => Err(config_err(key, format!("must be nonnegative, got {i}"))),
        other => Err(config_err(key, format!("expected an integer, got {}", other.type_str()))),
    }
}

fn as_usize(key: &'static str, v: &Value) -> Result<usize> {
    usize::try_from(as_uint(key, v)?).map_err(|_| config_err(key, "too large"))
}

fn as_u32(key: &'static str, v: &Value) -> Result<u32> {
    u32::try_from(as_uint(key, v)?).map_err(|_| config_err(key, "too large"))
}

/// Parses configuration text; see the module docs for the schema.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let table: Table =
        text.parse().map_err(|e: toml::de::Error| config_err(&error_key(&e), e.message().to_string()))?;
    for key in table.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(config_err(key, "unknown key"));
        }
    }
    let d = ScenarioConfig::default();
    let mut r = Reader { table, defaulted: Vec::new() };
    let lambda_ul = r.float("lambda_ul", d.lambda_ul)?;
    let spacing_default = lambda_ul / 2.0;
    let nofb = r.string("nofb_covariance", "full")?;
    let nofb_covariance = match nofb.as_str() {
        "full" => NoFeedbackCovariance::Full,
        "zero" => NoFeedbackCovariance::Zero,
        other => return Err(config_err("nofb_covariance", format!("unknown value {other:?}; expected full or zero"))),
    };
    let config = ScenarioConfig {
        antennas: r.grid("antennas", d.antennas, as_usize)?,
        users: r.uint("users", d.users as u64)? as usize,
        paths: r.grid("paths", d.paths, as_usize)?,
        btot: r.grid("btot", d.btot, as_u32)?,
        power_dbm: r.grid("power_dbm", d.power_dbm, as_float)?,
        lambda_ul,
        lambda_dl: r.float("lambda_dl", d.lambda_dl)?,
        spacing: r.float("spacing", spacing_default)?,
        isd: r.float("isd", d.isd)?,
        min_distance: r.float("min_distance", d.min_distance)?,
        noise_dbm: r.float("noise_dbm", d.noise_dbm)?,
        pl_exponent: r.float("pl_exponent", d.pl_exponent)?,
        pl_ref_loss_db: r.float("pl_ref_loss_db", d.pl_ref_loss_db)?,
        pl_ref_distance: r.float("pl_ref_distance", d.pl_ref_distance)?,
        decay_ratio: r.float("decay_ratio", d.decay_ratio)?,
        excess_distance_max: r.float("excess_distance_max", d.excess_distance_max)?,
        aoa_sigma: r.float("aoa_sigma", d.aoa_sigma)?,
        gain_rel_sigma: r.float("gain_rel_sigma", d.gain_rel_sigma)?,
        reconstruction: r.choice("reconstruction", d.reconstruction)?,
        nofb_covariance,
        precoder: r.choice("precoder", d.precoder)?,
        allocator: r.choice("allocator", d.allocator)?,
        gpip: GpipConfig {
            epsilon: r.float("gpip_epsilon", d.gpip.epsilon)?,
            max_iter: r.uint("gpip_max_iter", d.gpip.max_iter as u64)? as usize,
            keep_best: r.boolean("gpip_keep_best", d.gpip.keep_best)?,
        },
        wmmse_iters: r.uint("wmmse_iters", d.wmmse_iters as u64)? as usize,
        trials: r.uint("trials", d.trials as u64)? as usize,
        seed: r.uint("seed", d.seed)?,
    };
    config.validate()?;
    for key in &r.defaulted {
        info!("config: `{key}` not set, using default");
    }
    Ok(ParsedConfig { config, defaulted: r.defaulted })
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Ok(parse_config(&text)?.config)
}

fn error_key(e: &toml::de::Error) -> String {
    // toml reports the offending key only in its message; fall back to a
    // generic field name for pure syntax errors
    let msg = e.message();
    msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "<syntax>".into())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(config_err(field, format!("must be positive, got {x}")))
            }
        };
        let nonneg = |field: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(config_err(field, format!("must be nonnegative, got {x}")))
            }
        };
        if self.antennas.is_empty() || self.antennas.contains(&0) {
            return Err(config_err("antennas", "grid must be non-empty with entries >= 1"));
        }
        if self.paths.is_empty() || self.paths.contains(&0) {
            return Err(config_err("paths", "grid must be non-empty with entries >= 1"));
        }
        if self.btot.is_empty() {
            return Err(config_err("btot", "grid must not be empty"));
        }
        if self.power_dbm.is_empty() {
            return Err(config_err("power_dbm", "grid must not be empty"));
        }
        if self.users == 0 {
            return Err(config_err("users", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        positive("lambda_ul", self.lambda_ul)?;
        positive("lambda_dl", self.lambda_dl)?;
        positive("spacing", self.spacing)?;
        positive("isd", self.isd)?;
        positive("min_distance", self.min_distance)?;
        if self.min_distance > self.isd / 2.0 {
            return Err(config_err("min_distance", "must not exceed the cell radius isd/2"));
        }
        nonneg("pl_exponent", self.pl_exponent)?;
        positive("pl_ref_distance", self.pl_ref_distance)?;
        if !(self.decay_ratio > 0.0 && self.decay_ratio <= 1.0) {
            return Err(config_err("decay_ratio", "must lie in (0, 1]"));
        }
        nonneg("excess_distance_max", self.excess_distance_max)?;
        nonneg("aoa_sigma", self.aoa_sigma)?;
        nonneg("gain_rel_sigma", self.gain_rel_sigma)?;
        if !(self.gpip.epsilon > 0.0 && self.gpip.epsilon.is_finite()) {
            return Err(config_err("gpip_epsilon", "must be positive"));
        }
        if self.gpip.max_iter == 0 {
            return Err(config_err("gpip_max_iter", "must be at least 1"));
        }
        if self.wmmse_iters == 0 {
            return Err(config_err("wmmse_iters", "must be at least 1"));
        }
        if let Some(&b) = self.btot.iter().find(|&&b| b > 4096) {
            return Err(config_err("btot", format!("{b} bits per user is beyond any sensible budget")));
        }
        Ok(())
    }

    /// Full-size campaign: 16 users on a 256-element array.
    pub fn paper_scale(mut self) -> Self {
        self.users = 16;
        self.antennas = vec![256];
        self
    }

    pub fn geometry(&self, num_antennas: usize) -> Result<ArrayGeometry> {
        ArrayGeometry::new(num_antennas, self.spacing, self.lambda_ul, self.lambda_dl)
    }

    pub fn scene(&self, num_paths: usize) -> Result<SceneParams> {
        let params = SceneParams {
            num_users: self.users,
            num_paths,
            cell_radius: self.isd / 2.0,
            min_distance: self.min_distance,
            path_loss: PathLoss::new(self.pl_exponent, db_to_linear(-self.pl_ref_loss_db), self.pl_ref_distance)?,
            decay_ratio: self.decay_ratio,
            excess_distance_max: self.excess_distance_max,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn estimation_noise(&self) -> Result<EstimationNoise> {
        EstimationNoise::new(self.aoa_sigma, self.gain_rel_sigma)
    }

    /// Receiver noise power, watts.
    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}
