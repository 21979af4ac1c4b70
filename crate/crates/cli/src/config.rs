//! Flat `key=value` configuration.
//!
//! Layers, lowest first: built-in defaults, an optional figure preset, the
//! `--config` file, then `--set` and `--seed` overrides. Unknown keys are
//! rejected at every layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use fscdma_core::montecarlo::{RunConfig, SensingSnr};
use fscdma_core::{CodePolicy, SystemParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {key:?}{}", origin_suffix(.origin))]
    UnknownKey { key: String, origin: String },
    #[error("malformed line {line} in {origin}: {text:?}")]
    Malformed { origin: String, line: usize, text: String },
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn origin_suffix(origin: &str) -> String {
    if origin.is_empty() {
        String::new()
    } else {
        format!(" in {origin}")
    }
}

/// Every accepted key with its default. `auto` marks derived values.
pub const KEYS: &[(&str, &str)] = &[
    ("params.n_subcarriers", "32"),
    ("params.n_users", "4"),
    ("params.pr_h1", "0.2"),
    ("params.energy_per_bit", "1"),
    ("params.bit_duration", "1e-5"),
    ("params.slot_duration", "1e-3"),
    ("params.sensing_duration", "1e-4"),
    ("params.sampling_rate", "3.2e6"),
    ("params.inr_db", "0"),
    ("code.policy", "multilevel"),
    ("detector.samples", "auto"),
    ("detector.mean_snr_db", "2.3"),
    ("detector.snr_mode", "per_sample"),
    ("run.target_pd", "0.95"),
    ("run.snr_grid_db", "0,5,10,15,20,25,30"),
    ("run.trials_min", "100000"),
    ("run.target_error_events", "100"),
    ("run.max_trials", "20000000"),
    ("run.master_seed", "1"),
    ("roc.points", "50"),
    ("roc.zeta_max", "auto"),
    ("roc.validate_draws", "1000000"),
    ("fig2.users", "4,8"),
    ("fig3.users", "1,2,3,4,5,6,7,8,10,12,14,16"),
    ("fig3.snr_db", "10,20"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey {
                key: key.to_string(),
                origin: origin.to_string(),
            }),
        }
    }

    /// Applies one `key=value` assignment.
    pub fn apply_assignment(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let (k, v) = text.split_once('=').ok_or_else(|| ConfigError::Malformed {
            origin: origin.to_string(),
            line: 0,
            text: text.to_string(),
        })?;
        self.set(k.trim(), v, origin)
    }

    /// Applies a config file body. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                origin: origin.to_string(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v, origin)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("key is declared in KEYS")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.split([',', ';'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    /// Settings with every `auto` replaced by its derived value.
    pub fn resolved(&self) -> Result<Settings, ConfigError> {
        let mut out = self.clone();
        if self.raw("detector.samples") == "auto" {
            let rate: f64 = self.get("params.sampling_rate")?;
            let tau: f64 = self.get("params.sensing_duration")?;
            let samples = (rate * tau).round();
            if !(samples >= 2.0 && samples <= u32::MAX as f64) {
                return Err(ConfigError::BadValue {
                    key: "detector.samples".into(),
                    value: samples.to_string(),
                    reason: "sampling_rate * sensing_duration must give at least 2 samples".into(),
                });
            }
            out.set("detector.samples", &(samples as u64).to_string(), "")?;
        }
        Ok(out)
    }

    /// `# key=value` lines for every key, in sorted order.
    pub fn comment_block(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "# {k}={v}");
        }
        s
    }

    pub fn policy(&self) -> Result<CodePolicy, ConfigError> {
        self.get("code.policy")
    }

    pub fn snr_mode(&self) -> Result<SensingSnr, ConfigError> {
        let v = self.raw("detector.snr_mode");
        SensingSnr::parse(v).ok_or_else(|| ConfigError::BadValue {
            key: "detector.snr_mode".into(),
            value: v.to_string(),
            reason: "expected per_sample or window".into(),
        })
    }

    /// Detector sample count; requires [`Settings::resolved`].
    pub fn samples(&self) -> Result<u32, ConfigError> {
        self.get("detector.samples")
    }

    pub fn system_params(&self) -> Result<SystemParams, ConfigError> {
        Ok(SystemParams {
            n_subcarriers: self.get("params.n_subcarriers")?,
            n_users: self.get("params.n_users")?,
            pr_h1: self.get("params.pr_h1")?,
            energy_per_bit: self.get("params.energy_per_bit")?,
            bit_duration: self.get("params.bit_duration")?,
            slot_duration: self.get("params.slot_duration")?,
            sensing_duration: self.get("params.sensing_duration")?,
            ..SystemParams::default()
        })
    }

    /// Run configuration; requires [`Settings::resolved`].
    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        Ok(RunConfig {
            params: self.system_params()?,
            policy: self.policy()?,
            sensing_samples: self.samples()?,
            sensing_snr_db: self.get("detector.mean_snr_db")?,
            sensing_snr: self.snr_mode()?,
            target_pd: self.get("run.target_pd")?,
            inr_db: self.get("params.inr_db")?,
            snr_grid_db: self.list("run.snr_grid_db")?,
            trials_min: self.get("run.trials_min")?,
            target_error_events: self.get("run.target_error_events")?,
            max_trials: self.get("run.max_trials")?,
            master_seed: self.get("run.master_seed")?,
        })
    }
}
