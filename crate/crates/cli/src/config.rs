// Copyright 2026 The Pipeforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use pipeforge_core::data::{CsvOptions, Metric};
use pipeforge_core::engine::RunConfig;

/// Keys accepted in a configuration file.
pub const KEYS: &[&str] = &[
    "metric",
    "budget",
    "seed",
    "workers",
    "cache_budget",
    "metabase",
    "no_prior",
    "valid_fraction",
    "eval_timeout",
    "max_evaluations",
    "ensemble_rounds",
    "pool_size",
    "l_max",
    "c_overfit",
    "w",
    "e_max",
    "n_hpo_per_visit",
    "target",
    "missing_tokens",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, line: usize, key: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("{path}:{line}: key `{key}` given twice")]
    Duplicate { path: PathBuf, line: usize, key: String },
    #[error("{path}: bad value `{value}` for `{key}`: {message}")]
    Value {
        path: PathBuf,
        key: String,
        value: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Run settings plus CSV options, before command-line overrides.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub run: RunConfig,
    pub target: String,
    pub csv: CsvOptions,
    /// Whether the file set `seed`; an explicit flag or `PIPEFORGE_SEED`
    /// still wins.
    pub seed_set: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            target: "target".into(),
            csv: CsvOptions::default(),
            seed_set: false,
        }
    }
}

pub fn parse(text: &str, path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                path: path.to_path_buf(),
                line,
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.to_path_buf(),
                line,
            });
        }
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey {
                path: path.to_path_buf(),
                line,
                key: k.to_string(),
            });
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate {
                path: path.to_path_buf(),
                line,
                key: k.to_string(),
            });
        }
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value {
        path: path.to_path_buf(),
        key: key.to_string(),
        value: v.to_string(),
        message: e.to_string(),
    })
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_pairs(&parse(&text, path)?, path)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>, path: &Path) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (k, v) in pairs {
            let r = &mut c.run;
            match k.as_str() {
                "metric" => r.metric = value::<Metric>(path, k, v)?,
                "budget" => r.policy.t_max = value(path, k, v)?,
                "seed" => {
                    r.seed = value(path, k, v)?;
                    c.seed_set = true;
                }
                "workers" => r.worker_count = value(path, k, v)?,
                "cache_budget" => r.cache_budget_bytes = value(path, k, v)?,
                "metabase" => r.metabase = Some(PathBuf::from(v)),
                "no_prior" => r.no_prior = value(path, k, v)?,
                "valid_fraction" => r.valid_fraction = value(path, k, v)?,
                "eval_timeout" => {
                    let secs: f64 = value(path, k, v)?;
                    r.eval_timeout = Duration::try_from_secs_f64(secs).map_err(|e| ConfigError::Value {
                        path: path.to_path_buf(),
                        key: k.clone(),
                        value: v.clone(),
                        message: e.to_string(),
                    })?;
                }
                "max_evaluations" => r.max_evaluations = Some(value(path, k, v)?),
                "ensemble_rounds" => r.ensemble_rounds = value(path, k, v)?,
                "pool_size" => r.pool_size = value(path, k, v)?,
                "l_max" => r.policy.l_max = value(path, k, v)?,
                "c_overfit" => r.policy.c_overfit = value(path, k, v)?,
                "w" => r.policy.w = value(path, k, v)?,
                "e_max" => r.policy.e_max = value(path, k, v)?,
                "n_hpo_per_visit" => r.policy.n_hpo_per_visit = value(path, k, v)?,
                "target" => c.target = v.clone(),
                "missing_tokens" => {
                    c.csv.missing_tokens = v.split(',').map(|t| t.trim().to_string()).collect();
                }
                _ => unreachable!("keys are checked while parsing"),
            }
        }
        Ok(c)
    }
}
