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

//! Hyperparameter domains and configurations.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Categorical { values: Vec<String> },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
}

impl Domain {
    pub fn is_well_formed(&self) -> bool {
        match self {
            Domain::Categorical { values } => !values.is_empty(),
            Domain::Uniform { lo, hi } => lo < hi,
            Domain::LogUniform { lo, hi } => *lo > 0.0 && lo < hi,
            Domain::IntUniform { lo, hi } => lo < hi,
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Domain::Categorical { values }, ParamValue::Cat(s)) => values.contains(s),
            (Domain::Uniform { lo, hi }, ParamValue::Float(x))
            | (Domain::LogUniform { lo, hi }, ParamValue::Float(x)) => x.is_finite() && *lo <= *x && *x <= *hi,
            (Domain::IntUniform { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
            _ => false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self {
            Domain::Categorical { values } => ParamValue::Cat(values[rng.gen_range(0..values.len())].clone()),
            Domain::Uniform { lo, hi } => ParamValue::Float(rng.gen_range(*lo..=*hi)),
            Domain::LogUniform { lo, hi } => {
                let x = rng.gen_range(lo.ln()..=hi.ln()).exp();
                ParamValue::Float(x.clamp(*lo, *hi))
            }
            Domain::IntUniform { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Cat(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Cat(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub params: Vec<Param>,
}

impl HyperparameterSpace {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn validate(&self, config: &Config) -> Result<(), String> {
        for p in &self.params {
            match config.0.get(&p.name) {
                None => return Err(format!("missing parameter `{}`", p.name)),
                Some(v) if !p.domain.contains(v) => {
                    return Err(format!("parameter `{}` = {v} outside its domain", p.name))
                }
                _ => {}
            }
        }
        if let Some(extra) = config.0.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return Err(format!("unknown parameter `{extra}`"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Config {
        Config(
            self.params
                .iter()
                .map(|p| (p.name.clone(), p.domain.sample(rng)))
                .collect(),
        )
    }
}

/// Flat name to value assignment for one step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(pub BTreeMap<String, ParamValue>);

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, v: ParamValue) -> Self {
        self.0.insert(name.to_string(), v);
        self
    }

    pub fn int(&self, name: &str) -> i64 {
        match self.0.get(name) {
            Some(ParamValue::Int(v)) => *v,
            Some(ParamValue::Float(v)) => v.round() as i64,
            _ => panic!("config lacks integer parameter `{name}`"),
        }
    }

    pub fn float(&self, name: &str) -> f64 {
        match self.0.get(name) {
            Some(ParamValue::Float(v)) => *v,
            Some(ParamValue::Int(v)) => *v as f64,
            _ => panic!("config lacks real parameter `{name}`"),
        }
    }

    pub fn cat(&self, name: &str) -> &str {
        match self.0.get(name) {
            Some(ParamValue::Cat(v)) => v,
            _ => panic!("config lacks categorical parameter `{name}`"),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}
